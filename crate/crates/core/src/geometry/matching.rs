use super::{jaccard, AnchorSet, BBox};
use crate::error::{Error, Result};

/// Per-anchor assignment: `labels[i] = Some(j)` when anchor `i` is a positive
/// for ground truth `j`, `overlaps[i]` its best jaccard against any ground
/// truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub labels: Vec<Option<usize>>,
    pub overlaps: Vec<f64>,
}

impl MatchResult {
    pub fn all_negative(n: usize) -> Self {
        MatchResult {
            labels: vec![None; n],
            overlaps: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|g| (i, g)))
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.is_none().then_some(i))
    }
}

/// All boxes of several hierarchies in hierarchy order.
pub fn flatten_anchors(sets: &[AnchorSet]) -> Vec<BBox> {
    sets.iter().flat_map(|s| s.boxes.iter().copied()).collect()
}

pub fn match_anchors(sets: &[AnchorSet], gts: &[BBox], threshold: f64) -> Result<MatchResult> {
    match_boxes(&flatten_anchors(sets), gts, threshold)
}

/// Two-stage matching.
///
/// Stage 1 gives every ground truth its own best anchor: the globally best
/// remaining (ground truth, anchor) pair is fixed first, ties going to the
/// lowest anchor index and then the lowest ground-truth index, until every
/// ground truth holds one anchor. Stage 2 marks each unclaimed anchor whose
/// best overlap exceeds `threshold` as a positive for its best ground truth.
pub fn match_boxes(anchors: &[BBox], gts: &[BBox], threshold: f64) -> Result<MatchResult> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract(format!(
            "match threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let n = anchors.len();
    if gts.is_empty() || n == 0 {
        return Ok(MatchResult::all_negative(n));
    }
    let iou: Vec<Vec<f64>> = gts
        .iter()
        .map(|g| anchors.iter().map(|a| jaccard(a, g)).collect())
        .collect();

    let mut best_gt = vec![0usize; n];
    let mut overlaps = vec![0.0; n];
    for (j, row) in iou.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            if v > overlaps[i] {
                overlaps[i] = v;
                best_gt[i] = j;
            }
        }
    }

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut gt_done = vec![false; gts.len()];
    for _ in 0..gts.len().min(n) {
        // (overlap, anchor, gt) of the best open pair
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if labels[i].is_some() {
                continue;
            }
            for (j, row) in iou.iter().enumerate() {
                if gt_done[j] {
                    continue;
                }
                let v = row[i];
                if best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        labels[i] = Some(j);
        gt_done[j] = true;
    }

    for i in 0..n {
        if labels[i].is_none() && overlaps[i] > threshold {
            labels[i] = Some(best_gt[i]);
        }
    }
    Ok(MatchResult { labels, overlaps })
}
