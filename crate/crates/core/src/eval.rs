//! Detection scoring: greedy matching, all-point average precision and
//! ellipse-based ROC curves.

use std::fmt;

use crate::data::{ellipse_to_box, EllipseAnnotation};
use crate::error::{Error, Result};
use crate::geometry::{jaccard, nms, score_order, BBox, Detection};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    Pr,
    RocDiscrete,
    RocContinuous,
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveKind::Pr => "ap",
            CurveKind::RocDiscrete => "roc-discrete",
            CurveKind::RocContinuous => "roc-continuous",
        })
    }
}

impl std::str::FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ap" | "pr" => Ok(CurveKind::Pr),
            "roc-discrete" => Ok(CurveKind::RocDiscrete),
            "roc-continuous" => Ok(CurveKind::RocContinuous),
            _ => Err(Error::Validation(vec![format!(
                "unknown metric `{s}` (expected ap, roc-discrete or roc-continuous)"
            )])),
        }
    }
}

/// A scored curve. For precision-recall `x` is recall and `y` precision;
/// for ROC curves `x` counts false positives and `y` is the detection rate.
/// `summary` is the AP or the final `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCurve {
    pub kind: CurveKind,
    pub points: Vec<(f64, f64)>,
    pub summary: f64,
}

impl EvalCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for (x, y) in &self.points {
            s.push_str(&format!("{x},{y}\n"));
        }
        s
    }

    pub fn summary_csv(&self, n_images: usize, n_gt: usize, n_det: usize) -> String {
        format!(
            "metric,value,n_images,n_gt,n_det\n{},{},{n_images},{n_gt},{n_det}\n",
            self.kind, self.summary
        )
    }
}

/// Score floor and NMS applied to raw detections before scoring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalFilter {
    pub score_floor: f64,
    pub nms_iou: f64,
}

impl Default for EvalFilter {
    fn default() -> Self {
        EvalFilter {
            score_floor: 0.01,
            nms_iou: 0.45,
        }
    }
}

impl EvalFilter {
    /// Drop detections below the floor, then suppress per image.
    pub fn apply(&self, dets: &[Detection]) -> Vec<Detection> {
        let mut by_image: Vec<Vec<Detection>> = Vec::new();
        for d in dets.iter().filter(|d| d.score >= self.score_floor) {
            if by_image.len() <= d.image_id {
                by_image.resize(d.image_id + 1, Vec::new());
            }
            by_image[d.image_id].push(*d);
        }
        by_image.iter().flat_map(|v| nms(v, self.nms_iou)).collect()
    }
}

/// Index of the matched ground truth for each detection of one image, `None`
/// for false positives, in input order.
///
/// Detections are visited by descending score; each takes the unmatched
/// ground truth of highest jaccard (lowest index on ties) when that overlap
/// reaches `iou_thresh`.
pub fn assign_detections(dets: &[Detection], gts: &[BBox], iou_thresh: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; dets.len()];
    for i in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let iou = jaccard(&dets[i].bbox, g);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, iou)) = best {
            if iou >= iou_thresh {
                taken[j] = true;
                out[i] = Some(j);
            }
        }
    }
    out
}

/// True-positive flags of [`assign_detections`].
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_thresh: f64) -> Vec<bool> {
    assign_detections(dets, gts, iou_thresh)
        .into_iter()
        .map(|m| m.is_some())
        .collect()
}

fn group_by_image<'a>(dets: &'a [Detection], n_images: usize) -> Result<Vec<Vec<(usize, &'a Detection)>>> {
    let mut groups = vec![Vec::new(); n_images];
    for (i, d) in dets.iter().enumerate() {
        let g = groups.get_mut(d.image_id).ok_or_else(|| {
            Error::Lookup(format!(
                "detection refers to image {} but only {n_images} images have annotations",
                d.image_id
            ))
        })?;
        g.push((i, d));
    }
    Ok(groups)
}

/// Per-detection match of a corpus: `(gt index within its image, or None)`.
fn corpus_assign(dets: &[Detection], gts: &[Vec<BBox>], iou_thresh: f64) -> Result<Vec<Option<usize>>> {
    let mut out = vec![None; dets.len()];
    for (img, group) in group_by_image(dets, gts.len())?.into_iter().enumerate() {
        let local: Vec<Detection> = group.iter().map(|(_, d)| **d).collect();
        for ((i, _), m) in group.iter().zip(assign_detections(&local, &gts[img], iou_thresh)) {
            out[*i] = m;
        }
    }
    Ok(out)
}

/// All-point interpolated average precision over a corpus. `gts[i]` holds
/// the faces of image `i`; recall is relative to all of them.
pub fn average_precision(dets: &[Detection], gts: &[Vec<BBox>], iou_thresh: f64) -> Result<(f64, EvalCurve)> {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(Error::contract("average precision is undefined without ground truths"));
    }
    let matched = corpus_assign(dets, gts, iou_thresh)?;
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for i in score_order(dets) {
        if matched[i].is_some() {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // precision envelope from the right
    let mut env = precision.clone();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&env) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    let points = recall.into_iter().zip(precision).collect();
    Ok((
        ap,
        EvalCurve {
            kind: CurveKind::Pr,
            points,
            summary: ap,
        },
    ))
}

/// Overlap between a box and the pixel mask of an ellipse. Pixels (split
/// into `scale × scale` subcells) belong to a region when their center does.
pub fn region_iou(b: &BBox, e: &EllipseAnnotation, scale: usize) -> f64 {
    let eb = ellipse_to_box(e);
    let step = 1.0 / scale.max(1) as f64;
    let x0 = b.x1.min(eb.x1).floor();
    let y0 = b.y1.min(eb.y1).floor();
    let nx = ((b.x2.max(eb.x2).ceil() - x0) / step).round() as usize;
    let ny = ((b.y2.max(eb.y2).ceil() - y0) / step).round() as usize;
    let (mut inter, mut union) = (0usize, 0usize);
    for iy in 0..ny {
        let y = y0 + (iy as f64 + 0.5) * step;
        for ix in 0..nx {
            let x = x0 + (ix as f64 + 0.5) * step;
            let in_b = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
            let in_e = e.contains(x, y);
            inter += (in_b && in_e) as usize;
            union += (in_b || in_e) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn roc(
    dets: &[Detection],
    ellipses: &[Vec<EllipseAnnotation>],
    iou_thresh: f64,
    credit: impl Fn(&Detection, &EllipseAnnotation) -> f64,
    kind: CurveKind,
) -> Result<EvalCurve> {
    let boxes: Vec<Vec<BBox>> = ellipses.iter().map(|v| v.iter().map(ellipse_to_box).collect()).collect();
    let n_gt: usize = boxes.iter().map(Vec::len).sum();
    let matched = corpus_assign(dets, &boxes, iou_thresh)?;
    let order = score_order(dets);
    let mut points = vec![(0.0, 0.0)];
    let (mut fp, mut hit) = (0usize, 0.0);
    for (pos, &i) in order.iter().enumerate() {
        let d = &dets[i];
        match matched[i] {
            Some(j) => hit += credit(d, &ellipses[d.image_id][j]),
            None => fp += 1,
        }
        let last_of_score = order.get(pos + 1).is_none_or(|&n| dets[n].score != d.score);
        if last_of_score {
            let y = if n_gt == 0 { 0.0 } else { hit / n_gt as f64 };
            points.push((fp as f64, y));
        }
    }
    let summary = points.last().map_or(0.0, |p| p.1);
    Ok(EvalCurve { kind, points, summary })
}

/// Detection rate against false-positive count, sweeping the score threshold
/// down through every detection score. A match needs box jaccard
/// `iou_thresh` against the ellipse's bounding box.
pub fn roc_discrete(dets: &[Detection], ellipses: &[Vec<EllipseAnnotation>], iou_thresh: f64) -> Result<EvalCurve> {
    roc(dets, ellipses, iou_thresh, |_, _| 1.0, CurveKind::RocDiscrete)
}

/// As [`roc_discrete`], but each match contributes its [`region_iou`] with
/// the ellipse mask rasterized at `scale` subcells per pixel.
pub fn roc_continuous(
    dets: &[Detection],
    ellipses: &[Vec<EllipseAnnotation>],
    iou_thresh: f64,
    scale: usize,
) -> Result<EvalCurve> {
    roc(
        dets,
        ellipses,
        iou_thresh,
        |d, e| region_iou(&d.bbox, e, scale),
        CurveKind::RocContinuous,
    )
}
