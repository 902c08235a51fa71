use std::cmp::Ordering;

use super::{jaccard, BBox};

/// A scored box on one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub image_id: usize,
}

/// Descending score, then ascending position.
pub(crate) fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy non-maximum suppression: visit detections by descending score and
/// drop any whose jaccard with an already kept box exceeds `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in score_order(dets) {
        let d = dets[i];
        if kept.iter().all(|k| jaccard(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, score: f64) -> Detection {
        Detection {
            bbox: BBox::new(x, 0.0, x + 10.0, 10.0),
            score,
            image_id: 0,
        }
    }

    #[test]
    fn single_detection_survives() {
        assert_eq!(nms(&[det(0.0, 0.3)], 0.45), vec![det(0.0, 0.3)]);
    }

    #[test]
    fn duplicate_keeps_higher_score() {
        let kept = nms(&[det(0.0, 0.8), det(0.0, 0.9)], 0.45);
        assert_eq!(kept, vec![det(0.0, 0.9)]);
    }

    #[test]
    fn disjoint_boxes_are_sorted_by_score() {
        let kept = nms(&[det(0.0, 0.2), det(50.0, 0.7), det(100.0, 0.7)], 0.45);
        assert_eq!(kept, vec![det(50.0, 0.7), det(100.0, 0.7), det(0.0, 0.2)]);
    }
}
