use std::path::Path;

use super::config::EvalConfig;
use crate::data::{batch_images, load_image, resize_with_boxes, AnnotatedImage};
use crate::error::Result;
use crate::eval::{average_precision, EvalCurve};
use crate::geometry::{decode_offsets, nms, BBox, Detection};
use crate::network::{gather, Ctx, HierarchyOutput, Model};
use crate::tensor::{softmax_pair, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectConfig {
    pub score_floor: f64,
    pub nms_iou: f64,
    /// Highest-scoring candidates per image that enter suppression.
    pub top_k: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            score_floor: 0.01,
            nms_iou: 0.45,
            top_k: 400,
        }
    }
}

impl From<&EvalConfig> for DetectConfig {
    fn from(e: &EvalConfig) -> Self {
        DetectConfig {
            score_floor: e.filter.score_floor,
            nms_iou: e.filter.nms_iou,
            top_k: e.top_k,
        }
    }
}

/// Detections for image `b` of an inferred batch. Boxes are decoded in
/// network-input coordinates, clipped to the input, then scaled to a source
/// image of `source = (width, height)` pixels.
pub fn decode_image(
    ctx: &Ctx,
    outs: &[HierarchyOutput],
    b: usize,
    image_id: usize,
    input_size: usize,
    source: (usize, usize),
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    let s = input_size as f64;
    let (sx, sy) = (source.0 as f64 / s, source.1 as f64 / s);
    let mut cands: Vec<(f64, [f64; 4], BBox)> = Vec::new();
    for o in outs {
        let a = o.anchors.per_cell();
        let logits = gather::<2>(ctx.tape.value(o.conf), b, a)?;
        let offsets = gather::<4>(ctx.tape.value(o.loc), b, a)?;
        for ((l, off), anchor) in logits.iter().zip(&offsets).zip(&o.anchors.boxes) {
            let score = softmax_pair(l[0], l[1])[1];
            if score >= cfg.score_floor {
                cands.push((score, *off, *anchor));
            }
        }
    }
    cands.sort_by(|p, q| q.0.total_cmp(&p.0));
    cands.truncate(cfg.top_k);
    let dets: Vec<Detection> = cands
        .into_iter()
        .map(|(score, off, anchor)| Detection {
            bbox: decode_offsets(&off, &anchor.to_center(), Some((s, s)))
                .scale(sx, sy)
                .clip(source.0 as f64, source.1 as f64),
            score,
            image_id,
        })
        .filter(|d| d.bbox.area() > 0.0)
        .collect();
    Ok(nms(&dets, cfg.nms_iou))
}

const INFER_BATCH: usize = 16;

/// Detect faces in `[C, H, W]` images of any size. Detection `image_id`s
/// index `images`.
pub fn detect_images(model: &Model, images: &[Tensor], cfg: &DetectConfig) -> Result<Vec<Detection>> {
    let size = model.spec.input_size;
    let mut out = Vec::new();
    for (chunk_no, chunk) in images.chunks(INFER_BATCH).enumerate() {
        let mut items = Vec::with_capacity(chunk.len());
        let mut sources = Vec::with_capacity(chunk.len());
        for t in chunk {
            let a = AnnotatedImage::new(t.clone(), Vec::new(), "")?;
            sources.push((a.width(), a.height()));
            items.push(if (a.width(), a.height()) == (size, size) {
                a
            } else {
                resize_with_boxes(&a, (size, size))
            });
        }
        let (ctx, outs) = model.infer(&batch_images(&items)?)?;
        for (b, src) in sources.into_iter().enumerate() {
            let id = chunk_no * INFER_BATCH + b;
            out.extend(decode_image(&ctx, &outs, b, id, size, src, cfg)?);
        }
    }
    Ok(out)
}

/// Load an image file and detect faces in it; boxes are in the file's pixel
/// coordinates.
pub fn detect(model: &Model, path: &Path, score_floor: f64, nms_iou: f64) -> Result<Vec<Detection>> {
    let image = load_image(path, model.spec.input_channels)?;
    let cfg = DetectConfig {
        score_floor,
        nms_iou,
        ..DetectConfig::default()
    };
    detect_images(model, &[image], &cfg)
}

/// Detections and AP@`iou_threshold` of `model` over an annotated set.
pub fn evaluate_ap(model: &Model, set: &[AnnotatedImage], eval: &EvalConfig) -> Result<(f64, EvalCurve, Vec<Detection>)> {
    let images: Vec<Tensor> = set.iter().map(|a| a.image.clone()).collect();
    let dets = detect_images(model, &images, &DetectConfig::from(eval))?;
    let gts: Vec<Vec<BBox>> = set.iter().map(|a| a.boxes.clone()).collect();
    let (ap, curve) = average_precision(&dets, &gts, eval.iou_threshold)?;
    Ok((ap, curve, dets))
}
