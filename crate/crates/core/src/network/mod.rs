//! Encoder-decoder detector: encoder stages, top-down context fusion and
//! per-hierarchy prediction heads.

mod model;
mod spec;

pub use model::{build_network, Ctx, HierarchyOutput, Model};
pub use spec::{FusionMode, LayerKind, LayerSpec, NetworkSpec};

use crate::error::{Error, Result};
use crate::geometry::{match_boxes, BBox};
use crate::loss::{image_loss, LossBreakdown, LossConfig};
use crate::tensor::{Tensor, Var};

/// Per-anchor `M`-vectors of image `b` from a head map `[N, A·M, H, W]`,
/// in anchor order `(y·W + x)·A + a`.
pub fn gather<const M: usize>(t: &Tensor, b: usize, a: usize) -> Result<Vec<[f64; M]>> {
    let (n, c, h, w) = t.nchw()?;
    if c != a * M || b >= n {
        return Err(Error::dim(format!(
            "head map {:?} does not hold {a} anchors of {M} values for image {b}",
            t.dims()
        )));
    }
    let hw = h * w;
    let img = &t.data()[b * c * hw..(b + 1) * c * hw];
    let mut out = vec![[0.0; M]; hw * a];
    for (cell, chunk) in out.chunks_exact_mut(a).enumerate() {
        for (ai, v) in chunk.iter_mut().enumerate() {
            for (m, slot) in v.iter_mut().enumerate() {
                *slot = img[(ai * M + m) * hw + cell];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`gather`]: write per-anchor values into image `b` of `t`.
pub fn scatter<const M: usize>(t: &mut Tensor, b: usize, a: usize, vals: &[[f64; M]]) -> Result<()> {
    let (_, c, h, w) = t.nchw()?;
    let hw = h * w;
    if c != a * M || vals.len() != hw * a {
        return Err(Error::dim("scatter: values do not fit the head map"));
    }
    let img = &mut t.data_mut()[b * c * hw..(b + 1) * c * hw];
    for (cell, chunk) in vals.chunks_exact(a).enumerate() {
        for (ai, v) in chunk.iter().enumerate() {
            for (m, &x) in v.iter().enumerate() {
                img[(ai * M + m) * hw + cell] = x;
            }
        }
    }
    Ok(())
}

/// All anchors of a forward pass in flat prediction order.
pub fn flat_anchors(outs: &[HierarchyOutput]) -> Vec<BBox> {
    outs.iter().flat_map(|o| o.anchors.boxes.iter().copied()).collect()
}

/// Match, mine and score a batch, recording the objective on the tape.
///
/// Per-image confidence and localization sums are pooled over the batch and
/// divided by the batch's total number of positives.
pub fn detection_loss(
    ctx: &mut Ctx,
    outs: &[HierarchyOutput],
    gts: &[Vec<BBox>],
    match_threshold: f64,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let first = outs.first().ok_or_else(|| Error::contract("no hierarchy outputs"))?;
    let batch = ctx.tape.value(first.conf).dims()[0];
    if gts.len() != batch {
        return Err(Error::dim(format!("{} ground-truth lists for a batch of {batch}", gts.len())));
    }
    let anchors = flat_anchors(outs);
    let per = |o: &HierarchyOutput| o.anchors.per_cell();

    let mut parts = Vec::with_capacity(batch);
    let mut d_conf: Vec<Tensor> = outs.iter().map(|o| Tensor::zeros(ctx.tape.value(o.conf).dims())).collect();
    let mut d_loc: Vec<Tensor> = outs.iter().map(|o| Tensor::zeros(ctx.tape.value(o.loc).dims())).collect();
    let mut grads = Vec::with_capacity(batch);
    for (b, image_gts) in gts.iter().enumerate() {
        let mut logits = Vec::with_capacity(anchors.len());
        let mut offsets = Vec::with_capacity(anchors.len());
        for o in outs {
            logits.extend(gather::<2>(ctx.tape.value(o.conf), b, per(o))?);
            offsets.extend(gather::<4>(ctx.tape.value(o.loc), b, per(o))?);
        }
        let usable: Vec<BBox> = image_gts
            .iter()
            .copied()
            .filter(|g| g.width() > 0.0 && g.height() > 0.0)
            .collect();
        let m = match_boxes(&anchors, &usable, match_threshold)?;
        let (part, g) = image_loss(&logits, &offsets, &anchors, &usable, &m, cfg)?;
        parts.push(part);
        grads.push(g);
    }
    let pooled = LossBreakdown::pooled(&parts, cfg.alpha);
    let scale = if pooled.n_matched > 0 {
        1.0 / pooled.n_matched as f64
    } else {
        0.0
    };
    for (b, g) in grads.iter().enumerate() {
        let mut start = 0;
        for (i, o) in outs.iter().enumerate() {
            let len = o.anchors.len();
            let dl: Vec<[f64; 2]> = g.d_logits[start..start + len]
                .iter()
                .map(|v| v.map(|x| x * scale))
                .collect();
            let dr: Vec<[f64; 4]> = g.d_offsets[start..start + len]
                .iter()
                .map(|v| v.map(|x| x * scale))
                .collect();
            scatter(&mut d_conf[i], b, per(o), &dl)?;
            scatter(&mut d_loc[i], b, per(o), &dr)?;
            start += len;
        }
    }
    let mut inputs = Vec::with_capacity(outs.len() * 2);
    for ((o, dc), dl) in outs.iter().zip(d_conf).zip(d_loc) {
        inputs.push((o.conf, dc));
        inputs.push((o.loc, dl));
    }
    let v = ctx.tape.scalar_node(pooled.total, inputs)?;
    Ok((v, pooled))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_scatter_round_trip() {
        let (a, h, w) = (3, 2, 4);
        let t = Tensor::from_fn(&[2, a * 4, h, w], |i| i as f64);
        let v = gather::<4>(&t, 1, a).unwrap();
        assert_eq!(v.len(), h * w * a);
        // anchor (y=1, x=2, a=1), coordinate 3 → channel 7
        let idx = (w + 2) * a + 1;
        let hw = h * w;
        assert_eq!(v[idx][3], t.data()[(a * 4 + 7) * hw + w + 2]);
        let mut back = Tensor::zeros(t.dims());
        scatter(&mut back, 1, a, &v).unwrap();
        let half = t.len() / 2;
        assert_eq!(&back.data()[half..], &t.data()[half..]);
        assert!(back.data()[..half].iter().all(|&x| x == 0.0));
    }
}
