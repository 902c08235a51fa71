//! Multi-task detection objective with online hard example mining.
//!
//! Logit pairs are ordered `(background, face)`. The confidence term sums
//! `−ln p_face` over positives and `−ln p_background` over the mined
//! negatives; the localization term sums smooth-L1 residuals of the four
//! offsets over positives. The total is `(conf + α·loc) / N` with `N` the
//! number of positives, and exactly 0 when `N = 0`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{encode_offsets, BBox, MatchResult};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    /// Maximum negatives per positive kept by hard example mining.
    pub ohem_ratio: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            ohem_ratio: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub conf: f64,
    pub loc: f64,
    pub n_matched: usize,
    pub n_selected_neg: usize,
}

impl LossBreakdown {
    /// Sum several per-image breakdowns and renormalize by the pooled `N`.
    pub fn pooled(parts: &[LossBreakdown], alpha: f64) -> LossBreakdown {
        let mut out = LossBreakdown::default();
        for p in parts {
            out.conf += p.conf;
            out.loc += p.loc;
            out.n_matched += p.n_matched;
            out.n_selected_neg += p.n_selected_neg;
        }
        out.total = normalized(out.conf, out.loc, alpha, out.n_matched);
        out
    }
}

fn normalized(conf: f64, loc: f64, alpha: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (conf + alpha * loc) / n as f64
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// `−ln softmax(z)[class]`, computed as a log-sum-exp.
fn neg_log_softmax(z: &[f64; 2], class: usize) -> f64 {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[class]
}

/// Per-anchor confidence loss against each anchor's own label: `−ln p_face`
/// for positives, `−ln p_background` otherwise.
pub fn anchor_conf_losses(logits: &[[f64; 2]], m: &MatchResult) -> Vec<f64> {
    logits
        .iter()
        .zip(&m.labels)
        .map(|(z, l)| neg_log_softmax(z, usize::from(l.is_some())))
        .collect()
}

pub fn conf_loss(logits: &[[f64; 2]], m: &MatchResult, selected_negs: &[usize]) -> Result<f64> {
    if logits.len() != m.len() {
        return Err(Error::dim(format!(
            "{} logit pairs for {} anchors",
            logits.len(),
            m.len()
        )));
    }
    let mut total: f64 = m.positives().map(|(i, _)| neg_log_softmax(&logits[i], 1)).sum();
    for &i in selected_negs {
        if m.labels[i].is_some() {
            return Err(Error::contract(format!(
                "anchor {i} selected as a negative but it is a positive"
            )));
        }
        total += neg_log_softmax(&logits[i], 0);
    }
    Ok(total)
}

/// Encoded regression targets for every positive anchor, as
/// `(anchor index, offsets)`.
pub fn loc_targets(anchors: &[BBox], gts: &[BBox], m: &MatchResult) -> Result<Vec<(usize, [f64; 4])>> {
    m.positives()
        .map(|(i, j)| {
            let g = gts.get(j).ok_or_else(|| {
                Error::contract(format!("anchor {i} matched to missing ground truth {j}"))
            })?;
            Ok((i, encode_offsets(&g.to_center(), &anchors[i].to_center())?))
        })
        .collect()
}

pub fn loc_loss(pred: &[[f64; 4]], anchors: &[BBox], gts: &[BBox], m: &MatchResult) -> Result<f64> {
    if pred.len() != anchors.len() || anchors.len() != m.len() {
        return Err(Error::dim(format!(
            "{} predictions, {} anchors, {} match labels",
            pred.len(),
            anchors.len(),
            m.len()
        )));
    }
    Ok(loc_targets(anchors, gts, m)?
        .iter()
        .map(|(i, t)| (0..4).map(|c| smooth_l1(pred[*i][c] - t[c])).sum::<f64>())
        .sum())
}

/// Hard negatives: the `min(⌊ratio·N_pos⌋, N_neg)` negatives with the highest
/// confidence loss, ties broken by anchor index.
pub fn ohem_select(conf_losses: &[f64], m: &MatchResult, ratio: f64) -> Vec<usize> {
    let n_pos = m.num_positive();
    let mut negs: Vec<usize> = m.negatives().collect();
    let quota = ((ratio * n_pos as f64).floor() as usize).min(negs.len());
    negs.sort_by(|&a, &b| {
        conf_losses[b]
            .partial_cmp(&conf_losses[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    negs.truncate(quota);
    negs
}

/// Gradients of the *unnormalized* objective `conf + α·loc`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradients {
    pub d_logits: Vec<[f64; 2]>,
    pub d_offsets: Vec<[f64; 4]>,
}

/// Loss terms of one image with gradients of `conf + α·loc`; divide by the
/// pooled `N` to normalize.
pub fn image_loss(
    logits: &[[f64; 2]],
    pred: &[[f64; 4]],
    anchors: &[BBox],
    gts: &[BBox],
    m: &MatchResult,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, LossGradients)> {
    let n = anchors.len();
    if logits.len() != n || pred.len() != n || m.len() != n {
        return Err(Error::dim(format!(
            "{} logits, {} offsets, {} anchors, {} labels",
            logits.len(),
            pred.len(),
            n,
            m.len()
        )));
    }
    if !(cfg.alpha > 0.0 && cfg.ohem_ratio > 0.0) {
        return Err(Error::contract("alpha and the OHEM ratio must be positive"));
    }
    let mut grads = LossGradients {
        d_logits: vec![[0.0; 2]; n],
        d_offsets: vec![[0.0; 4]; n],
    };
    let n_pos = m.num_positive();
    if n_pos == 0 {
        return Ok((LossBreakdown::default(), grads));
    }
    let per_anchor = anchor_conf_losses(logits, m);
    let negs = ohem_select(&per_anchor, m, cfg.ohem_ratio);

    let mut conf = 0.0;
    let chosen = m.positives().map(|(i, _)| (i, 1)).chain(negs.iter().map(|&i| (i, 0)));
    for (i, class) in chosen {
        conf += per_anchor[i];
        let [p0, p1] = crate::tensor::softmax_pair(logits[i][0], logits[i][1]);
        grads.d_logits[i] = if class == 1 { [p0, p1 - 1.0] } else { [p0 - 1.0, p1] };
    }

    let mut loc = 0.0;
    for (i, t) in loc_targets(anchors, gts, m)? {
        for c in 0..4 {
            let r = pred[i][c] - t[c];
            loc += smooth_l1(r);
            grads.d_offsets[i][c] = cfg.alpha * smooth_l1_grad(r);
        }
    }
    let breakdown = LossBreakdown {
        total: normalized(conf, loc, cfg.alpha, n_pos),
        conf,
        loc,
        n_matched: n_pos,
        n_selected_neg: negs.len(),
    };
    Ok((breakdown, grads))
}

/// Normalized objective of one image and its gradients.
pub fn total_loss(
    logits: &[[f64; 2]],
    pred: &[[f64; 4]],
    anchors: &[BBox],
    gts: &[BBox],
    m: &MatchResult,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, LossGradients)> {
    let (b, mut g) = image_loss(logits, pred, anchors, gts, m, cfg)?;
    if b.n_matched > 0 {
        let s = 1.0 / b.n_matched as f64;
        g.d_logits.iter_mut().flatten().for_each(|v| *v *= s);
        g.d_offsets.iter_mut().flatten().for_each(|v| *v *= s);
    }
    Ok((b, g))
}
