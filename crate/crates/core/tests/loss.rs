use hierdet::geometry::{match_boxes, BBox, MatchResult};
use hierdet::loss::{conf_loss, loc_loss, ohem_select, smooth_l1, total_loss, LossBreakdown, LossConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels_from(mask: &[bool]) -> MatchResult {
    MatchResult {
        labels: mask.iter().map(|&p| p.then_some(0)).collect(),
        overlaps: vec![0.0; mask.len()],
    }
}

fn fixture(seed: u64) -> (Vec<BBox>, Vec<BBox>, MatchResult, Vec<[f64; 2]>, Vec<[f64; 4]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = Vec::new();
    for y in 0..4 {
        for x in 0..4 {
            for s in [8.0, 14.0] {
                let (cx, cy) = (x as f64 * 8.0 + 4.0, y as f64 * 8.0 + 4.0);
                anchors.push(BBox::new(cx - s / 2.0, cy - s / 2.0, cx + s / 2.0, cy + s / 2.0));
            }
        }
    }
    let gts = vec![BBox::new(3.0, 2.0, 15.0, 15.0), BBox::new(18.0, 17.0, 27.0, 27.0)];
    let m = match_boxes(&anchors, &gts, 0.5).unwrap();
    let logits = (0..anchors.len()).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
    let pred = (0..anchors.len())
        .map(|_| [0; 4].map(|_| rng.random_range(-1.5..1.5)))
        .collect();
    (anchors, gts, m, logits, pred)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let cfg = LossConfig::default();
    for seed in 0..10 {
        let (anchors, gts, m, logits, pred) = fixture(seed);
        let (_, g) = total_loss(&logits, &pred, &anchors, &gts, &m, &cfg).unwrap();
        let f = |l: &[[f64; 2]], p: &[[f64; 4]]| total_loss(l, p, &anchors, &gts, &m, &cfg).unwrap().0.total;
        let h = 1e-6;
        for i in 0..anchors.len() {
            for c in 0..2 {
                let (mut lp, mut lm) = (logits.clone(), logits.clone());
                lp[i][c] += h;
                lm[i][c] -= h;
                let num = (f(&lp, &pred) - f(&lm, &pred)) / (2.0 * h);
                assert!((num - g.d_logits[i][c]).abs() < 1e-6, "seed {seed} logit {i}/{c}");
            }
            for c in 0..4 {
                let (mut pp, mut pm) = (pred.clone(), pred.clone());
                pp[i][c] += h;
                pm[i][c] -= h;
                let num = (f(&logits, &pp) - f(&logits, &pm)) / (2.0 * h);
                assert!((num - g.d_offsets[i][c]).abs() < 1e-6, "seed {seed} offset {i}/{c}");
            }
        }
    }
}

#[test]
fn total_is_components_over_positives() {
    let cfg = LossConfig { alpha: 2.0, ohem_ratio: 3.0 };
    let (anchors, gts, m, logits, pred) = fixture(3);
    let (b, _) = total_loss(&logits, &pred, &anchors, &gts, &m, &cfg).unwrap();
    let n = m.num_positive();
    assert!(n > 0);
    let negs = ohem_select(
        &logits
            .iter()
            .zip(&m.labels)
            .map(|(z, l)| {
                let c = usize::from(l.is_some());
                let lse = (z[0].exp() + z[1].exp()).ln();
                lse - z[c]
            })
            .collect::<Vec<_>>(),
        &m,
        3.0,
    );
    let conf = conf_loss(&logits, &m, &negs).unwrap();
    let loc = loc_loss(&pred, &anchors, &gts, &m).unwrap();
    assert!((b.total - (conf + 2.0 * loc) / n as f64).abs() < 1e-12);
    assert_eq!(b.n_selected_neg, negs.len().min(3 * n));
}

#[test]
fn pooling_divides_by_batch_total() {
    let a = LossBreakdown { conf: 3.0, loc: 1.0, n_matched: 1, ..Default::default() };
    let b = LossBreakdown { conf: 5.0, loc: 3.0, n_matched: 3, ..Default::default() };
    let p = LossBreakdown::pooled(&[a, b], 1.0);
    assert_eq!(p.n_matched, 4);
    assert!((p.total - 12.0 / 4.0).abs() < 1e-15);
    assert_eq!(LossBreakdown::pooled(&[LossBreakdown::default(); 3], 1.0).total, 0.0);
}

#[test]
fn non_positive_weights_are_rejected() {
    let (anchors, gts, m, logits, pred) = fixture(0);
    let bad = LossConfig { alpha: 0.0, ohem_ratio: 3.0 };
    assert!(total_loss(&logits, &pred, &anchors, &gts, &m, &bad).is_err());
    assert!(total_loss(&logits[1..], &pred, &anchors, &gts, &m, &LossConfig::default()).is_err());
}

proptest! {
    #[test]
    fn ohem_selects_hardest_prefix(
        losses in prop::collection::vec(0u8..8, 1..40),
        mask in prop::collection::vec(any::<bool>(), 40),
        ratio in 1u8..5,
    ) {
        let losses: Vec<f64> = losses.iter().map(|&v| v as f64 * 0.25).collect();
        let m = labels_from(&mask[..losses.len()]);
        let picked = ohem_select(&losses, &m, ratio as f64);
        let negs: Vec<usize> = (0..losses.len()).filter(|&i| m.labels[i].is_none()).collect();
        prop_assert_eq!(picked.len(), (ratio as usize * m.num_positive()).min(negs.len()));
        let mut oracle = negs.clone();
        oracle.sort_by(|&a, &b| losses[b].partial_cmp(&losses[a]).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(&picked[..], &oracle[..picked.len()]);
        for &i in &picked {
            for &j in &negs {
                if !picked.contains(&j) {
                    prop_assert!(losses[i] >= losses[j]);
                }
            }
        }
    }

    #[test]
    fn smooth_l1_is_even_nonnegative_and_below_both_branches(x in -10.0f64..10.0) {
        let v = smooth_l1(x);
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v, smooth_l1(-x));
        prop_assert!(v <= 0.5 * x * x + 1e-15);
        prop_assert!(v >= x.abs() - 0.5 - 1e-15);
    }
}
