//! Multi-task loss with online hard example mining on one image's anchors.

use hierdet::geometry::{generate_anchors, match_boxes, AnchorParams, BBox};
use hierdet::loss::{anchor_conf_losses, ohem_select, total_loss, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hierdet::Result<()> {
    let params = AnchorParams::from_receptive_fields(12.0, 40.0, 1, 64.0);
    let anchors = generate_anchors(0, (8, 8), (64.0, 64.0), &params)?.boxes;
    let faces = vec![BBox::new(10.0, 12.0, 24.0, 28.0)];
    let m = match_boxes(&anchors, &faces, 0.5)?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits: Vec<[f64; 2]> = (0..anchors.len()).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let offsets: Vec<[f64; 4]> = (0..anchors.len()).map(|_| [0.0; 4]).collect();

    let cfg = LossConfig::default();
    let losses = anchor_conf_losses(&logits, &m);
    let negs = ohem_select(&losses, &m, cfg.ohem_ratio);
    println!("{} anchors, {} positives, {} hard negatives kept", anchors.len(), m.num_positive(), negs.len());

    let (b, g) = total_loss(&logits, &offsets, &anchors, &faces, &m, &cfg)?;
    println!("conf {:.4}  loc {:.4}  N {}  total {:.4}", b.conf, b.loc, b.n_matched, b.total);
    let touched = g.d_logits.iter().filter(|d| d[0] != 0.0).count();
    println!("anchors receiving a confidence gradient: {touched}");
    Ok(())
}
