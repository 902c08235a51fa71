//! Precision-recall AP and FDDB-style ROC curves for a set of noisy
//! detections around synthetic ellipse annotations.

use hierdet::data::{ellipse_to_box, synth_generate, SynthConfig};
use hierdet::eval::{average_precision, roc_continuous, roc_discrete};
use hierdet::geometry::{BBox, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hierdet::Result<()> {
    let corpus = synth_generate(&SynthConfig::new(40, 4))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut dets = Vec::new();
    for (id, s) in corpus.iter().enumerate() {
        for e in &s.ellipses {
            if rng.random_bool(0.9) {
                let b = ellipse_to_box(e);
                let j = 0.15 * b.width();
                let bbox = BBox::new(
                    b.x1 + rng.random_range(-j..j),
                    b.y1 + rng.random_range(-j..j),
                    b.x2 + rng.random_range(-j..j),
                    b.y2 + rng.random_range(-j..j),
                );
                dets.push(Detection { bbox, score: rng.random_range(0.3..1.0), image_id: id });
            }
        }
        for _ in 0..2 {
            let x = rng.random_range(0.0..100.0);
            let y = rng.random_range(0.0..100.0);
            dets.push(Detection { bbox: BBox::new(x, y, x + 20.0, y + 24.0), score: rng.random_range(0.0..0.6), image_id: id });
        }
    }

    let gts: Vec<Vec<BBox>> = corpus.iter().map(|s| s.item.boxes.clone()).collect();
    let ellipses: Vec<_> = corpus.iter().map(|s| s.ellipses.clone()).collect();
    let (ap, pr) = average_precision(&dets, &gts, 0.5)?;
    println!("AP@0.5 {ap:.4} ({} points on the PR curve)", pr.points.len());
    let disc = roc_discrete(&dets, &ellipses, 0.5)?;
    let cont = roc_continuous(&dets, &ellipses, 0.5, 4)?;
    println!("discrete ROC: {:.4}   continuous ROC: {:.4}", disc.summary, cont.summary);
    for (p, q) in disc.points.iter().zip(&cont.points).step_by(20) {
        println!("  fp {:5.0}  tpr {:.3} / {:.3}", p.0, p.1, q.1);
    }
    Ok(())
}
