//! Train the desk detector on a synthetic corpus and report held-out AP.
//!
//! `cargo run --release --example train_and_evaluate -- [iterations] [A|B]`
//! runs a shortened schedule by default; pass 2000 for the full desk run.

use hierdet::data::{synth_generate, AnnotatedImage};
use hierdet::harness::{evaluate_ap, smoothed, train_loop, Config};
use hierdet::network::{build_network, FusionMode};

fn main() -> hierdet::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let fusion = match args.next().as_deref() {
        Some("A") => FusionMode::A,
        _ => FusionMode::B,
    };

    let mut cfg = Config::default();
    cfg.network.fusion = fusion;
    let scale = iters as f64 / cfg.train.total_iters as f64;
    cfg.train.lr_drops = cfg.train.lr_drops.iter().map(|&d| (d as f64 * scale) as usize).collect();
    cfg.train.warmup_iters = (cfg.train.warmup_iters as f64 * scale) as usize;
    cfg.train.total_iters = iters;

    let corpus = |count, seed| -> hierdet::Result<Vec<AnnotatedImage>> {
        let mut s = cfg.synth.clone();
        s.count = count;
        s.seed = seed;
        Ok(synth_generate(&s)?.into_iter().map(|x| x.item).collect())
    };
    let train = corpus(2000, 1)?;
    let test = corpus(200, 2)?;

    let mut model = build_network(&cfg.network, cfg.train.seed)?;
    println!("mode {fusion}, {} parameters, {iters} iterations", model.num_parameters());
    let mut totals = Vec::new();
    train_loop(&mut model, &train, &cfg.train, &cfg.augment, None, &mut |row| {
        totals.push(row.loss.total);
        if (row.iter + 1) % 50 == 0 {
            println!("iter {:5}  loss {:.4}  lr {:.0e}", row.iter + 1, smoothed(&totals, row.iter, 50), row.lr);
        }
    })?;
    let (ap, _, dets) = evaluate_ap(&model, &test, &cfg.eval)?;
    println!("held-out AP@0.5 {ap:.4} over {} detections", dets.len());
    Ok(())
}
