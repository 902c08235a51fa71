//! Generate a synthetic corpus, report its face-size distribution, and run
//! the augmentation chain on one sample.

use hierdet::data::{
    size_histogram, synth_generate, top_size_csv, top_size_table, AugmentConfig, SynthConfig, BUCKET_LABELS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hierdet::Result<()> {
    let corpus = synth_generate(&SynthConfig::new(300, 9))?;
    let hist = size_histogram(corpus.iter().flat_map(|s| &s.item.boxes));
    println!("{} faces in {} images", hist.total(), corpus.len());
    for (label, (n, f)) in BUCKET_LABELS.iter().zip(hist.counts.iter().zip(hist.fractions)) {
        println!("  {label:>7}: {n:4} ({:.1}%)", 100.0 * f);
    }

    let dims: Vec<_> = corpus
        .iter()
        .map(|s| (s.item.boxes.clone(), (s.item.height(), s.item.width())))
        .collect();
    print!("{}", top_size_csv(&top_size_table(&dims)));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let aug = AugmentConfig::new(128);
    let sample = &corpus[0].item;
    for round in 0..3 {
        let out = aug.apply(sample, &mut rng);
        let sides: Vec<String> = out.boxes.iter().map(|b| format!("{:.1}", b.width().max(b.height()))).collect();
        println!("augmented #{round}: {} faces, sizes [{}]", out.boxes.len(), sides.join(", "));
    }
    Ok(())
}
