//! Reverse-mode gradients of a conv → relu → maxpool → sum scalar, checked
//! against central differences.

use hierdet::tensor::{grad_check_inputs, Probe, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hierdet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng);
    let w = Tensor::randn(&[4, 3, 3, 3], 0.3, &mut rng);
    let b = Tensor::randn(&[4], 0.1, &mut rng);

    let mut tape = hierdet::tensor::Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone(), true), tape.leaf(w.clone(), true), tape.leaf(b.clone(), true));
    let y = tape.conv2d(xv, wv, Some(bv), 1, 1)?;
    let y = tape.relu(y)?;
    let y = tape.maxpool2d(y, 2, 2)?;
    let loss = tape.sum(y)?;
    tape.backward(loss)?;
    println!("loss {:.6}", tape.value(loss).data()[0]);
    println!("|dL/dw| = {:.6}", tape.grad(wv).map_or(0.0, |g| g.data().iter().map(|v| v * v).sum::<f64>().sqrt()));

    let err = grad_check_inputs(
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            let y = t.relu(y)?;
            let y = t.maxpool2d(y, 2, 2)?;
            t.sum(y)
        },
        &[x, w, b],
        1e-6,
        Probe::Sample { per_input: 40, seed: 1 },
    )?;
    println!("max relative error vs central differences: {err:.2e}");
    Ok(())
}
