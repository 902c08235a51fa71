//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Which components of each input to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    /// At most `per_input` randomly chosen components of every input.
    Sample { per_input: usize, seed: u64 },
}

/// Maximum relative error between the tape gradient of the scalar `f(x)` and
/// its central difference with step `h`:
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_inputs(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h, Probe::All)
}

/// Multi-input form of [`grad_check`].
pub fn grad_check_inputs<F>(f: F, inputs: &[Tensor], h: f64, probe: Probe) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor], with_grad: bool| -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone(), with_grad)).collect();
        let out = f(&mut tape, &vars)?;
        let y = tape.value(out).data()[0];
        if !with_grad {
            return Ok((y, Vec::new()));
        }
        tape.backward(out)?;
        Ok((y, vars.iter().map(|&v| tape.grad(v)).collect()))
    };

    let (_, grads) = eval(inputs, true)?;
    let mut worst: f64 = 0.0;
    let mut rng = match probe {
        Probe::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Probe::All => None,
    };
    let mut values = inputs.to_vec();
    for (t, grad) in grads.iter().enumerate() {
        let n = inputs[t].len();
        let indices: Vec<usize> = match (&probe, rng.as_mut()) {
            (Probe::Sample { per_input, .. }, Some(rng)) if *per_input < n => {
                sample(rng, n, *per_input).into_vec()
            }
            _ => (0..n).collect(),
        };
        for i in indices {
            let analytic = grad.as_ref().map_or(0.0, |g| g.data()[i]);
            let orig = values[t].data()[i];
            values[t].data_mut()[i] = orig + h;
            let (plus, _) = eval(&values, false)?;
            values[t].data_mut()[i] = orig - h;
            let (minus, _) = eval(&values, false)?;
            values[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
