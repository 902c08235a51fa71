//! Theoretical receptive fields by the layer recurrence, and an empirical
//! effective receptive field from input-gradient mass.

use num_rational::Rational64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{LayerKind, LayerSpec, Model, NetworkSpec};
use crate::tensor::{BnMode, Tensor};

/// Receptive field of a unit in input pixels. `start` is the input-space
/// center of the first unit, `jump` the input distance between adjacent
/// units. All three are exact rationals since upsampling divides the jump.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RFState {
    pub rf: Rational64,
    pub jump: Rational64,
    pub start: Rational64,
}

impl Default for RFState {
    fn default() -> Self {
        RFState::identity()
    }
}

impl RFState {
    /// The state of the input itself.
    pub fn identity() -> Self {
        RFState {
            rf: Rational64::from_integer(1),
            jump: Rational64::from_integer(1),
            start: Rational64::from_integer(0),
        }
    }

    pub fn apply(&self, l: &LayerSpec) -> RFState {
        let int = |v: usize| Rational64::from_integer(v as i64);
        let half_k = Rational64::new(l.k as i64 - 1, 2);
        match l.kind {
            LayerKind::Conv | LayerKind::MaxPool => RFState {
                rf: self.rf + int(l.k - 1) * self.jump,
                jump: self.jump * int(l.stride),
                start: self.start + (half_k - int(l.pad)) * self.jump,
            },
            LayerKind::Deconv => {
                // an output unit sees ⌈k/s⌉ adjacent input units
                let taps = l.k.div_ceil(l.stride);
                RFState {
                    rf: self.rf + int(taps - 1) * self.jump,
                    jump: self.jump / int(l.stride),
                    start: self.start + (int(l.pad) - half_k) / int(l.stride) * self.jump,
                }
            }
            LayerKind::BatchNorm | LayerKind::Relu => *self,
        }
    }

    /// Compose with `next`, a state folded from the identity over the
    /// layers that follow this one.
    pub fn then(&self, next: &RFState) -> RFState {
        RFState {
            rf: self.rf + (next.rf - 1) * self.jump,
            jump: self.jump * next.jump,
            start: self.start + next.start * self.jump,
        }
    }

    pub fn fold<'a>(layers: impl IntoIterator<Item = &'a LayerSpec>) -> RFState {
        layers.into_iter().fold(RFState::identity(), |s, l| s.apply(l))
    }

    pub fn rf_f64(&self) -> f64 {
        to_f64(self.rf)
    }

    pub fn jump_f64(&self) -> f64 {
        to_f64(self.jump)
    }

    pub fn start_f64(&self) -> f64 {
        to_f64(self.start)
    }
}

fn to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Receptive field after every encoder layer up to and including `upto`.
pub fn trf_compute(spec: &NetworkSpec, upto: &str) -> Result<RFState> {
    let mut state = RFState::identity();
    for l in spec.layers() {
        state = state.apply(l);
        if l.name == upto {
            return Ok(state);
        }
    }
    Err(Error::Lookup(format!("no encoder layer named `{upto}`")))
}

/// `(layer name, state)` after each encoder layer.
pub fn trf_table(spec: &NetworkSpec) -> Vec<(String, RFState)> {
    let mut state = RFState::identity();
    spec.layers()
        .map(|l| {
            state = state.apply(l);
            (l.name.clone(), state)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErfEstimate {
    /// Half-width of the smallest centered square holding `mass` of the
    /// input-gradient magnitude.
    pub radius: f64,
    /// Pixels per side of that square.
    pub side: usize,
    /// Center of the probed unit in input pixels.
    pub center: (f64, f64),
}

/// Effective receptive field of the center unit of `layer`.
///
/// The adjoint is 1 on every channel at the center position of `layer` and
/// 0 elsewhere; the input gradient magnitude is averaged over `trials`
/// standard-normal images, with batch norm in inference mode.
pub fn erf_estimate(model: &Model, layer: &str, mass: f64, trials: usize, seed: u64) -> Result<ErfEstimate> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::contract(format!("mass must lie in (0, 1), got {mass}")));
    }
    if trials == 0 {
        return Err(Error::contract("at least one trial is required"));
    }
    let spec = &model.spec;
    let size = spec.input_size;
    let c = spec.input_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = Tensor::randn(&[trials, c, size, size], 1.0, &mut rng);

    let mut ctx = model.begin_frozen(BnMode::Infer);
    let x = ctx.tape.leaf(images, true);
    model.forward_detect(&mut ctx, x)?;
    let y = ctx
        .layer(layer)
        .ok_or_else(|| Error::Lookup(format!("no layer named `{layer}` in the forward pass")))?;
    let (n, ch, h, w) = ctx.tape.value(y).nchw()?;
    let (cy, cx) = (h / 2, w / 2);
    let mut seed_t = Tensor::zeros(&[n, ch, h, w]);
    for i in 0..n {
        for k in 0..ch {
            seed_t.data_mut()[((i * ch + k) * h + cy) * w + cx] = 1.0;
        }
    }
    ctx.tape.backward_from(y, &seed_t)?;
    let g = ctx
        .tape
        .grad(x)
        .ok_or_else(|| Error::contract(format!("layer `{layer}` is not differentiable to the input")))?;

    let plane = size * size;
    let mut heat = vec![0.0; plane];
    for (i, v) in g.data().iter().enumerate() {
        heat[i % plane] += v.abs() / trials as f64;
    }
    let total: f64 = heat.iter().sum();

    // center of the probed unit in input coordinates; decoder layers are
    // placed on the regular grid of their resolution
    let (px, py) = match trf_compute(spec, layer) {
        Ok(st) => (
            st.start_f64() + cx as f64 * st.jump_f64(),
            st.start_f64() + cy as f64 * st.jump_f64(),
        ),
        Err(_) => {
            let (sx, sy) = (size as f64 / w as f64, size as f64 / h as f64);
            ((cx as f64 + 0.5) * sx - 0.5, (cy as f64 + 0.5) * sy - 0.5)
        }
    };

    let mut order: Vec<(f64, f64)> = heat
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let (r, c) = ((i / size) as f64, (i % size) as f64);
            ((r - py).abs().max((c - px).abs()), m)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut radius = 0.0;
    if total > 0.0 {
        let mut i = 0;
        while i < order.len() {
            let d = order[i].0;
            while i < order.len() && order[i].0 == d {
                acc += order[i].1;
                i += 1;
            }
            radius = d;
            if acc >= mass * total {
                break;
            }
        }
    }
    let side = (0..size)
        .filter(|&v| (v as f64 - px).abs() <= radius + 1e-9)
        .count();
    Ok(ErfEstimate {
        radius,
        side,
        center: (px, py),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64) -> Rational64 {
        Rational64::from_integer(n)
    }

    #[test]
    fn single_and_stacked_convs() {
        let c = LayerSpec::conv("c", 3, 1, 1, 4);
        assert_eq!(RFState::fold([&c]).rf, r(3));
        assert_eq!(RFState::fold([&c, &c]).rf, r(5));
    }

    #[test]
    fn vgg16_conv3_3_is_40() {
        let s = trf_compute(&NetworkSpec::vgg16(), "conv3_3").unwrap();
        assert_eq!(s.rf, r(40));
        assert_eq!(s.jump, r(4));
        assert!(matches!(trf_compute(&NetworkSpec::vgg16(), "conv9_9"), Err(Error::Lookup(_))));
    }

    #[test]
    fn deconv_halves_jump() {
        let pool = LayerSpec::maxpool("p", 2, 2);
        let up = LayerSpec::deconv("d", 2, 2, 0, 4);
        let s = RFState::fold([&pool, &up]);
        assert_eq!(s.jump, r(1));
        assert_eq!(s.rf, r(2));
        assert_eq!(s.start, Rational64::new(0, 1));
    }

    #[test]
    fn composition_matches_whole_fold() {
        let layers: Vec<LayerSpec> = NetworkSpec::vgg16().layers().cloned().collect();
        let whole = RFState::fold(&layers);
        for cut in 0..layers.len() {
            let a = RFState::fold(&layers[..cut]);
            let b = RFState::fold(&layers[cut..]);
            assert_eq!(a.then(&b), whole, "cut at {cut}");
        }
    }
}
