use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{FusionMode, LayerKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::geometry::{generate_anchors, AnchorSet};
use crate::tensor::{BnMode, BnState, Parameter, Tape, Tensor, Var};

#[derive(Clone, Debug)]
enum Op {
    Conv {
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    Deconv {
        w: usize,
        stride: usize,
        pad: usize,
    },
    Pool {
        k: usize,
        stride: usize,
    },
    Bn {
        gamma: usize,
        beta: usize,
        state: usize,
    },
    Relu,
}

#[derive(Clone, Debug)]
struct Layer {
    name: String,
    op: Op,
}

#[derive(Clone, Debug)]
struct Fusion {
    upsample: Vec<Layer>,
    lateral: Vec<Layer>,
}

#[derive(Clone, Debug)]
struct Head {
    conf: Layer,
    loc: Layer,
}

/// Predictions of one feature hierarchy. `conf` is `[N, A·2, H, W]` and
/// `loc` is `[N, A·4, H, W]` with `A` default boxes per cell.
#[derive(Clone, Debug)]
pub struct HierarchyOutput {
    pub k: usize,
    pub conf: Var,
    pub loc: Var,
    pub anchors: AnchorSet,
}

/// State of one forward pass: the tape, the tape handles of every model
/// parameter, working copies of the batch-norm running statistics, and the
/// output of every named layer in execution order.
pub struct Ctx {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub bn: Vec<BnState>,
    pub mode: BnMode,
    pub trace: Vec<(String, Var)>,
}

impl Ctx {
    pub fn layer(&self, name: &str) -> Option<Var> {
        self.trace.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: NetworkSpec,
    pub params: Vec<Parameter>,
    pub bn: Vec<BnState>,
    pub bn_names: Vec<String>,
    encoder: Vec<Vec<Layer>>,
    top: Layer,
    fusions: Vec<Fusion>,
    heads: Vec<Head>,
    anchors: Vec<AnchorSet>,
}

struct Builder {
    params: Vec<Parameter>,
    bn: Vec<BnState>,
    bn_names: Vec<String>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn weight(&mut self, name: String, dims: &[usize], fan_in: usize) -> usize {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let t = Tensor::randn(dims, std, &mut self.rng);
        self.params.push(Parameter::new(name, t));
        self.params.len() - 1
    }

    fn fixed(&mut self, name: String, dims: &[usize], value: f64) -> usize {
        self.params.push(Parameter::new(name, Tensor::full(dims, value)));
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Layer {
        let w = self.weight(format!("{name}.weight"), &[cout, cin, k, k], cin * k * k);
        let b = bias.then(|| self.fixed(format!("{name}.bias"), &[cout], 0.0));
        Layer {
            name: name.to_string(),
            op: Op::Conv { w, b, stride, pad },
        }
    }

    fn deconv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Layer {
        // each output pixel sees about cin·(k/s)² inputs
        let fan_in = cin * (k * k).div_ceil(stride * stride);
        let w = self.weight(format!("{name}.weight"), &[cin, cout, k, k], fan_in);
        Layer {
            name: name.to_string(),
            op: Op::Deconv { w, stride, pad },
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> Layer {
        let gamma = self.fixed(format!("{name}.gamma"), &[c], 1.0);
        let beta = self.fixed(format!("{name}.beta"), &[c], 0.0);
        self.bn.push(BnState::new(c));
        self.bn_names.push(name.to_string());
        Layer {
            name: name.to_string(),
            op: Op::Bn {
                gamma,
                beta,
                state: self.bn.len() - 1,
            },
        }
    }
}

/// Build a model with He-initialized convolution weights drawn from a
/// ChaCha stream seeded by `seed`. Convolutions followed directly by batch
/// norm carry no bias.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let shapes = spec.stage_shapes()?;
    let mut b = Builder {
        params: Vec::new(),
        bn: Vec::new(),
        bn_names: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };

    let mut encoder = Vec::with_capacity(spec.stages.len());
    let mut c = spec.input_channels;
    for stage in &spec.stages {
        let mut layers = Vec::with_capacity(stage.len());
        for (i, l) in stage.iter().enumerate() {
            let next_is_bn = stage.get(i + 1).is_some_and(|n| n.kind == LayerKind::BatchNorm);
            let layer = match l.kind {
                LayerKind::Conv => {
                    let layer = b.conv(&l.name, c, l.channels, l.k, l.stride, l.pad, !next_is_bn);
                    c = l.channels;
                    layer
                }
                LayerKind::Deconv => {
                    let layer = b.deconv(&l.name, c, l.channels, l.k, l.stride, l.pad);
                    c = l.channels;
                    layer
                }
                LayerKind::BatchNorm => b.bn(&l.name, c),
                LayerKind::MaxPool => Layer {
                    name: l.name.clone(),
                    op: Op::Pool { k: l.k, stride: l.stride },
                },
                LayerKind::Relu => Layer {
                    name: l.name.clone(),
                    op: Op::Relu,
                },
            };
            layers.push(layer);
        }
        encoder.push(layers);
    }

    let levels = spec.taps.len();
    let deepest = levels - 1;
    let top = b.bn(&format!("fuse{deepest}.bn"), shapes[spec.taps[0]].0);

    let width = spec.decoder_channels;
    let mut fusions = Vec::with_capacity(deepest);
    for k in 0..deepest {
        // hierarchy k fuses the fused map of k + 1 with tap stage taps[L-1-k]
        let deep_c = if k + 1 == deepest { shapes[spec.taps[0]].0 } else { width };
        let shallow_c = shapes[spec.taps[deepest - k]].0;
        let up = spec.upsample;
        let upsample = vec![
            b.deconv(&format!("fuse{k}.deconv"), deep_c, width, up, up, 0),
            b.bn(&format!("fuse{k}.deep_bn"), width),
        ];
        let mut lateral = match spec.fusion {
            FusionMode::B => vec![b.conv(&format!("fuse{k}.adjust"), shallow_c, width, 1, 1, 0, false)],
            FusionMode::A => vec![
                b.conv(&format!("fuse{k}.conv1"), shallow_c, width, 3, 1, 1, true),
                Layer {
                    name: format!("fuse{k}.relu1"),
                    op: Op::Relu,
                },
                b.conv(&format!("fuse{k}.conv2"), width, width, 3, 1, 1, true),
                Layer {
                    name: format!("fuse{k}.relu2"),
                    op: Op::Relu,
                },
                b.conv(&format!("fuse{k}.conv3"), width, width, 3, 1, 1, false),
            ],
        };
        lateral.push(b.bn(&format!("fuse{k}.lateral_bn"), width));
        fusions.push(Fusion { upsample, lateral });
    }

    let a = spec.anchors.boxes_per_cell();
    let mut heads = Vec::with_capacity(levels);
    for k in 0..levels {
        let cin = spec.head_channels(k)?;
        heads.push(Head {
            conf: b.conv(&format!("head{k}.conf"), cin, a * 2, 3, 1, 1, true),
            loc: b.conv(&format!("head{k}.loc"), cin, a * 4, 3, 1, 1, true),
        });
    }

    let size = spec.input_size as f64;
    let anchors = spec
        .hierarchy_sizes()?
        .into_iter()
        .enumerate()
        .map(|(k, n)| generate_anchors(k, (n, n), (size, size), &spec.anchors))
        .collect::<Result<Vec<_>>>()?;

    Ok(Model {
        spec: spec.clone(),
        params: b.params,
        bn: b.bn,
        bn_names: b.bn_names,
        encoder,
        top,
        fusions,
        heads,
        anchors,
    })
}

impl Model {
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn anchors(&self) -> &[AnchorSet] {
        &self.anchors
    }

    /// Start a pass with every parameter on a fresh tape.
    pub fn begin(&self, mode: BnMode) -> Ctx {
        self.begin_with(mode, true)
    }

    /// Like [`Model::begin`] but parameters enter the tape as constants, so
    /// backward only reaches the inputs.
    pub fn begin_frozen(&self, mode: BnMode) -> Ctx {
        self.begin_with(mode, false)
    }

    fn begin_with(&self, mode: BnMode, trainable: bool) -> Ctx {
        let mut tape = Tape::new();
        let params = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect();
        Ctx {
            tape,
            params,
            bn: self.bn.clone(),
            mode,
            trace: Vec::new(),
        }
    }

    /// Adopt the running statistics updated during a train-mode pass.
    pub fn commit(&mut self, ctx: &Ctx) {
        self.bn.clone_from(&ctx.bn);
    }

    /// Gradient of every parameter after `ctx.tape.backward`, zeros where
    /// none reached it.
    pub fn param_grads(&self, ctx: &Ctx) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(&ctx.params)
            .map(|(p, &v)| ctx.tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.value.dims())))
            .collect()
    }

    fn apply(&self, ctx: &mut Ctx, l: &Layer, x: Var) -> Result<Var> {
        let p = &ctx.params;
        let y = match l.op {
            Op::Conv { w, b, stride, pad } => ctx.tape.conv2d(x, p[w], b.map(|b| p[b]), stride, pad)?,
            Op::Deconv { w, stride, pad } => ctx.tape.deconv2d(x, p[w], stride, pad)?,
            Op::Pool { k, stride } => ctx.tape.maxpool2d(x, k, stride)?,
            Op::Bn { gamma, beta, state } => {
                let (g, bt) = (p[gamma], p[beta]);
                ctx.tape.batch_norm(x, g, bt, ctx.mode, &mut ctx.bn[state])?
            }
            Op::Relu => ctx.tape.relu(x)?,
        };
        ctx.trace.push((l.name.clone(), y));
        Ok(y)
    }

    fn apply_all(&self, ctx: &mut Ctx, layers: &[Layer], mut x: Var) -> Result<Var> {
        for l in layers {
            x = self.apply(ctx, l, x)?;
        }
        Ok(x)
    }

    /// Encoder features at every tap, in tap order (deepest first).
    pub fn forward_encoder(&self, ctx: &mut Ctx, x: Var) -> Result<Vec<Var>> {
        let (_, c, h, w) = ctx.tape.value(x).nchw()?;
        let s = self.spec.input_size;
        if c != self.spec.input_channels || h != s || w != s {
            return Err(Error::dim(format!(
                "network expects {}x{s}x{s} input, got {c}x{h}x{w}",
                self.spec.input_channels
            )));
        }
        let mut outs = Vec::with_capacity(self.encoder.len());
        let mut cur = x;
        for stage in &self.encoder {
            cur = self.apply_all(ctx, stage, cur)?;
            outs.push(cur);
        }
        Ok(self.spec.taps.iter().map(|&t| outs[t]).collect())
    }

    /// Fuse the deeper map `deep` into the encoder feature `shallow` for
    /// hierarchy `k`: upsample-and-normalize the deep branch, adjust and
    /// normalize the shallow branch, then sum.
    pub fn context_fuse(&self, ctx: &mut Ctx, k: usize, deep: Var, shallow: Var) -> Result<Var> {
        let f = self
            .fusions
            .get(k)
            .ok_or_else(|| Error::contract(format!("hierarchy {k} has no fusion unit")))?;
        let d = self.apply_all(ctx, &f.upsample, deep)?;
        let s = self.apply_all(ctx, &f.lateral, shallow)?;
        if ctx.tape.value(d).dims() != ctx.tape.value(s).dims() {
            return Err(Error::dim(format!(
                "fusion {k}: upsampled deep branch {:?} vs shallow branch {:?}",
                ctx.tape.value(d).dims(),
                ctx.tape.value(s).dims()
            )));
        }
        let y = ctx.tape.add(d, s)?;
        ctx.trace.push((format!("fuse{k}.sum"), y));
        Ok(y)
    }

    /// Confidence and offset heads over the fused map of hierarchy `k`.
    pub fn predict(&self, ctx: &mut Ctx, k: usize, fused: Var) -> Result<HierarchyOutput> {
        let head = self
            .heads
            .get(k)
            .ok_or_else(|| Error::contract(format!("hierarchy {k} has no head")))?;
        let conf = self.apply(ctx, &head.conf, fused)?;
        let loc = self.apply(ctx, &head.loc, fused)?;
        let anchors = self.anchors[k].clone();
        let (_, _, h, w) = ctx.tape.value(conf).nchw()?;
        if (w, h) != (anchors.feat_w, anchors.feat_h) {
            return Err(Error::dim(format!(
                "head {k} map {w}x{h} does not match anchor grid {}x{}",
                anchors.feat_w, anchors.feat_h
            )));
        }
        Ok(HierarchyOutput { k, conf, loc, anchors })
    }

    /// Encoder, top-down fusion from the deepest tap, and prediction at
    /// every hierarchy; outputs are ordered shallowest first.
    pub fn forward_detect(&self, ctx: &mut Ctx, x: Var) -> Result<Vec<HierarchyOutput>> {
        let taps = self.forward_encoder(ctx, x)?;
        let levels = taps.len();
        let mut fused = vec![taps[0]; levels];
        fused[levels - 1] = self.apply(ctx, &self.top, taps[0])?;
        for k in (0..levels - 1).rev() {
            fused[k] = self.context_fuse(ctx, k, fused[k + 1], taps[levels - 1 - k])?;
        }
        (0..levels).map(|k| self.predict(ctx, k, fused[k])).collect()
    }

    /// Infer-mode forward of a batch without parameter gradients.
    pub fn infer(&self, images: &Tensor) -> Result<(Ctx, Vec<HierarchyOutput>)> {
        let mut ctx = self.begin_frozen(BnMode::Infer);
        let x = ctx.tape.leaf(images.clone(), false);
        let outs = self.forward_detect(&mut ctx, x)?;
        Ok((ctx, outs))
    }
}
