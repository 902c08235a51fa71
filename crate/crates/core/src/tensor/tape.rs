use super::kernels::{col2im, col2im_rows, gemm, gemm_strided, im2col, im2col_rows, Window};
use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-12;
pub const BN_MOMENTUM: f64 = 0.9;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        BnState {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: Window,
        cout: usize,
    },
    Deconv {
        x: Var,
        w: Var,
        // window over the *output* image; its out_h/out_w are the input dims
        g: Window,
        cin: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Softmax2 {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
    Scalar {
        inputs: Vec<(Var, Vec<f64>)>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv2d",
            Op::Deconv { .. } => "deconv2d",
            Op::MaxPool { .. } => "maxpool2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu { .. } => "relu",
            Op::Add { .. } => "eltwise_add",
            Op::Softmax2 { .. } => "softmax2",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Scalar { .. } => "scalar",
        }
    }
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed ops. Nodes are appended after their inputs,
/// so index order is a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, present once backward reached it.
    /// Gradients of intermediate nodes are released during backward.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.dims().to_vec(), g.clone()).expect("grad dims"))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!("{} produced a non-finite value", op.name())));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).nchw()?;
        let (cout, wcin, kh, kw) = self.value(w).nchw()?;
        if wcin != cin {
            return Err(Error::dim(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if kh != kw {
            return Err(Error::dim("conv2d: only square kernels are supported"));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d: stride must be >= 1"));
        }
        let k = kh;
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::dim(format!(
                "conv2d: kernel {k} larger than padded input {h}x{wd} (pad {pad})"
            )));
        }
        if let Some(b) = b {
            if self.value(b).dims() != [cout] {
                return Err(Error::dim(format!(
                    "conv2d: bias dims {:?}, expected [{cout}]",
                    self.value(b).dims()
                )));
            }
        }
        let g = Window {
            c: cin,
            h,
            w: wd,
            k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (wd + 2 * pad - k) / stride + 1,
        };
        let (rows, ncols) = (g.rows(), g.cols());
        let xin = self.value(x).data();
        let wt = self.value(w).data();
        let mut out = vec![0.0; n * cout * ncols];
        let block = g.block_rows();
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; rows * block * g.out_w]
        };
        for i in 0..n {
            let xi = &xin[i * cin * h * wd..(i + 1) * cin * h * wd];
            let yi = &mut out[i * cout * ncols..(i + 1) * cout * ncols];
            if g.is_pointwise() {
                gemm(cout, rows, ncols, (wt, rows, 1), (xi, ncols, 1), 0.0, yi);
            } else {
                for oy0 in (0..g.out_h).step_by(block) {
                    let oy1 = (oy0 + block).min(g.out_h);
                    let bw = (oy1 - oy0) * g.out_w;
                    im2col_rows(xi, &g, oy0, oy1, &mut cols[..rows * bw]);
                    gemm_strided(
                        cout,
                        rows,
                        bw,
                        (wt, rows, 1),
                        (&cols[..rows * bw], bw, 1),
                        0.0,
                        &mut yi[oy0 * g.out_w..],
                        ncols,
                    );
                }
            }
            if let Some(b) = b {
                let bias = self.value(b).data();
                for (co, plane) in yi.chunks_exact_mut(ncols).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bias[co]);
                }
            }
        }
        let value = Tensor::new(vec![n, cout, g.out_h, g.out_w], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(value, Op::Conv { x, w, b, g, cout }, &inputs)
    }

    /// Transposed convolution; weight is `[c_in, c_out, k, k]`.
    pub fn deconv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).nchw()?;
        let (wcin, cout, kh, kw) = self.value(w).nchw()?;
        if wcin != cin {
            return Err(Error::dim(format!(
                "deconv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if kh != kw {
            return Err(Error::dim("deconv2d: only square kernels are supported"));
        }
        if stride == 0 {
            return Err(Error::contract("deconv2d: stride must be >= 1"));
        }
        let k = kh;
        let full_h = (h - 1) * stride + k;
        let full_w = (wd - 1) * stride + k;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(Error::dim(format!(
                "deconv2d: padding {pad} consumes the whole {full_h}x{full_w} output"
            )));
        }
        let g = Window {
            c: cout,
            h: full_h - 2 * pad,
            w: full_w - 2 * pad,
            k,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        };
        let (kt, hw) = (g.rows(), g.cols());
        let xin = self.value(x).data();
        let wt = self.value(w).data();
        let osz = cout * g.h * g.w;
        let mut out = vec![0.0; n * osz];
        let mut cols = vec![0.0; kt * hw];
        for i in 0..n {
            let xi = &xin[i * cin * hw..(i + 1) * cin * hw];
            gemm(kt, cin, hw, (wt, 1, kt), (xi, hw, 1), 0.0, &mut cols);
            col2im(&cols, &g, &mut out[i * osz..(i + 1) * osz]);
        }
        let value = Tensor::new(vec![n, cout, g.h, g.w], out)?;
        self.push(value, Op::Deconv { x, w, g, cin }, &[x, w])
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).nchw()?;
        if k == 0 || stride == 0 {
            return Err(Error::contract("maxpool2d: kernel and stride must be >= 1"));
        }
        if h < k || w < k {
            return Err(Error::dim(format!(
                "maxpool2d: window {k} larger than input {h}x{w}"
            )));
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let xin = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if xin[idx] > xin[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xin[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(value, Op::MaxPool { x, argmax }, &[x])
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        state: &mut BnState,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).nchw()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).dims() != [c] {
                return Err(Error::dim(format!(
                    "batch_norm: {name} dims {:?}, expected [{c}]",
                    self.value(v).dims()
                )));
            }
        }
        if state.mean.len() != c || state.var.len() != c {
            return Err(Error::dim("batch_norm: running stats do not match channels"));
        }
        let m = n * h * w;
        let hw = h * w;
        let train = mode == BnMode::Train;
        if train && m < 2 {
            return Err(Error::contract(
                "batch_norm: train mode needs at least 2 values per channel",
            ));
        }
        let xin = self.value(x).data();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut inv_std = vec![0.0; c];
        let mut xhat = vec![0.0; xin.len()];
        let mut out = vec![0.0; xin.len()];
        for ch in 0..c {
            let plane = |i: usize| &xin[(i * c + ch) * hw..(i * c + ch + 1) * hw];
            let (mean, var) = if train {
                let mean = (0..n).map(|i| plane(i).iter().sum::<f64>()).sum::<f64>() / m as f64;
                let var = (0..n)
                    .map(|i| plane(i).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
                    .sum::<f64>()
                    / m as f64;
                state.mean[ch] = BN_MOMENTUM * state.mean[ch] + (1.0 - BN_MOMENTUM) * mean;
                let unbiased = var * m as f64 / (m - 1) as f64;
                state.var[ch] = BN_MOMENTUM * state.var[ch] + (1.0 - BN_MOMENTUM) * unbiased;
                (mean, var)
            } else {
                (state.mean[ch], state.var[ch])
            };
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = is;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    let xh = (xin[j] - mean) * is;
                    xhat[j] = xh;
                    out[j] = gm[ch] * xh + bt[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(xv.dims().to_vec(), data)?;
        self.push(value, Op::Relu { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(Error::dim(format!(
                "eltwise_add: dims {:?} vs {:?}",
                av.dims(),
                bv.dims()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.dims().to_vec(), data)?;
        self.push(value, Op::Add { a, b }, &[a, b])
    }

    /// Two-way softmax over the last axis (which must have size 2).
    pub fn softmax2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.dims().last() != Some(&2) {
            return Err(Error::dim(format!(
                "softmax2: last dimension must be 2, dims {:?}",
                xv.dims()
            )));
        }
        let mut data = Vec::with_capacity(xv.len());
        for pair in xv.data().chunks_exact(2) {
            let [p0, p1] = softmax_pair(pair[0], pair[1]);
            data.push(p0);
            data.push(p1);
        }
        let value = Tensor::new(xv.dims().to_vec(), data)?;
        self.push(value, Op::Softmax2 { x }, &[x])
    }

    /// Scalar `Σ weights_i · x_i`.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(Error::dim(format!(
                "weighted_sum: {} values vs {} weights",
                xv.len(),
                weights.len()
            )));
        }
        let s = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.data().to_vec(),
            },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ones = Tensor::full(self.value(x).dims(), 1.0);
        self.weighted_sum(x, &ones)
    }

    /// Scalar node computed outside the tape, with its local gradient with
    /// respect to each input supplied by the caller.
    pub fn scalar_node(&mut self, value: f64, inputs: Vec<(Var, Tensor)>) -> Result<Var> {
        for (v, g) in &inputs {
            if g.dims() != self.value(*v).dims() {
                return Err(Error::dim(format!(
                    "scalar_node: gradient dims {:?} vs input dims {:?}",
                    g.dims(),
                    self.value(*v).dims()
                )));
            }
        }
        let vars: Vec<Var> = inputs.iter().map(|(v, _)| *v).collect();
        let inputs = inputs.into_iter().map(|(v, g)| (v, g.into_data())).collect();
        self.push(Tensor::scalar(value), Op::Scalar { inputs }, &vars)
    }

    pub fn backward(&mut self, out: Var) -> Result<()> {
        if !self.value(out).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got dims {:?}",
                self.value(out).dims()
            )));
        }
        self.backward_from(out, &Tensor::scalar(1.0))
    }

    /// Backpropagate an explicit adjoint `seed` (same dims as `out`).
    pub fn backward_from(&mut self, out: Var, seed: &Tensor) -> Result<()> {
        if seed.len() != self.value(out).len() {
            return Err(Error::dim("backward seed does not match output size"));
        }
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        self.accumulate(out, |g| {
            g.iter_mut().zip(seed.data()).for_each(|(a, b)| *a += b)
        });
        for i in (0..=out.0).rev() {
            let Some(dy) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop_node(i, &op, &dy);
            if matches!(op, Op::Leaf) {
                self.nodes[i].grad = Some(dy);
            }
            self.nodes[i].op = op;
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let len = node.value.len();
        let g = node.grad.get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&mut self, i: usize, op: &Op, dy: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, g, cout } => self.backprop_conv(*x, *w, *b, g, *cout, dy),
            Op::Deconv { x, w, g, cin } => self.backprop_deconv(*x, *w, g, *cin, dy),
            Op::MaxPool { x, argmax } => self.accumulate(*x, |gx| {
                for (&src, &d) in argmax.iter().zip(dy) {
                    gx[src] += d;
                }
            }),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => self.backprop_bn(*x, *gamma, *beta, xhat, inv_std, *train, dy),
            Op::Relu { x } => {
                let node = &mut self.nodes[x.0];
                if node.requires_grad {
                    let len = node.value.len();
                    let gx = node.grad.get_or_insert_with(|| vec![0.0; len]);
                    for ((g, &v), &d) in gx.iter_mut().zip(node.value.data()).zip(dy) {
                        if v > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    self.accumulate(v, |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
                }
            }
            Op::Softmax2 { x } => {
                let p = self.nodes[i].value.data().to_vec();
                self.accumulate(*x, |gx| {
                    for ((g, p), d) in gx.chunks_exact_mut(2).zip(p.chunks_exact(2)).zip(dy.chunks_exact(2)) {
                        let dot = p[0] * d[0] + p[1] * d[1];
                        g[0] += p[0] * (d[0] - dot);
                        g[1] += p[1] * (d[1] - dot);
                    }
                })
            }
            Op::WeightedSum { x, weights } => {
                let d = dy[0];
                self.accumulate(*x, |g| {
                    g.iter_mut().zip(weights).for_each(|(g, w)| *g += d * w)
                })
            }
            Op::Scalar { inputs } => {
                let d = dy[0];
                for (v, local) in inputs {
                    self.accumulate(*v, |g| {
                        g.iter_mut().zip(local).for_each(|(g, l)| *g += d * l)
                    });
                }
            }
        }
    }

    fn backprop_conv(&mut self, x: Var, w: Var, b: Option<Var>, g: &Window, cout: usize, dy: &[f64]) {
        let (rows, ncols) = (g.rows(), g.cols());
        let n = self.value(x).dims()[0];
        let isz = g.c * g.h * g.w;
        let (want_x, want_w) = (self.wants(x), self.wants(w));
        if let Some(b) = b {
            self.accumulate(b, |gb| {
                for i in 0..n {
                    for (co, gbc) in gb.iter_mut().enumerate() {
                        let off = (i * cout + co) * ncols;
                        *gbc += dy[off..off + ncols].iter().sum::<f64>();
                    }
                }
            });
        }
        if !want_x && !want_w {
            return;
        }
        let xin = self.value(x).data();
        let wt = self.value(w).data();
        let mut dw = if want_w { vec![0.0; cout * rows] } else { Vec::new() };
        let mut dx = if want_x { vec![0.0; n * isz] } else { Vec::new() };
        let block = if g.is_pointwise() { g.out_h } else { g.block_rows() };
        let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { rows * block * g.out_w }];
        let mut dcols = vec![0.0; rows * block * g.out_w];
        for i in 0..n {
            let dyi = &dy[i * cout * ncols..(i + 1) * cout * ncols];
            let xi = &xin[i * isz..(i + 1) * isz];
            for oy0 in (0..g.out_h).step_by(block) {
                let oy1 = (oy0 + block).min(g.out_h);
                let bw = (oy1 - oy0) * g.out_w;
                let dyb = &dyi[oy0 * g.out_w..];
                if want_w {
                    let src: &[f64] = if g.is_pointwise() {
                        xi
                    } else {
                        im2col_rows(xi, g, oy0, oy1, &mut cols[..rows * bw]);
                        &cols[..rows * bw]
                    };
                    gemm(cout, bw, rows, (dyb, ncols, 1), (src, 1, bw), 1.0, &mut dw);
                }
                if want_x {
                    let dcb = &mut dcols[..rows * bw];
                    gemm(rows, cout, bw, (wt, 1, rows), (dyb, ncols, 1), 0.0, dcb);
                    let dxi = &mut dx[i * isz..(i + 1) * isz];
                    if g.is_pointwise() {
                        dxi.iter_mut().zip(dcb.iter()).for_each(|(a, b)| *a += b);
                    } else {
                        col2im_rows(dcb, g, oy0, oy1, dxi);
                    }
                }
            }
        }
        if want_w {
            self.accumulate(w, |gw| gw.iter_mut().zip(&dw).for_each(|(a, b)| *a += b));
        }
        if want_x {
            self.accumulate(x, |gx| gx.iter_mut().zip(&dx).for_each(|(a, b)| *a += b));
        }
    }

    fn backprop_deconv(&mut self, x: Var, w: Var, g: &Window, cin: usize, dy: &[f64]) {
        let (kt, hw) = (g.rows(), g.cols());
        let n = self.value(x).dims()[0];
        let osz = g.c * g.h * g.w;
        let (want_x, want_w) = (self.wants(x), self.wants(w));
        if !want_x && !want_w {
            return;
        }
        let xin = self.value(x).data();
        let wt = self.value(w).data();
        let mut dw = if want_w { vec![0.0; cin * kt] } else { Vec::new() };
        let mut dx = if want_x { vec![0.0; n * cin * hw] } else { Vec::new() };
        let mut dcols = vec![0.0; kt * hw];
        for i in 0..n {
            im2col(&dy[i * osz..(i + 1) * osz], g, &mut dcols);
            if want_x {
                let dxi = &mut dx[i * cin * hw..(i + 1) * cin * hw];
                gemm(cin, kt, hw, (wt, kt, 1), (&dcols, hw, 1), 0.0, dxi);
            }
            if want_w {
                let xi = &xin[i * cin * hw..(i + 1) * cin * hw];
                gemm(cin, hw, kt, (xi, hw, 1), (&dcols, 1, hw), 1.0, &mut dw);
            }
        }
        if want_w {
            self.accumulate(w, |gw| gw.iter_mut().zip(&dw).for_each(|(a, b)| *a += b));
        }
        if want_x {
            self.accumulate(x, |gx| gx.iter_mut().zip(&dx).for_each(|(a, b)| *a += b));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_bn(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: &[f64],
        inv_std: &[f64],
        train: bool,
        dy: &[f64],
    ) {
        let (n, c, h, w) = self.value(x).nchw().expect("bn input is rank 4");
        let hw = h * w;
        let m = (n * hw) as f64;
        let gm = self.value(gamma).data().to_vec();
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    sum_dy[ch] += dy[j];
                    sum_dy_xhat[ch] += dy[j] * xhat[j];
                }
            }
        }
        self.accumulate(gamma, |g| g.iter_mut().zip(&sum_dy_xhat).for_each(|(a, b)| *a += b));
        self.accumulate(beta, |g| g.iter_mut().zip(&sum_dy).for_each(|(a, b)| *a += b));
        self.accumulate(x, |gx| {
            for i in 0..n {
                for ch in 0..c {
                    let off = (i * c + ch) * hw;
                    let scale = gm[ch] * inv_std[ch];
                    for j in off..off + hw {
                        gx[j] += if train {
                            scale * (dy[j] - sum_dy[ch] / m - xhat[j] * sum_dy_xhat[ch] / m)
                        } else {
                            scale * dy[j]
                        };
                    }
                }
            }
        });
    }
}

/// Numerically stable two-class softmax.
pub fn softmax_pair(a: f64, b: f64) -> [f64; 2] {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let s = ea + eb;
    [ea / s, eb / s]
}
