use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::AnchorParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
    MaxPool,
    BatchNorm,
    Relu,
}

/// One encoder layer. `channels` is the output channel count of conv and
/// deconv layers and ignored otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub channels: usize,
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, k: usize, stride: usize, pad: usize, channels: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            k,
            stride,
            pad,
            channels,
        }
    }

    pub fn deconv(name: impl Into<String>, k: usize, stride: usize, pad: usize, channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Deconv,
            ..LayerSpec::conv(name, k, stride, pad, channels)
        }
    }

    pub fn maxpool(name: impl Into<String>, k: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            ..LayerSpec::conv(name, k, stride, 0, 0)
        }
    }

    pub fn batch_norm(name: impl Into<String>) -> Self {
        LayerSpec {
            kind: LayerKind::BatchNorm,
            ..LayerSpec::conv(name, 1, 1, 0, 0)
        }
    }

    pub fn relu(name: impl Into<String>) -> Self {
        LayerSpec {
            kind: LayerKind::Relu,
            ..LayerSpec::conv(name, 1, 1, 0, 0)
        }
    }

    /// Spatial output size for input size `n`, or `None` when the window
    /// does not fit.
    pub fn out_size(&self, n: usize) -> Option<usize> {
        match self.kind {
            LayerKind::Conv | LayerKind::MaxPool => {
                let padded = n + 2 * self.pad;
                (padded >= self.k).then(|| (padded - self.k) / self.stride + 1)
            }
            LayerKind::Deconv => ((n - 1) * self.stride + self.k).checked_sub(2 * self.pad),
            LayerKind::BatchNorm | LayerKind::Relu => Some(n),
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let windowed = matches!(self.kind, LayerKind::Conv | LayerKind::Deconv | LayerKind::MaxPool);
        if windowed && (self.k == 0 || self.stride == 0) {
            errs.push(format!("{}: kernel and stride must be >= 1", self.name));
        }
        if matches!(self.kind, LayerKind::Conv | LayerKind::Deconv) && self.channels == 0 {
            errs.push(format!("{}: output channels must be >= 1", self.name));
        }
        if windowed && self.k > 0 && self.pad >= self.k {
            errs.push(format!("{}: pad {} must be smaller than kernel {}", self.name, self.pad, self.k));
        }
        errs
    }
}

/// Compact token form: `conv3s1p1:16`, `deconv2s2p0:16`, `pool2s2`, `bn`,
/// `relu`. Names are not part of the token.
impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::Conv => write!(f, "conv{}s{}p{}:{}", self.k, self.stride, self.pad, self.channels),
            LayerKind::Deconv => write!(f, "deconv{}s{}p{}:{}", self.k, self.stride, self.pad, self.channels),
            LayerKind::MaxPool => write!(f, "pool{}s{}", self.k, self.stride),
            LayerKind::BatchNorm => write!(f, "bn"),
            LayerKind::Relu => write!(f, "relu"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = String;

    fn from_str(tok: &str) -> std::result::Result<Self, String> {
        let bad = || format!("unrecognized layer token `{tok}`");
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        match tok {
            "bn" => return Ok(LayerSpec::batch_norm("")),
            "relu" => return Ok(LayerSpec::relu("")),
            _ => {}
        }
        if let Some(rest) = tok.strip_prefix("pool") {
            let (k, s) = rest.split_once('s').ok_or_else(bad)?;
            return Ok(LayerSpec::maxpool("", num(k)?, num(s)?));
        }
        let (deconv, rest) = match tok.strip_prefix("deconv") {
            Some(r) => (true, r),
            None => (false, tok.strip_prefix("conv").ok_or_else(bad)?),
        };
        let (geom, c) = rest.split_once(':').ok_or_else(bad)?;
        let (k, sp) = geom.split_once('s').ok_or_else(bad)?;
        let (s, p) = sp.split_once('p').ok_or_else(bad)?;
        let (k, s, p, c) = (num(k)?, num(s)?, num(p)?, num(c)?);
        Ok(if deconv {
            LayerSpec::deconv("", k, s, p, c)
        } else {
            LayerSpec::conv("", k, s, p, c)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Three stacked 3×3 convolutions on the shallow branch.
    A,
    /// A single 1×1 channel-adjust convolution on the shallow branch.
    B,
}

impl FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "A" | "a" => Ok(FusionMode::A),
            "B" | "b" => Ok(FusionMode::B),
            _ => Err(format!("fusion mode must be A or B, got `{s}`")),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::A => "A",
            FusionMode::B => "B",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    /// Square input side, pixels.
    pub input_size: usize,
    pub input_channels: usize,
    pub stages: Vec<Vec<LayerSpec>>,
    /// Stage indices whose outputs feed the decoder, deepest first.
    pub taps: Vec<usize>,
    pub fusion: FusionMode,
    /// Channel width of every fused map below the deepest one.
    pub decoder_channels: usize,
    /// Kernel and stride of the upsampling deconvolution.
    pub upsample: usize,
    pub anchors: AnchorParams,
}

impl NetworkSpec {
    /// Stages of `convs[i]` 3×3 convolutions (each optionally followed by
    /// batch norm) with ReLU, closed by a 2×2 max pool. Layers are named
    /// `conv{s}_{i}`, `bn{s}_{i}`, `relu{s}_{i}`, `pool{s}` with 1-based `s`.
    pub fn plain_stages(channels: &[usize], convs: &[usize], batch_norm: bool) -> Vec<Vec<LayerSpec>> {
        channels
            .iter()
            .zip(convs)
            .enumerate()
            .map(|(s, (&c, &n))| {
                let s = s + 1;
                let mut layers = Vec::new();
                for i in 1..=n {
                    layers.push(LayerSpec::conv(format!("conv{s}_{i}"), 3, 1, 1, c));
                    if batch_norm {
                        layers.push(LayerSpec::batch_norm(format!("bn{s}_{i}")));
                    }
                    layers.push(LayerSpec::relu(format!("relu{s}_{i}")));
                }
                layers.push(LayerSpec::maxpool(format!("pool{s}"), 2, 2));
                layers
            })
            .collect()
    }

    /// The desk-scale detector: four conv-BN-ReLU stages on a 128×128
    /// grayscale input, predicting from the outputs of stages 2, 3 and 4.
    pub fn desk(fusion: FusionMode) -> Self {
        NetworkSpec {
            input_size: 128,
            input_channels: 1,
            stages: Self::plain_stages(&[8, 16, 32, 64], &[1, 2, 2, 2], true),
            taps: vec![3, 2, 1],
            fusion,
            decoder_channels: 32,
            upsample: 2,
            anchors: AnchorParams::from_receptive_fields(8.0, 40.0, 3, 128.0),
        }
    }

    /// VGG-16's convolutional body at 512×512, tapped after pools 3, 4 and 5
    /// (strides 8, 16, 32). Meant for shape and receptive-field analysis.
    pub fn vgg16() -> Self {
        NetworkSpec {
            input_size: 512,
            input_channels: 3,
            stages: Self::plain_stages(&[64, 128, 256, 512, 512], &[2, 2, 3, 3, 3], false),
            taps: vec![4, 3, 2],
            fusion: FusionMode::B,
            decoder_channels: 256,
            upsample: 2,
            anchors: AnchorParams::from_receptive_fields(10.24, 30.72, 3, 512.0),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.stages.iter().flatten()
    }

    /// Rename every stage layer to the `kind{stage}_{i}` convention.
    pub fn assign_default_names(&mut self) {
        for (s, stage) in self.stages.iter_mut().enumerate() {
            let s = s + 1;
            let mut counts = [0usize; 5];
            for l in stage.iter_mut() {
                let slot = l.kind as usize;
                counts[slot] += 1;
                let i = counts[slot];
                l.name = match l.kind {
                    LayerKind::Conv => format!("conv{s}_{i}"),
                    LayerKind::Deconv => format!("deconv{s}_{i}"),
                    LayerKind::BatchNorm => format!("bn{s}_{i}"),
                    LayerKind::Relu => format!("relu{s}_{i}"),
                    LayerKind::MaxPool if i == 1 => format!("pool{s}"),
                    LayerKind::MaxPool => format!("pool{s}_{i}"),
                };
            }
        }
    }

    /// `(channels, spatial size)` after each stage.
    pub fn stage_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let mut c = self.input_channels;
        let mut n = self.input_size;
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for l in stage {
                n = l.out_size(n).filter(|&v| v > 0).ok_or_else(|| {
                    Error::dim(format!("{}: window does not fit a {n}x{n} input", l.name))
                })?;
                if matches!(l.kind, LayerKind::Conv | LayerKind::Deconv) {
                    c = l.channels;
                }
            }
            out.push((c, n));
        }
        Ok(out)
    }

    /// Feature-map side of every tap, in hierarchy order (shallowest first).
    pub fn hierarchy_sizes(&self) -> Result<Vec<usize>> {
        let shapes = self.stage_shapes()?;
        Ok(self.taps.iter().rev().map(|&t| shapes[t].1).collect())
    }

    /// Input channels of the prediction head at hierarchy `k`.
    pub fn head_channels(&self, k: usize) -> Result<usize> {
        let shapes = self.stage_shapes()?;
        let deepest = self.taps.len() - 1;
        Ok(if k == deepest {
            shapes[self.taps[0]].0
        } else {
            self.decoder_channels
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.input_size == 0 {
            errs.push("input size must be positive".to_string());
        }
        if !matches!(self.input_channels, 1 | 3) {
            errs.push(format!("input channels must be 1 or 3, got {}", self.input_channels));
        }
        if self.stages.is_empty() {
            errs.push("at least one encoder stage is required".into());
        }
        for (s, stage) in self.stages.iter().enumerate() {
            if stage.is_empty() {
                errs.push(format!("stage {} has no layers", s + 1));
            }
            for l in stage {
                errs.extend(l.problems());
            }
        }
        let mut seen = std::collections::HashSet::new();
        for l in self.layers() {
            if !seen.insert(l.name.as_str()) {
                errs.push(format!("duplicate layer name `{}`", l.name));
            }
        }
        if self.taps.len() < 2 {
            errs.push(format!("at least 2 taps are required, got {}", self.taps.len()));
        }
        if let Some(&t) = self.taps.iter().find(|&&t| t >= self.stages.len()) {
            errs.push(format!("tap {t} names a missing stage ({} stages)", self.stages.len()));
        }
        if self.taps.windows(2).any(|w| w[0] <= w[1]) {
            errs.push("taps must be listed deepest first with strictly decreasing stage index".into());
        }
        if self.decoder_channels == 0 {
            errs.push("decoder channels must be positive".into());
        }
        if self.upsample < 1 {
            errs.push("upsample factor must be >= 1".into());
        }
        if self.anchors.levels != self.taps.len() {
            errs.push(format!(
                "anchor levels ({}) must equal the number of taps ({})",
                self.anchors.levels,
                self.taps.len()
            ));
        }
        if let Err(Error::Validation(v)) = self.anchors.validate() {
            errs.extend(v);
        }
        if errs.is_empty() {
            match self.stage_shapes() {
                Ok(shapes) => {
                    for w in self.taps.windows(2) {
                        let (deep, shallow) = (shapes[w[0]].1, shapes[w[1]].1);
                        if deep * self.upsample != shallow {
                            errs.push(format!(
                                "tap of stage {} ({deep}px) does not upsample by {} to stage {} ({shallow}px)",
                                w[0] + 1,
                                self.upsample,
                                w[1] + 1
                            ));
                        }
                    }
                }
                Err(e) => errs.push(e.to_string()),
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_tokens_round_trip() {
        for tok in ["conv3s1p1:16", "deconv2s2p0:8", "pool2s2", "bn", "relu"] {
            let l: LayerSpec = tok.parse().unwrap();
            assert_eq!(l.to_string(), tok);
        }
        assert!("conv3:16".parse::<LayerSpec>().is_err());
        assert!("lstm".parse::<LayerSpec>().is_err());
    }

    #[test]
    fn desk_and_vgg_specs_validate() {
        NetworkSpec::desk(FusionMode::A).validate().unwrap();
        NetworkSpec::desk(FusionMode::B).validate().unwrap();
        NetworkSpec::vgg16().validate().unwrap();
    }

    #[test]
    fn tap_sizes_follow_stride_products() {
        assert_eq!(NetworkSpec::vgg16().hierarchy_sizes().unwrap(), vec![64, 32, 16]);
        assert_eq!(NetworkSpec::desk(FusionMode::B).hierarchy_sizes().unwrap(), vec![32, 16, 8]);
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut s = NetworkSpec::desk(FusionMode::B);
        s.taps = vec![3];
        s.decoder_channels = 0;
        let Err(Error::Validation(errs)) = s.validate() else { panic!() };
        assert!(errs.len() >= 3, "{errs:?}");
    }

    #[test]
    fn non_adjacent_taps_are_rejected() {
        let mut s = NetworkSpec::desk(FusionMode::B);
        s.taps = vec![3, 1];
        s.anchors.levels = 2;
        assert!(s.validate().is_err());
    }

    #[test]
    fn default_names_follow_convention() {
        let mut s = NetworkSpec::desk(FusionMode::B);
        let before = s.stages.clone();
        s.assign_default_names();
        assert_eq!(s.stages, before);
    }
}
