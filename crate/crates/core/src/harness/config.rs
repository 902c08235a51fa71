use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::{AugmentConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::EvalFilter;
use crate::geometry::ScaleDenominator;
use crate::network::{FusionMode, LayerSpec, NetworkSpec};

use super::train::TrainConfig;

/// Evaluation settings: pre-filter, match threshold, candidates kept per
/// image before suppression, and the ellipse raster resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub filter: EvalFilter,
    pub iou_threshold: f64,
    pub top_k: usize,
    pub raster_scale: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            filter: EvalFilter::default(),
            iou_threshold: 0.5,
            top_k: 400,
            raster_scale: 4,
        }
    }
}

/// Everything a run needs, read from `section.key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        let network = NetworkSpec::desk(FusionMode::B);
        let size = network.input_size;
        let mut synth = SynthConfig::new(2000, 1);
        synth.width = size;
        synth.height = size;
        let mut augment = AugmentConfig::new(size);
        augment.crop = false;
        Config {
            network,
            train: TrainConfig::default(),
            augment,
            eval: EvalConfig::default(),
            synth,
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn bad(e: &Entry, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        line: e.line,
        msg: msg.to_string(),
    }
}

fn scalar<T: FromStr>(e: &Entry, key: &str) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| bad(e, format!("`{key}`: cannot parse `{}`", e.value)))
}

fn list<T: FromStr>(e: &Entry, key: &str) -> Result<Vec<T>> {
    e.value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(e, format!("`{key}`: cannot parse `{s}`"))))
        .collect()
}

fn pair<T: FromStr + Copy>(e: &Entry, key: &str) -> Result<(T, T)> {
    match list::<T>(e, key)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(bad(e, format!("`{key}` takes two comma-separated values"))),
    }
}

fn denominator(e: &Entry) -> Result<ScaleDenominator> {
    match e.value.as_str() {
        "l-1" => Ok(ScaleDenominator::LevelsMinusOne),
        "l-2" => Ok(ScaleDenominator::LevelsMinusTwo),
        v => Err(bad(e, format!("`anchors.denominator` is l-1 or l-2, got `{v}`"))),
    }
}

fn split_lines(text: &str) -> Result<BTreeMap<String, Entry>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `section.key = value`, got `{l}`"),
        })?;
        let key = k.trim().to_string();
        if !key.contains('.') {
            return Err(Error::Parse {
                line,
                msg: format!("key `{key}` has no section"),
            });
        }
        let entry = Entry {
            line,
            value: v.trim().to_string(),
        };
        if map.insert(key.clone(), entry).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("`{key}` given twice"),
            });
        }
    }
    Ok(map)
}

fn preset(name: &str) -> Option<(NetworkSpec, Vec<usize>, Vec<usize>, bool)> {
    match name {
        "desk" => Some((NetworkSpec::desk(FusionMode::B), vec![8, 16, 32, 64], vec![1, 2, 2, 2], true)),
        "vgg16" => Some((
            NetworkSpec::vgg16(),
            vec![64, 128, 256, 512, 512],
            vec![2, 2, 3, 3, 3],
            false,
        )),
        _ => None,
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Config::parse_unchecked(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_unchecked(text: &str) -> Result<Self> {
        let mut map = split_lines(text)?;
        let mut take = |k: &str| map.remove(k);
        let mut cfg = Config::default();

        let (mut net, mut channels, mut convs, mut bn) = match take("network.preset") {
            Some(e) => preset(&e.value).ok_or_else(|| bad(&e, format!("unknown preset `{}`", e.value)))?,
            None => preset("desk").expect("desk preset"),
        };
        let mut replan = false;
        if let Some(e) = take("network.channels") {
            channels = list(&e, "network.channels")?;
            replan = true;
        }
        if let Some(e) = take("network.convs") {
            convs = list(&e, "network.convs")?;
            replan = true;
        }
        if let Some(e) = take("network.batch_norm") {
            bn = scalar(&e, "network.batch_norm")?;
            replan = true;
        }
        if replan {
            if channels.len() != convs.len() {
                return Err(Error::Validation(vec![format!(
                    "network.channels has {} stages but network.convs has {}",
                    channels.len(),
                    convs.len()
                )]));
            }
            net.stages = NetworkSpec::plain_stages(&channels, &convs, bn);
        }
        let mut explicit = Vec::new();
        for i in 0.. {
            let Some(e) = take(&format!("network.stage{i}")) else { break };
            let layers = e
                .value
                .split_whitespace()
                .map(|t| t.parse::<LayerSpec>().map_err(|err| bad(&e, err)))
                .collect::<Result<Vec<_>>>()?;
            explicit.push(layers);
        }
        if !explicit.is_empty() {
            net.stages = explicit;
            net.assign_default_names();
        }
        if let Some(e) = take("network.input_size") {
            net.input_size = scalar(&e, "network.input_size")?;
            net.anchors.d_min = net.input_size as f64;
        }
        if let Some(e) = take("network.input_channels") {
            net.input_channels = scalar(&e, "network.input_channels")?;
        }
        if let Some(e) = take("network.taps") {
            net.taps = list(&e, "network.taps")?;
        }
        if let Some(e) = take("network.fusion") {
            net.fusion = e.value.parse().map_err(|err| bad(&e, err))?;
        }
        if let Some(e) = take("network.decoder_channels") {
            net.decoder_channels = scalar(&e, "network.decoder_channels")?;
        }
        if let Some(e) = take("network.upsample") {
            net.upsample = scalar(&e, "network.upsample")?;
        }

        let a = &mut net.anchors;
        a.levels = net.taps.len();
        if let Some(e) = take("anchors.d_min") {
            a.d_min = scalar(&e, "anchors.d_min")?;
        }
        if let Some(e) = take("anchors.s0") {
            a.s0 = scalar(&e, "anchors.s0")?;
        }
        if let Some(e) = take("anchors.sl") {
            a.sl = scalar(&e, "anchors.sl")?;
        }
        if let Some(e) = take("anchors.rf_first") {
            a.s0 = scalar::<f64>(&e, "anchors.rf_first")? / a.d_min;
        }
        if let Some(e) = take("anchors.rf_last") {
            a.sl = scalar::<f64>(&e, "anchors.rf_last")? / a.d_min;
        }
        if let Some(e) = take("anchors.delta") {
            a.delta = scalar(&e, "anchors.delta")?;
        }
        if let Some(e) = take("anchors.aspect_ratios") {
            a.aspect_ratios = list(&e, "anchors.aspect_ratios")?;
        }
        if let Some(e) = take("anchors.denominator") {
            a.denominator = denominator(&e)?;
        }
        cfg.augment.size = net.input_size;
        cfg.synth.width = net.input_size;
        cfg.synth.height = net.input_size;
        cfg.network = net;

        let t = &mut cfg.train;
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(e) = take($key) {
                    $field = scalar(&e, $key)?;
                }
            };
        }
        set!("train.lr0", t.lr0);
        set!("train.momentum", t.momentum);
        set!("train.weight_decay", t.weight_decay);
        set!("train.lr_drop_factor", t.lr_drop_factor);
        set!("train.warmup_iters", t.warmup_iters);
        set!("train.batch_size", t.batch_size);
        set!("train.total_iters", t.total_iters);
        set!("train.seed", t.seed);
        set!("train.ohem_ratio", t.loss.ohem_ratio);
        set!("train.alpha", t.loss.alpha);
        set!("train.match_threshold", t.match_threshold);
        set!("train.checkpoint_every", t.checkpoint_every);
        if let Some(e) = take("train.lr_drops") {
            t.lr_drops = list(&e, "train.lr_drops")?;
        }

        let g = &mut cfg.augment;
        set!("augment.crop", g.crop);
        set!("augment.flip_prob", g.flip_prob);
        set!("augment.photometric", g.photometric);
        set!("augment.brightness", g.brightness);
        if let Some(e) = take("augment.contrast") {
            g.contrast = pair(&e, "augment.contrast")?;
        }

        let v = &mut cfg.eval;
        set!("eval.score_floor", v.filter.score_floor);
        set!("eval.nms_iou", v.filter.nms_iou);
        set!("eval.iou_threshold", v.iou_threshold);
        set!("eval.top_k", v.top_k);
        set!("eval.raster_scale", v.raster_scale);

        let s = &mut cfg.synth;
        set!("synth.count", s.count);
        set!("synth.seed", s.seed);
        if let Some(e) = take("synth.faces") {
            s.faces = pair(&e, "synth.faces")?;
        }
        if let Some(e) = take("synth.face_sizes") {
            s.size_range = pair(&e, "synth.face_sizes")?;
        }
        if let Some(e) = take("synth.clutter") {
            s.clutter = pair(&e, "synth.clutter")?;
        }

        if let Some((k, e)) = map.into_iter().next() {
            return Err(bad(&e, format!("unknown key `{k}`")));
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for r in [self.network.validate(), self.train.validate(), self.synth.validate()] {
            if let Err(e) = r {
                match e {
                    Error::Validation(v) => errs.extend(v),
                    other => errs.push(other.to_string()),
                }
            }
        }
        let f = &self.eval.filter;
        if !(0.0..=1.0).contains(&f.score_floor) || !(f.nms_iou > 0.0 && f.nms_iou <= 1.0) {
            errs.push("eval.score_floor must lie in [0, 1] and eval.nms_iou in (0, 1]".into());
        }
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold < 1.0) {
            errs.push(format!("eval.iou_threshold must lie in (0, 1), got {}", self.eval.iou_threshold));
        }
        if self.eval.raster_scale == 0 || self.eval.top_k == 0 {
            errs.push("eval.raster_scale and eval.top_k must be positive".into());
        }
        let g = &self.augment;
        if !(0.0..=1.0).contains(&g.flip_prob) || g.brightness < 0.0 || !(0.0 < g.contrast.0 && g.contrast.0 <= g.contrast.1)
        {
            errs.push("augment: flip_prob in [0, 1], brightness >= 0, 0 < contrast lo <= hi".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Fully explicit `network.*` and `anchors.*` lines that [`Config::parse`]
/// turns back into an equal spec.
pub fn spec_to_text(spec: &NetworkSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "network.input_size = {}", spec.input_size);
    let _ = writeln!(s, "network.input_channels = {}", spec.input_channels);
    for (i, stage) in spec.stages.iter().enumerate() {
        let toks: Vec<String> = stage.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "network.stage{i} = {}", toks.join(" "));
    }
    let _ = writeln!(s, "network.taps = {}", join(&spec.taps));
    let _ = writeln!(s, "network.fusion = {}", spec.fusion);
    let _ = writeln!(s, "network.decoder_channels = {}", spec.decoder_channels);
    let _ = writeln!(s, "network.upsample = {}", spec.upsample);
    let a = &spec.anchors;
    let _ = writeln!(s, "anchors.d_min = {}", a.d_min);
    let _ = writeln!(s, "anchors.s0 = {}", a.s0);
    let _ = writeln!(s, "anchors.sl = {}", a.sl);
    let _ = writeln!(s, "anchors.delta = {}", a.delta);
    let _ = writeln!(s, "anchors.aspect_ratios = {}", join(&a.aspect_ratios));
    let den = match a.denominator {
        ScaleDenominator::LevelsMinusOne => "l-1",
        ScaleDenominator::LevelsMinusTwo => "l-2",
    };
    let _ = writeln!(s, "anchors.denominator = {den}");
    s
}

/// Parse the output of [`spec_to_text`].
pub fn spec_from_text(text: &str) -> Result<NetworkSpec> {
    let spec = Config::parse_unchecked(text)?.network;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        assert_eq!(Config::parse("# nothing\n\n").unwrap(), Config::default());
    }

    #[test]
    fn unknown_key_is_an_error_with_its_line() {
        let e = Config::parse("train.lr0 = 0.01\ntrain.lr = 0.1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn overrides_apply() {
        let c = Config::parse("network.fusion = A\ntrain.lr_drops = 10, 20\naugment.contrast = 0.5,1.5\n").unwrap();
        assert_eq!(c.network.fusion, FusionMode::A);
        assert_eq!(c.train.lr_drops, vec![10, 20]);
        assert_eq!(c.augment.contrast, (0.5, 1.5));
    }

    #[test]
    fn spec_echo_round_trips() {
        for spec in [NetworkSpec::desk(FusionMode::A), NetworkSpec::vgg16()] {
            assert_eq!(spec_from_text(&spec_to_text(&spec)).unwrap(), spec);
        }
    }

    #[test]
    fn invalid_values_collect() {
        let e = Config::parse("train.lr0 = -1\ntrain.batch_size = 0\n").unwrap_err();
        match e {
            Error::Validation(v) => assert!(v.len() >= 2, "{v:?}"),
            other => panic!("{other}"),
        }
    }
}
