use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use std::path::Path;

use super::{ellipse_to_box, save_image, write_fddb, write_wider, AnnotatedImage, EllipseAnnotation, FddbRecord, WiderRecord};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Inclusive range of faces per image.
    pub faces: (usize, usize),
    /// Inclusive range of face size, `max(width, height)` in pixels.
    pub size_range: (f64, f64),
    /// Inclusive range of distractor shapes per image.
    pub clutter: (usize, usize),
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        SynthConfig {
            count,
            width: 128,
            height: 128,
            faces: (1, 3),
            size_range: (8.0, 48.0),
            clutter: (2, 6),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.width == 0 || self.height == 0 {
            errs.push("image dims must be positive".to_string());
        }
        let (lo, hi) = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi <= self.width.min(self.height) as f64) {
            errs.push(format!("face size range [{lo}, {hi}] must be positive and fit the image"));
        }
        if self.faces.0 > self.faces.1 || self.clutter.0 > self.clutter.1 {
            errs.push("count ranges must have min <= max".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// A synthetic image with both box and ellipse annotations of its faces.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub item: AnnotatedImage,
    pub ellipses: Vec<EllipseAnnotation>,
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

const SUB: usize = 4;

impl Canvas {
    /// Blend `tone` into pixels by the fraction of a 4×4 subsample grid for
    /// which `inside` holds, within `bounds`.
    fn fill(&mut self, bounds: BBox, tone: f64, inside: impl Fn(f64, f64) -> bool) {
        let x0 = bounds.x1.floor().max(0.0) as usize;
        let y0 = bounds.y1.floor().max(0.0) as usize;
        let x1 = (bounds.x2.ceil().max(0.0) as usize).min(self.w);
        let y1 = (bounds.y2.ceil().max(0.0) as usize).min(self.h);
        for y in y0..y1 {
            for x in x0..x1 {
                let mut hits = 0;
                for sy in 0..SUB {
                    for sx in 0..SUB {
                        let fx = x as f64 + (sx as f64 + 0.5) / SUB as f64;
                        let fy = y as f64 + (sy as f64 + 0.5) / SUB as f64;
                        if inside(fx, fy) {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let a = hits as f64 / (SUB * SUB) as f64;
                    let p = &mut self.px[y * self.w + x];
                    *p = *p * (1.0 - a) + tone * a;
                }
            }
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, tone: f64) {
        let b = BBox::new(cx - rx, cy - ry, cx + rx, cy + ry);
        self.fill(b, tone, |x, y| ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0);
    }

    fn rect(&mut self, b: BBox, tone: f64) {
        self.fill(b, tone, |x, y| b.contains_point(x, y));
    }
}

/// Face drawn at `(cx, cy)` with vertical semi-axis `a` and horizontal
/// semi-axis `b`, including hair above and a neck below.
fn draw_face<R: Rng + ?Sized>(c: &mut Canvas, cx: f64, cy: f64, a: f64, b: f64, rng: &mut R) {
    let skin = rng.random_range(0.55..0.92);
    let hair = rng.random_range(0.02..0.22);
    // neck first so the face covers its top edge
    let neck = BBox::new(cx - 0.42 * b, cy + 0.6 * a, cx + 0.42 * b, cy + 1.45 * a);
    c.rect(neck, skin * 0.82);
    let (hx, hy, hrx, hry) = (cx, cy - 0.12 * a, 1.14 * b, 1.1 * a);
    c.fill(
        BBox::new(hx - hrx, hy - hry, hx + hrx, hy + hry),
        hair,
        |x, y| y < cy - 0.1 * a && ((x - hx) / hrx).powi(2) + ((y - hy) / hry).powi(2) <= 1.0,
    );
    c.ellipse(cx, cy, b, a, skin);
    let eye_r = (0.13 * b).max(0.6);
    for side in [-1.0, 1.0] {
        c.ellipse(cx + side * 0.38 * b, cy - 0.12 * a, eye_r, eye_r * 0.8, skin * 0.25);
    }
    let mouth_h = (0.07 * a).max(0.5);
    c.rect(
        BBox::new(cx - 0.3 * b, cy + 0.42 * a - mouth_h, cx + 0.3 * b, cy + 0.42 * a + mouth_h),
        skin * 0.45,
    );
}

fn draw_clutter<R: Rng + ?Sized>(c: &mut Canvas, rng: &mut R) {
    let (w, h) = (c.w as f64, c.h as f64);
    let tone = rng.random_range(0.0..1.0);
    let cx = rng.random_range(0.0..w);
    let cy = rng.random_range(0.0..h);
    match rng.random_range(0..3) {
        0 => {
            let (rw, rh) = (rng.random_range(2.0..20.0), rng.random_range(2.0..20.0));
            c.rect(BBox::new(cx - rw, cy - rh, cx + rw, cy + rh), tone);
        }
        1 => {
            let rx = rng.random_range(3.0..22.0);
            let ry = rx * rng.random_range(0.5..1.6);
            c.ellipse(cx, cy, rx, ry, tone);
        }
        _ => {
            let len = rng.random_range(10.0..60.0);
            let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let half = rng.random_range(0.5..1.8);
            let (dx, dy) = (th.cos(), th.sin());
            let b = BBox::new(cx - len, cy - len, cx + len, cy + len);
            c.fill(b, tone, |x, y| {
                let (u, v) = (x - cx, y - cy);
                (u * dx + v * dy).abs() <= len / 2.0 && (-u * dy + v * dx).abs() <= half
            });
        }
    }
}

/// Generate image `index` of the corpus described by `cfg`. Each image has
/// its own ChaCha stream, so any subset can be regenerated independently.
pub fn synth_one(cfg: &SynthConfig, index: usize) -> SynthImage {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (w, h) = (cfg.width, cfg.height);
    let (wf, hf) = (w as f64, h as f64);

    let base = rng.random_range(0.2..0.8);
    let (gx, gy) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let freq = rng.random_range(0.02..0.08);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / wf - 0.5, y as f64 / hf - 0.5);
            let wave = 0.06 * ((x as f64 + 0.7 * y as f64) * freq + phase).sin();
            px.push(base + gx * u + gy * v + wave);
        }
    }
    let mut canvas = Canvas { w, h, px };
    for _ in 0..rng.random_range(cfg.clutter.0..=cfg.clutter.1) {
        draw_clutter(&mut canvas, &mut rng);
    }

    let n_faces = rng.random_range(cfg.faces.0..=cfg.faces.1);
    let mut taken: Vec<BBox> = Vec::new();
    let mut ellipses = Vec::new();
    for _ in 0..n_faces {
        for _ in 0..100 {
            let size = rng.random_range(cfg.size_range.0..=cfg.size_range.1);
            let a = size / 2.0;
            let b = a * rng.random_range(0.7..0.85);
            let cx = rng.random_range(b..=wf - b);
            let cy = rng.random_range(a..=hf - a);
            // face plus hair and neck
            let region = BBox::new(cx - 1.2 * b, cy - 1.25 * a, cx + 1.2 * b, cy + 1.5 * a);
            if taken.iter().any(|t| t.intersection_area(&region) > 0.0) {
                continue;
            }
            draw_face(&mut canvas, cx, cy, a, b, &mut rng);
            taken.push(region);
            ellipses.push(EllipseAnnotation {
                major: a,
                minor: b,
                angle: FRAC_PI_2,
                cx,
                cy,
                score: 1.0,
            });
            break;
        }
    }

    let noise = Normal::new(0.0, 0.02).expect("valid sigma");
    let data: Vec<f64> = canvas
        .px
        .iter()
        .map(|&p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    let image = Tensor::new(vec![1, h, w], data).expect("synth dims");
    let boxes = ellipses.iter().map(ellipse_to_box).collect();
    SynthImage {
        item: AnnotatedImage {
            image,
            boxes,
            source: format!("synth_{index:05}.png"),
        },
        ellipses,
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SynthImage>> {
    cfg.validate()?;
    Ok((0..cfg.count).map(|i| synth_one(cfg, i)).collect())
}

/// File names of a corpus directory: box annotations, ellipse annotations
/// and the image folder they refer to.
pub const CORPUS_BOXES: &str = "wider.txt";
pub const CORPUS_ELLIPSES: &str = "fddb.txt";
pub const CORPUS_IMAGES: &str = "images";

/// Write PNG images plus both annotation files under `dir`.
pub fn write_corpus(dir: &Path, images: &[SynthImage]) -> Result<()> {
    let mut boxes = Vec::with_capacity(images.len());
    let mut ellipses = Vec::with_capacity(images.len());
    for s in images {
        let rel = format!("{CORPUS_IMAGES}/{}", s.item.source);
        save_image(&dir.join(&rel), &s.item.image)?;
        boxes.push(WiderRecord {
            path: rel.clone(),
            boxes: s.item.boxes.clone(),
        });
        ellipses.push(FddbRecord {
            path: rel,
            ellipses: s.ellipses.clone(),
        });
    }
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(CORPUS_BOXES, write_wider(&boxes))?;
    write(CORPUS_ELLIPSES, write_fddb(&ellipses))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::new(3, 11);
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig::new(3, 12);
        assert_ne!(synth_generate(&cfg).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn sizes_respect_range() {
        let mut cfg = SynthConfig::new(20, 5);
        cfg.size_range = (8.0, 16.0);
        for s in synth_generate(&cfg).unwrap() {
            for b in &s.item.boxes {
                let m = b.width().max(b.height());
                assert!((8.0 - 1e-9..=16.0 + 1e-9).contains(&m), "{m}");
            }
            assert!(s.item.is_valid());
        }
    }

    #[test]
    fn zero_faces_allowed() {
        let mut cfg = SynthConfig::new(4, 2);
        cfg.faces = (0, 0);
        assert!(synth_generate(&cfg).unwrap().iter().all(|s| s.item.boxes.is_empty()));
    }

    #[test]
    fn corpus_files_reload() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = synth_generate(&SynthConfig::new(3, 4)).unwrap();
        write_corpus(dir.path(), &imgs).unwrap();
        let text = std::fs::read_to_string(dir.path().join(CORPUS_BOXES)).unwrap();
        let recs = crate::data::parse_wider(&text).unwrap();
        let loaded = crate::data::load_wider(&recs, dir.path(), 1).unwrap();
        for (a, b) in loaded.iter().zip(&imgs) {
            assert!(a.image.max_abs_diff(&b.item.image) <= 0.5 / 255.0 + 1e-12);
            assert_eq!(a.boxes.len(), b.item.boxes.len());
        }
    }

    #[test]
    fn rejects_oversized_faces() {
        let mut cfg = SynthConfig::new(1, 0);
        cfg.size_range = (8.0, 400.0);
        assert!(synth_generate(&cfg).is_err());
    }
}
