use rand::seq::IndexedRandom;
use rand::Rng;

use super::AnnotatedImage;
use crate::geometry::BBox;
use crate::tensor::Tensor;

/// Crop side as a fraction of the image side.
pub const CROP_SCALES: [f64; 5] = [0.3, 0.5, 0.7, 0.9, 1.0];

/// Required fraction of some face that a crop must cover.
pub const MIN_COVERAGE_CHOICES: [f64; 3] = [0.5, 0.7, 0.9];

const CROP_RETRIES: usize = 50;

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn crop_pixels(t: &Tensor, x0: usize, y0: usize, cw: usize, ch: usize) -> Tensor {
    let d = t.dims();
    let (c, w) = (d[0], d[2]);
    let h = d[1];
    let src = t.data();
    let mut out = Vec::with_capacity(c * cw * ch);
    for k in 0..c {
        for y in y0..y0 + ch {
            let row = (k * h + y) * w;
            out.extend_from_slice(&src[row + x0..row + x0 + cw]);
        }
    }
    Tensor::new(vec![c, ch, cw], out).expect("crop dims")
}

/// Random crop with a face-coverage constraint.
///
/// The crop scale is drawn from [`CROP_SCALES`] and applied to both sides;
/// placement is uniform over integer offsets. With faces present a coverage
/// threshold is drawn from [`MIN_COVERAGE_CHOICES`] and the crop must hold
/// the center of some face and cover at least that fraction of its area.
/// After 50 rejected placements the whole image is returned. Faces whose
/// centers fall inside the crop are kept, clipped and translated.
pub fn random_crop_sample<R: Rng + ?Sized>(img: &AnnotatedImage, rng: &mut R) -> AnnotatedImage {
    let (w, h) = (img.width(), img.height());
    let scale = *CROP_SCALES.choose(rng).expect("non-empty");
    let min_cover = *MIN_COVERAGE_CHOICES.choose(rng).expect("non-empty");
    if scale >= 1.0 {
        return img.clone();
    }
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
    for _ in 0..CROP_RETRIES {
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        let crop = BBox::new(x0 as f64, y0 as f64, (x0 + cw) as f64, (y0 + ch) as f64);
        let holds_center = |b: &BBox| {
            let (cx, cy) = b.center();
            crop.contains_point(cx, cy)
        };
        let ok = img.boxes.is_empty()
            || img.boxes.iter().any(|b| {
                b.area() > 0.0 && holds_center(b) && crop.intersection_area(b) / b.area() >= min_cover
            });
        if !ok {
            continue;
        }
        let boxes = img
            .boxes
            .iter()
            .filter(|b| holds_center(b))
            .map(|b| {
                b.translate(-(x0 as f64), -(y0 as f64))
                    .clip(cw as f64, ch as f64)
            })
            .collect();
        return AnnotatedImage {
            image: crop_pixels(&img.image, x0, y0, cw, ch),
            boxes,
            source: img.source.clone(),
        };
    }
    img.clone()
}

/// Mirror the image left-right with probability `p`.
pub fn horizontal_flip<R: Rng + ?Sized>(img: &AnnotatedImage, p: f64, rng: &mut R) -> AnnotatedImage {
    if !(rng.random::<f64>() < p) {
        return img.clone();
    }
    let d = img.image.dims();
    let (c, h, w) = (d[0], d[1], d[2]);
    let src = img.image.data();
    let mut out = vec![0.0; src.len()];
    for row in 0..c * h {
        let off = row * w;
        for x in 0..w {
            out[off + x] = src[off + w - 1 - x];
        }
    }
    let wf = w as f64;
    AnnotatedImage {
        image: Tensor::new(d.to_vec(), out).expect("flip dims"),
        boxes: img
            .boxes
            .iter()
            .map(|b| BBox::new(wf - b.x2, b.y1, wf - b.x1, b.y2))
            .collect(),
        source: img.source.clone(),
    }
}

/// Brightness shift drawn from `U(−brightness, brightness)`, then contrast
/// scaling around the image mean by a factor from `U(contrast.0,
/// contrast.1)`, clamped to `[0, 1]`.
pub fn photometric_distort<R: Rng + ?Sized>(
    img: &AnnotatedImage,
    brightness: f64,
    contrast: (f64, f64),
    rng: &mut R,
) -> AnnotatedImage {
    let shift = uniform(rng, -brightness, brightness);
    let factor = uniform(rng, contrast.0, contrast.1);
    let src = img.image.data();
    let mean = src.iter().map(|v| v + shift).sum::<f64>() / src.len() as f64;
    let data = src
        .iter()
        .map(|&v| ((v + shift - mean) * factor + mean).clamp(0.0, 1.0))
        .collect();
    AnnotatedImage {
        image: Tensor::new(img.image.dims().to_vec(), data).expect("dims"),
        boxes: img.boxes.clone(),
        source: img.source.clone(),
    }
}

/// Bilinear resize to `(width, height)` with half-pixel-center alignment;
/// boxes scale by the per-axis ratios.
pub fn resize_with_boxes(img: &AnnotatedImage, size: (usize, usize)) -> AnnotatedImage {
    let (tw, th) = size;
    let d = img.image.dims();
    let (c, h, w) = (d[0], d[1], d[2]);
    let (sx, sy) = (w as f64 / tw as f64, h as f64 / th as f64);
    let taps = |dst: usize, ratio: f64, n: usize| {
        let s = ((dst as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..tw).map(|x| taps(x, sx, w)).collect();
    let ys: Vec<_> = (0..th).map(|y| taps(y, sy, h)).collect();
    let src = img.image.data();
    let mut out = Vec::with_capacity(c * tw * th);
    for k in 0..c {
        let plane = &src[k * h * w..(k + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    let (rx, ry) = (tw as f64 / w as f64, th as f64 / h as f64);
    AnnotatedImage {
        image: Tensor::new(vec![c, th, tw], out).expect("resize dims"),
        boxes: img.boxes.iter().map(|b| b.scale(rx, ry)).collect(),
        source: img.source.clone(),
    }
}

/// The training augmentation chain: crop, flip, photometric distortion,
/// then resize to a square `size`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop: bool,
    pub flip_prob: f64,
    pub photometric: bool,
    pub brightness: f64,
    pub contrast: (f64, f64),
    pub size: usize,
}

impl AugmentConfig {
    pub fn new(size: usize) -> Self {
        AugmentConfig {
            crop: true,
            flip_prob: 0.5,
            photometric: true,
            brightness: 0.125,
            contrast: (0.75, 1.25),
            size,
        }
    }

    /// Only the final resize.
    pub fn none(size: usize) -> Self {
        AugmentConfig {
            crop: false,
            flip_prob: 0.0,
            photometric: false,
            ..AugmentConfig::new(size)
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, img: &AnnotatedImage, rng: &mut R) -> AnnotatedImage {
        let mut a = if self.crop {
            random_crop_sample(img, rng)
        } else {
            img.clone()
        };
        if self.flip_prob > 0.0 {
            a = horizontal_flip(&a, self.flip_prob, rng);
        }
        if self.photometric {
            a = photometric_distort(&a, self.brightness, self.contrast, rng);
        }
        if (a.width(), a.height()) != (self.size, self.size) {
            a = resize_with_boxes(&a, (self.size, self.size));
        }
        a
    }
}
