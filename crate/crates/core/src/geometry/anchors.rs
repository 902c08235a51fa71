use std::io::Write;

use super::{BBox, CenterBox};
use crate::error::{Error, Result};

/// Aspect ratios `h / w` of the default boxes at every cell.
pub const DEFAULT_ASPECT_RATIOS: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.0 / 3.0];

/// Denominator of the per-hierarchy scale progression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleDenominator {
    /// `s_k = s_0 + k·(s_l − s_0)/(l − 1)`: hits both endpoints.
    LevelsMinusOne,
    /// `(l − 2)` as printed in the original formula.
    LevelsMinusTwo,
}

/// Parameters of the default-box generator.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorParams {
    /// Cell-center offset, in cells.
    pub delta: f64,
    /// Scale of the first hierarchy as a fraction of `d_min`.
    pub s0: f64,
    /// Scale of the last hierarchy as a fraction of `d_min`.
    pub sl: f64,
    /// Number of hierarchies.
    pub levels: usize,
    pub aspect_ratios: Vec<f64>,
    /// Smaller input image dimension, pixels.
    pub d_min: f64,
    pub denominator: ScaleDenominator,
}

impl AnchorParams {
    /// Scales derived from the receptive-field sizes of the first and last
    /// hierarchies: `s_0 = rf_first / d_min`, `s_l = rf_last / d_min`.
    pub fn from_receptive_fields(rf_first: f64, rf_last: f64, levels: usize, d_min: f64) -> Self {
        AnchorParams {
            delta: 0.5,
            s0: rf_first / d_min,
            sl: rf_last / d_min,
            levels,
            aspect_ratios: DEFAULT_ASPECT_RATIOS.to_vec(),
            d_min,
            denominator: ScaleDenominator::LevelsMinusOne,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.s0 > 0.0 && self.s0 <= self.sl && self.sl <= 1.0) {
            errs.push(format!(
                "anchor scales must satisfy 0 < s0 <= sl <= 1 (s0 = {}, sl = {})",
                self.s0, self.sl
            ));
        }
        let min_levels = match self.denominator {
            ScaleDenominator::LevelsMinusOne => 2,
            ScaleDenominator::LevelsMinusTwo => 3,
        };
        if self.levels < min_levels {
            errs.push(format!(
                "{} hierarchies given, the scale progression needs at least {min_levels}",
                self.levels
            ));
        }
        if self.aspect_ratios.is_empty() || self.aspect_ratios.iter().any(|&a| !(a > 0.0)) {
            errs.push("aspect ratios must be a non-empty list of positive values".into());
        }
        if !(self.d_min > 0.0) {
            errs.push(format!("d_min must be positive, got {}", self.d_min));
        }
        if !self.delta.is_finite() {
            errs.push("delta must be finite".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Default boxes per feature-map cell: one per aspect ratio plus the
    /// intermediate-scale square box.
    pub fn boxes_per_cell(&self) -> usize {
        self.aspect_ratios.len() + 1
    }

    fn step(&self) -> f64 {
        let den = match self.denominator {
            ScaleDenominator::LevelsMinusOne => self.levels - 1,
            ScaleDenominator::LevelsMinusTwo => self.levels - 2,
        };
        (self.sl - self.s0) / den as f64
    }

    /// Fractional scale `s_k`; `k == levels` is extrapolated linearly.
    fn fraction(&self, k: usize) -> f64 {
        self.s0 + k as f64 * self.step()
    }
}

/// Default-box side length in pixels for hierarchy `k`.
pub fn anchor_scale(k: usize, params: &AnchorParams) -> Result<f64> {
    params.validate()?;
    if k >= params.levels {
        return Err(Error::contract(format!(
            "hierarchy {k} out of range for {} levels",
            params.levels
        )));
    }
    Ok(params.fraction(k) * params.d_min)
}

/// Where a flat anchor index came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorSlot {
    pub x: usize,
    pub y: usize,
    pub aspect_ratio: f64,
    /// The intermediate-scale box appended after the aspect-ratio boxes.
    pub extra: bool,
}

/// Default boxes of one hierarchy, ordered by row-major cell, then aspect
/// ratio, then the extra box.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub k: usize,
    pub feat_w: usize,
    pub feat_h: usize,
    pub image_w: f64,
    pub image_h: f64,
    pub stride_w: f64,
    pub stride_h: f64,
    pub aspect_ratios: Vec<f64>,
    pub boxes: Vec<BBox>,
}

impl AnchorSet {
    pub fn per_cell(&self) -> usize {
        self.aspect_ratios.len() + 1
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn slot(&self, i: usize) -> AnchorSlot {
        let a = self.per_cell();
        let cell = i / a;
        let r = i % a;
        let extra = r == self.aspect_ratios.len();
        AnchorSlot {
            x: cell % self.feat_w,
            y: cell / self.feat_w,
            aspect_ratio: if extra { 1.0 } else { self.aspect_ratios[r] },
            extra,
        }
    }

    /// CSV with header `k,x,y,ar,cx,cy,w,h,x1,y1,x2,y2`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,x,y,ar,cx,cy,w,h,x1,y1,x2,y2")?;
        for (i, b) in self.boxes.iter().enumerate() {
            let s = self.slot(i);
            let c = b.to_center();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.k, s.x, s.y, s.aspect_ratio, c.cx, c.cy, c.w, c.h, b.x1, b.y1, b.x2, b.y2
            )?;
        }
        Ok(())
    }
}

/// Tile default boxes over a `feat` grid mapped onto an `image`
/// (both `(width, height)`). Boxes are not clipped.
pub fn generate_anchors(
    k: usize,
    feat: (usize, usize),
    image: (f64, f64),
    params: &AnchorParams,
) -> Result<AnchorSet> {
    let size = anchor_scale(k, params)?;
    let (feat_w, feat_h) = feat;
    let (image_w, image_h) = image;
    if feat_w == 0 || feat_h == 0 || !(image_w > 0.0 && image_h > 0.0) {
        return Err(Error::dim(format!(
            "anchors need positive dims, feature {feat_w}x{feat_h}, image {image_w}x{image_h}"
        )));
    }
    let stride_w = image_w / feat_w as f64;
    let stride_h = image_h / feat_h as f64;
    let extra = (params.fraction(k) * params.fraction(k + 1)).sqrt() * params.d_min;
    let mut boxes = Vec::with_capacity(feat_w * feat_h * params.boxes_per_cell());
    for y in 0..feat_h {
        for x in 0..feat_w {
            let cx = (x as f64 + params.delta) * stride_w;
            let cy = (y as f64 + params.delta) * stride_h;
            for &ar in &params.aspect_ratios {
                boxes.push(CenterBox { cx, cy, w: size, h: size * ar }.to_corners());
            }
            boxes.push(CenterBox { cx, cy, w: extra, h: extra }.to_corners());
        }
    }
    Ok(AnchorSet {
        k,
        feat_w,
        feat_h,
        image_w,
        image_h,
        stride_w,
        stride_h,
        aspect_ratios: params.aspect_ratios.clone(),
        boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_512() -> AnchorParams {
        AnchorParams::from_receptive_fields(10.24, 30.72, 3, 512.0)
    }

    #[test]
    fn endpoint_scales_equal_receptive_fields() {
        let p = params_512();
        assert!((anchor_scale(0, &p).unwrap() - 10.24).abs() < 1e-9);
        assert!((anchor_scale(1, &p).unwrap() - 20.48).abs() < 1e-9);
        assert!((anchor_scale(2, &p).unwrap() - 30.72).abs() < 1e-9);
        assert!(anchor_scale(3, &p).is_err());
    }

    #[test]
    fn printed_denominator_is_selectable() {
        let mut p = params_512();
        p.denominator = ScaleDenominator::LevelsMinusTwo;
        // step (sl − s0)/(l − 2) = 0.04 with l = 3
        assert!((anchor_scale(1, &p).unwrap() - 0.06 * 512.0).abs() < 1e-9);
        p.levels = 2;
        assert!(matches!(anchor_scale(0, &p), Err(Error::Validation(_))));
    }

    #[test]
    fn cell_centers_follow_stride() {
        let p = params_512();
        let set = generate_anchors(0, (64, 64), (512.0, 512.0), &p).unwrap();
        assert_eq!(set.stride_w, 8.0);
        let first = set.boxes[0].to_center();
        assert!((first.cx - 4.0).abs() < 1e-9 && (first.cy - 4.0).abs() < 1e-9);
        let a = set.per_cell();
        let last_col = set.boxes[63 * a].to_center();
        assert!((last_col.cx - 508.0).abs() < 1e-9);
    }

    #[test]
    fn box_count_and_order() {
        let p = params_512();
        let set = generate_anchors(1, (2, 2), (64.0, 64.0), &p).unwrap();
        assert_eq!(set.len(), 2 * 2 * 6);
        let s = set.slot(6 + 2);
        assert_eq!((s.x, s.y, s.aspect_ratio, s.extra), (1, 0, 1.5, false));
        let s = set.slot(3 * 6 + 5);
        assert_eq!((s.x, s.y, s.extra), (1, 1, true));
        // w = s_k, h = w · a_r
        let b = set.boxes[6 + 2].to_center();
        assert!((b.w - 20.48).abs() < 1e-9 && (b.h - 20.48 * 1.5).abs() < 1e-9);
        // extra box side √(s_k·s_{k+1})·D_min
        let e = set.boxes[5].to_center();
        assert!((e.w - (0.04f64 * 0.06).sqrt() * 512.0).abs() < 1e-9);
    }

    #[test]
    fn last_level_extra_box_extrapolates() {
        let p = params_512();
        let set = generate_anchors(2, (1, 1), (512.0, 512.0), &p).unwrap();
        let e = set.boxes[5].to_center();
        assert!((e.w - (0.06f64 * 0.08).sqrt() * 512.0).abs() < 1e-9);
    }

    #[test]
    fn csv_has_header_and_one_row_per_box() {
        let p = params_512();
        let set = generate_anchors(0, (2, 1), (16.0, 8.0), &p).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,x,y,ar,cx,cy,w,h,x1,y1,x2,y2");
        assert_eq!(lines.len(), 1 + 12);
        assert!(lines[1].starts_with("0,0,0,0.5,4,4,"));
    }

    #[test]
    fn centers_form_uniform_grid() {
        let p = params_512();
        let set = generate_anchors(0, (7, 5), (100.0, 60.0), &p).unwrap();
        let a = set.per_cell();
        for y in 0..5 {
            for x in 0..6 {
                let c0 = set.boxes[(y * 7 + x) * a].to_center();
                let c1 = set.boxes[(y * 7 + x + 1) * a].to_center();
                assert!((c0.cx - c1.cx + set.stride_w).abs() < 1e-9);
                assert!((c0.cy - c1.cy).abs() < 1e-12);
            }
        }
    }
}
