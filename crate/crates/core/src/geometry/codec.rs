use super::{BBox, CenterBox};
use crate::error::{Error, Result};

/// Regression targets of `g` relative to the default box `d`:
/// `((gcx−dcx)/dw, (gcy−dcy)/dh, ln(gw/dw), ln(gh/dh))`.
pub fn encode_offsets(g: &CenterBox, d: &CenterBox) -> Result<[f64; 4]> {
    if !(d.w > 0.0 && d.h > 0.0) {
        return Err(Error::contract(format!(
            "default box needs positive size, got {}x{}",
            d.w, d.h
        )));
    }
    if !(g.w > 0.0 && g.h > 0.0) {
        return Err(Error::contract(format!(
            "ground-truth box needs positive size, got {}x{}",
            g.w, g.h
        )));
    }
    Ok([
        (g.cx - d.cx) / d.w,
        (g.cy - d.cy) / d.h,
        (g.w / d.w).ln(),
        (g.h / d.h).ln(),
    ])
}

/// Inverse of [`encode_offsets`]; `clip_to = Some((width, height))` clamps
/// the decoded corners into the image.
pub fn decode_offsets(offsets: &[f64; 4], d: &CenterBox, clip_to: Option<(f64, f64)>) -> BBox {
    let b = CenterBox {
        cx: d.cx + offsets[0] * d.w,
        cy: d.cy + offsets[1] * d.h,
        w: d.w * offsets[2].exp(),
        h: d.h * offsets[3].exp(),
    }
    .to_corners();
    match clip_to {
        Some((w, h)) => b.clip(w, h),
        None => b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cb(cx: f64, cy: f64, w: f64, h: f64) -> CenterBox {
        CenterBox { cx, cy, w, h }
    }

    #[test]
    fn encode_examples() {
        let d = cb(50.0, 40.0, 20.0, 10.0);
        assert_eq!(encode_offsets(&d, &d).unwrap(), [0.0; 4]);
        let half_right = cb(60.0, 40.0, 20.0, 10.0);
        assert!((encode_offsets(&half_right, &d).unwrap()[0] - 0.5).abs() < 1e-15);
        let wide = cb(50.0, 40.0, 40.0, 10.0);
        assert!((encode_offsets(&wide, &d).unwrap()[2] - 2f64.ln()).abs() < 1e-15);
        assert!(encode_offsets(&cb(1.0, 1.0, 0.0, 3.0), &d).is_err());
        assert!(encode_offsets(&d, &cb(1.0, 1.0, 3.0, -1.0)).is_err());
    }

    #[test]
    fn decode_zero_offsets_is_default_box() {
        let d = cb(10.0, 12.0, 8.0, 6.0);
        assert_eq!(decode_offsets(&[0.0; 4], &d, None), d.to_corners());
    }

    #[test]
    fn decode_clips_into_image() {
        let d = cb(60.0, 60.0, 20.0, 20.0);
        let b = decode_offsets(&[0.0, 0.0, 3.0, 0.0], &d, Some((100.0, 80.0)));
        // width 20·e³ ≈ 401.7 centered at 60 → clamped to [0, 100]
        assert_eq!((b.x1, b.x2), (0.0, 100.0));
        assert_eq!((b.y1, b.y2), (50.0, 70.0));
    }

    proptest! {
        #[test]
        fn round_trip(gx in -50.0..150.0f64, gy in -50.0..150.0f64, gw in 0.5..80.0f64, gh in 0.5..80.0f64,
                      dx in 0.0..100.0f64, dy in 0.0..100.0f64, dw in 1.0..60.0f64, dh in 1.0..60.0f64) {
            let g = cb(gx, gy, gw, gh);
            let d = cb(dx, dy, dw, dh);
            let back = decode_offsets(&encode_offsets(&g, &d).unwrap(), &d, None);
            let want = g.to_corners();
            for (a, b) in [(back.x1, want.x1), (back.y1, want.y1), (back.x2, want.x2), (back.y2, want.y2)] {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
