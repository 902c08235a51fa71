use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_err(path: &Path, msg: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Decode a PNG or PNM file into a `[channels, H, W]` tensor in `[0, 1]`.
/// Color images are converted to luma when `channels == 1`.
pub fn load_image(path: &Path, channels: usize) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let g = img.into_luma8();
            let data = g.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            Tensor::new(vec![1, h, w], data)
        }
        3 => {
            let rgb = img.into_rgb8();
            let raw = rgb.as_raw();
            let mut data = vec![0.0; 3 * h * w];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * h * w + i] = px[c] as f64 / 255.0;
                }
            }
            Tensor::new(vec![3, h, w], data)
        }
        c => Err(Error::contract(format!("images have 1 or 3 channels, not {c}"))),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode a `[C, H, W]` tensor; the format follows the extension (`.png`,
/// `.pgm`, `.ppm`).
pub fn save_image(path: &Path, t: &Tensor) -> Result<()> {
    let d = t.dims();
    if d.len() != 3 {
        return Err(Error::dim(format!("save_image expects [C, H, W], got {d:?}")));
    }
    let (c, h, w) = (d[0], d[1], d[2]);
    let (wu, hu) = (w as u32, h as u32);
    let img = match c {
        1 => {
            let raw = t.data().iter().map(|&v| to_u8(v)).collect();
            DynamicImage::ImageLuma8(GrayImage::from_raw(wu, hu, raw).expect("buffer size"))
        }
        3 => {
            let mut raw = vec![0u8; 3 * h * w];
            for i in 0..h * w {
                for ch in 0..3 {
                    raw[3 * i + ch] = to_u8(t.data()[ch * h * w + i]);
                }
            }
            DynamicImage::ImageRgb8(RgbImage::from_raw(wu, hu, raw).expect("buffer size"))
        }
        _ => return Err(Error::dim(format!("cannot encode {c}-channel images"))),
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => image_err(path, other),
    })
}
