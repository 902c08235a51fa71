//! Annotated images: annotation formats, synthetic corpora, augmentation and
//! face-size statistics.

mod augment;
mod fddb;
mod io;
mod stats;
mod synth;
mod wider;

pub use augment::{
    horizontal_flip, photometric_distort, random_crop_sample, resize_with_boxes, AugmentConfig, CROP_SCALES,
    MIN_COVERAGE_CHOICES,
};
pub use fddb::{ellipse_to_box, parse_fddb, write_fddb, EllipseAnnotation, FddbRecord};
pub use io::{load_image, save_image};
pub use stats::{
    size_bucket, size_histogram, top_size_csv, top_size_table, SizeHistogram, TopSizeRow, BUCKET_LABELS, SIZE_BUCKETS,
};
pub use synth::{
    synth_generate, synth_one, write_corpus, SynthConfig, SynthImage, CORPUS_BOXES, CORPUS_ELLIPSES, CORPUS_IMAGES,
};
pub use wider::{load_wider, parse_wider, write_wider, WiderRecord};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::Tensor;

/// An image (`[C, H, W]`, values in `[0, 1]`) with its face boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub image: Tensor,
    pub boxes: Vec<BBox>,
    pub source: String,
}

impl AnnotatedImage {
    pub fn new(image: Tensor, boxes: Vec<BBox>, source: impl Into<String>) -> Result<Self> {
        if image.rank() != 3 || !matches!(image.dims()[0], 1 | 3) {
            return Err(Error::dim(format!(
                "images must be [C, H, W] with C in {{1, 3}}, got {:?}",
                image.dims()
            )));
        }
        Ok(AnnotatedImage {
            image,
            boxes,
            source: source.into(),
        })
    }

    pub fn channels(&self) -> usize {
        self.image.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.image.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.image.dims()[2]
    }

    /// Drop boxes that miss the image and clip the rest to it.
    pub fn clip_boxes(&mut self) {
        let (w, h) = (self.width() as f64, self.height() as f64);
        let frame = BBox::new(0.0, 0.0, w, h);
        self.boxes = self
            .boxes
            .iter()
            .filter(|b| b.intersection_area(&frame) > 0.0)
            .map(|b| b.clip(w, h))
            .collect();
    }

    /// Every box overlaps the image and every value lies in `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        let frame = BBox::new(0.0, 0.0, self.width() as f64, self.height() as f64);
        self.boxes.iter().all(|b| b.intersection_area(&frame) > 0.0)
            && self.image.data().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Stack same-sized images into an `[N, C, H, W]` batch.
pub fn batch_images(items: &[AnnotatedImage]) -> Result<Tensor> {
    let parts: Vec<Tensor> = items
        .iter()
        .map(|a| {
            let d = a.image.dims();
            a.image.clone().reshape(&[1, d[0], d[1], d[2]])
        })
        .collect::<Result<_>>()?;
    Tensor::concat_batch(&parts)
}
