//! Training, checkpoints, configuration and end-to-end detection.

mod checkpoint;
mod config;
mod detect;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, quantize, save_checkpoint, Checkpoint, TrainState, MAGIC,
    VERSION,
};
pub use config::{spec_from_text, spec_to_text, Config, EvalConfig};
pub use detect::{decode_image, detect, detect_images, evaluate_ap, DetectConfig};
pub use train::{
    log_csv, lr_at, sgd_step, smoothed, train_loop, train_step, Dataset, DiskDataset, LogRow, TrainConfig,
};
