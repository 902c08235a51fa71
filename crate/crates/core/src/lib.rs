pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod heap;
pub mod loss;
pub mod network;
pub mod receptive_field;
pub mod tensor;

pub use error::{Error, Result};
