//! Attention-weighted VLAD aggregation with shadow centroids.

mod binio;
pub mod error;
pub mod features;

pub use error::{Error, Result};
pub mod encoding;
pub mod init;
pub mod evaluation;
pub mod training;
pub mod whitening;
pub mod cli;
