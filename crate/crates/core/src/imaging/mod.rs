//! Images, degradation synthesis, condition encoding and PSNR.

mod blur;
mod degradation;
mod image;
mod jpeg;
mod metrics;
mod noise;
pub mod textures;

pub use blur::{apply_blur, gaussian_kernel, GaussianKernel, KERNEL_SIZE};
pub use degradation::{degrade, degrade_seeded, DegradationSpace, DegradationSpec, DimKind, Dimension};
pub use image::{decode_ppm, encode_ppm, load_ppm, save_ppm, Image};
pub use jpeg::{jpeg_roundtrip, quant_tables, QuantTables, CHROMA_BASE, LUMA_BASE, MAX_QUALITY, MIN_QUALITY};
pub use metrics::{mse, psnr};
pub use noise::add_noise;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed image: {0}")]
    Malformed(String),
    #[error("truncated image data: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(usize),
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("{what} {value} outside range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },
    #[error("image dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("invalid degradation space: {0}")]
    InvalidSpace(String),
}
