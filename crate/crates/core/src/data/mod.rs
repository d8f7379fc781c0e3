//! Image I/O, bicubic degradation, augmentation and synthetic patches.

mod augment;
mod manifest;
mod netpbm;
mod resample;
mod synth;

pub use augment::Augmentation;
pub use manifest::{DatasetManifest, ManifestEntry, Split, MANIFEST_HEADER};
pub use netpbm::{from_tensor, load_image, save_image, to_tensor, ImageBuffer};
pub use resample::{bicubic_resample, cubic_kernel, KEYS_A};
pub use synth::{render, synth_dataset, synth_patch, Pattern, SynthDataset};

use thiserror::Error;

use crate::tensor::Tensor;

/// Super-resolution factor between goal and low-resolution states.
pub const SCALE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataError {
    #[error("malformed image header: {0}")]
    Header(String),
    #[error("unsupported maxval {0} (only 255)")]
    Maxval(usize),
    #[error("truncated image: expected {expected} pixel bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("rot90 needs a square patch, got {height}x{width}")]
    NotSquare { height: usize, width: usize },
    #[error("patch {height}x{width} is not divisible by the scale factor {SCALE}")]
    Indivisible { height: usize, width: usize },
    #[error("empty dataset requested")]
    EmptyDataset,
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Initial state (bicubic-upsampled low-resolution patch) and goal state (the
/// high-resolution patch), both `H×W×C` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePair {
    pub s0: Tensor,
    pub s_star: Tensor,
    pub id: usize,
}

/// Degrades `hr` by bicubic downsampling by [`SCALE`] and interpolates it back
/// to full size; the interpolated image is the initial state.
pub fn make_state_pair(hr: &Tensor, id: usize) -> Result<StatePair, DataError> {
    let (h, w) = (hr.height(), hr.width());
    if h == 0 || w == 0 || h % SCALE != 0 || w % SCALE != 0 {
        return Err(DataError::Indivisible { height: h, width: w });
    }
    let lr = bicubic_resample(hr, h / SCALE, w / SCALE);
    let s0 = bicubic_resample(&lr, h, w);
    Ok(StatePair {
        s0,
        s_star: hr.clone(),
        id,
    })
}
