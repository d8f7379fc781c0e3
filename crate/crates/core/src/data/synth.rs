//! Procedural high-resolution patches: oriented gratings, Gaussian blobs,
//! step edges and checkerboards layered over a flat background.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::{make_state_pair, DataError, StatePair, SCALE};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Pattern {
    /// `amplitude·sin(2π·frequency·(x cosθ + y sinθ) + phase)`, frequency in cycles per pixel.
    Grating {
        frequency: f64,
        angle: f64,
        phase: f64,
        amplitude: f64,
    },
    Blob {
        cy: f64,
        cx: f64,
        sigma: f64,
        amplitude: f64,
    },
    /// `±contrast/2` on either side of the line through `(cy, cx)` with normal angle `angle`.
    StepEdge {
        cy: f64,
        cx: f64,
        angle: f64,
        contrast: f64,
    },
    Checkerboard {
        period: usize,
        contrast: f64,
    },
}

impl Pattern {
    pub fn value(&self, y: usize, x: usize) -> f64 {
        let (yf, xf) = (y as f64, x as f64);
        match *self {
            Self::Grating {
                frequency,
                angle,
                phase,
                amplitude,
            } => amplitude * (2.0 * PI * frequency * (xf * angle.cos() + yf * angle.sin()) + phase).sin(),
            Self::Blob {
                cy,
                cx,
                sigma,
                amplitude,
            } => {
                let d2 = (yf - cy).powi(2) + (xf - cx).powi(2);
                amplitude * (-d2 / (2.0 * sigma * sigma)).exp()
            }
            Self::StepEdge {
                cy,
                cx,
                angle,
                contrast,
            } => {
                let side = (xf - cx) * angle.cos() + (yf - cy) * angle.sin();
                if side >= 0.0 {
                    contrast / 2.0
                } else {
                    -contrast / 2.0
                }
            }
            Self::Checkerboard { period, contrast } => {
                if (x / period + y / period) % 2 == 0 {
                    contrast / 2.0
                } else {
                    -contrast / 2.0
                }
            }
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Self {
        let s = size as f64;
        let sign = |rng: &mut R| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        match rng.random_range(0..4) {
            0 => Self::Grating {
                frequency: rng.random_range(0.03..0.2),
                angle: rng.random_range(0.0..PI),
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: rng.random_range(0.08..0.25),
            },
            1 => Self::Blob {
                cy: rng.random_range(0.0..s),
                cx: rng.random_range(0.0..s),
                sigma: rng.random_range(1.5..(s / 4.0).max(2.0)),
                amplitude: sign(rng) * rng.random_range(0.15..0.4),
            },
            2 => Self::StepEdge {
                cy: rng.random_range(0.25 * s..0.75 * s),
                cx: rng.random_range(0.25 * s..0.75 * s),
                angle: rng.random_range(0.0..2.0 * PI),
                contrast: rng.random_range(0.2..0.5),
            },
            _ => Self::Checkerboard {
                period: rng.random_range(2..=8),
                contrast: rng.random_range(0.1..0.3),
            },
        }
    }
}

/// Sum of `patterns` over `background`, clamped to `[0, 1]` and quantised
/// to 8-bit levels so the patch survives a PGM round trip unchanged.
pub fn render(patterns: &[Pattern], background: f64, size: usize) -> Tensor {
    Tensor::from_fn(size, size, 1, |y, x, _| {
        let v = background + patterns.iter().map(|p| p.value(y, x)).sum::<f64>();
        (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
    })
}

/// One random patch: a background level plus one to three patterns.
pub fn synth_patch<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Tensor {
    let background = rng.random_range(0.25..0.75);
    let n = rng.random_range(1..=3);
    let patterns: Vec<Pattern> = (0..n).map(|_| Pattern::random(rng, size)).collect();
    render(&patterns, background, size)
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    /// `StatePair::id` equals the index into `manifest.entries`.
    pub pairs: Vec<StatePair>,
    pub patches: Vec<Tensor>,
    pub manifest: DatasetManifest,
}

impl SynthDataset {
    pub fn split(&self, split: Split) -> Vec<StatePair> {
        self.pairs
            .iter()
            .zip(&self.manifest.entries)
            .filter(|(_, e)| e.split == split)
            .map(|(p, _)| p.clone())
            .collect()
    }
}

/// `count` patches, deterministic per `seed` (each entry draws from its own
/// ChaCha stream), split train/test by `train_fraction` in index order.
pub fn synth_dataset(
    count: usize,
    patch_size: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<SynthDataset, DataError> {
    if count == 0 {
        return Err(DataError::EmptyDataset);
    }
    if patch_size == 0 || patch_size % SCALE != 0 {
        return Err(DataError::Indivisible {
            height: patch_size,
            width: patch_size,
        });
    }
    let n_train = DatasetManifest::train_count(count, train_fraction);
    let mut pairs = Vec::with_capacity(count);
    let mut patches = Vec::with_capacity(count);
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let hr = synth_patch(&mut rng, patch_size);
        pairs.push(make_state_pair(&hr, i)?);
        patches.push(hr);
        entries.push(ManifestEntry {
            path: format!("patch_{i:05}.pgm"),
            origin_x: 0,
            origin_y: 0,
            split: if i < n_train { Split::Train } else { Split::Test },
        });
    }
    Ok(SynthDataset {
        pairs,
        patches,
        manifest: DatasetManifest {
            patch_size,
            entries,
        },
    })
}
