//! WebAssembly bindings for the single-page demo in `www/`.
//!
//! All images cross the boundary as row-major 8-bit grayscale buffers.
//! Errors come back as strings, which the page shows verbatim.

use spoa_core::data::{
    bicubic_resample, from_tensor, make_state_pair, synth_dataset, to_tensor, ImageBuffer, Split,
    StatePair, SCALE,
};
use spoa_core::metrics::ImageScores;
use spoa_core::nn::{actor_forward, NetworkConfig, ParameterSet};
use spoa_core::rl::{run_episode, TrainConfig, TrainerState};
use spoa_core::tensor::Tensor;
use wasm_bindgen::prelude::*;

fn gray(pixels: &[u8], width: usize, height: usize) -> Result<Tensor, String> {
    ImageBuffer::new(width, height, 1, pixels.to_vec())
        .map(|b| to_tensor(&b))
        .map_err(|e| e.to_string())
}

fn bytes(t: &Tensor) -> Vec<u8> {
    from_tensor(t)
        .expect("tensor shape is a valid image")
        .pixels
}

/// Quality of one estimate against its reference.
#[wasm_bindgen]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub psnr_db: f64,
    pub ssim: f64,
    pub sre_db: f64,
}

impl Scores {
    fn of(estimate: &Tensor, reference: &Tensor) -> Result<Self, String> {
        let s =
            ImageScores::compute(0, &estimate.clamp01(), reference).map_err(|e| e.to_string())?;
        Ok(Self {
            psnr_db: s.psnr_db,
            ssim: s.ssim,
            sre_db: s.sre_db,
        })
    }
}

/// A degraded patch, its bicubic reconstruction and optionally the actor's.
#[wasm_bindgen]
pub struct Comparison {
    low_res: Vec<u8>,
    bicubic: Vec<u8>,
    enhanced: Vec<u8>,
    bicubic_scores: Scores,
    enhanced_scores: Option<Scores>,
}

#[wasm_bindgen]
impl Comparison {
    #[wasm_bindgen(getter)]
    pub fn low_res(&self) -> Vec<u8> {
        self.low_res.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn bicubic(&self) -> Vec<u8> {
        self.bicubic.clone()
    }
    /// Empty when no network was involved.
    #[wasm_bindgen(getter)]
    pub fn enhanced(&self) -> Vec<u8> {
        self.enhanced.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn bicubic_scores(&self) -> Scores {
        self.bicubic_scores
    }
    #[wasm_bindgen(getter)]
    pub fn enhanced_scores(&self) -> Option<Scores> {
        self.enhanced_scores
    }
}

fn degrade(hr: &Tensor) -> Result<(Vec<u8>, StatePair), String> {
    let pair = make_state_pair(hr, 0).map_err(|e| e.to_string())?;
    let lr = bicubic_resample(hr, hr.height() / SCALE, hr.width() / SCALE);
    Ok((bytes(&lr), pair))
}

/// A grayscale synthetic patch of `size`×`size` pixels.
#[wasm_bindgen]
pub fn synth_patch(seed: u64, size: usize) -> Result<Vec<u8>, String> {
    if size == 0 || size % SCALE != 0 {
        return Err(format!("patch size must be a positive multiple of {SCALE}"));
    }
    let ds = synth_dataset(1, size, seed, 1.0).map_err(|e| e.to_string())?;
    Ok(bytes(&ds.patches[0]))
}

/// Shrinks the patch by four and interpolates it back with bicubic.
#[wasm_bindgen]
pub fn degrade_and_upsample(
    pixels: &[u8],
    width: usize,
    height: usize,
) -> Result<Comparison, String> {
    let hr = gray(pixels, width, height)?;
    let (low_res, pair) = degrade(&hr)?;
    Ok(Comparison {
        low_res,
        bicubic: bytes(&pair.s0),
        enhanced: Vec::new(),
        bicubic_scores: Scores::of(&pair.s0, &hr)?,
        enhanced_scores: None,
    })
}

/// Scores `estimate` against `reference`; both are `width`×`height` grayscale.
#[wasm_bindgen]
pub fn compare(
    estimate: &[u8],
    reference: &[u8],
    width: usize,
    height: usize,
) -> Result<Scores, String> {
    Scores::of(
        &gray(estimate, width, height)?,
        &gray(reference, width, height)?,
    )
}

/// A small network trained one episode at a time on synthetic patches.
#[wasm_bindgen]
pub struct Trainer {
    net: NetworkConfig,
    config: TrainConfig,
    pairs: Vec<StatePair>,
    state: TrainerState,
    last_reward: f64,
}

#[wasm_bindgen]
impl Trainer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, feature_channels: usize, alpha: f64) -> Result<Trainer, String> {
        let net = NetworkConfig {
            feature_channels,
            n_fe: 2,
            n_rb: 2,
            n_tb: 2,
            n_policy_blocks: 2,
            ..NetworkConfig::default()
        };
        let config = TrainConfig {
            episodes: usize::MAX,
            alpha,
            seed,
            buffer_capacity: 4,
            ..TrainConfig::default()
        };
        config.validate().map_err(|e| e.to_string())?;
        let params = ParameterSet::init(&net, seed).map_err(|e| e.to_string())?;
        let ds = synth_dataset(24, 16, seed, 1.0).map_err(|e| e.to_string())?;
        Ok(Trainer {
            net,
            config,
            pairs: ds.split(Split::Train),
            state: TrainerState::new(params),
            last_reward: f64::NAN,
        })
    }

    /// Runs `count` episodes and returns the last mean buffer reward.
    pub fn step(&mut self, count: usize) -> Result<f64, String> {
        for _ in 0..count {
            let record = run_episode(&self.pairs, &mut self.state, &self.net, &self.config)
                .map_err(|e| e.to_string())?;
            self.last_reward = record.mean_reward;
        }
        Ok(self.last_reward)
    }

    #[wasm_bindgen(getter)]
    pub fn episode(&self) -> usize {
        self.state.episode
    }

    /// Like [`degrade_and_upsample`], plus the actor's output.
    pub fn enhance(
        &self,
        pixels: &[u8],
        width: usize,
        height: usize,
    ) -> Result<Comparison, String> {
        let hr = gray(pixels, width, height)?;
        let (low_res, pair) = degrade(&hr)?;
        let out = actor_forward(&pair.s0, &self.state.params, &self.net)
            .map_err(|e| e.to_string())?
            .into_arrived()
            .clamp01();
        Ok(Comparison {
            low_res,
            bicubic: bytes(&pair.s0),
            enhanced: bytes(&out),
            bicubic_scores: Scores::of(&pair.s0, &hr)?,
            enhanced_scores: Some(Scores::of(&out, &hr)?),
        })
    }
}
