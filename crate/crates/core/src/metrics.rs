//! Full-reference image quality metrics and the SR-vs-bicubic evaluation.
//!
//! PSNR clamps both inputs to `[0, 1]`. SSIM, SRE and SAM take the values as
//! given; [`evaluate_split`] clamps the network output before scoring.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::StatePair;
use crate::nn::{actor_forward, NetError, NetworkConfig, ParameterSet};
use crate::tensor::{Tensor, TensorError};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Pixels whose channel vector is shorter than this are left out of SAM.
pub const SAM_MIN_NORM: f64 = 1e-12;

pub const REPORT_HEADER: &str = "image_id,method,psnr_db,ssim,sre_db,sam_deg";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("image {height}x{width} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall { height: usize, width: usize },
    #[error("reference channel {0} has zero mean")]
    ZeroMeanReference(usize),
    #[error("every pixel has a zero-length spectrum")]
    AllPixelsDegenerate,
    #[error("no test images")]
    EmptySet,
}

fn mse_clamped(x: &Tensor, y: &Tensor) -> f64 {
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| {
            let d = a.clamp(0.0, 1.0) - b.clamp(0.0, 1.0);
            d * d
        })
        .sum();
    sum / x.len() as f64
}

/// `10·log10(peak² / MSE)` on clamped inputs; `+∞` when they coincide.
pub fn psnr(x: &Tensor, y: &Tensor, peak: f64) -> Result<f64, MetricError> {
    x.expect_shape(y.shape())?;
    let mse = mse_clamped(x, y);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Valid-region separable Gaussian filter of a single plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity over every fully contained 11×11 Gaussian
/// window (σ = 1.5, dynamic range 1), averaged over channels.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64, MetricError> {
    x.expect_shape(y.shape())?;
    let (h, w) = (x.height(), x.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall { height: h, width: w });
    }
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..x.channels() {
        let px = x.channel(c).into_vec();
        let py = y.channel(c).into_vec();
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter_valid(&px, h, w, &taps);
        let my = filter_valid(&py, h, w, &taps);
        let exx = filter_valid(&prod(&px, &px), h, w, &taps);
        let eyy = filter_valid(&prod(&py, &py), h, w, &taps);
        let exy = filter_valid(&prod(&px, &py), h, w, &taps);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / x.channels() as f64)
}

/// Signal-to-reconstruction error `10·log10(mean(x)² / MSE(x, y))` per
/// channel, averaged; `x` is the reference.
pub fn sre(x: &Tensor, y: &Tensor) -> Result<f64, MetricError> {
    x.expect_shape(y.shape())?;
    let mut total = 0.0;
    for c in 0..x.channels() {
        let rx = x.channel(c).into_vec();
        let ry = y.channel(c).into_vec();
        let n = rx.len() as f64;
        let mean = rx.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return Err(MetricError::ZeroMeanReference(c));
        }
        let mse = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        if mse == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += 10.0 * (mean * mean / mse).log10();
    }
    Ok(total / x.channels() as f64)
}

/// Mean spectral angle in degrees and the number of skipped pixels.
pub fn sam_with_skipped(x: &Tensor, y: &Tensor) -> Result<(f64, usize), MetricError> {
    x.expect_shape(y.shape())?;
    let ch = x.channels();
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (a, b) in x.data().chunks_exact(ch).zip(y.data().chunks_exact(ch)) {
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na < SAM_MIN_NORM || nb < SAM_MIN_NORM {
            skipped += 1;
            continue;
        }
        // 2·atan2(|â − b̂|, |â + b̂|) equals acos(â·b̂) but stays accurate near 0° and 180°.
        let (mut diff, mut plus) = (0.0, 0.0);
        for (u, v) in a.iter().zip(b) {
            let (u, v) = (u / na, v / nb);
            diff += (u - v) * (u - v);
            plus += (u + v) * (u + v);
        }
        sum += (2.0 * diff.sqrt().atan2(plus.sqrt())).to_degrees();
        used += 1;
    }
    if used == 0 {
        return Err(MetricError::AllPixelsDegenerate);
    }
    Ok((sum / used as f64, skipped))
}

pub fn sam(x: &Tensor, y: &Tensor) -> Result<f64, MetricError> {
    Ok(sam_with_skipped(x, y)?.0)
}

/// Scores of one image. SAM is `None` when every pixel is degenerate.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub image_id: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub sre_db: f64,
    pub sam_deg: Option<f64>,
}

impl ImageScores {
    pub fn compute(image_id: usize, estimate: &Tensor, reference: &Tensor) -> Result<Self, MetricError> {
        let sam_deg = match sam(reference, estimate) {
            Ok(v) => Some(v),
            Err(MetricError::AllPixelsDegenerate) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            image_id,
            psnr_db: psnr(estimate, reference, 1.0)?,
            ssim: ssim(reference, estimate)?,
            sre_db: sre(reference, estimate)?,
            sam_deg,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub images: Vec<ImageScores>,
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl MetricReport {
    /// Mean PSNR over images with finite PSNR.
    pub fn mean_psnr(&self) -> f64 {
        finite_mean(self.images.iter().map(|s| s.psnr_db))
    }

    pub fn mean_ssim(&self) -> f64 {
        finite_mean(self.images.iter().map(|s| s.ssim))
    }

    pub fn mean_sre(&self) -> f64 {
        finite_mean(self.images.iter().map(|s| s.sre_db))
    }

    pub fn mean_sam(&self) -> f64 {
        finite_mean(self.images.iter().filter_map(|s| s.sam_deg))
    }

    /// Images whose PSNR is infinite, i.e. exact reconstructions.
    pub fn infinite_psnr_count(&self) -> usize {
        self.images.iter().filter(|s| s.psnr_db.is_infinite()).count()
    }
}

/// SPOA (actor output) and bicubic (`s0`) reports over the same pairs. Both
/// estimates are clamped to `[0, 1]` before scoring.
pub fn evaluate_split(
    params: &ParameterSet,
    pairs: &[StatePair],
    net: &NetworkConfig,
) -> Result<(MetricReport, MetricReport), MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let mut spoa = Vec::with_capacity(pairs.len());
    let mut bicubic = Vec::with_capacity(pairs.len());
    for p in pairs {
        let s_hat = actor_forward(&p.s0, params, net)?.into_arrived().clamp01();
        spoa.push(ImageScores::compute(p.id, &s_hat, &p.s_star)?);
        bicubic.push(ImageScores::compute(p.id, &p.s0.clamp01(), &p.s_star)?);
    }
    Ok((
        MetricReport {
            method: "spoa".into(),
            images: spoa,
        },
        MetricReport {
            method: "bicubic".into(),
            images: bicubic,
        },
    ))
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else if v.is_nan() {
        "nan".to_owned()
    } else {
        format!("{v:.6}")
    }
}

/// Per-image rows for every report followed by one `mean` row per method.
pub fn report_csv(reports: &[&MetricReport]) -> String {
    let mut out = String::new();
    writeln!(out, "{REPORT_HEADER}").unwrap();
    for r in reports {
        for s in &r.images {
            let sam = s.sam_deg.map_or_else(|| "nan".to_owned(), fmt_value);
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.image_id,
                r.method,
                fmt_value(s.psnr_db),
                fmt_value(s.ssim),
                fmt_value(s.sre_db),
                sam
            )
            .unwrap();
        }
    }
    for r in reports {
        writeln!(
            out,
            "mean,{},{},{},{},{}",
            r.method,
            fmt_value(r.mean_psnr()),
            fmt_value(r.mean_ssim()),
            fmt_value(r.mean_sre()),
            fmt_value(r.mean_sam())
        )
        .unwrap();
    }
    out
}
