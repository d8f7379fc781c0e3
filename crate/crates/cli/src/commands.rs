use std::fs;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context};
use spoa_core::checkpoint::{load_checkpoint, save_checkpoint};
use spoa_core::data::{
    bicubic_resample, from_tensor, load_image, save_image, synth_dataset, to_tensor, DataError, DatasetManifest,
    Split, StatePair, SCALE,
};
use spoa_core::gradcheck::run_all;
use spoa_core::metrics::{evaluate_split, report_csv};
use spoa_core::nn::{actor_forward, ParameterSet};
use spoa_core::rl::{self, write_log_csv, RlError, TrainerState};

use crate::config::{ConfigError, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.csv";

/// A problem with the request itself rather than with running it.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(String);

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// 2 for rejected input or configuration, 1 for failures while running.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        e.is::<ConfigError>()
            || e.is::<Invalid>()
            || matches!(
                e.downcast_ref::<DataError>(),
                Some(DataError::EmptyDataset | DataError::Indivisible { .. })
            )
            || matches!(e.downcast_ref::<RlError>(), Some(RlError::InvalidConfig(_)))
    });
    if validation {
        2
    } else {
        1
    }
}

pub fn synth(cfg: &RunConfig) -> anyhow::Result<()> {
    let ds = synth_dataset(cfg.dataset_size, cfg.patch_size, cfg.train.seed, cfg.train_fraction)?;
    let dir = &cfg.dataset_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (entry, patch) in ds.manifest.entries.iter().zip(&ds.patches) {
        save_image(&from_tensor(patch)?, dir.join(&entry.path))?;
    }
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, ds.manifest.to_csv()).with_context(|| format!("writing {}", manifest.display()))?;
    let n_train = ds.manifest.entries.iter().filter(|e| e.split == Split::Train).count();
    println!(
        "wrote {} patches ({} train, {} test) to {}",
        ds.patches.len(),
        n_train,
        ds.patches.len() - n_train,
        dir.display()
    );
    Ok(())
}

fn load_split(cfg: &RunConfig, split: Split) -> anyhow::Result<Vec<StatePair>> {
    let path = cfg.dataset_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest = DatasetManifest::parse_csv(&text, cfg.patch_size).with_context(|| path.display().to_string())?;
    let pairs = manifest.load_pairs(&cfg.dataset_dir, split)?;
    if pairs.is_empty() {
        bail!(Invalid(format!("{} has no {split} entries", path.display())));
    }
    Ok(pairs)
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let pairs = load_split(cfg, Split::Train)?;
    let state = match &cfg.resume {
        Some(path) => load_checkpoint(path, &cfg.net)?,
        None => TrainerState::new(ParameterSet::init(&cfg.net, cfg.train.seed)?),
    };
    let every = cfg.checkpoint_every;
    let outcome = rl::train(&pairs, state, &cfg.net, &cfg.train, |state, record| {
        if every > 0 && record.episode % every == 0 {
            save_checkpoint(&cfg.checkpoint, state).map_err(|e| RlError::Checkpoint(e.to_string()))?;
        }
        Ok(())
    })?;
    save_checkpoint(&cfg.checkpoint, &outcome.state)?;
    let file = fs::File::create(&cfg.log).with_context(|| format!("creating {}", cfg.log.display()))?;
    write_log_csv(BufWriter::new(file), &outcome.records).with_context(|| format!("writing {}", cfg.log.display()))?;
    match outcome.records.last() {
        Some(last) => println!(
            "episode {}: mean reward {:.6}, success rate {:.3}",
            last.episode,
            last.mean_reward,
            last.success_count as f64 / cfg.train.buffer_capacity as f64
        ),
        None => println!("no episodes run; checkpoint holds the initial parameters"),
    }
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> anyhow::Result<()> {
    let results = run_all(&cfg.gradcheck())?;
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{:<15} max rel error {:.3e} (tolerance {:.0e}) over {} entries, {} skipped at kinks: {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.checked,
            r.skipped,
            if r.passed() { "ok" } else { "FAILED" }
        );
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if !failed.is_empty() {
        bail!("gradient check failed: {}", failed.join(", "));
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let state = load_checkpoint(&cfg.checkpoint, &cfg.net)?;
    let pairs = load_split(cfg, Split::Test)?;
    let (spoa, bicubic) = evaluate_split(&state.params, &pairs, &cfg.net)?;
    fs::write(&cfg.report, report_csv(&[&spoa, &bicubic]))
        .with_context(|| format!("writing {}", cfg.report.display()))?;
    for r in [&spoa, &bicubic] {
        println!(
            "{:<8} PSNR {:.4} dB  SSIM {:.5}  SRE {:.4} dB  SAM {:.4} deg  ({} exact)",
            r.method,
            r.mean_psnr(),
            r.mean_ssim(),
            r.mean_sre(),
            r.mean_sam(),
            r.infinite_psnr_count()
        );
    }
    Ok(())
}

pub fn infer(cfg: &RunConfig, input: &Path, output: &Path) -> anyhow::Result<()> {
    let state = load_checkpoint(&cfg.checkpoint, &cfg.net)?;
    let lr = to_tensor(&load_image(input)?);
    if lr.channels() != cfg.net.input_channels {
        bail!(Invalid(format!(
            "{} has {} channels but the network expects {}",
            input.display(),
            lr.channels(),
            cfg.net.input_channels
        )));
    }
    let s0 = bicubic_resample(&lr, lr.height() * SCALE, lr.width() * SCALE);
    let s_hat = actor_forward(&s0, &state.params, &cfg.net)?.into_arrived().clamp01();
    save_image(&from_tensor(&s_hat)?, output)?;
    println!(
        "{}x{} -> {}x{} written to {}",
        lr.width(),
        lr.height(),
        s_hat.width(),
        s_hat.height(),
        output.display()
    );
    Ok(())
}
