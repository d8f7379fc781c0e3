//! `key = value` run configuration with command-line overrides.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use spoa_core::gradcheck::{Fault, GradcheckConfig};
use spoa_core::nn::NetworkConfig;
use spoa_core::rl::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub net: NetworkConfig,
    pub train: TrainConfig,
    pub dataset_dir: PathBuf,
    pub dataset_size: usize,
    pub patch_size: usize,
    pub train_fraction: f64,
    pub checkpoint: PathBuf,
    pub checkpoint_every: usize,
    pub resume: Option<PathBuf>,
    pub log: PathBuf,
    pub report: PathBuf,
    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
    pub gradcheck_instances: usize,
    pub gradcheck_fault: Option<Fault>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: NetworkConfig {
                feature_channels: 16,
                ..NetworkConfig::default()
            },
            train: TrainConfig::default(),
            dataset_dir: PathBuf::from("data"),
            dataset_size: 200,
            patch_size: 32,
            train_fraction: 0.8,
            checkpoint: PathBuf::from("spoa.ckpt"),
            checkpoint_every: 0,
            resume: None,
            log: PathBuf::from("train_log.csv"),
            report: PathBuf::from("report.csv"),
            gradcheck_step: 1e-5,
            gradcheck_tolerance: 1e-4,
            gradcheck_instances: 2,
            gradcheck_fault: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
        reason: e.to_string(),
    })
}

fn fault_name(f: Option<Fault>) -> &'static str {
    match f {
        None => "none",
        Some(Fault::SignFlip) => "sign_flip",
    }
}

/// Every key in dump order.
pub const KEYS: &[&str] = &[
    "input_channels",
    "feature_channels",
    "n_fe",
    "n_rb",
    "n_tb",
    "n_policy_blocks",
    "kernel_size",
    "lambda",
    "leaky_slope",
    "episodes",
    "actor_steps",
    "policy_steps",
    "spoa_steps",
    "alpha",
    "beta",
    "epsilon_ball",
    "gamma",
    "seed",
    "buffer_capacity",
    "augment",
    "record_timing",
    "dataset_dir",
    "dataset_size",
    "patch_size",
    "train_fraction",
    "checkpoint",
    "checkpoint_every",
    "resume",
    "log",
    "report",
    "gradcheck_step",
    "gradcheck_tolerance",
    "gradcheck_instances",
    "gradcheck_fault",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "input_channels" => self.net.input_channels = parse(key, v)?,
            "feature_channels" => self.net.feature_channels = parse(key, v)?,
            "n_fe" => self.net.n_fe = parse(key, v)?,
            "n_rb" => self.net.n_rb = parse(key, v)?,
            "n_tb" => self.net.n_tb = parse(key, v)?,
            "n_policy_blocks" => self.net.n_policy_blocks = parse(key, v)?,
            "kernel_size" => self.net.kernel_size = parse(key, v)?,
            "lambda" => self.net.lambda = parse(key, v)?,
            "leaky_slope" => self.net.leaky_slope = parse(key, v)?,
            "episodes" => self.train.episodes = parse(key, v)?,
            "actor_steps" => self.train.actor_steps = parse(key, v)?,
            "policy_steps" => self.train.policy_steps = parse(key, v)?,
            "spoa_steps" => self.train.spoa_steps = parse(key, v)?,
            "alpha" => self.train.alpha = parse(key, v)?,
            "beta" => self.train.beta = parse(key, v)?,
            "epsilon_ball" => self.train.epsilon_ball = parse(key, v)?,
            "gamma" => self.train.gamma = parse(key, v)?,
            "seed" => self.train.seed = parse(key, v)?,
            "buffer_capacity" => self.train.buffer_capacity = parse(key, v)?,
            "augment" => self.train.augment = parse(key, v)?,
            "record_timing" => self.train.record_timing = parse(key, v)?,
            "dataset_dir" => self.dataset_dir = PathBuf::from(v),
            "dataset_size" => self.dataset_size = parse(key, v)?,
            "patch_size" => self.patch_size = parse(key, v)?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            "checkpoint" => self.checkpoint = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "resume" => self.resume = (!v.is_empty() && v != "none").then(|| PathBuf::from(v)),
            "log" => self.log = PathBuf::from(v),
            "report" => self.report = PathBuf::from(v),
            "gradcheck_step" => self.gradcheck_step = parse(key, v)?,
            "gradcheck_tolerance" => self.gradcheck_tolerance = parse(key, v)?,
            "gradcheck_instances" => self.gradcheck_instances = parse(key, v)?,
            "gradcheck_fault" => {
                self.gradcheck_fault = match v {
                    "none" => None,
                    "sign_flip" => Some(Fault::SignFlip),
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.to_owned(),
                            value: v.to_owned(),
                            reason: "expected none or sign_flip".into(),
                        })
                    }
                }
            }
            other => return Err(ConfigError::UnknownKey(other.to_owned())),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let path = |p: &PathBuf| p.display().to_string();
        match key {
            "input_channels" => self.net.input_channels.to_string(),
            "feature_channels" => self.net.feature_channels.to_string(),
            "n_fe" => self.net.n_fe.to_string(),
            "n_rb" => self.net.n_rb.to_string(),
            "n_tb" => self.net.n_tb.to_string(),
            "n_policy_blocks" => self.net.n_policy_blocks.to_string(),
            "kernel_size" => self.net.kernel_size.to_string(),
            "lambda" => self.net.lambda.to_string(),
            "leaky_slope" => self.net.leaky_slope.to_string(),
            "episodes" => self.train.episodes.to_string(),
            "actor_steps" => self.train.actor_steps.to_string(),
            "policy_steps" => self.train.policy_steps.to_string(),
            "spoa_steps" => self.train.spoa_steps.to_string(),
            "alpha" => self.train.alpha.to_string(),
            "beta" => self.train.beta.to_string(),
            "epsilon_ball" => self.train.epsilon_ball.to_string(),
            "gamma" => self.train.gamma.to_string(),
            "seed" => self.train.seed.to_string(),
            "buffer_capacity" => self.train.buffer_capacity.to_string(),
            "augment" => self.train.augment.to_string(),
            "record_timing" => self.train.record_timing.to_string(),
            "dataset_dir" => path(&self.dataset_dir),
            "dataset_size" => self.dataset_size.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "train_fraction" => self.train_fraction.to_string(),
            "checkpoint" => path(&self.checkpoint),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "resume" => self.resume.as_ref().map_or_else(|| "none".to_owned(), path),
            "log" => path(&self.log),
            "report" => path(&self.report),
            "gradcheck_step" => self.gradcheck_step.to_string(),
            "gradcheck_tolerance" => self.gradcheck_tolerance.to_string(),
            "gradcheck_instances" => self.gradcheck_instances.to_string(),
            "gradcheck_fault" => fault_name(self.gradcheck_fault).to_owned(),
            _ => unreachable!("key list and getter disagree on {key}"),
        }
    }

    /// Applies every `key = value` line of `text`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    text: raw.to_owned(),
                });
            };
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: assignment.to_owned(),
        })?;
        self.set(k, v)
    }

    /// The effective configuration; reading it back yields the same value.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key)).unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.net.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(ConfigError::Invalid("train_fraction must lie in [0, 1]".into()));
        }
        if !(self.gradcheck_step > 0.0 && self.gradcheck_tolerance > 0.0) {
            return Err(ConfigError::Invalid("gradcheck_step and gradcheck_tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn gradcheck(&self) -> GradcheckConfig {
        GradcheckConfig {
            seed: self.train.seed,
            step: self.gradcheck_step,
            tolerance: self.gradcheck_tolerance,
            fd_instances: self.gradcheck_instances,
            fault: self.gradcheck_fault,
            ..GradcheckConfig::default()
        }
    }
}
