//! Trainer state on disk, stored in the tensor container format.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nn::NetworkConfig;
use crate::rl::{RlError, TrainerState};
use crate::tensor::{read_container, write_container, ContainerError};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{}: {cause}", path.display())]
    Container {
        path: PathBuf,
        cause: ContainerError,
    },
    #[error("{}: {cause}", path.display())]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
    #[error("{}: {cause}", path.display())]
    Contents {
        path: PathBuf,
        cause: RlError,
    },
}

pub fn save_checkpoint(path: &Path, state: &TrainerState) -> Result<(), CheckpointError> {
    let file = File::create(path).map_err(|cause| CheckpointError::Io {
        path: path.to_owned(),
        cause,
    })?;
    write_container(BufWriter::new(file), &state.to_named()).map_err(|cause| CheckpointError::Container {
        path: path.to_owned(),
        cause,
    })
}

/// Reads a checkpoint for a network shaped by `net`. Parameter-only files
/// load with fresh optimiser state at episode 0.
pub fn load_checkpoint(path: &Path, net: &NetworkConfig) -> Result<TrainerState, CheckpointError> {
    let file = File::open(path).map_err(|cause| CheckpointError::Io {
        path: path.to_owned(),
        cause,
    })?;
    let entries = read_container(BufReader::new(file)).map_err(|cause| CheckpointError::Container {
        path: path.to_owned(),
        cause,
    })?;
    TrainerState::from_named(net, &entries).map_err(|cause| CheckpointError::Contents {
        path: path.to_owned(),
        cause,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParameterSet;

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("spoa-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = NetworkConfig {
            feature_channels: 4,
            ..NetworkConfig::default()
        };
        let mut state = TrainerState::new(ParameterSet::init(&net, 9).unwrap());
        state.episode = 17;
        state.actor_adam.step_count = 34;
        state.actor_adam.first_moment[3] = -1.25e-7;
        state.policy_adam.second_moment[0] = 3.5e-300;
        let path = scratch("a.spoa");
        save_checkpoint(&path, &state).unwrap();
        let back = load_checkpoint(&path, &net).unwrap();
        assert_eq!(back, state);

        let other = NetworkConfig {
            feature_channels: 8,
            ..net
        };
        assert!(matches!(load_checkpoint(&path, &other), Err(CheckpointError::Contents { .. })));
    }

    #[test]
    fn errors_name_the_file() {
        let path = scratch("bad.spoa");
        std::fs::write(&path, b"NOPE1....").unwrap();
        let err = load_checkpoint(&path, &NetworkConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.spoa") && msg.contains("magic"), "{msg}");

        let missing = scratch("missing.spoa");
        let msg = load_checkpoint(&missing, &NetworkConfig::default()).unwrap_err().to_string();
        assert!(msg.contains("missing.spoa"), "{msg}");
    }
}
