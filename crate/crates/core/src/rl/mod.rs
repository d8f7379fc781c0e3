//! Reward, replay buffer, the actor / policy / joint update rules and the
//! Monte-Carlo episode loop.
//!
//! Update directions are ascent directions on the expected return. Each is
//! applied through its own Adam state by descending the negated direction:
//! θ_fa with rate `alpha`, θ_p with rate `beta`.

mod train;
mod update;

pub use train::{
    fill_windowed, run_episode, train, write_log_csv, EpisodeRecord, TrainConfig, TrainOutcome,
    TrainerState, LOG_HEADER, REWARD_WINDOW,
};
pub use update::{
    actor_gradient, actor_update, evaluate_buffer, plain_actor_step, policy_gradient,
    policy_update, spoa_gradient, spoa_update, BufferStats, SpoaGradient,
};

pub use crate::data::StatePair;

use rand::Rng;
use thiserror::Error;

use crate::data::{make_state_pair, Augmentation, DataError};
use crate::nn::NetError;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RlError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite values in episode {episode}: {detail}")]
    Diverged { episode: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl RlError {
    fn is_non_finite(&self) -> bool {
        matches!(
            self,
            Self::Tensor(TensorError::NonFinite(_)) | Self::Net(NetError::Tensor(TensorError::NonFinite(_)))
        )
    }
}

/// `R = −mean((ŝ − s*)²)`; zero exactly when the states coincide.
pub fn reward(s_hat: &Tensor, s_star: &Tensor) -> Result<f64, TensorError> {
    Ok(-mse(s_hat, s_star)?)
}

pub(crate) fn mse(a: &Tensor, b: &Tensor) -> Result<f64, TensorError> {
    a.expect_shape(b.shape())?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Whether `ŝ` lies strictly inside the ε-ball around `s*` in RMS distance,
/// i.e. `mean((ŝ − s*)²) < ε²`.
pub fn within_epsilon(s_hat: &Tensor, s_star: &Tensor, eps: f64) -> Result<bool, TensorError> {
    Ok(mse(s_hat, s_star)? < eps * eps)
}

/// Fixed-capacity batch of state pairs, refilled from scratch every episode.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<StatePair>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn items(&self) -> &[StatePair] {
        &self.items
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn push(&mut self, pair: StatePair) {
        if !self.is_full() {
            self.items.push(pair);
        }
    }

    /// Empties the buffer and draws `capacity` pairs uniformly with
    /// replacement. With `augment`, each goal patch gets one random
    /// rotation/flip before the initial state is re-derived from it.
    pub fn fill<R: Rng + ?Sized>(
        &mut self,
        dataset: &[StatePair],
        rng: &mut R,
        augment: bool,
    ) -> Result<(), RlError> {
        if dataset.is_empty() {
            return Err(RlError::EmptyDataset);
        }
        self.items.clear();
        while !self.is_full() {
            let pair = &dataset[rng.random_range(0..dataset.len())];
            if augment {
                let hr = &pair.s_star;
                let aug = if hr.height() == hr.width() {
                    Augmentation::sample(rng)
                } else {
                    [Augmentation::HFlip, Augmentation::VFlip][rng.random_range(0..2)]
                };
                self.items.push(make_state_pair(&aug.apply(hr)?, pair.id)?);
            } else {
                self.items.push(pair.clone());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(6, 5, 2, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn reward_values() {
        let a = random(1);
        assert_eq!(reward(&a, &a).unwrap(), 0.0);
        let shifted = a.map(|v| v + 0.5);
        assert!((reward(&shifted, &a).unwrap() + 0.25).abs() < 1e-15);

        let b = random(2);
        let mut sum = 0.0;
        for i in 0..a.len() {
            let d = a.data()[i] - b.data()[i];
            sum += d * d;
        }
        let oracle = -sum / a.len() as f64;
        let r = reward(&a, &b).unwrap();
        assert!((r - oracle).abs() <= 1e-14 * oracle.abs());
        assert!(r < 0.0);
        assert!(reward(&a, &Tensor::zeros(6, 5, 1)).is_err());
    }

    #[test]
    fn epsilon_ball_is_strict() {
        let a = random(3);
        assert!(within_epsilon(&a, &a, 1e-6).unwrap());
        assert!(!within_epsilon(&a.map(|v| v + 0.5), &a, 0.1).unwrap());
        // 0.25 and 0.5 are exact in binary, so the offset equals ε exactly.
        let z = Tensor::zeros(3, 3, 1);
        assert!(!within_epsilon(&Tensor::filled(3, 3, 1, 0.25), &z, 0.25).unwrap());
        assert!(within_epsilon(&Tensor::filled(3, 3, 1, 0.2499), &z, 0.25).unwrap());
    }

    #[test]
    fn buffer_fill_is_seeded_and_bounded() {
        let hr = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            Tensor::from_fn(8, 8, 1, |_, _, _| rng.random_range(0.0..1.0))
        };
        let data: Vec<StatePair> = (0..5).map(|i| make_state_pair(&hr(i), i as usize).unwrap()).collect();
        let mut a = ReplayBuffer::new(10);
        let mut b = ReplayBuffer::new(10);
        a.fill(&data, &mut ChaCha8Rng::seed_from_u64(4), true).unwrap();
        b.fill(&data, &mut ChaCha8Rng::seed_from_u64(4), true).unwrap();
        assert_eq!(a.items(), b.items());
        assert_eq!(a.items().len(), 10);
        a.fill(&data, &mut ChaCha8Rng::seed_from_u64(5), false).unwrap();
        assert_eq!(a.items().len(), 10);
        assert!(a.items().iter().all(|p| data[p.id] == *p));
        assert_eq!(a.fill(&[], &mut ChaCha8Rng::seed_from_u64(0), false), Err(RlError::EmptyDataset));
    }
}
