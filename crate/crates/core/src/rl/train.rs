use std::io::{self, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::update::{actor_update, evaluate_buffer, policy_update, spoa_update};
use super::{ReplayBuffer, RlError, StatePair};
use crate::nn::{NetworkConfig, ParameterSet};
use crate::tensor::{AdamState, NamedTensor};

pub const LOG_HEADER: &str = "episode,mean_reward,windowed_reward,mean_pi,success_count,duration_s";

/// Width of the forward averaging window of the reward curve.
pub const REWARD_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub actor_steps: usize,
    pub policy_steps: usize,
    pub spoa_steps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon_ball: f64,
    /// Kept with the run configuration; no update rule discounts.
    pub gamma: f64,
    pub seed: u64,
    pub buffer_capacity: usize,
    pub augment: bool,
    /// When false, `duration_s` is logged as 0 so logs of equal runs match byte for byte.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            actor_steps: 1,
            policy_steps: 1,
            spoa_steps: 1,
            alpha: 1e-4,
            beta: 1e-7,
            epsilon_ball: 0.02,
            gamma: 0.99,
            seed: 0,
            buffer_capacity: 10,
            augment: true,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_owned()));
        if self.actor_steps == 0 || self.policy_steps == 0 || self.spoa_steps == 0 {
            return bad("actor_steps, policy_steps and spoa_steps must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.epsilon_ball > 0.0 && self.epsilon_ball.is_finite()) {
            return bad("epsilon_ball must be positive");
        }
        if !self.gamma.is_finite() {
            return bad("gamma must be finite");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based episode number.
    pub episode: usize,
    pub mean_reward: f64,
    pub windowed_reward: f64,
    pub mean_pi: f64,
    pub success_count: usize,
    pub duration_s: f64,
}

/// Everything needed to continue a run: parameters, both optimiser states and
/// the number of completed episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub params: ParameterSet,
    pub actor_adam: AdamState,
    pub policy_adam: AdamState,
    pub episode: usize,
}

impl TrainerState {
    pub fn new(params: ParameterSet) -> Self {
        Self {
            actor_adam: AdamState::new(params.actor_len()),
            policy_adam: AdamState::new(params.policy_len()),
            params,
            episode: 0,
        }
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = self.params.to_named();
        for (prefix, adam) in [("adam.actor", &self.actor_adam), ("adam.policy", &self.policy_adam)] {
            out.push(NamedTensor::vector(format!("{prefix}.m"), adam.first_moment.clone()));
            out.push(NamedTensor::vector(format!("{prefix}.v"), adam.second_moment.clone()));
            out.push(NamedTensor::scalar(format!("{prefix}.t"), adam.step_count as f64));
        }
        out.push(NamedTensor::scalar("episode", self.episode as f64));
        out
    }

    /// Restores a state written by [`TrainerState::to_named`]. A container
    /// holding parameters only yields fresh optimiser states at episode 0.
    pub fn from_named(config: &NetworkConfig, entries: &[NamedTensor]) -> Result<Self, RlError> {
        let params = ParameterSet::from_named(config, entries)?;
        let mut state = Self::new(params);
        let find = |name: &str| entries.iter().find(|e| e.name == name);
        let Some(episode) = find("episode") else {
            return Ok(state);
        };
        let count = |e: &NamedTensor| -> Result<u64, RlError> {
            match e.data[..] {
                [v] if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) => Ok(v as u64),
                _ => Err(RlError::Checkpoint(format!("bad counter {:?}", e.name))),
            }
        };
        state.episode = count(episode)? as usize;
        for (prefix, adam) in [("adam.actor", &mut state.actor_adam), ("adam.policy", &mut state.policy_adam)] {
            let get = |suffix: &str| {
                find(&format!("{prefix}.{suffix}"))
                    .ok_or_else(|| RlError::Checkpoint(format!("missing {prefix}.{suffix}")))
            };
            let (m, v) = (get("m")?, get("v")?);
            if m.data.len() != adam.len() || v.data.len() != adam.len() {
                return Err(RlError::Checkpoint(format!("{prefix} moments do not match the network")));
            }
            adam.first_moment.copy_from_slice(&m.data);
            adam.second_moment.copy_from_slice(&v.data);
            adam.step_count = count(get("t")?)?;
        }
        Ok(state)
    }
}

fn guard<T>(episode: usize, result: Result<T, RlError>) -> Result<T, RlError> {
    match result {
        Err(e) if e.is_non_finite() => Err(RlError::Diverged {
            episode,
            detail: e.to_string(),
        }),
        other => other,
    }
}

/// One pass of the outer loop: refill the buffer, run the actor, policy and
/// joint updates, then score the buffer with the updated parameters.
///
/// Sampling draws from stream `state.episode` of the seed, so a resumed run
/// sees the same buffers as an uninterrupted one.
pub fn run_episode(
    dataset: &[StatePair],
    state: &mut TrainerState,
    net: &NetworkConfig,
    config: &TrainConfig,
) -> Result<EpisodeRecord, RlError> {
    let start = config.record_timing.then(Instant::now);
    let number = state.episode + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(state.episode as u64);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    buffer.fill(dataset, &mut rng, config.augment)?;
    let items = buffer.items();

    for _ in 0..config.actor_steps {
        guard(number, actor_update(state, items, net, config.alpha).map(drop))?;
    }
    for _ in 0..config.policy_steps {
        guard(number, policy_update(state, items, net, config.beta).map(drop))?;
    }
    for _ in 0..config.spoa_steps {
        guard(number, spoa_update(state, items, net, config.alpha, config.beta).map(drop))?;
    }
    let params_finite = state.params.actor_vector().iter().all(|v| v.is_finite())
        && state.params.policy_vector().iter().all(|v| v.is_finite());
    if !params_finite {
        return Err(RlError::Diverged {
            episode: number,
            detail: "parameters became non-finite".into(),
        });
    }

    let stats = guard(number, evaluate_buffer(items, &state.params, net, config.epsilon_ball))?;
    if !stats.mean_reward.is_finite() || !stats.mean_pi.is_finite() {
        return Err(RlError::Diverged {
            episode: number,
            detail: "non-finite reward".into(),
        });
    }
    state.episode = number;
    Ok(EpisodeRecord {
        episode: number,
        mean_reward: stats.mean_reward,
        windowed_reward: stats.mean_reward,
        mean_pi: stats.mean_pi,
        success_count: stats.success_count,
        duration_s: start.map_or(0.0, |t| t.elapsed().as_secs_f64()),
    })
}

/// Sets `windowed_reward[i]` to the mean of `mean_reward[i..i + REWARD_WINDOW]`,
/// truncated at the end of the log.
pub fn fill_windowed(records: &mut [EpisodeRecord]) {
    let rewards: Vec<f64> = records.iter().map(|r| r.mean_reward).collect();
    for (i, rec) in records.iter_mut().enumerate() {
        let window = &rewards[i..(i + REWARD_WINDOW).min(rewards.len())];
        rec.windowed_reward = window.iter().sum::<f64>() / window.len() as f64;
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainerState,
    pub records: Vec<EpisodeRecord>,
}

/// Runs episodes `state.episode + 1 ..= config.episodes`. `after_episode` sees
/// the state after every episode and may stop the run by returning an error.
pub fn train<F>(
    dataset: &[StatePair],
    mut state: TrainerState,
    net: &NetworkConfig,
    config: &TrainConfig,
    mut after_episode: F,
) -> Result<TrainOutcome, RlError>
where
    F: FnMut(&TrainerState, &EpisodeRecord) -> Result<(), RlError>,
{
    config.validate()?;
    net.validate()?;
    if dataset.is_empty() && state.episode < config.episodes {
        return Err(RlError::EmptyDataset);
    }
    let mut records = Vec::with_capacity(config.episodes.saturating_sub(state.episode));
    while state.episode < config.episodes {
        let rec = run_episode(dataset, &mut state, net, config)?;
        after_episode(&state, &rec)?;
        records.push(rec);
    }
    fill_windowed(&mut records);
    Ok(TrainOutcome { state, records })
}

pub fn write_log_csv<W: Write>(mut w: W, records: &[EpisodeRecord]) -> io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.episode, r.mean_reward, r.windowed_reward, r.mean_pi, r.success_count, r.duration_s
        )?;
    }
    Ok(())
}
