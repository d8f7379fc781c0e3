use super::{reward, within_epsilon, RlError, StatePair, TrainerState};
use crate::nn::{actor_forward, record_actor, record_policy, NetworkConfig, ParameterSet};
use crate::tensor::{sigmoid, Tape, Tensor};

/// Evaluates `f` on every buffer item (in parallel when enabled) and returns
/// the results in buffer order.
fn map_items<T, F>(items: &[StatePair], f: F) -> Result<Vec<T>, RlError>
where
    T: Send,
    F: Fn(&StatePair) -> Result<T, RlError> + Sync + Send,
{
    if items.is_empty() {
        return Err(RlError::EmptyBuffer);
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Index-ordered arithmetic mean of equally long vectors.
fn mean_of<'a>(vectors: impl ExactSizeIterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let n = vectors.len() as f64;
    let mut acc: Option<Vec<f64>> = None;
    for v in vectors {
        match &mut acc {
            None => acc = Some(v.clone()),
            Some(a) => a.iter_mut().zip(v).for_each(|(a, b)| *a += b),
        }
    }
    let mut acc = acc.unwrap_or_default();
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// `−(ŝ − s*)/n`: the upstream seed at `ŝ` whose backward pass yields half
/// the gradient of `R = −mean((ŝ − s*)²)`.
fn actor_seed(s_hat: &Tensor, s_star: &Tensor) -> Result<Tensor, RlError> {
    let n = s_hat.len() as f64;
    Ok(s_hat.zip_with(s_star, |a, b| -(a - b) / n)?)
}

/// Δθ_fa for one pair: the arrived-state error propagated through
/// `TB_[m](Ω(Φ(s₀)))`.
fn actor_item(pair: &StatePair, params: &ParameterSet, net: &NetworkConfig) -> Result<Vec<f64>, RlError> {
    let trace = actor_forward(&pair.s0, params, net)?;
    let seed = actor_seed(trace.arrived(), &pair.s_star)?;
    let grads = trace.backward(seed)?;
    Ok(params.actor_gradient(&grads))
}

/// `R·∇_{θ_p} log π` for one pair with θ_fa held fixed. Since
/// `∂ log σ(Ψ)/∂Ψ = σ(−Ψ)`, the seed at `Ψ` is `R·σ(−Ψ)`.
fn policy_item(pair: &StatePair, params: &ParameterSet, net: &NetworkConfig) -> Result<Vec<f64>, RlError> {
    let s_hat = actor_forward(&pair.s0, params, net)?.into_arrived();
    let r = reward(&s_hat, &pair.s_star)?;
    policy_term(s_hat, &pair.s_star, r, params, net)
}

fn policy_term(
    s_hat: Tensor,
    s_star: &Tensor,
    r: f64,
    params: &ParameterSet,
    net: &NetworkConfig,
) -> Result<Vec<f64>, RlError> {
    let mut tape = Tape::new();
    let a = tape.leaf(s_hat);
    let b = tape.leaf(s_star.clone());
    let pv = record_policy(&mut tape, a, b, params, net)?;
    let psi = tape.value(pv.score).item();
    let grads = tape.backward(&[(pv.score, Tensor::scalar(r * sigmoid(-psi)))])?;
    Ok(params.policy_gradient(&grads))
}

/// Both terms from one forward recording and a single reverse sweep. The
/// policy branch reads a detached copy of `ŝ`, so no policy gradient reaches θ_fa.
fn spoa_item(
    pair: &StatePair,
    params: &ParameterSet,
    net: &NetworkConfig,
) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let mut tape = Tape::new();
    let s0 = tape.leaf(pair.s0.clone());
    let actor = record_actor(&mut tape, s0, params, net)?;
    let s_hat = tape.value(actor.arrived).clone();
    let r = reward(&s_hat, &pair.s_star)?;
    let seed_actor = actor_seed(&s_hat, &pair.s_star)?;
    let detached = tape.leaf(s_hat);
    let goal = tape.leaf(pair.s_star.clone());
    let pv = record_policy(&mut tape, detached, goal, params, net)?;
    let psi = tape.value(pv.score).item();
    let grads = tape.backward(&[
        (actor.arrived, seed_actor),
        (pv.score, Tensor::scalar(r * sigmoid(-psi))),
    ])?;
    Ok((params.actor_gradient(&grads), params.policy_gradient(&grads)))
}

/// Buffer-averaged Δθ_fa (before the step size), in
/// [`ParameterSet::actor_vector`] order.
pub fn actor_gradient(buffer: &[StatePair], params: &ParameterSet, net: &NetworkConfig) -> Result<Vec<f64>, RlError> {
    let per_item = map_items(buffer, |p| actor_item(p, params, net))?;
    Ok(mean_of(per_item.iter()))
}

/// Buffer-averaged `R·∇_{θ_p} log π`, in [`ParameterSet::policy_vector`] order.
pub fn policy_gradient(buffer: &[StatePair], params: &ParameterSet, net: &NetworkConfig) -> Result<Vec<f64>, RlError> {
    let per_item = map_items(buffer, |p| policy_item(p, params, net))?;
    Ok(mean_of(per_item.iter()))
}

/// Joint raw gradient of one parameter snapshot. θ_fa and θ_p are disjoint,
/// so the combined update is the concatenation of the two parts.
#[derive(Clone, Debug, PartialEq)]
pub struct SpoaGradient {
    pub actor: Vec<f64>,
    pub policy: Vec<f64>,
}

impl SpoaGradient {
    /// Full Δθ in `{θ_f, θ_a, θ_p}` order.
    pub fn concat(&self) -> Vec<f64> {
        self.actor.iter().chain(&self.policy).copied().collect()
    }
}

pub fn spoa_gradient(buffer: &[StatePair], params: &ParameterSet, net: &NetworkConfig) -> Result<SpoaGradient, RlError> {
    let per_item = map_items(buffer, |p| spoa_item(p, params, net))?;
    Ok(SpoaGradient {
        actor: mean_of(per_item.iter().map(|(a, _)| a)),
        policy: mean_of(per_item.iter().map(|(_, p)| p)),
    })
}

fn apply_actor(state: &mut TrainerState, direction: &[f64], alpha: f64) -> Result<(), RlError> {
    let mut theta = state.params.actor_vector();
    let descent: Vec<f64> = direction.iter().map(|g| -g).collect();
    state.actor_adam.step(&mut theta, &descent, alpha)?;
    state.params.set_actor_vector(&theta)?;
    Ok(())
}

fn apply_policy(state: &mut TrainerState, direction: &[f64], beta: f64) -> Result<(), RlError> {
    let mut theta = state.params.policy_vector();
    let descent: Vec<f64> = direction.iter().map(|g| -g).collect();
    state.policy_adam.step(&mut theta, &descent, beta)?;
    state.params.set_policy_vector(&theta)?;
    Ok(())
}

/// Computes Δθ_fa on the buffer and ascends it with the actor's Adam state.
/// Returns the raw averaged gradient.
pub fn actor_update(
    state: &mut TrainerState,
    buffer: &[StatePair],
    net: &NetworkConfig,
    alpha: f64,
) -> Result<Vec<f64>, RlError> {
    let g = actor_gradient(buffer, &state.params, net)?;
    apply_actor(state, &g, alpha)?;
    Ok(g)
}

/// Computes Δθ_p with θ_fa frozen and ascends it with the policy's Adam state.
pub fn policy_update(
    state: &mut TrainerState,
    buffer: &[StatePair],
    net: &NetworkConfig,
    beta: f64,
) -> Result<Vec<f64>, RlError> {
    let g = policy_gradient(buffer, &state.params, net)?;
    apply_policy(state, &g, beta)?;
    Ok(g)
}

/// Computes both terms on the same snapshot, then applies each through its
/// own Adam state and rate.
pub fn spoa_update(
    state: &mut TrainerState,
    buffer: &[StatePair],
    net: &NetworkConfig,
    alpha: f64,
    beta: f64,
) -> Result<SpoaGradient, RlError> {
    let g = spoa_gradient(buffer, &state.params, net)?;
    apply_actor(state, &g.actor, alpha)?;
    apply_policy(state, &g.policy, beta)?;
    Ok(g)
}

/// `θ_fa ← θ_fa + step·direction` without Adam.
pub fn plain_actor_step(params: &mut ParameterSet, direction: &[f64], step: f64) -> Result<(), RlError> {
    let theta: Vec<f64> = params
        .actor_vector()
        .iter()
        .zip(direction)
        .map(|(t, d)| t + step * d)
        .collect();
    params.set_actor_vector(&theta)?;
    Ok(())
}

/// Reward, confidence and ε-ball statistics of the actor on a buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BufferStats {
    pub mean_reward: f64,
    pub mean_pi: f64,
    pub success_count: usize,
}

pub fn evaluate_buffer(
    buffer: &[StatePair],
    params: &ParameterSet,
    net: &NetworkConfig,
    epsilon_ball: f64,
) -> Result<BufferStats, RlError> {
    let per_item = map_items(buffer, |p| {
        let s_hat = actor_forward(&p.s0, params, net)?.into_arrived();
        let r = reward(&s_hat, &p.s_star)?;
        let pi = crate::nn::policy_prob(&s_hat, &p.s_star, params, net)?;
        Ok((r, pi, within_epsilon(&s_hat, &p.s_star, epsilon_ball)?))
    })?;
    let n = per_item.len() as f64;
    Ok(BufferStats {
        mean_reward: per_item.iter().map(|t| t.0).sum::<f64>() / n,
        mean_pi: per_item.iter().map(|t| t.1).sum::<f64>() / n,
        success_count: per_item.iter().filter(|t| t.2).count(),
    })
}
