//! Feature extractor, actor and Siamese policy networks.
//!
//! The actor maps a state `s` (an `H×W×C` image) to an arrived state `ŝ`:
//!
//! ```text
//! s̃₀ = Φ(s)                    n_fe × {conv, LeakyReLU}
//! s̃ₙ = s̃ₙ₋₁ + λ·h(s̃ₙ₋₁)        h = conv ∘ ReLU ∘ conv, n = 1..N
//! ŝ  = TB_m(… TB_0(s̃_N) …)     {conv, LeakyReLU}, last block linear
//! ```
//!
//! The policy scores a pair `(ŝ, s*)` with two weight-sharing branches,
//! `Ψ = mean(Φ_p(ŝ) ⊙ Φ_p(s*)) + b`, and `π = sigmoid(Ψ)`.

mod params;

pub use params::{xavier_bound, ParameterSet, ResidualParams};

use thiserror::Error;

use crate::tensor::{self, conv2d, leaky_relu, Gradients, Kernel, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("state has {found} channels, network expects {expected}")]
    InputChannels { expected: usize, found: usize },
    #[error("parameter vector has {found} values, expected {expected}")]
    Layout { expected: usize, found: usize },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has dims {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: [u32; 4],
        found: [u32; 4],
    },
    #[error("checkpoint contains non-finite parameters")]
    NonFiniteParameter,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkConfig {
    /// `C`, channels of the image states.
    pub input_channels: usize,
    pub n_fe: usize,
    /// Number of residual actions `N`.
    pub n_rb: usize,
    pub n_tb: usize,
    pub n_policy_blocks: usize,
    /// `C̃`, latent feature maps.
    pub feature_channels: usize,
    pub kernel_size: usize,
    /// Residual scaling `λ`.
    pub lambda: f64,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            n_fe: 3,
            n_rb: 3,
            n_tb: 3,
            n_policy_blocks: 3,
            feature_channels: 32,
            kernel_size: 3,
            lambda: 0.1,
            leaky_slope: 0.1,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |msg: &str| Err(NetError::InvalidConfig(msg.to_owned()));
        if self.kernel_size % 2 == 0 {
            return bad("kernel_size must be odd");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0, 1]");
        }
        if !(self.leaky_slope >= 0.0) {
            return bad("leaky_slope must be non-negative");
        }
        if self.input_channels == 0 || self.feature_channels == 0 {
            return bad("channel counts must be positive");
        }
        if self.n_fe == 0 || self.n_tb == 0 || self.n_policy_blocks == 0 {
            return bad("n_fe, n_tb and n_policy_blocks must be at least 1");
        }
        Ok(())
    }
}

fn check_input(s: &Tensor, config: &NetworkConfig) -> Result<(), NetError> {
    if s.channels() != config.input_channels {
        return Err(NetError::InputChannels {
            expected: config.input_channels,
            found: s.channels(),
        });
    }
    Ok(())
}

/// `Φ(s; θ_f)`: the feature-extraction blocks, each a convolution followed by LeakyReLU.
pub fn feature_extract(s: &Tensor, theta_f: &[Kernel], config: &NetworkConfig) -> Result<Tensor, NetError> {
    check_input(s, config)?;
    let mut x = s.clone();
    for k in theta_f {
        x = leaky_relu(&conv2d(&x, k)?, config.leaky_slope)?;
    }
    Ok(x)
}

/// One residual action, `x + λ·conv(ReLU(conv(x)))`.
pub fn residual_block(x: &Tensor, block: &ResidualParams, lambda: f64) -> Result<Tensor, NetError> {
    let inner = leaky_relu(&conv2d(x, &block.first)?, 0.0)?;
    let h = conv2d(&inner, &block.second)?;
    Ok(x.zip_with(&h, |a, b| a + lambda * b)?.finite("residual_block")?)
}

/// Transition cascade from latent space back to state space; the final block has no activation.
pub fn transition(x: &Tensor, theta_tb: &[Kernel], config: &NetworkConfig) -> Result<Tensor, NetError> {
    let mut x = x.clone();
    for (i, k) in theta_tb.iter().enumerate() {
        x = conv2d(&x, k)?;
        if i + 1 < theta_tb.len() {
            x = leaky_relu(&x, config.leaky_slope)?;
        }
    }
    Ok(x)
}

/// Policy branch `Φ_{θ_p}`: shared by both Siamese inputs.
pub fn policy_features(x: &Tensor, theta_p: &[Kernel], config: &NetworkConfig) -> Result<Tensor, NetError> {
    check_input(x, config)?;
    let mut x = x.clone();
    for k in theta_p {
        x = leaky_relu(&conv2d(&x, k)?, config.leaky_slope)?;
    }
    Ok(x)
}

/// Tape handles of an actor evaluation.
#[derive(Clone, Debug)]
pub struct ActorVars {
    pub input: Var,
    /// `s̃₀ … s̃_N`.
    pub latents: Vec<Var>,
    pub arrived: Var,
}

/// Records `TB_[m](Ω(Φ(s)))` for the state already on the tape as `input`.
pub fn record_actor<'p>(
    tape: &mut Tape<'p>,
    input: Var,
    params: &'p ParameterSet,
    config: &NetworkConfig,
) -> Result<ActorVars, NetError> {
    check_input(tape.value(input), config)?;
    let mut x = input;
    for (i, k) in params.feature.iter().enumerate() {
        x = tape.conv2d(x, k, params.feature_slot(i))?;
        x = tape.leaky_relu(x, config.leaky_slope)?;
    }
    let mut latents = vec![x];
    for (i, a) in params.actions.iter().enumerate() {
        let (s1, s2) = params.action_slots(i);
        let h = tape.conv2d(x, &a.first, s1)?;
        let h = tape.leaky_relu(h, 0.0)?;
        let h = tape.conv2d(h, &a.second, s2)?;
        x = tape.residual(x, h, config.lambda)?;
        latents.push(x);
    }
    let last = params.transition.len().saturating_sub(1);
    for (i, k) in params.transition.iter().enumerate() {
        x = tape.conv2d(x, k, params.transition_slot(i))?;
        if i < last {
            x = tape.leaky_relu(x, config.leaky_slope)?;
        }
    }
    Ok(ActorVars {
        input,
        latents,
        arrived: x,
    })
}

/// Tape handles of a policy evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    /// `Ψ`, a `1×1×1` value.
    pub score: Var,
    /// `π = sigmoid(Ψ)`.
    pub prob: Var,
}

/// Records the Siamese score and confidence of `(s_hat, s_star)`; both
/// branches reference the same policy kernels, so their gradients add up.
pub fn record_policy<'p>(
    tape: &mut Tape<'p>,
    s_hat: Var,
    s_star: Var,
    params: &'p ParameterSet,
    config: &NetworkConfig,
) -> Result<PolicyVars, NetError> {
    let shape = tape.value(s_star).shape();
    tape.value(s_hat).expect_shape(shape)?;
    check_input(tape.value(s_hat), config)?;
    let mut branch = |mut x: Var| -> Result<Var, NetError> {
        for (i, k) in params.policy.iter().enumerate() {
            x = tape.conv2d(x, k, params.policy_slot(i))?;
            x = tape.leaky_relu(x, config.leaky_slope)?;
        }
        Ok(x)
    };
    let fa = branch(s_hat)?;
    let fb = branch(s_star)?;
    let corr = tape.inner_product(fa, fb)?;
    let score = tape.add_param(corr, params.policy_bias, params.policy_bias_slot())?;
    let prob = tape.sigmoid(score)?;
    Ok(PolicyVars { score, prob })
}

/// A recorded actor evaluation: latent states, arrived state and the tape
/// needed to differentiate it.
#[derive(Debug)]
pub struct ActorTrace<'p> {
    tape: Tape<'p>,
    vars: ActorVars,
}

impl<'p> ActorTrace<'p> {
    pub fn latents(&self) -> Vec<&Tensor> {
        self.vars.latents.iter().map(|&v| self.tape.value(v)).collect()
    }

    pub fn arrived(&self) -> &Tensor {
        self.tape.value(self.vars.arrived)
    }

    pub fn into_arrived(self) -> Tensor {
        self.tape.value(self.vars.arrived).clone()
    }

    pub fn vars(&self) -> &ActorVars {
        &self.vars
    }

    /// Reverse pass seeded with `grad_arrived = ∂L/∂ŝ`.
    pub fn backward(&self, grad_arrived: Tensor) -> Result<Gradients, NetError> {
        Ok(self.tape.backward(&[(self.vars.arrived, grad_arrived)])?)
    }
}

pub fn actor_forward<'p>(
    s: &Tensor,
    params: &'p ParameterSet,
    config: &NetworkConfig,
) -> Result<ActorTrace<'p>, NetError> {
    let mut tape = Tape::new();
    let input = tape.leaf(s.clone());
    let vars = record_actor(&mut tape, input, params, config)?;
    Ok(ActorTrace { tape, vars })
}

/// `Ψ(ŝ, s*) = mean(Φ_p(ŝ) ⊙ Φ_p(s*)) + b`.
pub fn siamese_score(
    s_hat: &Tensor,
    s_star: &Tensor,
    params: &ParameterSet,
    config: &NetworkConfig,
) -> Result<f64, NetError> {
    s_hat.expect_shape(s_star.shape())?;
    let fa = policy_features(s_hat, &params.policy, config)?;
    let fb = policy_features(s_star, &params.policy, config)?;
    Ok(tensor::inner_product(&fa, &fb)? + params.policy_bias)
}

/// `π = sigmoid(Ψ)`.
pub fn policy_prob(
    s_hat: &Tensor,
    s_star: &Tensor,
    params: &ParameterSet,
    config: &NetworkConfig,
) -> Result<f64, NetError> {
    Ok(tensor::sigmoid(siamese_score(s_hat, s_star, params, config)?))
}
