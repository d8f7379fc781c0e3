//! Finite-difference checks of every analytic gradient the trainer relies on.
//!
//! Each suite builds small random instances, compares the reverse-mode
//! gradient with central differences and reports the worst relative error
//! `|a − n| / max(|a|, |n|, floor)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::make_state_pair;
use crate::nn::{actor_forward, siamese_score, NetworkConfig, ParameterSet};
use crate::rl::{actor_gradient, policy_gradient, reward, spoa_gradient, RlError, StatePair};
use crate::tensor::{conv2d, inner_product, leaky_relu, log_sigmoid, sigmoid, Kernel, Slot, Tape, Tensor};

/// Deliberate corruption of the analytic side, used to prove the checks can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negate every analytic gradient before comparison.
    SignFlip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Relative errors use at least this denominator. Central differences of
    /// O(1) objectives carry roughly 1e-11 of rounding noise at h = 1e-5, so
    /// entries smaller than the floor are effectively held to an absolute bound.
    pub floor: f64,
    pub fd_instances: usize,
    pub identity_instances: usize,
    pub identity_tolerance: f64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-7,
            fd_instances: 2,
            identity_instances: 20,
            identity_tolerance: 1e-12,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose difference probes crossed a rectifier kink.
    pub skipped: usize,
    pub tolerance: f64,
}

impl SuiteResult {
    /// At most half of the coordinates may be skipped.
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance && self.skipped * 2 <= self.checked
    }
}

/// Network used by the actor, policy and identity suites: 8×8×1 states,
/// four latent channels, two blocks of each kind.
pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        feature_channels: 4,
        n_fe: 2,
        n_rb: 2,
        n_tb: 2,
        n_policy_blocks: 2,
        ..NetworkConfig::default()
    }
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f`, where `f` also returns the sign pattern of
/// every rectifier input. A coordinate whose probes change that pattern
/// straddles a kink, so no derivative exists to compare against and `None`
/// is returned for it.
fn central_differences(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> (f64, Vec<bool>)) -> Vec<Option<f64>> {
    let (_, centre) = f(theta);
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + h;
            let (up, up_signs) = f(&probe);
            probe[i] = theta[i] - h;
            let (down, down_signs) = f(&probe);
            probe[i] = theta[i];
            (up_signs == centre && down_signs == centre).then(|| (up - down) / (2.0 * h))
        })
        .collect()
}

/// Worst relative error over the smooth coordinates and the number skipped.
fn compare(analytic: &[f64], numeric: &[Option<f64>], floor: f64) -> (f64, usize) {
    let (a, n): (Vec<f64>, Vec<f64>) = analytic
        .iter()
        .zip(numeric)
        .filter_map(|(&a, n)| n.map(|n| (a, n)))
        .unzip();
    (max_rel_error(&a, &n, floor), analytic.len() - a.len())
}

fn signs_of(t: &Tensor, out: &mut Vec<bool>) {
    out.extend(t.data().iter().map(|&v| v >= 0.0));
}

fn leaky_tracked(x: &Tensor, slope: f64, signs: &mut Vec<bool>) -> Tensor {
    signs_of(x, signs);
    leaky_relu(x, slope).expect("non-negative slope")
}

/// Actor output together with the sign of every rectifier input.
fn actor_with_signs(s: &Tensor, p: &ParameterSet, net: &NetworkConfig) -> (Tensor, Vec<bool>) {
    let mut signs = Vec::new();
    let mut x = s.clone();
    for k in &p.feature {
        x = leaky_tracked(&conv2d(&x, k).unwrap(), net.leaky_slope, &mut signs);
    }
    for a in &p.actions {
        let inner = leaky_tracked(&conv2d(&x, &a.first).unwrap(), 0.0, &mut signs);
        let h = conv2d(&inner, &a.second).unwrap();
        x = x.zip_with(&h, |u, v| u + net.lambda * v).unwrap();
    }
    for (i, k) in p.transition.iter().enumerate() {
        x = conv2d(&x, k).unwrap();
        if i + 1 < p.transition.len() {
            x = leaky_tracked(&x, net.leaky_slope, &mut signs);
        }
    }
    (x, signs)
}

fn policy_branch_signs(s: &Tensor, p: &ParameterSet, net: &NetworkConfig, signs: &mut Vec<bool>) {
    let mut x = s.clone();
    for k in &p.policy {
        x = leaky_tracked(&conv2d(&x, k).unwrap(), net.leaky_slope, signs);
    }
}

fn apply_fault(mut g: Vec<f64>, fault: Option<Fault>) -> Vec<f64> {
    if fault == Some(Fault::SignFlip) {
        g.iter_mut().for_each(|v| *v = -*v);
    }
    g
}

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(h, w, c, |_, _, _| rng.random_range(lo..hi))
}

fn random_kernel(rng: &mut ChaCha8Rng, k: usize, cin: usize, cout: usize) -> Kernel {
    let mut kernel = Kernel::zeros(k, k, cin, cout).expect("odd kernel size");
    for p in kernel.params_mut() {
        *p = rng.random_range(-0.5..0.5);
    }
    kernel
}

/// Random 8×8 state pair in `[0, 1]`.
pub fn random_pair(rng: &mut ChaCha8Rng, id: usize) -> StatePair {
    let hr = random_tensor(rng, 8, 8, 1, 0.0, 1.0);
    make_state_pair(&hr, id).expect("8 is divisible by the scale")
}

struct PrimitiveInstance {
    x: Tensor,
    y: Tensor,
    k1: Kernel,
    k2: Kernel,
    b: f64,
}

impl PrimitiveInstance {
    const LAMBDA: f64 = 0.3;
    const SLOPE: f64 = 0.1;

    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            x: random_tensor(rng, 8, 8, 3, -1.0, 1.0),
            y: random_tensor(rng, 8, 8, 4, -1.0, 1.0),
            k1: random_kernel(rng, 3, 3, 4),
            k2: random_kernel(rng, 3, 4, 4),
            b: rng.random_range(-0.5..0.5),
        }
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = self.x.data().to_vec();
        v.extend_from_slice(self.y.data());
        v.extend(self.k1.params());
        v.extend(self.k2.params());
        v.push(self.b);
        v
    }

    fn unflatten(&self, theta: &[f64]) -> Self {
        let mut out = Self {
            x: self.x.clone(),
            y: self.y.clone(),
            k1: self.k1.clone(),
            k2: self.k2.clone(),
            b: 0.0,
        };
        let mut it = theta.iter().copied();
        out.x = Tensor::from_vec(self.x.height(), self.x.width(), self.x.channels(), it.by_ref().take(self.x.len()).collect())
            .expect("finite probe");
        out.y = Tensor::from_vec(self.y.height(), self.y.width(), self.y.channels(), it.by_ref().take(self.y.len()).collect())
            .expect("finite probe");
        for p in out.k1.params_mut() {
            *p = it.next().unwrap();
        }
        for p in out.k2.params_mut() {
            *p = it.next().unwrap();
        }
        out.b = it.next().unwrap();
        out
    }

    /// `σ(⟨h, y⟩ + b)` with `h = h₁ + λ·conv₂(h₁)` and `h₁ = LeakyReLU(conv₁(x))`,
    /// evaluated with the plain forward operators.
    fn objective(&self) -> (f64, Vec<bool>) {
        let mut signs = Vec::new();
        let h1 = leaky_tracked(&conv2d(&self.x, &self.k1).unwrap(), Self::SLOPE, &mut signs);
        let branch = conv2d(&h1, &self.k2).unwrap();
        let h = h1.zip_with(&branch, |a, c| a + Self::LAMBDA * c).unwrap();
        (sigmoid(inner_product(&h, &self.y).unwrap() + self.b), signs)
    }

    fn analytic(&self) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(self.x.clone());
        let y = tape.leaf(self.y.clone());
        let c1 = tape.conv2d(x, &self.k1, Slot(0)).unwrap();
        let h1 = tape.leaky_relu(c1, Self::SLOPE).unwrap();
        let c2 = tape.conv2d(h1, &self.k2, Slot(1)).unwrap();
        let h = tape.residual(h1, c2, Self::LAMBDA).unwrap();
        let ip = tape.inner_product(h, y).unwrap();
        let z = tape.add_param(ip, self.b, Slot(2)).unwrap();
        let out = tape.sigmoid(z).unwrap();
        let g = tape.backward(&[(out, Tensor::scalar(1.0))]).unwrap();
        let mut v = g.wrt(x).unwrap().data().to_vec();
        v.extend_from_slice(g.wrt(y).unwrap().data());
        v.extend(g.kernel(Slot(0)).unwrap().params());
        v.extend(g.kernel(Slot(1)).unwrap().params());
        v.push(g.scalar(Slot(2)).unwrap());
        v
    }
}

/// Convolution, LeakyReLU, scaled residual, inner product, scalar bias and
/// sigmoid composed into one six-stage graph.
pub fn primitives_suite(cfg: &GradcheckConfig) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for _ in 0..cfg.fd_instances {
        let inst = PrimitiveInstance::random(&mut rng);
        let theta = inst.flatten();
        let numeric = central_differences(&theta, cfg.step, |t| inst.unflatten(t).objective());
        let analytic = apply_fault(inst.analytic(), cfg.fault);
        let (err, skip) = compare(&analytic, &numeric, cfg.floor);
        worst = worst.max(err);
        skipped += skip;
        checked += theta.len();
    }
    SuiteResult {
        name: "primitives",
        max_rel_error: worst,
        checked,
        skipped,
        tolerance: cfg.tolerance,
    }
}

/// Buffer-averaged actor gradient against half the finite-difference
/// gradient of the mean reward.
pub fn actor_suite(cfg: &GradcheckConfig) -> Result<SuiteResult, RlError> {
    let net = tiny_network();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5);
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for _ in 0..cfg.fd_instances {
        let params = ParameterSet::init(&net, rng.random())?;
        let buffer = vec![random_pair(&mut rng, 0), random_pair(&mut rng, 1)];
        let analytic = apply_fault(actor_gradient(&buffer, &params, &net)?, cfg.fault);
        let theta = params.actor_vector();
        let numeric = central_differences(&theta, cfg.step, |t| {
            let mut p = params.clone();
            p.set_actor_vector(t).expect("same layout");
            let mut signs = Vec::new();
            let mut total = 0.0;
            for pair in &buffer {
                let (s_hat, sg) = actor_with_signs(&pair.s0, &p, &net);
                total += reward(&s_hat, &pair.s_star).expect("same shape");
                signs.extend(sg);
            }
            (0.5 * total / buffer.len() as f64, signs)
        });
        let (err, skip) = compare(&analytic, &numeric, cfg.floor);
        worst = worst.max(err);
        skipped += skip;
        checked += theta.len();
    }
    Ok(SuiteResult {
        name: "actor",
        max_rel_error: worst,
        checked,
        skipped,
        tolerance: cfg.tolerance,
    })
}

/// Policy gradient against `R` times the finite-difference gradient of
/// `log π`, one pair per instance.
pub fn policy_suite(cfg: &GradcheckConfig) -> Result<SuiteResult, RlError> {
    let net = tiny_network();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5A5A);
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for _ in 0..cfg.fd_instances {
        let mut params = ParameterSet::init(&net, rng.random())?;
        params.policy_bias = rng.random_range(-0.5..0.5);
        let pair = random_pair(&mut rng, 0);
        let s_hat = actor_forward(&pair.s0, &params, &net)?.into_arrived();
        let r = reward(&s_hat, &pair.s_star)?;
        let analytic = apply_fault(policy_gradient(std::slice::from_ref(&pair), &params, &net)?, cfg.fault);
        let theta = params.policy_vector();
        let numeric: Vec<Option<f64>> = central_differences(&theta, cfg.step, |t| {
            let mut p = params.clone();
            p.set_policy_vector(t).expect("same layout");
            let mut signs = Vec::new();
            policy_branch_signs(&s_hat, &p, &net, &mut signs);
            policy_branch_signs(&pair.s_star, &p, &net, &mut signs);
            let psi = siamese_score(&s_hat, &pair.s_star, &p, &net).expect("valid network");
            (log_sigmoid(psi), signs)
        })
        .into_iter()
        .map(|g| g.map(|g| r * g))
        .collect();
        let (err, skip) = compare(&analytic, &numeric, cfg.floor);
        worst = worst.max(err);
        skipped += skip;
        checked += theta.len();
    }
    Ok(SuiteResult {
        name: "policy",
        max_rel_error: worst,
        checked,
        skipped,
        tolerance: cfg.tolerance,
    })
}

/// Single-sweep joint gradient against the concatenation of the separately
/// computed actor and policy gradients on the same snapshot.
pub fn identity_suite(cfg: &GradcheckConfig) -> Result<SuiteResult, RlError> {
    let net = tiny_network();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3C3C);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..cfg.identity_instances {
        let params = ParameterSet::init(&net, rng.random())?;
        let buffer: Vec<StatePair> = (0..3).map(|i| random_pair(&mut rng, i)).collect();
        let joint = spoa_gradient(&buffer, &params, &net)?;
        let mut combined = joint.actor.clone();
        combined.extend(apply_fault(joint.policy, cfg.fault));
        let mut separate = actor_gradient(&buffer, &params, &net)?;
        separate.extend(policy_gradient(&buffer, &params, &net)?);
        worst = worst.max(max_rel_error(&combined, &separate, f64::MIN_POSITIVE));
        checked += combined.len();
    }
    Ok(SuiteResult {
        name: "joint identity",
        max_rel_error: worst,
        checked,
        skipped: 0,
        tolerance: cfg.identity_tolerance,
    })
}

pub fn run_all(cfg: &GradcheckConfig) -> Result<Vec<SuiteResult>, RlError> {
    Ok(vec![
        primitives_suite(cfg),
        actor_suite(cfg)?,
        policy_suite(cfg)?,
        identity_suite(cfg)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(seed: u64, fault: Option<Fault>) -> GradcheckConfig {
        GradcheckConfig {
            seed,
            fd_instances: 1,
            identity_instances: 3,
            fault,
            ..GradcheckConfig::default()
        }
    }

    #[test]
    fn suites_pass_across_seeds() {
        for seed in 0..5 {
            for r in run_all(&quick(seed, None)).unwrap() {
                assert!(r.passed(), "seed {seed}: {r:?}");
                assert!(r.checked > 0);
            }
        }
    }

    #[test]
    fn sign_flip_is_detected() {
        for r in run_all(&quick(1, Some(Fault::SignFlip))).unwrap() {
            assert!(!r.passed(), "{r:?}");
            assert!(r.max_rel_error > 1.0);
        }
    }

    #[test]
    fn relative_error_uses_the_floor() {
        assert_eq!(max_rel_error(&[1e-12], &[0.0], 1e-7), 1e-12 / 1e-7);
        assert_eq!(max_rel_error(&[2.0], &[1.0], 1e-8), 0.5);
    }
}
