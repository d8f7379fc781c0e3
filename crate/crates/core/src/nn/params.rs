use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NetError, NetworkConfig};
use crate::tensor::{Gradients, Kernel, NamedTensor, Slot};

/// The two convolutions of one residual action, `x + λ·second(relu(first(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualParams {
    pub first: Kernel,
    pub second: Kernel,
}

/// All trainable parameters, partitioned into the feature extractor (θ_f),
/// the actor's residual actions and transition blocks (θ_a) and the shared
/// Siamese policy branch plus its scalar bias (θ_p).
///
/// Kernels are addressed by a [`Slot`] in a fixed order: feature blocks,
/// residual convolutions (first, second per action), transition blocks,
/// policy blocks. The policy bias takes the slot after the last kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub feature: Vec<Kernel>,
    pub actions: Vec<ResidualParams>,
    pub transition: Vec<Kernel>,
    pub policy: Vec<Kernel>,
    pub policy_bias: f64,
}

/// `(in, out)` channel plan of every kernel in slot order.
struct Plan {
    feature: Vec<(usize, usize)>,
    actions: usize,
    transition: Vec<(usize, usize)>,
    policy: Vec<(usize, usize)>,
}

impl Plan {
    fn new(c: &NetworkConfig) -> Self {
        let (ci, cf) = (c.input_channels, c.feature_channels);
        let chain = |n: usize, first_in: usize, last_out: usize| {
            (0..n)
                .map(|i| {
                    let i_in = if i == 0 { first_in } else { cf };
                    let i_out = if i + 1 == n { last_out } else { cf };
                    (i_in, i_out)
                })
                .collect::<Vec<_>>()
        };
        Self {
            feature: chain(c.n_fe, ci, cf),
            actions: c.n_rb,
            transition: chain(c.n_tb, cf, ci),
            policy: chain(c.n_policy_blocks, ci, cf),
        }
    }
}

impl ParameterSet {
    fn build(config: &NetworkConfig, mut make: impl FnMut(usize, usize) -> Kernel) -> Self {
        let plan = Plan::new(config);
        let cf = config.feature_channels;
        let feature = plan.feature.iter().map(|&(i, o)| make(i, o)).collect();
        let actions = (0..plan.actions)
            .map(|_| ResidualParams {
                first: make(cf, cf),
                second: make(cf, cf),
            })
            .collect();
        let transition = plan.transition.iter().map(|&(i, o)| make(i, o)).collect();
        let policy = plan.policy.iter().map(|&(i, o)| make(i, o)).collect();
        Self {
            feature,
            actions,
            transition,
            policy,
            policy_bias: 0.0,
        }
    }

    /// Every weight and bias zero.
    pub fn zeros(config: &NetworkConfig) -> Result<Self, NetError> {
        config.validate()?;
        let k = config.kernel_size;
        Ok(Self::build(config, |i, o| {
            Kernel::zeros(k, k, i, o).expect("odd kernel size validated")
        }))
    }

    /// Xavier-uniform weights, `U(±√(6/(fan_in+fan_out)))` with
    /// `fan = k·k·channels`; zero biases and `b = 0`. Deterministic per seed.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let k = config.kernel_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(config, |i, o| {
            let mut kernel = Kernel::zeros(k, k, i, o).expect("odd kernel size validated");
            let bound = xavier_bound(k, i, o);
            for w in kernel.weights_mut() {
                *w = rng.random_range(-bound..=bound);
            }
            kernel
        }))
    }

    /// Actor that reproduces any non-negative input exactly: centre-tap
    /// channel copies through the feature and transition blocks and zero
    /// residual branches. The policy is Xavier-initialised from `seed`.
    pub fn identity_actor(config: &NetworkConfig, seed: u64) -> Result<Self, NetError> {
        if config.feature_channels < config.input_channels {
            return Err(NetError::InvalidConfig(
                "identity actor needs feature_channels >= input_channels".into(),
            ));
        }
        let mut p = Self::init(config, seed)?;
        let centre = config.kernel_size / 2;
        let copy = |k: &mut Kernel| {
            k.weights_mut().fill(0.0);
            for c in 0..config.input_channels {
                k.set_weight(centre, centre, c, c, 1.0);
            }
        };
        p.feature.iter_mut().for_each(copy);
        p.transition.iter_mut().for_each(copy);
        for a in &mut p.actions {
            a.first.weights_mut().fill(0.0);
            a.second.weights_mut().fill(0.0);
        }
        Ok(p)
    }

    /// Kernels of θ_fa in slot order.
    pub fn actor_kernels(&self) -> Vec<&Kernel> {
        let mut v: Vec<&Kernel> = self.feature.iter().collect();
        for a in &self.actions {
            v.push(&a.first);
            v.push(&a.second);
        }
        v.extend(self.transition.iter());
        v
    }

    fn actor_kernels_mut(&mut self) -> Vec<&mut Kernel> {
        self.kernels_mut(false)
    }

    fn kernels_mut(&mut self, with_policy: bool) -> Vec<&mut Kernel> {
        let Self {
            feature,
            actions,
            transition,
            policy,
            ..
        } = self;
        let mut v: Vec<&mut Kernel> = feature.iter_mut().collect();
        for a in actions {
            v.push(&mut a.first);
            v.push(&mut a.second);
        }
        v.extend(transition.iter_mut());
        if with_policy {
            v.extend(policy.iter_mut());
        }
        v
    }

    pub fn feature_slot(&self, i: usize) -> Slot {
        Slot(i)
    }

    /// Slots of the two convolutions of residual action `i`.
    pub fn action_slots(&self, i: usize) -> (Slot, Slot) {
        let base = self.feature.len() + 2 * i;
        (Slot(base), Slot(base + 1))
    }

    pub fn transition_slot(&self, i: usize) -> Slot {
        Slot(self.feature.len() + 2 * self.actions.len() + i)
    }

    pub fn policy_slot(&self, i: usize) -> Slot {
        Slot(self.num_actor_kernels() + i)
    }

    pub fn policy_bias_slot(&self) -> Slot {
        Slot(self.num_actor_kernels() + self.policy.len())
    }

    pub fn num_actor_kernels(&self) -> usize {
        self.feature.len() + 2 * self.actions.len() + self.transition.len()
    }

    /// Number of scalars in θ_fa.
    pub fn actor_len(&self) -> usize {
        self.actor_kernels().iter().map(|k| k.num_params()).sum()
    }

    /// Number of scalars in θ_p (policy kernels plus `b`).
    pub fn policy_len(&self) -> usize {
        self.policy.iter().map(Kernel::num_params).sum::<usize>() + 1
    }

    /// θ_fa flattened as weights-then-biases per kernel in slot order.
    pub fn actor_vector(&self) -> Vec<f64> {
        self.actor_kernels().into_iter().flat_map(|k| k.params()).collect()
    }

    pub fn set_actor_vector(&mut self, values: &[f64]) -> Result<(), NetError> {
        if values.len() != self.actor_len() {
            return Err(NetError::Layout {
                expected: self.actor_len(),
                found: values.len(),
            });
        }
        let mut it = values.iter();
        for k in self.actor_kernels_mut() {
            for p in k.params_mut() {
                *p = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// θ_p flattened: policy kernels in slot order, then `b`.
    pub fn policy_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.policy.iter().flat_map(|k| k.params()).collect();
        v.push(self.policy_bias);
        v
    }

    pub fn set_policy_vector(&mut self, values: &[f64]) -> Result<(), NetError> {
        if values.len() != self.policy_len() {
            return Err(NetError::Layout {
                expected: self.policy_len(),
                found: values.len(),
            });
        }
        let mut it = values.iter();
        for k in &mut self.policy {
            for p in k.params_mut() {
                *p = *it.next().expect("length checked");
            }
        }
        self.policy_bias = *it.next().expect("length checked");
        Ok(())
    }

    /// Flattens tape gradients for θ_fa in [`Self::actor_vector`] order;
    /// kernels absent from the tape contribute zeros.
    pub fn actor_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.actor_len());
        for (i, k) in self.actor_kernels().into_iter().enumerate() {
            match grads.kernel(Slot(i)) {
                Some(g) => out.extend(g.params()),
                None => out.extend(std::iter::repeat_n(0.0, k.num_params())),
            }
        }
        out
    }

    /// Flattens tape gradients for θ_p in [`Self::policy_vector`] order.
    pub fn policy_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.policy_len());
        for (i, k) in self.policy.iter().enumerate() {
            match grads.kernel(self.policy_slot(i)) {
                Some(g) => out.extend(g.params()),
                None => out.extend(std::iter::repeat_n(0.0, k.num_params())),
            }
        }
        out.push(grads.scalar(self.policy_bias_slot()).unwrap_or(0.0));
        out
    }

    fn named_kernels(&self) -> Vec<(String, &Kernel)> {
        let mut v = Vec::new();
        for (i, k) in self.feature.iter().enumerate() {
            v.push((format!("fe.{i}"), k));
        }
        for (i, a) in self.actions.iter().enumerate() {
            v.push((format!("rb.{i}.first"), &a.first));
            v.push((format!("rb.{i}.second"), &a.second));
        }
        for (i, k) in self.transition.iter().enumerate() {
            v.push((format!("tb.{i}"), k));
        }
        for (i, k) in self.policy.iter().enumerate() {
            v.push((format!("policy.{i}"), k));
        }
        v
    }

    /// Container entries: `<name>.weight` with dims `[kh, kw, in, out]`,
    /// `<name>.bias` with dims `[out, 1, 1, 1]`, and `policy.b`.
    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (name, k) in self.named_kernels() {
            let dims = [k.kh(), k.kw(), k.in_channels(), k.out_channels()].map(|d| d as u32);
            out.push(NamedTensor::new(format!("{name}.weight"), dims, k.weights().to_vec()));
            out.push(NamedTensor::vector(format!("{name}.bias"), k.bias().to_vec()));
        }
        out.push(NamedTensor::scalar("policy.b", self.policy_bias));
        out
    }

    /// Rebuilds a parameter set for `config` from container entries, checking
    /// that every expected tensor is present with the expected dimensions.
    pub fn from_named(config: &NetworkConfig, entries: &[NamedTensor]) -> Result<Self, NetError> {
        let mut p = Self::zeros(config)?;
        let find = |name: &str| {
            entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| NetError::MissingTensor(name.to_owned()))
        };
        let names: Vec<String> = p.named_kernels().into_iter().map(|(n, _)| n).collect();
        for (name, k) in names.iter().zip(p.kernels_mut(true)) {
            let w = find(&format!("{name}.weight"))?;
            let dims = [k.kh(), k.kw(), k.in_channels(), k.out_channels()].map(|d| d as u32);
            if w.dims != dims {
                return Err(NetError::TensorShape {
                    name: name.clone(),
                    expected: dims,
                    found: w.dims,
                });
            }
            let b = find(&format!("{name}.bias"))?;
            if b.data.len() != k.out_channels() {
                return Err(NetError::TensorShape {
                    name: format!("{name}.bias"),
                    expected: [k.out_channels() as u32, 1, 1, 1],
                    found: b.dims,
                });
            }
            k.weights_mut().copy_from_slice(&w.data);
            k.bias_mut().copy_from_slice(&b.data);
        }
        p.policy_bias = *find("policy.b")?
            .data
            .first()
            .ok_or_else(|| NetError::MissingTensor("policy.b".into()))?;
        if !p.actor_vector().iter().chain(&p.policy_vector()).all(|v| v.is_finite()) {
            return Err(NetError::NonFiniteParameter);
        }
        Ok(p)
    }
}

pub fn xavier_bound(k: usize, in_channels: usize, out_channels: usize) -> f64 {
    let fan_in = (k * k * in_channels) as f64;
    let fan_out = (k * k * out_channels) as f64;
    (6.0 / (fan_in + fan_out)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> NetworkConfig {
        NetworkConfig {
            feature_channels: 8,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = config();
        let a = ParameterSet::init(&c, 42).unwrap();
        let b = ParameterSet::init(&c, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ParameterSet::init(&c, 43).unwrap());
        assert_eq!(a.policy_bias, 0.0);

        let bound = (6.0f64 / (9.0 * 8.0 + 9.0 * 8.0)).sqrt();
        let k = &a.actions[0].first;
        assert_eq!((k.in_channels(), k.out_channels()), (8, 8));
        assert!(k.weights().iter().all(|w| w.abs() <= bound));
        assert!(k.weights().iter().any(|w| w.abs() > 0.5 * bound));
        assert!(a.actor_kernels().iter().all(|k| k.bias().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn channel_plan() {
        let c = config();
        let p = ParameterSet::zeros(&c).unwrap();
        assert_eq!(p.feature.len(), 3);
        assert_eq!(p.actions.len(), 3);
        assert_eq!(p.transition.len(), 3);
        assert_eq!(p.policy.len(), 3);
        assert_eq!(p.feature[0].in_channels(), 1);
        assert_eq!(p.transition[2].out_channels(), 1);
        assert_eq!(p.transition[1].out_channels(), 8);
        assert_eq!(p.policy[0].in_channels(), 1);
        assert_eq!(p.policy[2].out_channels(), 8);
    }

    #[test]
    fn flat_vectors_round_trip() {
        let c = config();
        let a = ParameterSet::init(&c, 1).unwrap();
        let mut b = ParameterSet::zeros(&c).unwrap();
        b.set_actor_vector(&a.actor_vector()).unwrap();
        b.set_policy_vector(&a.policy_vector()).unwrap();
        assert_eq!(a, b);
        assert!(b.set_actor_vector(&[0.0]).is_err());
    }

    #[test]
    fn named_round_trip_and_validation() {
        let c = config();
        let a = ParameterSet::init(&c, 9).unwrap();
        let named = a.to_named();
        assert_eq!(ParameterSet::from_named(&c, &named).unwrap(), a);

        let wrong = NetworkConfig {
            feature_channels: 4,
            ..c
        };
        assert!(matches!(
            ParameterSet::from_named(&wrong, &named),
            Err(NetError::TensorShape { .. })
        ));
        let missing: Vec<_> = named.into_iter().filter(|t| t.name != "policy.b").collect();
        assert!(matches!(
            ParameterSet::from_named(&c, &missing),
            Err(NetError::MissingTensor(_))
        ));
    }
}
