//! Record-and-replay reverse mode over the network primitives.
//!
//! A [`Tape`] records every forward value together with the operation that
//! produced it. [`Tape::backward`] walks the records in reverse, seeding any
//! number of nodes at once, and accumulates gradients for every kernel and
//! scalar parameter by [`Slot`]. A kernel used more than once on the same
//! tape (shared weights) receives the sum of its uses.

use std::collections::BTreeMap;

use super::ops::{conv2d, conv2d_backward, inner_product, leaky_relu, sigmoid};
use super::{Kernel, Tensor, TensorError};

/// Handle to a recorded value.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Caller-chosen identifier under which a parameter's gradient is reported.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot(pub usize);

#[derive(Debug)]
enum Op<'p> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: &'p Kernel,
        slot: Slot,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    /// `base + scale * branch`
    Residual {
        base: Var,
        branch: Var,
        scale: f64,
    },
    InnerProduct {
        a: Var,
        b: Var,
    },
    AddParam {
        input: Var,
        slot: Slot,
    },
    Sigmoid {
        input: Var,
    },
}

#[derive(Debug)]
struct Node<'p> {
    value: Tensor,
    op: Op<'p>,
}

#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op<'p>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input value. Its gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, input: Var, kernel: &'p Kernel, slot: Slot) -> Result<Var, TensorError> {
        let value = conv2d(self.value(input), kernel)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                slot,
            },
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var, TensorError> {
        let value = leaky_relu(self.value(input), slope)?;
        Ok(self.push(value, Op::LeakyRelu { input, slope }))
    }

    pub fn residual(&mut self, base: Var, branch: Var, scale: f64) -> Result<Var, TensorError> {
        let value = self
            .value(base)
            .zip_with(self.value(branch), |b, h| b + scale * h)?
            .finite("residual")?;
        Ok(self.push(value, Op::Residual { base, branch, scale }))
    }

    /// Scalar (`1×1×1`) mean elementwise product of two equally shaped values.
    pub fn inner_product(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = inner_product(self.value(a), self.value(b))?;
        Ok(self.push(Tensor::scalar(v), Op::InnerProduct { a, b }))
    }

    /// Adds the scalar parameter `value` (reported under `slot`) to every element.
    pub fn add_param(&mut self, input: Var, value: f64, slot: Slot) -> Result<Var, TensorError> {
        let out = self.value(input).map(|v| v + value).finite("add_param")?;
        Ok(self.push(out, Op::AddParam { input, slot }))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var, TensorError> {
        let value = self.value(input).map(sigmoid);
        Ok(self.push(value, Op::Sigmoid { input }))
    }

    /// Reverse sweep. Each `(var, seed)` pair injects `seed` as the upstream
    /// gradient of `var`; seeds on several nodes are summed through the graph.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients, TensorError> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut out = Gradients::default();
        for (var, seed) in seeds {
            let node = self.nodes.get(var.0).ok_or(TensorError::UnknownVar(*var))?;
            seed.expect_shape(node.value.shape())?;
            accumulate(&mut grads[var.0], seed.clone());
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    slot,
                } => {
                    let cg = conv2d_backward(self.value(*input), kernel, &g)?;
                    out.kernels
                        .entry(*slot)
                        .and_modify(|k| k.add_assign(&cg.kernel))
                        .or_insert(cg.kernel);
                    accumulate(&mut grads[input.0], cg.input);
                }
                Op::LeakyRelu { input, slope } => {
                    let x = self.value(*input);
                    let gi = x.zip_with(&g, |x, g| if x >= 0.0 { g } else { slope * g })?;
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Residual {
                    base,
                    branch,
                    scale,
                } => {
                    accumulate(&mut grads[branch.0], g.scale(*scale));
                    accumulate(&mut grads[base.0], g);
                }
                Op::InnerProduct { a, b } => {
                    let n = self.value(*a).len() as f64;
                    let up = g.item() / n;
                    accumulate(&mut grads[a.0], self.value(*b).scale(up));
                    accumulate(&mut grads[b.0], self.value(*a).scale(up));
                }
                Op::AddParam { input, slot } => {
                    *out.scalars.entry(*slot).or_insert(0.0) += g.data().iter().sum::<f64>();
                    accumulate(&mut grads[input.0], g);
                }
                Op::Sigmoid { input } => {
                    let s = &self.nodes[idx].value;
                    let gi = s.zip_with(&g, |s, g| g * s * (1.0 - s))?;
                    accumulate(&mut grads[input.0], gi);
                }
            }
        }

        out.nodes = grads;
        out.check_finite()?;
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    kernels: BTreeMap<Slot, Kernel>,
    scalars: BTreeMap<Slot, f64>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a kernel parameter, `None` if it did not influence the seeds.
    pub fn kernel(&self, slot: Slot) -> Option<&Kernel> {
        self.kernels.get(&slot)
    }

    pub fn scalar(&self, slot: Slot) -> Option<f64> {
        self.scalars.get(&slot).copied()
    }

    /// Gradient with respect to a leaf recorded with [`Tape::leaf`].
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.nodes.get(var.0).and_then(Option::as_ref)
    }

    fn check_finite(&self) -> Result<(), TensorError> {
        let kernels_ok = self.kernels.values().all(|k| k.params().all(f64::is_finite));
        let scalars_ok = self.scalars.values().all(|v| v.is_finite());
        let nodes_ok = self.nodes.iter().flatten().all(Tensor::is_finite);
        if kernels_ok && scalars_ok && nodes_ok {
            Ok(())
        } else {
            Err(TensorError::NonFinite("backward"))
        }
    }
}
