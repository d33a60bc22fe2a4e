//! Named parameter tensors and their binding onto a [`Tape`].

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Ordered map from parameter name to value. Iteration order is the
/// lexicographic name order, which keeps updates and checkpoints stable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Records every parameter on `tape`; names accepted by `trainable`
    /// become leaves, the rest constants.
    pub fn bind(&self, tape: &Tape, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .map
            .iter()
            .map(|(name, value)| {
                let var = if trainable(name) {
                    tape.leaf(value.clone())
                } else {
                    tape.constant(value.clone())
                };
                (name.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Records every parameter as a gradient-tracked leaf.
    pub fn bind_all(&self, tape: &Tape) -> Bound {
        self.bind(tape, |_| true)
    }

    /// Records every parameter as a constant.
    pub fn bind_frozen(&self, tape: &Tape) -> Bound {
        self.bind(tape, |_| false)
    }
}

/// Parameters of a [`ParamStore`] recorded on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    /// The `{prefix}.weight` / `{prefix}.bias` pair.
    pub fn conv(&self, prefix: &str) -> Result<ConvVars> {
        Ok(ConvVars {
            weight: self.var(&format!("{prefix}.weight"))?,
            bias: self.var(&format!("{prefix}.bias"))?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Substitutes `var` for parameter `name`, e.g. to differentiate with
    /// respect to one tensor while the rest stay constant.
    pub fn with(mut self, name: &str, var: Var) -> Bound {
        self.vars.insert(name.to_owned(), var);
        self
    }
}

/// Weight and bias handles of one convolution layer.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

impl ConvVars {
    /// Applies the convolution with "same" padding (`k / 2`).
    pub fn apply(&self, tape: &Tape, x: Var, stride: usize) -> Result<Var> {
        let k = tape.dims(self.weight)[2];
        tape.conv2d(x, self.weight, self.bias, stride, k / 2)
    }
}

/// Seeded parameter initialiser.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, dims: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(dims, |_| dist.sample(&mut self.rng))
    }

    /// He-normal `c_out x c_in x k x k` weights and zero bias under `prefix`.
    pub fn conv(
        &mut self,
        store: &mut ParamStore,
        prefix: &str,
        c_out: usize,
        c_in: usize,
        k: usize,
    ) {
        let fan_in = (c_in * k * k).max(1) as f64;
        let w = self.normal(&[c_out, c_in, k, k], (2.0 / fan_in).sqrt());
        store.insert(format!("{prefix}.weight"), w);
        store.insert(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
    }
}

/// Inserts a `c_out x c_in x 1 x 1` identity-like kernel (zero bias).
pub fn identity_conv1x1(store: &mut ParamStore, prefix: &str, channels: usize) {
    let w = Tensor::from_fn(&[channels, channels, 1, 1], |i| {
        if i / channels == i % channels {
            1.0
        } else {
            0.0
        }
    });
    store.insert(format!("{prefix}.weight"), w);
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[channels]));
}

/// Inserts an all-zero convolution under `prefix`.
pub fn zero_conv(store: &mut ParamStore, prefix: &str, c_out: usize, c_in: usize, k: usize) {
    store.insert(
        format!("{prefix}.weight"),
        Tensor::zeros(&[c_out, c_in, k, k]),
    );
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
}
