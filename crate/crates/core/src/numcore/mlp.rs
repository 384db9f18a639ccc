use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{GradStore, ParamId, ParamStore};
use super::tensor::{add_row_bias, gemm, sum_rows_acc, MatMut, MatRef};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(self, v: &mut [f64]) {
        if self == Activation::Relu {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
        }
    }

    /// Multiplies `dy` by the activation derivative, given the activation output `y`.
    pub fn backward(self, y: &[f64], dy: &mut [f64]) {
        if self == Activation::Relu {
            dy.iter_mut().zip(y).for_each(|(d, &v)| {
                if v <= 0.0 {
                    *d = 0.0
                }
            });
        }
    }
}

/// Affine layer `y = act(x·W + b)` with `W` stored as `input × output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Linear {
    /// Registers `{prefix}.w` and `{prefix}.b`, initialised from
    /// `U(-1/√input, 1/√input)`.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let w = store.add_uniform(format!("{prefix}.w"), input, output, bound, rng)?;
        let b = store.add_uniform(format!("{prefix}.b"), 1, output, bound, rng)?;
        Ok(Self {
            w,
            b,
            input,
            output,
            activation,
        })
    }

    pub fn forward(&self, params: &ParamStore, x: &[f64], rows: usize, out: &mut [f64]) {
        let w = params.get(self.w);
        gemm(
            MatRef::dense(x, rows, self.input),
            w.into(),
            0.0,
            MatMut::dense(out, rows, self.output),
        );
        add_row_bias(out, params.get(self.b).data());
        self.activation.apply(out);
    }

    /// `dy` is overwritten with the pre-activation gradient.
    pub fn backward(
        &self,
        params: &ParamStore,
        x: &[f64],
        y: &[f64],
        dy: &mut [f64],
        rows: usize,
        grads: &mut GradStore,
        dx: Option<&mut [f64]>,
    ) {
        self.activation.backward(y, dy);
        gemm(
            MatRef::dense(x, rows, self.input).t(),
            MatRef::dense(dy, rows, self.output),
            1.0,
            grads.get_mut(self.w).into(),
        );
        sum_rows_acc(dy, self.output, grads.get_mut(self.b).data_mut());
        if let Some(dx) = dx {
            gemm(
                MatRef::dense(dy, rows, self.output),
                MatRef::from(params.get(self.w)).t(),
                0.0,
                MatMut::dense(dx, rows, self.input),
            );
        }
    }
}

/// Stack of [`Linear`] layers. An empty stack is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations recorded by [`Mlp::forward`]: `acts[0]` is the input,
/// `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub rows: usize,
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// ReLU after every layer except the last, which is affine.
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut R) -> Result<Self> {
        Self::register_with(store, prefix, dims, Activation::Relu, Activation::Identity, rng)
    }

    pub fn register_with<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        hidden: Activation,
        last: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                Linear::register(store, &format!("{prefix}.l{i}"), dims[i], dims[i + 1], act, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.input)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.output)
    }

    pub fn forward(&self, params: &ParamStore, x: &[f64], rows: usize) -> Result<MlpCache> {
        if let Some(d) = self.input_dim() {
            if x.len() != rows * d {
                return Err(Error::shape("mlp input", rows * d, x.len()));
            }
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut out = vec![0.0; rows * layer.output];
            layer.forward(params, acts.last().unwrap(), rows, &mut out);
            acts.push(out);
        }
        Ok(MlpCache { rows, acts })
    }

    /// Backpropagates `dy` (gradient w.r.t. the output); returns the input
    /// gradient when `want_dx` is set.
    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &MlpCache,
        dy: &[f64],
        grads: &mut GradStore,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let rows = cache.rows;
        let mut d = dy.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need_dx = i > 0 || want_dx;
            let mut dx = if need_dx { vec![0.0; rows * layer.input] } else { Vec::new() };
            layer.backward(
                params,
                &cache.acts[i],
                &cache.acts[i + 1],
                &mut d,
                rows,
                grads,
                need_dx.then_some(dx.as_mut_slice()),
            );
            d = dx;
        }
        want_dx.then_some(d)
    }
}

/// Single-vector forward pass.
pub fn mlp_forward(params: &ParamStore, mlp: &Mlp, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
    let cache = mlp.forward(params, input, 1)?;
    Ok((cache.output().to_vec(), cache))
}
