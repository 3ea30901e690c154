//! Dense feed-forward stacks with hand-rolled reverse-mode gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MolError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
    Identity,
}

const GELU_C: f64 = 0.044715;

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                // tanh-form approximation of x * Phi(x); the derivative below
                // differentiates this approximation, not the exact erf.
                let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_C * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Activation::Identity => x,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let s = (2.0 / std::f64::consts::PI).sqrt();
                let u = s * (x + GELU_C * x * x * x);
                let t = u.tanh();
                let sech2 = 1.0 - t * t;
                0.5 * (1.0 + t) + 0.5 * x * sech2 * s * (1.0 + 3.0 * GELU_C * x * x)
            }
            Activation::Identity => 1.0,
        }
    }
}

/// A fully connected stack `sizes[0] -> ... -> sizes.last()`; the hidden
/// layers use `hidden`, the output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
}

/// Forward-pass intermediates needed by `backward`.
pub struct MlpCache {
    /// `acts[0]` is the input batch; `acts[l]` the post-activation of layer l.
    acts: Vec<Array2<f64>>,
    /// Pre-activations per layer.
    pres: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, hidden: Activation) -> Result<Mlp> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(MolError::Parameter(format!(
                "MLP needs at least two nonzero layer sizes, got {sizes:?}"
            )));
        }
        Ok(Mlp { sizes, hidden })
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Glorot-uniform weights, zero biases, written into `params`.
    pub fn init_params(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        assert_eq!(params.len(), self.n_params());
        let mut off = 0;
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in params[off..off + fan_in * fan_out].iter_mut() {
                *p = limit * (2.0 * rng.random::<f64>() - 1.0);
            }
            off += fan_in * fan_out;
            for p in params[off..off + fan_out].iter_mut() {
                *p = 0.0;
            }
            off += fan_out;
        }
    }

    fn layer_views<'a>(&self, params: &'a [f64], layer: usize) -> (ArrayView2<'a, f64>, &'a [f64]) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(layer) {
            off += w[0] * w[1] + w[1];
        }
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let w = ArrayView2::from_shape((fan_in, fan_out), &params[off..off + fan_in * fan_out])
            .unwrap();
        let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        (w, b)
    }

    /// Batch forward: `x` is `batch x sizes[0]`, the output `batch x last`.
    pub fn forward(&self, params: &[f64], x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        assert_eq!(params.len(), self.n_params());
        assert_eq!(x.ncols(), self.sizes[0]);
        let layers = self.n_layers();
        let mut acts = Vec::with_capacity(layers + 1);
        let mut pres = Vec::with_capacity(layers);
        acts.push(x.clone());
        for l in 0..layers {
            let (w, b) = self.layer_views(params, l);
            let mut z = acts[l].dot(&w);
            let bias = Array1::from_iter(b.iter().cloned());
            z += &bias;
            let a = if l + 1 == layers {
                z.clone()
            } else {
                z.mapv(|v| self.hidden.apply(v))
            };
            pres.push(z);
            acts.push(a);
        }
        (acts[layers].clone(), MlpCache { acts, pres })
    }

    /// Reverse pass. `d_out` is dLoss/dOutput; parameter gradients are
    /// accumulated into `grad`; the return value is dLoss/dInput.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        d_out: &Array2<f64>,
        grad: &mut [f64],
    ) -> Array2<f64> {
        assert_eq!(grad.len(), self.n_params());
        let layers = self.n_layers();
        let mut delta = d_out.clone();
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..layers).rev() {
            if l + 1 != layers {
                // Chain through the hidden activation.
                delta = &delta * &cache.pres[l].mapv(|v| self.hidden.derivative(v));
            }
            let (w, _) = self.layer_views(params, l);
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let dw = cache.acts[l].t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            let base = offsets[l];
            for (slot, &g) in grad[base..base + fan_in * fan_out]
                .iter_mut()
                .zip(dw.iter())
            {
                *slot += g;
            }
            for (slot, &g) in grad[base + fan_in * fan_out..base + fan_in * fan_out + fan_out]
                .iter_mut()
                .zip(db.iter())
            {
                *slot += g;
            }
            if l > 0 {
                delta = delta.dot(&w.t());
            } else {
                return delta.dot(&w.t());
            }
        }
        unreachable!("loop always returns at l == 0")
    }
}
