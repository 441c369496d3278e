use super::{Graph, GraphError, Tensor, Var};
use crate::seed;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize },
}

/// Weights and bias of one dense or convolutional layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = seed::rng(&[seed, 0x6C0_0A07]);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("sized"), true)
}

/// Glorot init with fans taken from the shape: `[in, out]` for dense
/// weights, `[out_ch, in_ch, k, k]` for convolution kernels.
pub fn glorot_init(shape: &[usize], seed: u64) -> Tensor {
    let (fan_in, fan_out) = match shape {
        [i, o] => (*i, *o),
        [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    };
    glorot_uniform(shape, fan_in, fan_out, seed)
}

impl LayerParams {
    pub fn dense(inputs: usize, outputs: usize, seed: u64) -> Self {
        Self {
            kind: LayerKind::Dense { inputs, outputs },
            weights: glorot_init(&[inputs, outputs], seed),
            bias: Tensor::zeros(&[outputs], true),
        }
    }

    pub fn dense_zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            kind: LayerKind::Dense { inputs, outputs },
            weights: Tensor::zeros(&[inputs, outputs], true),
            bias: Tensor::zeros(&[outputs], true),
        }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, seed: u64) -> Self {
        Self {
            kind: LayerKind::Conv2d { in_channels, out_channels, kernel },
            weights: glorot_init(&[out_channels, in_channels, kernel, kernel], seed),
            bias: Tensor::zeros(&[out_channels], true),
        }
    }

    pub fn set_trainable(&mut self, on: bool) {
        self.weights.requires_grad = on;
        self.bias.requires_grad = on;
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Adds the layer to `g`, pushing its weight and bias leaves to `bound`.
    pub fn forward(&self, g: &mut Graph, x: Var, bound: &mut Vec<Var>) -> Result<Var, GraphError> {
        let w = g.param(&self.weights)?;
        let b = g.param(&self.bias)?;
        bound.push(w);
        bound.push(b);
        match self.kind {
            LayerKind::Dense { .. } => g.dense(x, w, b),
            LayerKind::Conv2d { .. } => g.conv2d(x, w, b),
        }
    }
}
