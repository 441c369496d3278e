//! Minimal reverse-mode autodiff over `f64` tensors.
//!
//! A [`Graph`] is a tape rebuilt for every forward pass. Parameters live
//! outside the graph as [`Tensor`]s and enter it as leaves; after
//! [`Graph::backward`] their gradients are looked up by the leaf handle.

mod adam;
mod checkpoint;
mod graph;
mod layers;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use graph::{Gradients, Graph, Var};
pub use layers::{glorot_init, glorot_uniform, LayerKind, LayerParams};

use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss does not depend on any trainable tensor")]
    Detached,
}

/// A parameter or input array with a trainability flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub data: ArrayD<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(data: ArrayD<f64>, requires_grad: bool) -> Self {
        Self { data, requires_grad }
    }

    pub fn zeros(shape: &[usize], requires_grad: bool) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)), requires_grad)
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
