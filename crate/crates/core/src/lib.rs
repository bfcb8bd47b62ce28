//! From-scratch graph neural network building blocks.
//!
//! The crate is organized bottom-up: dense/sparse matrices, graphs and
//! their Laplacians, spectral transforms, a reverse-mode autodiff tape,
//! message-passing and convolution layers, graph autoencoders,
//! classification metrics, dataset loading, and training drivers.

pub mod autoencoder;
pub mod data;
pub mod dense;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod sparse;
pub mod spectral;
pub mod tape;
pub mod training;

use serde::{Deserialize, Serialize};

/// Pointwise nonlinearity shared by the spectral and message-passing layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }
}
