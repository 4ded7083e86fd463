//! Noise-prediction models.
//!
//! [`Denoiser`] maps a window of noisy latents to an ε-prediction. Two
//! implementations are provided: [`OracleDenoiser`], the exact posterior
//! under a Gaussian prior, and [`ToyTransformer`], a small temporal
//! transformer trained on synthetic periodic data.

mod dataset;
mod oracle;
mod toy;
mod train;

pub use dataset::{make_periodic_dataset, ClassSpec, DatasetConfig, PeriodicDataset};
pub use oracle::{analytic_eps, periodic_kernel_row, GaussianPrior, OracleDenoiser};
pub use toy::{ToyArch, ToyGrads, ToyInput, ToyTransformer, ToyTransformerParams};
pub use train::{smoothed_endpoints, train_toy, Adam, TrainConfig, TrainState};

use crate::error::Result;
use crate::rope::WindowPositions;
use crate::scalar::Scalar;
use crate::tensor::Mat;

/// Class label standing in for a text prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ConditionId(pub usize);

/// Where a window sits and how it should be position-encoded.
#[derive(Debug, Clone)]
pub struct WindowContext<T> {
    /// Index of each window row in the full latent sequence.
    pub indices: Vec<usize>,
    /// Length of the full sequence (the cycle length in loop mode).
    pub seq_len: usize,
    pub positions: WindowPositions<T>,
    pub condition: ConditionId,
}

pub trait Denoiser<T: Scalar>: Sync {
    /// ε-prediction for `window` (`f x D`) at diffusion step `t`; the output
    /// has the shape of the input.
    fn predict_eps(&self, window: &Mat<T>, t: usize, ctx: &WindowContext<T>) -> Result<Mat<T>>;
}
