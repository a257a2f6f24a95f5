//! From-scratch neural network stack: MLPs with exact backprop and Adam,
//! the autoencoder for latent-space discovery in coefficient data, and the
//! operator network trained against the finite element energy functional.

mod mlp;
mod train;

pub use mlp::{
    adam_step, mlp_backward, mlp_init, Activation, AdamState, ForwardCache, Mlp, MlpGrads,
    ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use train::{
    fnv1a_hex, load_model, operator_field, operator_width, save_model, train_autoencoder,
    train_operator, validate_operator, zero_energy_check, Autoencoder, TrainConfig,
    TrainedAutoencoder, TrainedOperator, TrainingManifest, ValidationStats,
};

use crate::fem::FemError;
use crate::pod::PodError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("bad layer dimensions {0:?}")]
    BadLayerDims(Vec<usize>),
    #[error("input has length {got}, network expects {expected}")]
    InputLengthMismatch { expected: usize, got: usize },
    #[error("latent dimension {latent} must be positive and below the coefficient count {coeffs}")]
    BadLatentDim { latent: usize, coeffs: usize },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("training diverged (non-finite loss) at iteration {iteration}")]
    TrainingDiverged { iteration: usize },
    #[error("operator network shaped ({input} -> {output}) cannot serve {n_modes} modes and {interior} interior DoFs")]
    BadOperatorShape {
        input: usize,
        output: usize,
        n_modes: usize,
        interior: usize,
    },
    #[error("basis lives on mesh {got:?}, operator needs mesh {expected}")]
    MeshMismatch { expected: usize, got: Option<usize> },
    #[error("no validation problems could be evaluated (all Newton solves failed)")]
    NoValidationProblems,
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Pod(#[from] PodError),
    #[error("model file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file error: {0}")]
    Json(#[from] serde_json::Error),
}
