//! A small CNN engine: spec parsing, forward/backward passes, SGD training,
//! readout heads and model files.

mod io;
mod layers;
mod model;
mod spec;
mod train;

pub use io::{from_bytes, load_model, save_model, to_bytes, FORMAT_VERSION, MAGIC};
pub use model::{Gradients, LayerParams, Model};
pub use spec::{
    exact_invariance_fraction, output_extent, parse_spec, replace_pooling, stride_product, subsampling_factor, Activation,
    FeatureShape, Fraction, LayerInfo, LayerSpec, NetworkSpec, PoolDescriptor, PoolKind, SpecError,
};
pub use train::{accuracy, continue_training, readout_features, train, train_readout, EpochStats, TrainConfig, TrainOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("input shape {actual:?} does not match the network input {expected:?}")]
    InputShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("layer index {index} out of range for a {layers}-layer network")]
    LayerIndex { index: usize, layers: usize },
    #[error("layer {layer}: {message}")]
    ParamMismatch { layer: usize, message: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("{images} images but {labels} labels")]
    BatchMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model file is truncated")]
    Truncated,
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
