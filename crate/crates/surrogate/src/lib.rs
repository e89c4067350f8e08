//! Two-stage neural surrogate of optimal designs: a convolutional
//! autoencoder per field kind compresses fields to latent codes, and a
//! dense regressor maps design parameters to those codes. Prediction
//! decodes the regressed code.

pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod set;
pub mod study;

pub use error::{Result, SurrogateError};
pub use metrics::{FieldMetrics, Metric, MetricsReport};
pub use pipeline::{
    encode_dataset, head_for, initial_models, loss_for, train_autoencoder, train_field, train_fields, train_regressor,
    FieldModels, PipelineConfig,
};
pub use set::{combined_prediction, mirror_field, BoundsMode, PredictedField, Prediction, SurrogateSet};
pub use study::{run_architecture_study, run_dataset_size_study, ArchitectureStudy, SizeStudy};
