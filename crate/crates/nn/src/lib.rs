//! Small CPU neural-network engine: sequential convolutional and dense
//! models with exact gradients, Adam training with early stopping, and a
//! versioned model bundle format.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod error;
pub mod gradcheck;
mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod spec;
pub mod tensor;
pub mod train;

pub use bundle::{load_bundle, save_bundle, ModelBundle};
pub use error::{NnError, Result};
pub use loss::{loss_and_grad, loss_bce, loss_mse, LossKind};
pub use model::{Model, Snapshot};
pub use optim::{Adam, LrSchedule};
pub use scalar::Scalar;
pub use spec::{
    ae_2d, ae_3d, autoencoder, fc, fc_minus, fc_plus, regressor, Activation, ArchitectureSpec, AutoencoderConfig,
    LayerSpec, Shape, Variant, LATENT_SIZE,
};
pub use tensor::Tensor;
pub use train::{train, train_with_validation, EpochRecord, TrainConfig, TrainingMeta};
