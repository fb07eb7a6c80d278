//! Learned SDF-to-velocity surrogate: enriched inputs, a 3D attention
//! U-Net, training, the error-gradient metric and differentiable inference.

pub mod ablation;
pub mod config;
pub mod error;
pub mod inference;
pub mod input;
pub mod metrics;
pub mod model;
pub mod train;
pub mod unet;

pub use ablation::{run_ablation, standard_variants, AblationRow, Variant};
pub use config::{MaskMode, Preset, TrainConfig, UNetConfig};
pub use error::{Error, Result};
pub use inference::{InferenceComponent, Precision};
pub use input::{build_input, BuildInput, EnrichedInput};
pub use metrics::{error_gradient_corr, Corr};
pub use model::Model;
pub use train::{train, train_with, EpochMetrics, TrainOutcome};
pub use unet::UNet;
