//! Distance-based masked self-attention sentence encoder with a siamese NLI
//! classifier, built on a small reverse-mode autodiff tape over `f64`.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod gradcheck;
pub mod introspect;
pub mod masks;
pub mod nli;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{ConfigError, ModelConfig, ProjectionNorm, TrainConfig};
pub use nli::DsanModel;
pub use tape::{Tape, Var};
pub use tensor::{Tensor, TensorError, MASK_THRESHOLD, NEG_INF};
