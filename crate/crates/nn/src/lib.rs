//! A small reverse-mode tensor engine covering the operators of a 3D
//! attention U-Net, with `f32` training and an `f64` mode for gradient
//! checks.

pub mod adam;
pub mod checkpoint;
pub mod element;
pub mod error;
pub mod gate;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use element::Element;
pub use error::{NnError, Result};
pub use gate::{attention_gate, GateVars};
pub use tape::{Grads, NormAxes, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
