//! Small dense-tensor numerics with explicit forward and backward passes.
//!
//! Everything is `f64` and row-major. There is no autodiff tape: each
//! primitive in [`ops`] exposes a backward function, and composite modules
//! chain them by hand. [`grad_check`] verifies such chains against central
//! differences.

mod gradcheck;
mod io;
pub mod ops;
mod optim;
mod tensor;

pub use gradcheck::{check_op, grad_check, GradCheckConfig, GradCheckReport};
pub use io::{
    decode_weights, encode_weights, load_weights, manifest_path, save_weights, take_tensor,
    NamedTensors, TensorEntry, WeightManifest,
};
pub use ops::{Conv1x1, LayerGrads, Linear, LEAKY_SLOPE};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use tensor::Tensor;
