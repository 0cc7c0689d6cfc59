//! Small feed-forward networks with hand-written backward passes.
//!
//! Parameters are generic over the float type so the same code trains in
//! `f32` and is gradient-checked in `f64`. Reductions always accumulate in
//! `f64`, and gradients are kept in `f64` buffers laid out like the
//! parameters (per layer: weights row-major, then bias).

mod gradcheck;
mod layer;
mod mlp;
mod optim;

pub use gradcheck::{check_gradients, GradCheck};
pub use layer::{Activation, DenseLayer, Scalar};
pub use mlp::{Mlp, Tape};
pub use optim::{OptimizerConfig, OptimizerState, UpdateRule};
