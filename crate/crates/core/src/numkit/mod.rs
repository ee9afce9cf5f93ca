//! Dense numeric core: a fixed-topology perceptron with exact reverse-mode
//! gradients, counter-based random streams, an Adam optimizer, and a
//! finite-difference harness used by the tests.

mod adam;
mod fdcheck;
mod mlp;
mod rng;

pub use adam::Adam;
pub use fdcheck::{finite_diff_check, numeric_gradient};
pub use mlp::{mlp_backward, mlp_forward, Activation, BatchScratch, BatchTape, GradBundle, MlpParams, Tape};
pub use rng::{rng_draw, DrawKind, RandomStream};
