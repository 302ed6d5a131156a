//! Dense matrices, a reverse-mode tape, and Adam.

mod adam;
mod linalg;
mod matrix;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use linalg::{cholesky, forward_solve, mean_cov};
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};
