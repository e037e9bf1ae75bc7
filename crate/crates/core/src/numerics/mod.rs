//! Differentiation engine, optimizer, seeded randomness and special functions.

mod adam;
mod gradcheck;
mod ops;
mod prng;
mod special;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, gradient_check_coords, relative_error, GradCheckReport};
pub use ops::{Activation, BatchNormState, Mode};
pub use prng::{derive_seed, Prng};
pub use special::{regularized_incomplete_beta, t_two_sided_p};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
