//! Dense linear algebra with reverse-mode gradients, SGD, and a
//! finite-difference gradient checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport, SCALE_FLOOR};
pub use params::{sgd_step, Param, ParamStore, Sgd};
pub use tape::{Gradients, Tape, Var, BCE_EPS};
pub use tensor::{dot, sigmoid, softmax_in_place, Tensor2};

use rand::Rng;

/// Weight initialisation: uniform in `[-1/√fan_in, 1/√fan_in]`.
pub fn init_weight<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor2 {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor2::uniform(fan_in, fan_out, bound, rng)
}
