//! Dense vectors, stable softmax machinery, seeded randomness and a
//! finite-difference gradient checker.

mod gradcheck;
mod linalg;
mod rng;
mod scalar;
mod softmax;

pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use linalg::{dot, norm, normalize, normalize_backward, Matrix, Vector};
pub use rng::SeededRng;
pub use scalar::{clamped_ln, Scalar, PROB_FLOOR};
pub use softmax::{cosine_sim, log_sum_exp, softmax, softmax_backward, ProbVector};
