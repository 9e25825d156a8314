//! Dense tensors with a define-by-run reverse-mode tape.
//!
//! All values are `f64`. Every primitive checks its output for NaN/Inf and
//! reports the node that produced it. Backward rules are recorded as
//! ordinary tape operations, so gradients can be differentiated again,
//! which is what the one-step unrolled hypergradients rely on.

mod array;
mod backward;
mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod tape;

pub use array::{cosine_similarity, Array};
pub use backward::Gradients;
pub use gradcheck::{grad_check, grad_check_many, RandomNetwork};
pub use ops::{apply, concat, sigmoid, Primitive};
pub use tape::{Tape, Var};

#[cfg(test)]
mod tests;
