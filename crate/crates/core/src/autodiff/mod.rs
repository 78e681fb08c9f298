//! Dense reverse-mode differentiation over row-major matrices.
//!
//! Sparse cell structure never becomes a matrix here: neighbourhoods are
//! [`NeighborIndex`] lists consumed by [`Tape::gather_sum`].

mod gradcheck;
mod special;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_many};
pub use special::{digamma, sigmoid};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::{NeighborIndex, Tensor};
