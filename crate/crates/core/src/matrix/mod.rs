//! Small dense and type-(S) matrices, Z/M₊ predicates and dominance bounds.

mod classify;
mod dense;
mod expm;
mod type_s;

pub use classify::{classify_matrix, commute_check, varah_bound, MatrixClassReport};
pub use dense::Dense;
pub use expm::{mat_exp, Exponentiable};
pub use type_s::{build_type_s, type_s_spread, TypeS};
