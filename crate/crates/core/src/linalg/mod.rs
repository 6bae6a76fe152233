//! Sparse storage and direct solvers.

mod scalar;
mod solve;
mod sparse;

pub use scalar::{dot, norm2, norm_inf, Scalar};
pub use solve::{
    constraint_rank_deficiency, solve_dense, solve_kkt, solve_spd, Elimination, Factorization,
    KktFactorization, KktSystem,
};
pub use sparse::{assemble, SparseMatrix};
