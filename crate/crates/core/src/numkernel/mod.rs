//! Dense symmetric linear algebra and special functions.

mod digamma;
mod qr;
mod sym;

pub use digamma::digamma;
pub use qr::QrState;
pub use sym::{
    dot, inverse_or_pinv, numerical_rank, pseudo_inverse, pseudo_inverse_with_rank, solve_spd,
    solve_symmetric, Cholesky, SymMatrix, SymSolve,
};
