//! Dense linear-algebra kernels shared by the identification code.

mod kron;
mod procrustes;
mod qr;
mod svd;

pub use kron::{kron_mat, kron_vec};
pub use procrustes::{procrustes_solve, ProcrustesFactors, ProcrustesTruncation};
pub use qr::RowStackQr;
pub use svd::{
    numerical_zero_threshold, regularize_singular_values, truncated_svd, TruncatedSvd,
    TruncationConfig,
};
