//! Randomness, dense linear algebra, eigensolvers and power-law fits.

mod eigen;
mod fit;
pub mod linalg;
mod rng;

pub use eigen::{
    materialize, top_eig_lanczos, top_eig_power, EigOptions, FnMatvec, SymmetricMatvec, TopEig,
};
pub use fit::{fit_loglog_slope, LogLogFit};
pub use linalg::{sym_eigen, Matrix, SymEigen};
pub use rng::{gaussian_vector, Rng};
