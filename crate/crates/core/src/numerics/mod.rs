//! Special functions, random streams and small numerical kernels.

pub mod linalg;
pub mod quadrature;
pub mod rng;
pub mod special;

pub use linalg::{Mat2, SquareMatrix};
pub use rng::{
    sample_beta, sample_normal, sample_student_t, sample_uniform_int, Purpose, RngStream,
};
pub use special::{
    chi_square_sf, digamma, erfc, expit, log_beta, log_gamma, log_sum_exp, logit, normal_cdf,
    trigamma,
};
