//! Panel regression engine: fixed-effect absorption, two-way clustered
//! covariance, distributed lags, cumulative-coefficient inference, and
//! nonlinear least squares for exponential-decay kernels.

pub mod absorb;
pub mod design;
pub mod frames;
pub mod lags;
pub mod nlls;
pub mod ols;

pub use absorb::{absorb_fixed_effects, AbsorbInfo};
pub use design::{Design, Factor};
pub use lags::{distributed_lag, Run};
pub use nlls::{nlls_exp_decay, KernelControls, KernelFit, KernelKind};
pub use ols::{
    cumulative_coefficients, ols_clustered, variance_share, wald_equality, RegressionFit,
};
