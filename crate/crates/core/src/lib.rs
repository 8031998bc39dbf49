//! Fixed-point smoothing for linear Gaussian state-space models.
//!
//! The crate provides Kalman filtering, Rauch–Tung–Striebel smoothing and
//! several routes to the fixed-point posterior `p(x0 | y_{1:K})`, each in a
//! covariance-based ([`Rep::Dense`]) and a Cholesky-based ([`Rep::Factor`])
//! parametrisation. The Cholesky-based routes never subtract covariances;
//! every covariance combination goes through a QR decomposition.
//!
//! ```
//! use fixpoint::{ssm, fixed_point, Rep};
//!
//! let model = ssm::Lgssm::<f64>::scalar_random_walk(3, 1.0, 1.0);
//! let ys = vec![nalgebra::DVector::from_element(1, 0.5); 3];
//! let posterior = fixed_point::run_fps(&model, &ys, Rep::Factor).unwrap();
//! assert_eq!(posterior.dim(), 1);
//! ```

pub mod error;
pub mod estimators;
pub mod fixed_point;
pub mod gaussian;
pub mod real;
pub mod ssm;

pub use error::{Error, Result};
pub use gaussian::{AffineConditional, CovarianceRep, Gaussian, Rep};
pub use real::Real;
