use nalgebra::RealField;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point types the estimators run in.
///
/// Tolerances are stated for `f64`; the `f32` values sit roughly eight
/// orders of magnitude higher, in line with the ratio of machine epsilons.
pub trait Real: RealField + Copy + Serialize + DeserializeOwned + 'static {
    const NAME: &'static str;

    /// Relative threshold below which a triangular pivot counts as zero.
    const SINGULAR_TOL: f64;

    /// Eigenvalues below `-INDEFINITE_TOL * ‖Σ‖` make a covariance indefinite.
    const INDEFINITE_TOL: f64;

    fn cast(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    const SINGULAR_TOL: f64 = 1e-14;
    const INDEFINITE_TOL: f64 = 1e-8;

    #[inline]
    fn cast(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    const SINGULAR_TOL: f64 = 1e-6;
    const INDEFINITE_TOL: f64 = 1e-3;

    #[inline]
    fn cast(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
