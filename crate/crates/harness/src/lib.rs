//! Experiments around the `fixpoint` smoother: random-model runtime and
//! memory benchmarks, the boundary value robustness study, and EM for the
//! initial mean of a tracking model.

pub mod bvp;
pub mod em;
pub mod memory;
pub mod random;
pub mod report;
pub mod selftest;
pub mod timing;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use memory::Method;
pub use report::{ExperimentReport, ReportFormat, ReportRow};

/// Floating-point type used for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub const ENV_VAR: &'static str = "FIXPOINT_PRECISION";

    /// Reads [`Self::ENV_VAR`], falling back to `f64` when unset.
    pub fn from_env() -> Result<Self, String> {
        match std::env::var(Self::ENV_VAR) {
            Ok(v) if !v.trim().is_empty() => v.parse(),
            _ => Ok(Self::default()),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" | "single" => Ok(Precision::F32),
            "f64" | "double" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

/// Root-mean-square difference of two equally long vectors, in `f64`.
pub fn rmse<T: fixpoint::Real>(a: &nalgebra::DVector<T>, b: &nalgebra::DVector<T>) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let s: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    (s / a.len() as f64).sqrt()
}
