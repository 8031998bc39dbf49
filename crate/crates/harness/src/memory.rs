//! Closed-form accounting of the floats each method carries between steps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Bytes per float in the accounting model, independent of the precision
/// used for computation.
pub const BYTES_PER_FLOAT: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Full Rauch–Tung–Striebel pass, reading off the initial marginal.
    ViaRts,
    /// Kalman filter on the `(xk, x0)` augmented model.
    ViaFilter,
    /// The fixed-point recursion.
    Fps,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ViaRts, Method::ViaFilter, Method::Fps];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ViaRts => "via-rts",
            Method::ViaFilter => "via-filter",
            Method::Fps => "fps",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "via-rts" | "rts" => Ok(Method::ViaRts),
            "via-filter" | "augmented" => Ok(Method::ViaFilter),
            "fps" | "fixed-point" => Ok(Method::Fps),
            other => Err(format!(
                "unknown method `{other}` (expected via-rts, via-filter or fps)"
            )),
        }
    }
}

/// Floats carried in factor form for state dimension `2d`:
///
/// - `fps`: filtering mean and factor plus the conditional's gain, offset
///   and factor, `3D² + 2D`;
/// - `via-filter`: mean and factor of the doubled state, `4D² + 2D`;
/// - `via-rts`: one backward conditional and one marginal per step,
///   `K·(3D² + 2D)`.
pub fn memory_floats(method: Method, d: usize, steps: usize) -> u64 {
    let dd = 2 * d as u64;
    match method {
        Method::Fps => 3 * dd * dd + 2 * dd,
        Method::ViaFilter => 4 * dd * dd + 2 * dd,
        Method::ViaRts => steps as u64 * (3 * dd * dd + 2 * dd),
    }
}

pub fn memory_model(method: Method, d: usize, steps: usize) -> u64 {
    memory_floats(method, d, steps) * BYTES_PER_FLOAT
}

/// `x` truncated to two significant figures, as `(m, e)` with
/// `x ≈ m/10 · 10^e` and `10 ≤ m ≤ 99`. `None` for zero or non-finite `x`.
pub fn sig2_truncated(x: f64) -> Option<(u32, i32)> {
    if !x.is_finite() || x == 0.0 {
        return None;
    }
    let x = x.abs();
    let mut e = x.log10().floor() as i32;
    // guard against log10 landing just below an exact power of ten
    if 10f64.powi(e + 1) <= x {
        e += 1;
    }
    let m = (x / 10f64.powi(e - 1) + 1e-9).floor() as u32;
    Some((m.clamp(10, 99), e))
}
