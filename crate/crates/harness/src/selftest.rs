//! Cross-route agreement on seeded random models, checked against the
//! brute-force joint-Gaussian posterior.

use fixpoint::fixed_point::{run_fps, run_fps_augmented, run_fps_via_rts};
use fixpoint::ssm::dense_posterior;
use fixpoint::Rep;

use crate::random::gen_test_model;

pub const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RouteCheck {
    pub seed: u64,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub steps: usize,
    /// Largest absolute mean error over all routes.
    pub mean_error: f64,
    /// Largest Frobenius covariance error over all routes.
    pub cov_error: f64,
}

impl RouteCheck {
    pub fn passed(&self) -> bool {
        self.mean_error < TOLERANCE && self.cov_error < TOLERANCE
    }
}

/// Dimensions `D ∈ 1..=4`, `d ∈ 1..=D`, `K ∈ 1..=30`, chosen from the seed.
pub fn case_dims(seed: u64) -> (usize, usize, usize) {
    let n = 1 + (seed % 4) as usize;
    let d = 1 + (seed / 4 % n as u64) as usize;
    let k = 1 + ((seed * 7 + 3) % 30) as usize;
    (n, d, k)
}

pub fn check_routes(seed: u64) -> fixpoint::Result<RouteCheck> {
    let (n, d, k) = case_dims(seed);
    let (model, ys) = gen_test_model(seed, n, d, k)?;
    let oracle = dense_posterior(&model, &ys, &[0])?;
    let oracle_cov = oracle.covariance();
    let routes = [
        run_fps(&model, &ys, Rep::Dense)?,
        run_fps(&model, &ys, Rep::Factor)?,
        run_fps_augmented(&model, &ys, Rep::Factor)?,
        run_fps_via_rts(&model, &ys, Rep::Factor)?,
    ];
    let mut mean_error: f64 = 0.0;
    let mut cov_error: f64 = 0.0;
    for g in &routes {
        mean_error = mean_error.max((&g.mean - &oracle.mean).amax());
        cov_error = cov_error.max((g.covariance() - &oracle_cov).norm());
    }
    Ok(RouteCheck {
        seed,
        state_dim: n,
        obs_dim: d,
        steps: k,
        mean_error,
        cov_error,
    })
}

pub fn run_selftest(cases: u64) -> fixpoint::Result<Vec<RouteCheck>> {
    (0..cases).map(check_routes).collect()
}
