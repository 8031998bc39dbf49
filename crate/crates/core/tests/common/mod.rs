#![allow(dead_code)]

use std::sync::Arc;

use fixpoint::ssm::{sample, Lgssm, StepModel};
use fixpoint::{CovarianceRep, Gaussian};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn randv(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `L·Lᵀ + floor·I` with `L` standard normal, as a square factor.
pub fn spd_factor(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = randn(rng, n, n) / (n as f64).sqrt();
    let s = &l * l.transpose() + DMatrix::identity(n, n) * floor;
    s.cholesky().unwrap().l()
}

/// A well-conditioned, time-varying random model with nonzero biases.
/// Covariances alternate between dense and factor storage.
pub fn random_model(seed: u64, n: usize, d: usize, k: usize) -> Lgssm<f64> {
    let mut r = rng(seed);
    let init_l = spd_factor(&mut r, n, 0.5);
    let initial = Gaussian::new(
        randv(&mut r, n),
        CovarianceRep::Dense(&init_l * init_l.transpose()),
    )
    .unwrap();
    let steps = (0..k)
        .map(|i| {
            let a = randn(&mut r, n, n) * (0.9 / (n as f64).sqrt()) + DMatrix::identity(n, n) * 0.3;
            let lb = spd_factor(&mut r, n, 0.1);
            let lr = spd_factor(&mut r, d, 0.2);
            let (b, rr) = if i % 2 == 0 {
                (
                    CovarianceRep::Factor(lb),
                    CovarianceRep::Dense(&lr * lr.transpose()),
                )
            } else {
                (
                    CovarianceRep::Dense(&lb * lb.transpose()),
                    CovarianceRep::Factor(lr),
                )
            };
            Arc::new(StepModel {
                transition: a,
                transition_bias: randv(&mut r, n) * 0.1,
                process_noise: b,
                observation: randn(&mut r, d, n),
                observation_bias: randv(&mut r, d) * 0.1,
                observation_noise: rr,
            })
        })
        .collect();
    Lgssm::new(initial, steps).unwrap()
}

pub fn random_problem(seed: u64, n: usize, d: usize, k: usize) -> (Lgssm<f64>, Vec<DVector<f64>>) {
    let model = random_model(seed, n, d, k);
    let ys = sample(&model, seed.wrapping_add(1000)).unwrap().observations;
    (model, ys)
}

pub fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

pub fn max_abs(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Largest mean and covariance discrepancy between two Gaussians.
pub fn gauss_diff(a: &Gaussian<f64>, b: &Gaussian<f64>) -> (f64, f64) {
    (
        max_abs(&a.mean, &b.mean),
        (a.covariance() - b.covariance()).norm(),
    )
}
