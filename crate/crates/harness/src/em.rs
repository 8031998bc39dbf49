//! Expectation maximisation for the initial mean of a Wiener velocity
//! (car tracking) model, with the E-step done by the fixed-point smoother.

use fixpoint::estimators::run_filter;
use fixpoint::fixed_point::run_fps;
use fixpoint::ssm::{sample, Lgssm, StepModel};
use fixpoint::{CovarianceRep, Gaussian, Rep};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Normal, StandardNormal};

use crate::report::{PosteriorRow, ReportRow};
use crate::{rmse, ExperimentReport, Precision};

pub const STEPS: usize = 10;
pub const DT: f64 = 0.1;
pub const DEFAULT_ITERS: usize = 3;
/// Standard deviation of the initial guess (variance 100).
pub const GUESS_STDDEV: f64 = 10.0;

/// Stream reserved for parameter draws, disjoint from the sampler's.
const PARAM_STREAM: u64 = u64::MAX;

/// Time-invariant Wiener velocity step in two spatial dimensions with
/// position observations.
pub fn wiener_velocity_step() -> StepModel<f64> {
    let i2 = DMatrix::<f64>::identity(2, 2);
    let mut a = DMatrix::identity(4, 4);
    a.view_mut((0, 2), (2, 2)).copy_from(&(&i2 * DT));
    let mut b = DMatrix::zeros(4, 4);
    b.view_mut((0, 0), (2, 2)).copy_from(&(&i2 * (DT.powi(3) / 3.0)));
    b.view_mut((0, 2), (2, 2)).copy_from(&(&i2 * (DT.powi(2) / 2.0)));
    b.view_mut((2, 0), (2, 2)).copy_from(&(&i2 * (DT.powi(2) / 2.0)));
    b.view_mut((2, 2), (2, 2)).copy_from(&(&i2 * DT));
    let mut h = DMatrix::zeros(2, 4);
    h.view_mut((0, 0), (2, 2)).fill_with_identity();
    StepModel {
        transition: a,
        transition_bias: DVector::zeros(4),
        process_noise: CovarianceRep::Dense(b),
        observation: h,
        observation_bias: DVector::zeros(2),
        observation_noise: CovarianceRep::Dense(i2 * 0.01),
    }
}

pub fn tracking_model(mean: DVector<f64>, factor: DMatrix<f64>) -> fixpoint::Result<Lgssm<f64>> {
    let initial = Gaussian::new(mean, CovarianceRep::Factor(factor))?;
    Lgssm::time_invariant(initial, wiener_velocity_step(), STEPS)
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    /// Sampled initial state `x0`.
    pub truth: DVector<f64>,
    /// `estimates[0]` is the initial guess, `estimates[i]` the mean after
    /// `i` updates.
    pub estimates: Vec<DVector<f64>>,
    /// Evidence `log p(y)` under each estimate.
    pub loglik: Vec<f64>,
    /// `p(x0 | y)` computed under `estimates[i]`.
    pub posteriors: Vec<Gaussian<f64>>,
    pub observations: Vec<DVector<f64>>,
}

/// Position components `θ = (θ1, θ2)` of a state.
pub fn theta(x: &DVector<f64>) -> DVector<f64> {
    x.rows(0, 2).into_owned()
}

impl EmOutcome {
    /// Euclidean distance of the initial guess from the true `θ`.
    pub fn initial_error(&self) -> f64 {
        (theta(&self.estimates[0]) - theta(&self.truth)).norm()
    }

    /// Euclidean distance of the last estimate from the true `θ`.
    pub fn final_error(&self) -> f64 {
        (theta(self.estimates.last().expect("at least the guess")) - theta(&self.truth)).norm()
    }
}

/// Runs `iters` EM updates of the initial mean, keeping the initial
/// covariance factor fixed at its true value.
pub fn run_em(iters: usize, seed: u64) -> fixpoint::Result<EmOutcome> {
    if iters == 0 {
        return Err(fixpoint::Error::InvalidModel(
            "EM needs at least one iteration".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(PARAM_STREAM);
    let mut normal = |n: usize| DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
    let mean = normal(4);
    let factor = DMatrix::from_column_slice(4, 4, normal(16).as_slice());
    let guess_dist = Normal::new(0.0, GUESS_STDDEV).expect("positive scale");
    let guess = DVector::from_fn(4, |_, _| rng.sample(guess_dist));

    let truth_model = tracking_model(mean, factor.clone())?;
    let traj = sample(&truth_model, seed)?;
    let ys = traj.observations;

    let mut estimates = vec![guess];
    let mut loglik = Vec::with_capacity(iters + 1);
    let mut posteriors = Vec::with_capacity(iters);
    for _ in 0..iters {
        let model = tracking_model(estimates.last().unwrap().clone(), factor.clone())?;
        loglik.push(run_filter(&model, &ys, Rep::Factor, false)?.loglik);
        let post = run_fps(&model, &ys, Rep::Factor)?;
        estimates.push(post.mean.clone());
        posteriors.push(post);
    }
    let model = tracking_model(estimates.last().unwrap().clone(), factor)?;
    loglik.push(run_filter(&model, &ys, Rep::Factor, false)?.loglik);
    Ok(EmOutcome {
        truth: traj.states[0].clone(),
        estimates,
        loglik,
        posteriors,
        observations: ys,
    })
}

/// EM as report rows: one row per estimate with its evidence and RMSE to
/// the true position, plus posterior marginals per iteration.
pub fn run_track_em(iters: usize, seed: u64) -> fixpoint::Result<ExperimentReport> {
    let out = run_em(iters, seed)?;
    let mut report = ExperimentReport::new();
    for (i, (m, ll)) in out.estimates.iter().zip(&out.loglik).enumerate() {
        report.rows.push(ReportRow {
            experiment: "track-em".into(),
            method: format!("em-iter-{i}"),
            rep: Some(Rep::Factor),
            d: 2,
            steps: STEPS,
            precision: Precision::F64,
            wall_time_s: None,
            memory_bytes: None,
            deviation_rmse: Some(rmse(&theta(m), &theta(&out.truth))),
            loglik: Some(*ll),
            diverged: !ll.is_finite(),
        });
    }
    for (i, post) in out.posteriors.iter().enumerate() {
        let sd = post.marginal_stddev();
        for c in 0..post.dim() {
            report.posterior.push(PosteriorRow {
                iteration: i,
                component: c,
                mean: post.mean[c],
                stddev: sd[c],
            });
        }
    }
    report.metadata.insert("em.seed".into(), seed.to_string());
    report.metadata.insert(
        "em.truth".into(),
        format!("{:?}", out.truth.iter().collect::<Vec<_>>()),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_matches_wiener_velocity() {
        let s = wiener_velocity_step();
        assert_eq!(s.transition[(0, 2)], 0.1);
        assert_eq!(s.transition[(1, 3)], 0.1);
        assert_eq!(s.transition[(0, 1)], 0.0);
        let b = s.process_noise.to_dense();
        assert!((b[(0, 0)] - 1e-3 / 3.0).abs() < 1e-18);
        assert!((b[(0, 2)] - 5e-3).abs() < 1e-18);
        assert_eq!(b[(0, 1)], 0.0);
        assert_eq!(s.observation_noise.to_dense(), DMatrix::identity(2, 2) * 0.01);
    }

    #[test]
    fn one_iteration_is_the_smoothed_mean() {
        let out = run_em(1, 3).unwrap();
        assert_eq!(out.estimates.len(), 2);
        assert_eq!(out.estimates[1], out.posteriors[0].mean);
    }

    #[test]
    fn evidence_never_decreases() {
        for seed in 0..5 {
            let out = run_em(DEFAULT_ITERS, seed).unwrap();
            assert_eq!(out.loglik.len(), DEFAULT_ITERS + 1);
            for w in out.loglik.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "seed {seed}: {:?}", out.loglik);
            }
        }
    }

    #[test]
    fn report_layout() {
        let r = run_track_em(2, 0).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.posterior.len(), 2 * 4);
        assert_eq!(r.rows[2].method, "em-iter-2");
    }

    #[test]
    fn zero_iterations_rejected() {
        assert!(run_em(0, 0).is_err());
    }
}
