//! Fixed-point smoothing: the posterior `p(x0 | y1..yK)` of the initial state.
//!
//! [`run_fps`] carries the filtering distribution `p(xk | y1..yk)` and the
//! fixed-point conditional `p(x0 | xk, y1..y(k-1))` forward in time. Each
//! step composes the previous fixed-point conditional with the smoother's
//! backward conditional `p(x(k-1) | xk, y1..y(k-1))`; in factor form that
//! composition is a single QR decomposition, so the recursion inherits the
//! robustness of a square-root filter without doubling the state.
//!
//! The other routes exist as baselines and cross-checks:
//! [`run_fps_via_rts`] (full fixed-interval smoother, O(K) memory),
//! [`run_fps_augmented`] (filter on the `(xk, x0)` augmented model) and the
//! classical covariance-only recursion in [`meditch_step`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{
    kf_update, rts_forward_step, run_filter, run_rts, FilterStepOutput, RtsRun, SmoothingConditional,
};
use crate::gaussian::{
    compose_conditionals, marginalize, qr_r_factor, AffineConditional, CovarianceRep, Gaussian, Rep,
};
use crate::real::Real;
use crate::ssm::{augment, Lgssm, StepModel};

/// State carried by the fixed-point smoother between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointState<T: Real> {
    /// `p(xk | y1..yk)`
    pub filtered: Gaussian<T>,
    /// `p(x0 | xk, y1..y(k-1))`
    pub fp_cond: AffineConditional<T>,
    pub step_index: usize,
}

impl<T: Real> FixedPointState<T> {
    /// Number of floats carried from step to step: the filtering mean and
    /// covariance plus the gain, offset and noise of the conditional.
    /// `3D² + 2D` for square factors.
    pub fn carried_floats(&self) -> usize {
        self.filtered.mean.len()
            + self.filtered.cov.matrix().len()
            + self.fp_cond.gain.len()
            + self.fp_cond.offset.len()
            + self.fp_cond.noise.matrix().len()
    }
}

/// Initial state: the prior and the identity conditional.
///
/// Expects a model already converted with [`Lgssm::to_rep`]; the prior is
/// converted here if it is not.
pub fn fps_init<T: Real>(model: &Lgssm<T>, rep: Rep) -> Result<FixedPointState<T>> {
    Ok(FixedPointState {
        filtered: model.initial.clone().into_rep(rep)?,
        fp_cond: AffineConditional::identity(model.state_dim(), rep),
        step_index: 0,
    })
}

/// Intermediate quantities of one fixed-point step.
#[derive(Debug, Clone)]
pub struct FpsStepTrace<T: Real> {
    pub state: FixedPointState<T>,
    pub filter: FilterStepOutput<T>,
    pub smoothing: SmoothingConditional<T>,
}

/// Advances from `k-1` to `k`, keeping the filter and smoother by-products.
pub fn fps_step_traced<T: Real>(
    state: &FixedPointState<T>,
    step: &StepModel<T>,
    y: &DVector<T>,
) -> Result<FpsStepTrace<T>> {
    // The backward conditional conditions on y1..y(k-1) only, so it is formed
    // from the prediction before yk is assimilated.
    let (predicted, smoothing) = rts_forward_step(&state.filtered, step)?;
    let fp_cond = compose_conditionals(&state.fp_cond, &smoothing.cond)?;
    let filter = kf_update(&predicted, step, y)?;
    Ok(FpsStepTrace {
        state: FixedPointState {
            filtered: filter.filtered.clone(),
            fp_cond,
            step_index: state.step_index + 1,
        },
        filter,
        smoothing,
    })
}

pub fn fps_step<T: Real>(
    state: &FixedPointState<T>,
    step: &StepModel<T>,
    y: &DVector<T>,
) -> Result<FixedPointState<T>> {
    let (predicted, smoothing) = rts_forward_step(&state.filtered, step)?;
    let fp_cond = compose_conditionals(&state.fp_cond, &smoothing.cond)?;
    let filtered = kf_update(&predicted, step, y)?.filtered;
    Ok(FixedPointState {
        filtered,
        fp_cond,
        step_index: state.step_index + 1,
    })
}

/// `p(x0 | y1..yk)` from the current state. Valid at every `k`, not only at
/// the end of the data.
pub fn fps_marginal_at_k<T: Real>(state: &FixedPointState<T>) -> Result<Gaussian<T>> {
    marginalize(&state.fp_cond, &state.filtered)
}

/// `p(x0 | y1..yK)` once all steps have been taken.
pub fn fps_finalize<T: Real>(state: &FixedPointState<T>) -> Result<Gaussian<T>> {
    fps_marginal_at_k(state)
}

/// Fixed-point smoother in O(D²) memory.
pub fn run_fps<T: Real>(model: &Lgssm<T>, ys: &[DVector<T>], rep: Rep) -> Result<Gaussian<T>> {
    model.check_observations(ys)?;
    let model = model.to_rep(rep)?;
    let mut state = fps_init(&model, rep)?;
    for (i, (step, y)) in model.steps.iter().zip(ys).enumerate() {
        state = fps_step(&state, step, y).map_err(Error::at_step(i + 1))?;
    }
    fps_finalize(&state)
}

/// Fixed-point smoothing by filtering the `(xk, x0)` augmented model.
///
/// In factor form the lower block of the final factor is re-triangularised
/// so that results are directly comparable with the other routes.
pub fn run_fps_augmented<T: Real>(model: &Lgssm<T>, ys: &[DVector<T>], rep: Rep) -> Result<Gaussian<T>> {
    model.check_observations(ys)?;
    let n = model.state_dim();
    let aug = augment(model)?;
    let run = run_filter(&aug, ys, rep, false)?;
    lower_block(&run.filtered, n)
}

fn lower_block<T: Real>(joint: &Gaussian<T>, n: usize) -> Result<Gaussian<T>> {
    let mean = joint.mean.rows(n, n).into_owned();
    let cov = match &joint.cov {
        CovarianceRep::Dense(s) => CovarianceRep::Dense(s.view((n, n), (n, n)).into_owned()),
        CovarianceRep::Factor(l) => {
            let rows = l.rows(n, n);
            CovarianceRep::Factor(qr_r_factor(&rows.transpose())?)
        }
    };
    Gaussian::new(mean, cov)
}

/// Fixed-point smoothing through a full Rauch–Tung–Striebel pass.
/// Returns the smoothed initial marginal and the run itself, whose
/// [`RtsRun::retained_floats`] grows linearly in `K`.
pub fn run_fps_via_rts_full<T: Real>(
    model: &Lgssm<T>,
    ys: &[DVector<T>],
    rep: Rep,
) -> Result<(Gaussian<T>, RtsRun<T>)> {
    let run = run_rts(model, ys, rep)?;
    Ok((run.smoothed[0].clone(), run))
}

pub fn run_fps_via_rts<T: Real>(model: &Lgssm<T>, ys: &[DVector<T>], rep: Rep) -> Result<Gaussian<T>> {
    run_fps_via_rts_full(model, ys, rep).map(|(g, _)| g)
}

/// State of the classical covariance-only fixed-point recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct MeditchState<T: Real> {
    /// `m(0|k)`
    pub mean: DVector<T>,
    /// `C(0|k)`
    pub cov: DMatrix<T>,
    /// `G(0|k)`, the accumulated smoothing gain.
    pub gain: DMatrix<T>,
}

impl<T: Real> MeditchState<T> {
    pub fn new(initial: &Gaussian<T>) -> Self {
        let n = initial.dim();
        MeditchState {
            mean: initial.mean.clone(),
            cov: initial.covariance(),
            gain: DMatrix::identity(n, n),
        }
    }

    pub fn marginal(&self) -> Gaussian<T> {
        Gaussian {
            mean: self.mean.clone(),
            cov: CovarianceRep::Dense(self.cov.clone()),
        }
    }
}

/// One step of the covariance-based recursion
///
/// ```text
/// G(0|k) = G(0|k-1)·G(k-1|k)
/// m(0|k) = m(0|k-1) + G(0|k)·(m(k|k) - m(k|k-1))
/// C(0|k) = C(0|k-1) + G(0|k)·(C(k|k) - C(k|k-1))·G(0|k)ᵀ
/// ```
///
/// There is no factor-form counterpart: the covariance difference has no
/// square-root analogue.
pub fn meditch_step<T: Real>(
    state: &MeditchState<T>,
    filter_step: &FilterStepOutput<T>,
    smoothing_gain: &DMatrix<T>,
) -> MeditchState<T> {
    let gain = &state.gain * smoothing_gain;
    let mean = &state.mean + &gain * (&filter_step.filtered.mean - &filter_step.predicted.mean);
    let delta = filter_step.filtered.covariance() - filter_step.predicted.covariance();
    let cov = &state.cov + &gain * delta * gain.transpose();
    MeditchState { mean, cov, gain }
}

/// Runs the covariance-based recursion alongside a dense filter.
pub fn run_meditch<T: Real>(model: &Lgssm<T>, ys: &[DVector<T>]) -> Result<MeditchState<T>> {
    model.check_observations(ys)?;
    let model = model.to_rep(Rep::Dense)?;
    let mut filtered = model.initial.clone();
    let mut state = MeditchState::new(&model.initial);
    for (i, (step, y)) in model.steps.iter().zip(ys).enumerate() {
        let (pred, sc) = rts_forward_step(&filtered, step).map_err(Error::at_step(i + 1))?;
        let out = kf_update(&pred, step, y).map_err(Error::at_step(i + 1))?;
        state = meditch_step(&state, &out, &sc.cond.gain);
        filtered = out.filtered;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn init_is_identity_conditional() {
        let m = Lgssm::<f64>::scalar_random_walk(2, 1.0, 1.0);
        for rep in [Rep::Dense, Rep::Factor] {
            let s = fps_init(&m, rep).unwrap();
            assert_eq!(s.fp_cond.gain, DMatrix::identity(1, 1));
            assert_eq!(s.fp_cond.noise.matrix(), &DMatrix::zeros(1, 1));
            assert_eq!(s.step_index, 0);
            let back = fps_marginal_at_k(&s).unwrap();
            assert_eq!(back.mean, m.initial.mean);
            assert_eq!(back.covariance(), m.initial.covariance());
        }
    }

    #[test]
    fn scalar_step_worked_example() {
        let m = Lgssm::<f64>::scalar_random_walk(1, 1.0, 1.0);
        for rep in [Rep::Dense, Rep::Factor] {
            let model = m.to_rep(rep).unwrap();
            let s0 = fps_init(&model, rep).unwrap();
            let s1 = fps_step(&s0, &model.steps[0], &dvector![0.0]).unwrap();
            assert!((s1.fp_cond.gain[(0, 0)] - 0.5).abs() < 1e-14);
            assert!(s1.fp_cond.offset[0].abs() < 1e-14);
            assert!((s1.fp_cond.noise.to_dense()[(0, 0)] - 0.5).abs() < 1e-14);
            assert!((s1.filtered.covariance()[(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
            assert_eq!(s1.carried_floats(), 5);
        }
    }

    #[test]
    fn meditch_worked_example() {
        let m = Lgssm::<f64>::scalar_random_walk(1, 1.0, 1.0);
        let s = run_meditch(&m, &[dvector![0.0]]).unwrap();
        assert!(s.mean[0].abs() < 1e-14);
        assert!((s.cov[(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
        let fps = run_fps(&m, &[dvector![0.0]], Rep::Factor).unwrap();
        assert!((fps.covariance()[(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn meditch_uninformative_update_only_accumulates_gain() {
        let pred = Gaussian::new(dvector![1.0], CovarianceRep::Dense(dmatrix![2.0])).unwrap();
        let out = FilterStepOutput {
            predicted: pred.clone(),
            filtered: pred.clone(),
            innovation: pred,
            gain: dmatrix![0.0],
            loglik_increment: 0.0,
        };
        let s0 = MeditchState {
            mean: dvector![0.3],
            cov: dmatrix![1.5],
            gain: dmatrix![2.0],
        };
        let s1 = meditch_step(&s0, &out, &dmatrix![0.25]);
        assert_eq!(s1.mean, s0.mean);
        assert_eq!(s1.cov, s0.cov);
        assert_eq!(s1.gain, dmatrix![0.5]);
    }

    #[test]
    fn empty_data_returns_prior_on_every_route() {
        let m = Lgssm::<f64>::scalar_random_walk(0, 1.0, 1.0);
        for rep in [Rep::Dense, Rep::Factor] {
            for g in [
                run_fps(&m, &[], rep).unwrap(),
                run_fps_augmented(&m, &[], rep).unwrap(),
                run_fps_via_rts(&m, &[], rep).unwrap(),
            ] {
                assert_eq!(g.mean, dvector![0.0]);
                assert!((g.covariance()[(0, 0)] - 1.0).abs() < 1e-15);
            }
        }
    }
}
