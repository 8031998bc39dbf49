//! Kalman filter and Rauch–Tung–Striebel smoother.
//!
//! Both parametrisations run through the same step functions; which path a
//! step takes is decided by the representation of its inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{
    block_qr, log_density, marginalize, qr_r_factor, vstack, AffineConditional, BlockQrError, CovarianceRep,
    Gaussian, Rep,
};
use crate::real::Real;
use crate::ssm::{Lgssm, StepModel};

/// Everything one filter step produces.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStepOutput<T: Real> {
    /// `p(xk | y1..y(k-1))`
    pub predicted: Gaussian<T>,
    /// `p(xk | y1..yk)`
    pub filtered: Gaussian<T>,
    /// `p(yk | y1..y(k-1))`
    pub innovation: Gaussian<T>,
    /// Kalman gain, D×d.
    pub gain: DMatrix<T>,
    /// `log p(yk | y1..y(k-1))`; NaN when the innovation covariance is not
    /// positive definite.
    pub loglik_increment: T,
}

/// `p(x(k-1) | xk, y1..y(k-1))`, the backward conditional of the smoother.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConditional<T: Real> {
    pub cond: AffineConditional<T>,
}

fn check_rep<T: Real>(found: &CovarianceRep<T>, expected: Rep) -> Result<()> {
    if found.rep() != expected {
        return Err(Error::RepMismatch {
            expected,
            found: found.rep(),
        });
    }
    Ok(())
}

fn check_step_dims<T: Real>(g: &Gaussian<T>, step: &StepModel<T>) -> Result<()> {
    if step.state_dim() != g.dim() {
        return Err(Error::Dimension(format!(
            "step expects state dimension {}, Gaussian has {}",
            step.state_dim(),
            g.dim()
        )));
    }
    Ok(())
}

/// `p(x(k-1) | y1..y(k-1)) ↦ p(xk | y1..y(k-1))`.
pub fn kf_predict<T: Real>(prev: &Gaussian<T>, step: &StepModel<T>) -> Result<Gaussian<T>> {
    check_step_dims(prev, step)?;
    check_rep(&step.process_noise, prev.rep())?;
    let a = &step.transition;
    let mean = a * &prev.mean + &step.transition_bias;
    let cov = match (&prev.cov, &step.process_noise) {
        (CovarianceRep::Dense(c), CovarianceRep::Dense(b)) => CovarianceRep::Dense(a * c * a.transpose() + b),
        (CovarianceRep::Factor(lc), CovarianceRep::Factor(lb)) => {
            let stacked = vstack(&(lc.transpose() * a.transpose()), &lb.transpose());
            CovarianceRep::Factor(qr_r_factor(&stacked)?)
        }
        _ => unreachable!("representations checked above"),
    };
    Ok(Gaussian { mean, cov })
}

/// `p(xk | y1..y(k-1)) ↦ p(xk | y1..yk)`.
pub fn kf_update<T: Real>(
    predicted: &Gaussian<T>,
    step: &StepModel<T>,
    y: &DVector<T>,
) -> Result<FilterStepOutput<T>> {
    check_step_dims(predicted, step)?;
    check_rep(&step.observation_noise, predicted.rep())?;
    if y.len() != step.obs_dim() {
        return Err(Error::Dimension(format!(
            "observation has length {}, model expects {}",
            y.len(),
            step.obs_dim()
        )));
    }
    let h = &step.observation;
    let s_mean = h * &predicted.mean + &step.observation_bias;
    let (s_cov, gain, post_cov) = match (&predicted.cov, &step.observation_noise) {
        (CovarianceRep::Dense(c), CovarianceRep::Dense(r)) => {
            let ch = c * h.transpose();
            let s = h * &ch + r;
            let gain = solve_right(&s, &ch).ok_or(Error::SingularInnovation)?;
            let post = c - &gain * &s * gain.transpose();
            (CovarianceRep::Dense(s), gain, CovarianceRep::Dense(post))
        }
        (CovarianceRep::Factor(lc), CovarianceRep::Factor(lr)) => {
            let out = block_qr(lc, h, lr).map_err(|e| match e {
                BlockQrError::Singular => Error::SingularInnovation,
                BlockQrError::Other(e) => e,
            })?;
            (
                CovarianceRep::Factor(out.marginal_factor),
                out.gain,
                CovarianceRep::Factor(out.conditional_factor),
            )
        }
        _ => unreachable!("representations checked above"),
    };
    let mean = &predicted.mean + &gain * (y - &s_mean);
    let innovation = Gaussian {
        mean: s_mean,
        cov: s_cov,
    };
    let loglik_increment = log_density(&innovation, y).unwrap_or_else(|_| T::cast(f64::NAN));
    Ok(FilterStepOutput {
        predicted: predicted.clone(),
        filtered: Gaussian { mean, cov: post_cov },
        innovation,
        gain,
        loglik_increment,
    })
}

/// `X = B·S⁻¹` for a square `S`, via LU with a relative pivot check.
fn solve_right<T: Real>(s: &DMatrix<T>, b: &DMatrix<T>) -> Option<DMatrix<T>> {
    let lu = s.transpose().lu();
    let u = lu.u();
    let scale = u.diagonal().iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tol = T::cast(T::SINGULAR_TOL) * scale;
    if scale == T::zero() || u.diagonal().iter().any(|v| v.abs() <= tol || !v.is_finite()) {
        return None;
    }
    lu.solve(&b.transpose()).map(|x| x.transpose())
}

/// Final result of [`run_filter`].
#[derive(Debug, Clone)]
pub struct FilterRun<T: Real> {
    /// `p(xK | y1..yK)`
    pub filtered: Gaussian<T>,
    /// `log p(y1..yK)`
    pub loglik: T,
    /// Per-step outputs, only when retention was requested.
    pub steps: Option<Vec<FilterStepOutput<T>>>,
}

/// Runs the Kalman filter over all observations.
///
/// Only the current filtering distribution is carried unless `retain` is
/// set, in which case every [`FilterStepOutput`] is kept.
pub fn run_filter<T: Real>(
    model: &Lgssm<T>,
    ys: &[DVector<T>],
    rep: Rep,
    retain: bool,
) -> Result<FilterRun<T>> {
    model.check_observations(ys)?;
    let model = model.to_rep(rep)?;
    let mut filtered = model.initial.clone();
    let mut loglik = T::zero();
    let mut kept = retain.then(|| Vec::with_capacity(ys.len()));
    for (i, (step, y)) in model.steps.iter().zip(ys).enumerate() {
        let out = kf_predict(&filtered, step)
            .and_then(|pred| kf_update(&pred, step, y))
            .map_err(Error::at_step(i + 1))?;
        loglik += out.loglik_increment;
        filtered = out.filtered.clone();
        if let Some(k) = kept.as_mut() {
            k.push(out);
        }
    }
    Ok(FilterRun {
        filtered,
        loglik,
        steps: kept,
    })
}

/// Prediction step that also returns the backward conditional
/// `p(x(k-1) | xk, y1..y(k-1))`.
pub fn rts_forward_step<T: Real>(
    prev: &Gaussian<T>,
    step: &StepModel<T>,
) -> Result<(Gaussian<T>, SmoothingConditional<T>)> {
    check_step_dims(prev, step)?;
    check_rep(&step.process_noise, prev.rep())?;
    let a = &step.transition;
    let pred_mean = a * &prev.mean + &step.transition_bias;
    let (pred_cov, gain, noise) = match (&prev.cov, &step.process_noise) {
        (CovarianceRep::Dense(c), CovarianceRep::Dense(b)) => {
            let c_pred = a * c * a.transpose() + b;
            let cross = c * a.transpose();
            let gain = solve_right(&c_pred, &cross).ok_or(Error::SingularPrediction)?;
            let noise = c - &gain * &c_pred * gain.transpose();
            (CovarianceRep::Dense(c_pred), gain, CovarianceRep::Dense(noise))
        }
        (CovarianceRep::Factor(lc), CovarianceRep::Factor(lb)) => {
            let out = block_qr(lc, a, lb).map_err(|e| match e {
                BlockQrError::Singular => Error::SingularPrediction,
                BlockQrError::Other(e) => e,
            })?;
            (
                CovarianceRep::Factor(out.marginal_factor),
                out.gain,
                CovarianceRep::Factor(out.conditional_factor),
            )
        }
        _ => unreachable!("representations checked above"),
    };
    let offset = &prev.mean - &gain * &pred_mean;
    Ok((
        Gaussian {
            mean: pred_mean,
            cov: pred_cov,
        },
        SmoothingConditional {
            cond: AffineConditional { gain, offset, noise },
        },
    ))
}

/// Output of [`run_rts`].
#[derive(Debug, Clone)]
pub struct RtsRun<T: Real> {
    /// `p(xk | y1..yK)` for `k = 0..K`.
    pub smoothed: Vec<Gaussian<T>>,
    /// The `K` stored backward conditionals, in forward order.
    pub conditionals: Vec<SmoothingConditional<T>>,
}

impl<T: Real> RtsRun<T> {
    /// Floats kept alive across the run: one conditional (gain, offset,
    /// noise) and one smoothed marginal (mean, covariance) per step.
    pub fn retained_floats(&self) -> usize {
        let per_conditional = |c: &SmoothingConditional<T>| {
            c.cond.gain.len() + c.cond.offset.len() + c.cond.noise.matrix().len()
        };
        let per_marginal = |g: &Gaussian<T>| g.mean.len() + g.cov.matrix().len();
        self.conditionals.iter().map(per_conditional).sum::<usize>()
            + self.smoothed.iter().skip(1).map(per_marginal).sum::<usize>()
    }
}

/// Fixed-interval smoothing: a forward pass storing every backward
/// conditional, then a backward pass of marginalisations.
pub fn run_rts<T: Real>(model: &Lgssm<T>, ys: &[DVector<T>], rep: Rep) -> Result<RtsRun<T>> {
    model.check_observations(ys)?;
    let model = model.to_rep(rep)?;
    let mut filtered = model.initial.clone();
    let mut conditionals = Vec::with_capacity(ys.len());
    for (i, (step, y)) in model.steps.iter().zip(ys).enumerate() {
        let (pred, cond) = rts_forward_step(&filtered, step).map_err(Error::at_step(i + 1))?;
        filtered = kf_update(&pred, step, y).map_err(Error::at_step(i + 1))?.filtered;
        conditionals.push(cond);
    }
    let mut smoothed = vec![filtered];
    for (i, c) in conditionals.iter().enumerate().rev() {
        let next = smoothed.last().expect("non-empty");
        let prev = marginalize(&c.cond, next).map_err(Error::at_step(i + 1))?;
        smoothed.push(prev);
    }
    smoothed.reverse();
    Ok(RtsRun {
        smoothed,
        conditionals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar_step(a: f64, b: f64, h: f64, r: f64, rep: Rep) -> StepModel<f64> {
        StepModel {
            transition: dmatrix![a],
            transition_bias: dvector![0.0],
            process_noise: CovarianceRep::Dense(dmatrix![b]),
            observation: dmatrix![h],
            observation_bias: dvector![0.0],
            observation_noise: CovarianceRep::Dense(dmatrix![r]),
        }
        .into_rep(rep)
        .unwrap()
    }

    fn scalar(m: f64, v: f64, rep: Rep) -> Gaussian<f64> {
        Gaussian::new(dvector![m], CovarianceRep::Dense(dmatrix![v]))
            .unwrap()
            .into_rep(rep)
            .unwrap()
    }

    #[test]
    fn predict_identity_dynamics() {
        let g = scalar(1.5, 2.0, Rep::Dense);
        let out = kf_predict(&g, &scalar_step(1.0, 0.0, 1.0, 1.0, Rep::Dense)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn predict_scalar_both_paths() {
        for rep in [Rep::Dense, Rep::Factor] {
            let out = kf_predict(&scalar(1.0, 4.0, rep), &scalar_step(2.0, 3.0, 1.0, 1.0, rep)).unwrap();
            assert!((out.mean[0] - 2.0).abs() < 1e-14);
            assert!((out.covariance()[(0, 0)] - 19.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_rejects_mixed_representation() {
        let err = kf_predict(
            &scalar(0.0, 1.0, Rep::Dense),
            &scalar_step(1.0, 1.0, 1.0, 1.0, Rep::Factor),
        );
        assert!(matches!(err, Err(Error::RepMismatch { .. })));
    }

    #[test]
    fn update_uninformative_observation() {
        for rep in [Rep::Dense, Rep::Factor] {
            let pred = scalar(0.7, 2.0, rep);
            let out = kf_update(&pred, &scalar_step(1.0, 0.0, 0.0, 1.0, rep), &dvector![3.0]).unwrap();
            assert!((out.filtered.mean[0] - 0.7).abs() < 1e-15);
            assert!((out.filtered.covariance()[(0, 0)] - 2.0).abs() < 1e-14);
            assert!(out.gain.norm() < 1e-15);
            let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 4.5;
            assert!((out.loglik_increment - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn update_scalar_conjugate() {
        for rep in [Rep::Dense, Rep::Factor] {
            let out = kf_update(
                &scalar(0.0, 1.0, rep),
                &scalar_step(1.0, 0.0, 1.0, 1.0, rep),
                &dvector![2.0],
            )
            .unwrap();
            assert!((out.innovation.covariance()[(0, 0)] - 2.0).abs() < 1e-14);
            assert!((out.gain[(0, 0)] - 0.5).abs() < 1e-15);
            assert!((out.filtered.mean[0] - 1.0).abs() < 1e-15);
            assert!((out.filtered.covariance()[(0, 0)] - 0.5).abs() < 1e-15);
            // log N(2; 0, 2)
            let expected = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - 1.0;
            assert!((out.loglik_increment - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn update_singular_innovation() {
        for rep in [Rep::Dense, Rep::Factor] {
            let err = kf_update(
                &scalar(0.0, 0.0, rep),
                &scalar_step(1.0, 0.0, 1.0, 0.0, rep),
                &dvector![0.0],
            );
            assert!(matches!(err, Err(Error::SingularInnovation)), "{rep}");
        }
    }

    #[test]
    fn forward_step_deterministic_identity() {
        for rep in [Rep::Dense, Rep::Factor] {
            let (_, sc) =
                rts_forward_step(&scalar(0.3, 1.0, rep), &scalar_step(1.0, 0.0, 1.0, 1.0, rep)).unwrap();
            assert!((sc.cond.gain[(0, 0)] - 1.0).abs() < 1e-14);
            assert!(sc.cond.offset[0].abs() < 1e-14);
            assert!(sc.cond.noise.to_dense()[(0, 0)].abs() < 1e-14);
        }
    }

    #[test]
    fn forward_step_scalar() {
        for rep in [Rep::Dense, Rep::Factor] {
            let (pred, sc) =
                rts_forward_step(&scalar(0.0, 1.0, rep), &scalar_step(1.0, 1.0, 1.0, 1.0, rep)).unwrap();
            assert!((pred.covariance()[(0, 0)] - 2.0).abs() < 1e-14);
            assert!((sc.cond.gain[(0, 0)] - 0.5).abs() < 1e-14);
            assert!(sc.cond.offset[0].abs() < 1e-14);
            assert!((sc.cond.noise.to_dense()[(0, 0)] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_step_singular_prediction() {
        for rep in [Rep::Dense, Rep::Factor] {
            let err = rts_forward_step(&scalar(0.0, 1.0, rep), &scalar_step(0.0, 0.0, 1.0, 1.0, rep));
            assert!(matches!(err, Err(Error::SingularPrediction)), "{rep}");
        }
    }

    #[test]
    fn empty_runs_return_prior() {
        let m = Lgssm::<f64>::scalar_random_walk(0, 1.0, 1.0);
        for rep in [Rep::Dense, Rep::Factor] {
            let f = run_filter(&m, &[], rep, false).unwrap();
            assert_eq!(f.loglik, 0.0);
            assert_eq!(f.filtered.covariance(), dmatrix![1.0]);
            let r = run_rts(&m, &[], rep).unwrap();
            assert_eq!(r.smoothed.len(), 1);
            assert_eq!(r.retained_floats(), 0);
        }
    }

    #[test]
    fn two_step_loglik_chain() {
        // prior N(0,1), A=1, B=1, H=1, R=1
        // y1 ~ N(0, 3); posterior x1 | y1 = N(2/3·y1, 2/3)
        // y2 | y1 ~ N(2/3·y1, 2/3 + 1 + 1)
        let m = Lgssm::<f64>::scalar_random_walk(2, 1.0, 1.0);
        let ys = [dvector![1.0], dvector![-0.5]];
        let logn = |y: f64, mu: f64, v: f64| {
            -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * (y - mu).powi(2) / v
        };
        let expected = logn(1.0, 0.0, 3.0) + logn(-0.5, 2.0 / 3.0, 2.0 / 3.0 + 2.0);
        for rep in [Rep::Dense, Rep::Factor] {
            let run = run_filter(&m, &ys, rep, true).unwrap();
            assert!((run.loglik - expected).abs() < 1e-12, "{rep}");
            assert_eq!(run.steps.unwrap().len(), 2);
        }
    }

    #[test]
    fn run_filter_reports_failing_step() {
        let m = Lgssm::<f64>::scalar_random_walk(3, 0.0, 0.0);
        let mut m = m;
        m.initial = scalar(0.0, 0.0, Rep::Dense);
        let err = run_filter(&m, &vec![dvector![0.0]; 3], Rep::Dense, false).unwrap_err();
        assert!(matches!(err, Error::AtStep { k: 1, .. }));
        assert!(matches!(err.root(), Error::SingularInnovation));
    }

    #[test]
    fn wrong_observation_count() {
        let m = Lgssm::<f64>::scalar_random_walk(3, 1.0, 1.0);
        assert!(matches!(
            run_filter(&m, &vec![dvector![0.0]; 2], Rep::Dense, false),
            Err(Error::Dimension(_))
        ));
    }
}
