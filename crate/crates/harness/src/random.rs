//! Randomly populated models for runtime and memory benchmarks.

use std::sync::Arc;

use fixpoint::ssm::{sample, Lgssm, StepModel};
use fixpoint::{CovarianceRep, Gaussian, Real};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Normal, StandardNormal};

/// Model with observation dimension `d`, state dimension `2d` and `steps`
/// steps, plus data sampled from it.
///
/// Every matrix and bias entry is drawn i.i.d. from `N(0, 1/K²)`;
/// covariances are stored as the drawn factors. One set of step matrices is
/// shared across all steps so that `d = 100, K = 1000` fits in memory.
pub fn gen_random_model<T: Real>(
    d: usize,
    steps: usize,
    seed: u64,
) -> fixpoint::Result<(Lgssm<T>, Vec<DVector<T>>)> {
    if d == 0 || steps == 0 {
        return Err(fixpoint::Error::InvalidModel(format!(
            "random model needs d ≥ 1 and K ≥ 1, got d={d}, K={steps}"
        )));
    }
    let n = 2 * d;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, 1.0 / steps as f64).expect("positive scale");
    let mut mat = |r: usize, c: usize| DMatrix::<T>::from_fn(r, c, |_, _| T::cast(rng.sample(dist)));
    let initial_mean = mat(n, 1).column(0).into_owned();
    let initial_factor = mat(n, n);
    let transition = mat(n, n);
    let transition_bias = mat(n, 1).column(0).into_owned();
    let process_factor = mat(n, n);
    let observation = mat(d, n);
    let observation_bias = mat(d, 1).column(0).into_owned();
    let observation_factor = mat(d, d);
    let initial = Gaussian::new(initial_mean, CovarianceRep::Factor(initial_factor))?;
    let step = StepModel {
        transition,
        transition_bias,
        process_noise: CovarianceRep::Factor(process_factor),
        observation,
        observation_bias,
        observation_noise: CovarianceRep::Factor(observation_factor),
    };
    let model = Lgssm::time_invariant(initial, step, steps)?;
    let ys = sample(&model, seed)?.observations;
    Ok((model, ys))
}

fn randn(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn randv(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Cholesky factor of `L·Lᵀ/k + floor·I`.
fn spd_factor(rng: &mut ChaCha20Rng, k: usize, floor: f64) -> DMatrix<f64> {
    let l = randn(rng, k, k) / (k as f64).sqrt();
    let s = &l * l.transpose() + DMatrix::identity(k, k) * floor;
    s.cholesky()
        .expect("shifted Gram matrix is positive definite")
        .l()
}

/// Well-conditioned time-varying model for correctness checks: unit-scale
/// entries, covariances bounded away from singular, nonzero biases. Data is
/// sampled from the model.
pub fn gen_test_model(
    seed: u64,
    n: usize,
    d: usize,
    steps: usize,
) -> fixpoint::Result<(Lgssm<f64>, Vec<DVector<f64>>)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let init_factor = spd_factor(&mut rng, n, 0.5);
    let initial = Gaussian::new(randv(&mut rng, n), CovarianceRep::Factor(init_factor))?;
    let model_steps = (0..steps)
        .map(|_| {
            let a = randn(&mut rng, n, n) * (0.9 / (n as f64).sqrt()) + DMatrix::identity(n, n) * 0.3;
            Arc::new(StepModel {
                transition: a,
                transition_bias: randv(&mut rng, n) * 0.1,
                process_noise: CovarianceRep::Factor(spd_factor(&mut rng, n, 0.1)),
                observation: randn(&mut rng, d, n),
                observation_bias: randv(&mut rng, d) * 0.1,
                observation_noise: CovarianceRep::Factor(spd_factor(&mut rng, d, 0.2)),
            })
        })
        .collect();
    let model = Lgssm::new(initial, model_steps)?;
    let ys = sample(&model, seed)?.observations;
    Ok((model, ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(m: &Lgssm<f64>) -> Vec<f64> {
        let s = &m.steps[0];
        let mut v: Vec<f64> = Vec::new();
        v.extend(m.initial.mean.iter());
        v.extend(m.initial.cov.matrix().iter());
        v.extend(s.transition.iter());
        v.extend(s.transition_bias.iter());
        v.extend(s.process_noise.matrix().iter());
        v.extend(s.observation.iter());
        v.extend(s.observation_bias.iter());
        v.extend(s.observation_noise.matrix().iter());
        v
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (a, ya) = gen_random_model::<f64>(3, 20, 7).unwrap();
        let (b, yb) = gen_random_model::<f64>(3, 20, 7).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(ya, yb);
        let (c, _) = gen_random_model::<f64>(3, 20, 8).unwrap();
        assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn entry_variance_is_one_over_k_squared() {
        let k = 10;
        let (m, _) = gen_random_model::<f64>(100, k, 1).unwrap();
        let v = entries(&m);
        assert!(v.len() >= 100_000);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 1.0 / (k * k) as f64;
        assert!((var / target - 1.0).abs() < 0.05, "{var} vs {target}");
    }

    #[test]
    fn dimensions() {
        let (m, ys) = gen_random_model::<f32>(2, 1000, 0).unwrap();
        assert_eq!((m.state_dim(), m.obs_dim(), m.step_count()), (4, 2, 1000));
        assert_eq!(ys.len(), 1000);
        assert!(ys.iter().all(|y| y.iter().all(|x| x.is_finite())));
        assert!(gen_random_model::<f64>(0, 10, 0).is_err());
    }
}
