//! Linear Gaussian state-space models
//!
//! ```text
//! x0 ~ N(m0, C0),   xk = Ak·x(k-1) + bk,   yk = Hk·xk + rk,
//! bk ~ N(b̄k, Bk),   rk ~ N(βk, Rk),        k = 1..K
//! ```
//!
//! together with sampling, state augmentation and a brute-force posterior
//! oracle used throughout the test suites.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{to_factor, CovarianceRep, Gaussian, Rep};
use crate::real::Real;

/// Transition and observation model for one step `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct StepModel<T: Real> {
    /// `Ak`, D×D.
    #[serde(with = "rows")]
    pub transition: DMatrix<T>,
    /// Mean of the process noise `bk`.
    #[serde(with = "vector")]
    pub transition_bias: DVector<T>,
    /// Covariance of the process noise `bk`.
    pub process_noise: CovarianceRep<T>,
    /// `Hk`, d×D.
    #[serde(with = "rows")]
    pub observation: DMatrix<T>,
    /// Mean of the measurement noise `rk`.
    #[serde(with = "vector")]
    pub observation_bias: DVector<T>,
    /// Covariance of the measurement noise `rk`.
    pub observation_noise: CovarianceRep<T>,
}

impl<T: Real> StepModel<T> {
    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.nrows()
    }

    fn validate(&self, state_dim: usize, obs_dim: usize) -> Result<()> {
        let ok = self.transition.shape() == (state_dim, state_dim)
            && self.transition_bias.len() == state_dim
            && self.process_noise.matrix().shape() == (state_dim, state_dim)
            && self.observation.shape() == (obs_dim, state_dim)
            && self.observation_bias.len() == obs_dim
            && self.observation_noise.matrix().shape() == (obs_dim, obs_dim);
        if !ok {
            return Err(Error::InvalidModel(format!(
                "step matrices inconsistent with state dimension {state_dim} and observation dimension {obs_dim}"
            )));
        }
        let finite = |m: &DMatrix<T>| m.iter().all(|v| v.is_finite());
        if !(finite(&self.transition)
            && finite(&self.observation)
            && finite(self.process_noise.matrix())
            && finite(self.observation_noise.matrix())
            && self.transition_bias.iter().all(|v| v.is_finite())
            && self.observation_bias.iter().all(|v| v.is_finite()))
        {
            return Err(Error::InvalidModel("non-finite step entries".into()));
        }
        Ok(())
    }

    pub fn into_rep(self, rep: Rep) -> Result<Self> {
        Ok(StepModel {
            process_noise: self.process_noise.into_rep(rep)?,
            observation_noise: self.observation_noise.into_rep(rep)?,
            ..self
        })
    }
}

/// A full model: the initial Gaussian and one [`StepModel`] per step.
///
/// Steps are reference counted so time-invariant models can share a single
/// step across all `K` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLgssm<T>", bound = "T: Real")]
pub struct Lgssm<T: Real> {
    pub initial: Gaussian<T>,
    pub steps: Vec<Arc<StepModel<T>>>,
}

#[derive(Deserialize)]
#[serde(bound = "T: Real")]
struct RawLgssm<T: Real> {
    initial: Gaussian<T>,
    steps: Vec<Arc<StepModel<T>>>,
}

impl<T: Real> TryFrom<RawLgssm<T>> for Lgssm<T> {
    type Error = Error;

    fn try_from(raw: RawLgssm<T>) -> Result<Self> {
        Lgssm::new(raw.initial, raw.steps)
    }
}

impl<T: Real> Lgssm<T> {
    pub fn new(initial: Gaussian<T>, steps: Vec<Arc<StepModel<T>>>) -> Result<Self> {
        if initial.cov.matrix().shape() != (initial.dim(), initial.dim()) {
            return Err(Error::InvalidModel("initial covariance is not square".into()));
        }
        let state_dim = initial.dim();
        let obs_dim = steps.first().map_or(0, |s| s.obs_dim());
        for (i, step) in steps.iter().enumerate() {
            step.validate(state_dim, obs_dim).map_err(Error::at_step(i + 1))?;
        }
        Ok(Lgssm { initial, steps })
    }

    /// The same step repeated `step_count` times, sharing one allocation.
    pub fn time_invariant(initial: Gaussian<T>, step: StepModel<T>, step_count: usize) -> Result<Self> {
        let step = Arc::new(step);
        Lgssm::new(initial, vec![step; step_count])
    }

    /// Random walk `xk = x(k-1) + N(0, q)`, `yk = xk + N(0, r)`, prior `N(0, 1)`.
    pub fn scalar_random_walk(step_count: usize, q: f64, r: f64) -> Self {
        let one = || DMatrix::from_element(1, 1, T::one());
        let step = StepModel {
            transition: one(),
            transition_bias: DVector::zeros(1),
            process_noise: CovarianceRep::Dense(DMatrix::from_element(1, 1, T::cast(q))),
            observation: one(),
            observation_bias: DVector::zeros(1),
            observation_noise: CovarianceRep::Dense(DMatrix::from_element(1, 1, T::cast(r))),
        };
        let initial = Gaussian::new(DVector::zeros(1), CovarianceRep::Dense(one())).unwrap();
        Lgssm::time_invariant(initial, step, step_count).unwrap()
    }

    pub fn state_dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.obs_dim())
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    /// The model restricted to its first `k` steps.
    pub fn truncated(&self, k: usize) -> Self {
        Lgssm {
            initial: self.initial.clone(),
            steps: self.steps[..k.min(self.steps.len())].to_vec(),
        }
    }

    /// Converts every covariance into `rep`. Shared steps stay shared.
    pub fn to_rep(&self, rep: Rep) -> Result<Self> {
        Ok(Lgssm {
            initial: self.initial.clone().into_rep(rep)?,
            steps: map_shared(&self.steps, |s| s.clone().into_rep(rep))?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub(crate) fn check_observations(&self, ys: &[DVector<T>]) -> Result<()> {
        if ys.len() != self.step_count() {
            return Err(Error::Dimension(format!(
                "model has {} steps but {} observations were given",
                self.step_count(),
                ys.len()
            )));
        }
        if let Some((k, y)) = ys.iter().enumerate().find(|(_, y)| y.len() != self.obs_dim()) {
            return Err(Error::Dimension(format!(
                "observation {} has length {}, expected {}",
                k + 1,
                y.len(),
                self.obs_dim()
            )));
        }
        Ok(())
    }
}

/// Applies `f` to each distinct step once, preserving pointer sharing.
fn map_shared<T: Real>(
    steps: &[Arc<StepModel<T>>],
    mut f: impl FnMut(&StepModel<T>) -> Result<StepModel<T>>,
) -> Result<Vec<Arc<StepModel<T>>>> {
    let mut seen: HashMap<*const StepModel<T>, Arc<StepModel<T>>> = HashMap::new();
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let key = Arc::as_ptr(s);
            if let Some(done) = seen.get(&key) {
                return Ok(done.clone());
            }
            let mapped = Arc::new(f(s).map_err(Error::at_step(i + 1))?);
            seen.insert(key, mapped.clone());
            Ok(mapped)
        })
        .collect()
}

/// A sampled state trajectory `x0..xK` and observations `y1..yK`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Trajectory<T: Real> {
    #[serde(with = "vectors")]
    pub states: Vec<DVector<T>>,
    #[serde(with = "vectors")]
    pub observations: Vec<DVector<T>>,
    pub seed: u64,
}

// Each noise source reads its own ChaCha stream, so the draws for one source
// do not depend on how many numbers other sources consumed.
fn stream_initial() -> u64 {
    0
}

fn stream_process(k: usize) -> u64 {
    2 * k as u64 - 1
}

fn stream_observation(k: usize) -> u64 {
    2 * k as u64
}

fn draw<T: Real>(rng: &mut ChaCha20Rng, stream: u64, factor: &DMatrix<T>) -> DVector<T> {
    rng.set_stream(stream);
    rng.set_word_pos(0);
    let z = DVector::from_fn(factor.ncols(), |_, _| {
        T::cast(rng.sample::<f64, _>(StandardNormal))
    });
    factor * z
}

/// Draws `x0..xK` and `y1..yK` from the model. Bit-reproducible for a fixed
/// seed on a fixed platform.
pub fn sample<T: Real>(model: &Lgssm<T>, seed: u64) -> Result<Trajectory<T>> {
    let model = model.to_rep(Rep::Factor)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = &model.initial.mean + draw(&mut rng, stream_initial(), model.initial.cov.matrix());
    let mut states = Vec::with_capacity(model.step_count() + 1);
    let mut observations = Vec::with_capacity(model.step_count());
    states.push(x.clone());
    for (i, step) in model.steps.iter().enumerate() {
        let k = i + 1;
        x = &step.transition * &x
            + &step.transition_bias
            + draw(&mut rng, stream_process(k), step.process_noise.matrix());
        let y = &step.observation * &x
            + &step.observation_bias
            + draw(&mut rng, stream_observation(k), step.observation_noise.matrix());
        states.push(x.clone());
        observations.push(y);
    }
    Ok(Trajectory {
        states,
        observations,
        seed,
    })
}

/// The state-augmented model tracking `(xk, x0)`.
///
/// The initial covariance factor is `[[L, 0], [L, 0]]` with `L` a factor of
/// `C0`: rank deficient and not triangular, but a valid generalised factor.
/// All augmented covariances are returned in factor form except the
/// measurement noise, which keeps its representation.
pub fn augment<T: Real>(model: &Lgssm<T>) -> Result<Lgssm<T>> {
    let n = model.state_dim();
    let l0 = to_factor(model.initial.cov.clone())?;
    let l0 = l0.matrix();
    let mut init_factor = DMatrix::zeros(2 * n, 2 * n);
    init_factor.view_mut((0, 0), (n, n)).copy_from(l0);
    init_factor.view_mut((n, 0), (n, n)).copy_from(l0);
    let mut init_mean = DVector::zeros(2 * n);
    init_mean.rows_mut(0, n).copy_from(&model.initial.mean);
    init_mean.rows_mut(n, n).copy_from(&model.initial.mean);
    let initial = Gaussian::new(init_mean, CovarianceRep::Factor(init_factor))?;

    let steps = map_shared(&model.steps, |s| {
        let mut a = DMatrix::identity(2 * n, 2 * n);
        a.view_mut((0, 0), (n, n)).copy_from(&s.transition);
        let lb = to_factor(s.process_noise.clone())?;
        let mut b = DMatrix::zeros(2 * n, 2 * n);
        b.view_mut((0, 0), (n, n)).copy_from(lb.matrix());
        let mut bias = DVector::zeros(2 * n);
        bias.rows_mut(0, n).copy_from(&s.transition_bias);
        let mut h = DMatrix::zeros(s.obs_dim(), 2 * n);
        h.view_mut((0, 0), (s.obs_dim(), n)).copy_from(&s.observation);
        Ok(StepModel {
            transition: a,
            transition_bias: bias,
            process_noise: CovarianceRep::Factor(b),
            observation: h,
            observation_bias: s.observation_bias.clone(),
            observation_noise: s.observation_noise.clone(),
        })
    })?;
    Lgssm::new(initial, steps)
}

/// Largest `K·D` the brute-force oracle accepts.
pub const ORACLE_MAX_SIZE: usize = 200;

/// Exact posterior over the states in `query`, by conditioning the joint
/// Gaussian of `(x0..xK, y1..yK)` on all observations in one dense solve.
///
/// The result is the joint marginal over the queried states, in query
/// order, as a dense Gaussian of dimension `query.len()·D`. Test oracle
/// only: memory and time grow with `(K·D)²` and `(K·D)³`.
pub fn dense_posterior<T: Real>(model: &Lgssm<T>, ys: &[DVector<T>], query: &[usize]) -> Result<Gaussian<T>> {
    model.check_observations(ys)?;
    let n = model.state_dim();
    let d = model.obs_dim();
    let k_max = model.step_count();
    if k_max * n > ORACLE_MAX_SIZE {
        return Err(Error::Dimension(format!(
            "oracle limited to K·D <= {ORACLE_MAX_SIZE}, got {}",
            k_max * n
        )));
    }
    if let Some(q) = query.iter().find(|&&q| q > k_max) {
        return Err(Error::Dimension(format!("query index {q} beyond K = {k_max}")));
    }

    let dense = model.to_rep(Rep::Dense)?;
    let nx = (k_max + 1) * n;
    let mut mx = DVector::<T>::zeros(nx);
    let mut cxx = DMatrix::<T>::zeros(nx, nx);
    mx.rows_mut(0, n).copy_from(&dense.initial.mean);
    cxx.view_mut((0, 0), (n, n)).copy_from(dense.initial.cov.matrix());
    for (i, step) in dense.steps.iter().enumerate() {
        let k = i + 1;
        let a = &step.transition;
        let prev = a * mx.rows(i * n, n) + &step.transition_bias;
        mx.rows_mut(k * n, n).copy_from(&prev);
        for j in 0..k {
            let block = a * cxx.view((i * n, j * n), (n, n));
            cxx.view_mut((j * n, k * n), (n, n)).copy_from(&block.transpose());
            cxx.view_mut((k * n, j * n), (n, n)).copy_from(&block);
        }
        let diag = a * cxx.view((i * n, i * n), (n, n)) * a.transpose() + step.process_noise.matrix();
        cxx.view_mut((k * n, k * n), (n, n)).copy_from(&diag);
    }

    let ny = k_max * d;
    let mut my = DVector::<T>::zeros(ny);
    let mut yvec = DVector::<T>::zeros(ny);
    // cross covariance Cov(x_all, y_all) and Cov(y_all, y_all)
    let mut cxy = DMatrix::<T>::zeros(nx, ny);
    for (i, step) in dense.steps.iter().enumerate() {
        let k = i + 1;
        let h = &step.observation;
        let mean = h * mx.rows(k * n, n) + &step.observation_bias;
        my.rows_mut(i * d, d).copy_from(&mean);
        yvec.rows_mut(i * d, d).copy_from(&ys[i]);
        let block = cxx.columns(k * n, n) * h.transpose();
        cxy.columns_mut(i * d, d).copy_from(&block);
    }
    let mut cyy = DMatrix::<T>::zeros(ny, ny);
    for (i, step) in dense.steps.iter().enumerate() {
        let h = &step.observation;
        let rows = h * cxy.rows((i + 1) * n, n);
        cyy.rows_mut(i * d, d).copy_from(&rows);
        let mut blk = cyy.view_mut((i * d, i * d), (d, d));
        blk += step.observation_noise.matrix();
    }
    let cyy = (&cyy + cyy.transpose()) * T::cast(0.5);

    let nq = query.len() * n;
    let mut mq = DVector::<T>::zeros(nq);
    let mut cqq = DMatrix::<T>::zeros(nq, nq);
    let mut cqy = DMatrix::<T>::zeros(nq, ny);
    for (a, &qa) in query.iter().enumerate() {
        mq.rows_mut(a * n, n).copy_from(&mx.rows(qa * n, n));
        cqy.rows_mut(a * n, n).copy_from(&cxy.rows(qa * n, n));
        for (b, &qb) in query.iter().enumerate() {
            cqq.view_mut((a * n, b * n), (n, n))
                .copy_from(&cxx.view((qa * n, qb * n), (n, n)));
        }
    }
    if ny == 0 {
        return Gaussian::new(mq, CovarianceRep::Dense(cqq));
    }

    let scale = cyy.diagonal().iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let scale = if scale > T::zero() { scale } else { T::one() };
    let mut jittered = cyy;
    for i in 0..ny {
        jittered[(i, i)] += T::cast(1e-12) * scale;
    }
    let chol = jittered.cholesky().ok_or(Error::SingularCovariance)?;
    let gain_t = chol.solve(&cqy.transpose());
    let mean = mq + gain_t.transpose() * (yvec - my);
    let cov = cqq - &cqy * &gain_t;
    let cov = (&cov + cov.transpose()) * T::cast(0.5);
    Gaussian::new(mean, CovarianceRep::Dense(cov))
}

/// Row-major `[[..], [..]]` (de)serialisation for matrices.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::real::Real;

    pub fn serialize<T: Real, S: Serializer>(m: &DMatrix<T>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<T>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> Result<DMatrix<T>, D::Error> {
        let rows: Vec<Vec<T>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(
            rows.len(),
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}

pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::real::Real;

    pub fn serialize<T: Real, S: Serializer>(v: &DVector<T>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> Result<DVector<T>, D::Error> {
        Ok(DVector::from_vec(Vec::deserialize(d)?))
    }
}

pub mod vectors {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::real::Real;

    pub fn serialize<T: Real, S: Serializer>(v: &[DVector<T>], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<&[T]> = v.iter().map(|x| x.as_slice()).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<T>>, D::Error> {
        let raw: Vec<Vec<T>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(DVector::from_vec).collect())
    }
}
