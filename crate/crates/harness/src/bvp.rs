//! Linear boundary value problem `1e-3·u'' = t·u`, `u(-1) = u(1) = 1`,
//! posed as smoothing under a twice-integrated Wiener process prior.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use fixpoint::fixed_point::{run_fps, run_fps_augmented};
use fixpoint::gaussian::{nearest_psd_factor, to_factor};
use fixpoint::ssm::{Lgssm, StepModel};
use fixpoint::{CovarianceRep, Gaussian, Real, Rep};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::report::ReportRow;
use crate::{rmse, Precision};

pub const DEFAULT_SWEEP: [usize; 7] = [10, 20, 50, 100, 200, 500, 1000];

/// Which process-noise matrix to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Off-corner entries `Δt³/3`. This matrix is slightly indefinite; its
    /// nearest positive semidefinite factor is used by every route.
    #[default]
    AsPrinted,
    /// The exact IWP(2) covariance with off-corner entries `Δt³/6`.
    StandardIwp2,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::AsPrinted => "as-printed",
            NoiseMode::StandardIwp2 => "standard-iwp2",
        })
    }
}

impl FromStr for NoiseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "as-printed" | "printed" => Ok(NoiseMode::AsPrinted),
            "standard" | "standard-iwp2" | "iwp2" => Ok(NoiseMode::StandardIwp2),
            other => Err(format!("unknown noise mode `{other}`")),
        }
    }
}

/// Step size of the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    /// `Δt = 1/K`.
    #[default]
    Printed,
    /// `Δt = 2/K`, the actual distance between grid points.
    Grid,
}

impl FromStr for Spacing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "printed" => Ok(Spacing::Printed),
            "grid" => Ok(Spacing::Grid),
            other => Err(format!("unknown spacing `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BvpConfig {
    pub steps: usize,
    pub rep: Rep,
    pub precision: Precision,
    pub noise: NoiseMode,
    pub spacing: Spacing,
}

impl BvpConfig {
    pub fn new(steps: usize, rep: Rep) -> Self {
        BvpConfig {
            steps,
            rep,
            precision: Precision::F64,
            noise: NoiseMode::default(),
            spacing: Spacing::default(),
        }
    }
}

/// Grid `t_k = -1 + 2k/K` for `k = 0..=K`.
pub fn grid(steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| -1.0 + 2.0 * k as f64 / steps as f64)
        .collect()
}

pub fn step_size(steps: usize, spacing: Spacing) -> f64 {
    match spacing {
        Spacing::Printed => 1.0 / steps as f64,
        Spacing::Grid => 2.0 / steps as f64,
    }
}

pub fn transition(dt: f64) -> DMatrix<f64> {
    dmatrix![
        1.0, dt, dt * dt / 2.0;
        0.0, 1.0, dt;
        0.0, 0.0, 1.0
    ]
}

pub fn process_noise(dt: f64, mode: NoiseMode) -> DMatrix<f64> {
    let corner = match mode {
        NoiseMode::AsPrinted => dt.powi(3) / 3.0,
        NoiseMode::StandardIwp2 => dt.powi(3) / 6.0,
    };
    dmatrix![
        dt.powi(5) / 20.0, dt.powi(4) / 8.0, corner;
        dt.powi(4) / 8.0, dt.powi(3) / 3.0, dt * dt / 2.0;
        corner, dt * dt / 2.0, dt
    ]
}

fn cast_mat<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::cast)
}

fn cast_vec<T: Real>(v: &DVector<f64>) -> DVector<T> {
    v.map(T::cast)
}

/// Builds the state-space model and its all-zero data. Process noise is
/// stored as a factor; the dense route uses `L·Lᵀ` of the same factor.
pub fn build_bvp_model<T: Real>(
    steps: usize,
    noise: NoiseMode,
    spacing: Spacing,
) -> fixpoint::Result<(Lgssm<T>, Vec<DVector<T>>)> {
    if steps < 2 {
        return Err(fixpoint::Error::InvalidModel(format!(
            "need at least 2 grid steps, got {steps}"
        )));
    }
    let dt = step_size(steps, spacing);
    let a = transition(dt);
    let b = process_noise(dt, noise);
    let lb = match noise {
        NoiseMode::AsPrinted => nearest_psd_factor(&b)?,
        NoiseMode::StandardIwp2 => to_factor(CovarianceRep::Dense(b))?.matrix().clone(),
    };
    let ts = grid(steps);
    let initial = Gaussian::new(
        cast_vec(&dvector![1.0, 0.0, 0.0]),
        CovarianceRep::Factor(cast_mat(&DMatrix::from_diagonal(&dvector![0.0, 1.0, 1.0]))),
    )?;
    let model_steps = (1..=steps)
        .map(|k| {
            let (h, beta) = if k < steps {
                (dmatrix![-ts[k], 0.0, 1e-3], 0.0)
            } else {
                (dmatrix![1.0, 0.0, 0.0], -1.0)
            };
            Arc::new(StepModel {
                transition: cast_mat(&a),
                transition_bias: DVector::zeros(3),
                process_noise: CovarianceRep::Factor(cast_mat(&lb)),
                observation: cast_mat(&h),
                observation_bias: DVector::from_element(1, T::cast(beta)),
                observation_noise: CovarianceRep::Factor(DMatrix::zeros(1, 1)),
            })
        })
        .collect();
    let model = Lgssm::new(initial, model_steps)?;
    Ok((model, vec![DVector::zeros(1); steps]))
}

/// Outcome of one smoother run against the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct BvpRun {
    pub rep: Rep,
    pub steps: usize,
    pub wall_time_s: f64,
    /// `None` when the run failed or produced non-finite numbers.
    pub deviation: Option<f64>,
    pub mean: Option<DVector<f64>>,
}

impl BvpRun {
    pub fn diverged(&self) -> bool {
        self.deviation.is_none()
    }
}

/// Reference `p(x0 | y)` mean from the factor-form augmented filter.
pub fn reference_mean<T: Real>(model: &Lgssm<T>, ys: &[DVector<T>]) -> fixpoint::Result<DVector<T>> {
    Ok(run_fps_augmented(model, ys, Rep::Factor)?.mean)
}

fn finite_mean<T: Real>(g: fixpoint::Result<Gaussian<T>>) -> Option<DVector<T>> {
    g.ok().filter(|g| g.is_finite()).map(|g| g.mean)
}

fn run_one<T: Real>(cfg: &BvpConfig) -> fixpoint::Result<BvpRun> {
    let (model, ys) = build_bvp_model::<T>(cfg.steps, cfg.noise, cfg.spacing)?;
    let reference = reference_mean(&model, &ys)?;
    let start = Instant::now();
    let result = run_fps(&model, &ys, cfg.rep);
    let wall_time_s = start.elapsed().as_secs_f64();
    let mean = finite_mean(result);
    let deviation = mean
        .as_ref()
        .map(|m| rmse(m, &reference))
        .filter(|d| d.is_finite());
    Ok(BvpRun {
        rep: cfg.rep,
        steps: cfg.steps,
        wall_time_s,
        deviation,
        mean: mean.map(|m| m.map(|x| x.as_f64())),
    })
}

/// Runs the fixed-point smoother in the configured representation and
/// measures the RMSE of its initial mean against the reference.
pub fn run_bvp(cfg: &BvpConfig) -> fixpoint::Result<BvpRun> {
    match cfg.precision {
        Precision::F32 => run_one::<f32>(cfg),
        Precision::F64 => run_one::<f64>(cfg),
    }
}

/// Sweeps `steps × reps`, one row per combination.
pub fn run_bvp_sweep(
    sweep: &[usize],
    reps: &[Rep],
    noise: NoiseMode,
    spacing: Spacing,
    precision: Precision,
) -> fixpoint::Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for &rep in reps {
        for &steps in sweep {
            let cfg = BvpConfig {
                steps,
                rep,
                precision,
                noise,
                spacing,
            };
            let run = run_bvp(&cfg)?;
            rows.push(ReportRow {
                experiment: "bvp".into(),
                method: "fps".into(),
                rep: Some(rep),
                d: 1,
                steps,
                precision,
                wall_time_s: Some(run.wall_time_s),
                memory_bytes: None,
                deviation_rmse: run.deviation,
                loglik: None,
                diverged: run.diverged(),
            });
        }
    }
    Ok(rows)
}
