//! Wall-clock timing of the three initial-state smoothers.

use std::time::Instant;

use fixpoint::fixed_point::{run_fps, run_fps_augmented, run_fps_via_rts};
use fixpoint::ssm::Lgssm;
use fixpoint::{Gaussian, Real, Rep};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::memory::{memory_model, Method};
use crate::random::gen_random_model;
use crate::report::ReportRow;
use crate::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub d: usize,
    pub steps: usize,
    pub seed: u64,
    pub precision: Precision,
    pub rep: Rep,
    pub method: Method,
    pub repeats: usize,
}

impl BenchConfig {
    pub fn new(method: Method, d: usize, steps: usize) -> Self {
        BenchConfig {
            d,
            steps,
            seed: 0,
            precision: Precision::F64,
            rep: Rep::Factor,
            method,
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    /// Minimum over the timed runs.
    pub best: f64,
    pub runs: Vec<f64>,
    /// Set when any run failed or returned non-finite numbers.
    pub diverged: bool,
}

pub fn run_method<T: Real>(
    method: Method,
    model: &Lgssm<T>,
    ys: &[DVector<T>],
    rep: Rep,
) -> fixpoint::Result<Gaussian<T>> {
    match method {
        Method::Fps => run_fps(model, ys, rep),
        Method::ViaFilter => run_fps_augmented(model, ys, rep),
        Method::ViaRts => run_fps_via_rts(model, ys, rep),
    }
}

/// One untimed warm-up, then `repeats` timed runs.
pub fn time_on<T: Real>(
    method: Method,
    model: &Lgssm<T>,
    ys: &[DVector<T>],
    rep: Rep,
    repeats: usize,
) -> Timing {
    let ok = |r: fixpoint::Result<Gaussian<T>>| r.map(|g| g.is_finite()).unwrap_or(false);
    let mut diverged = !ok(run_method(method, model, ys, rep));
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let result = run_method(method, model, ys, rep);
        runs.push(start.elapsed().as_secs_f64());
        diverged |= !ok(result);
    }
    let best = runs.iter().copied().fold(f64::INFINITY, f64::min);
    Timing { best, runs, diverged }
}

fn time_typed<T: Real>(cfg: &BenchConfig) -> fixpoint::Result<Timing> {
    let (model, ys) = gen_random_model::<T>(cfg.d, cfg.steps, cfg.seed)?;
    Ok(time_on(cfg.method, &model, &ys, cfg.rep, cfg.repeats))
}

/// Times the configured method on a freshly generated random model.
pub fn time_method(cfg: &BenchConfig) -> fixpoint::Result<Timing> {
    match cfg.precision {
        Precision::F32 => time_typed::<f32>(cfg),
        Precision::F64 => time_typed::<f64>(cfg),
    }
}

/// One report row per configuration. With `timed == false` only the memory
/// model is evaluated.
pub fn run_bench(configs: &[BenchConfig], timed: bool) -> fixpoint::Result<Vec<ReportRow>> {
    configs
        .iter()
        .map(|cfg| {
            let timing = if timed { Some(time_method(cfg)?) } else { None };
            Ok(ReportRow {
                experiment: "bench".into(),
                method: cfg.method.to_string(),
                rep: Some(cfg.rep),
                d: cfg.d,
                steps: cfg.steps,
                precision: cfg.precision,
                wall_time_s: timing.as_ref().map(|t| t.best),
                memory_bytes: Some(memory_model(cfg.method, cfg.d, cfg.steps)),
                deviation_rmse: None,
                loglik: None,
                diverged: timing.map(|t| t.diverged).unwrap_or(false),
            })
        })
        .collect()
}
