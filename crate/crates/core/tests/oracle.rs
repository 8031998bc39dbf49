//! Every estimator against the brute-force joint-Gaussian posterior.

mod common;

use common::{gauss_diff, random_problem};
use fixpoint::estimators::{run_filter, run_rts};
use fixpoint::fixed_point::{
    fps_init, fps_marginal_at_k, fps_step, run_fps, run_fps_augmented, run_fps_via_rts, run_meditch,
};
use fixpoint::ssm::dense_posterior;
use fixpoint::Rep;

const TOL: f64 = 1e-8;

#[test]
fn filter_matches_oracle_final_state() {
    for seed in 0..5 {
        let (model, ys) = random_problem(seed, 3, 2, 15);
        let oracle = dense_posterior(&model, &ys, &[15]).unwrap();
        for rep in [Rep::Dense, Rep::Factor] {
            let run = run_filter(&model, &ys, rep, false).unwrap();
            let (dm, dc) = gauss_diff(&run.filtered, &oracle);
            assert!(dm < TOL && dc < TOL, "seed {seed} {rep}: {dm:e} {dc:e}");
        }
    }
}

#[test]
fn every_filter_marginal_matches_truncated_oracle() {
    let (model, ys) = random_problem(11, 2, 1, 10);
    for rep in [Rep::Dense, Rep::Factor] {
        let run = run_filter(&model, &ys, rep, true).unwrap();
        for (i, step) in run.steps.unwrap().iter().enumerate() {
            let k = i + 1;
            let oracle = dense_posterior(&model.truncated(k), &ys[..k], &[k]).unwrap();
            let (dm, dc) = gauss_diff(&step.filtered, &oracle);
            assert!(dm < TOL && dc < TOL, "k={k} {rep}");
        }
    }
}

#[test]
fn rts_marginals_match_oracle() {
    for seed in 0..3 {
        let (model, ys) = random_problem(100 + seed, 2, 2, 10);
        for rep in [Rep::Dense, Rep::Factor] {
            let run = run_rts(&model, &ys, rep).unwrap();
            assert_eq!(run.smoothed.len(), 11);
            for (k, g) in run.smoothed.iter().enumerate() {
                let oracle = dense_posterior(&model, &ys, &[k]).unwrap();
                let (dm, dc) = gauss_diff(g, &oracle);
                assert!(dm < TOL && dc < TOL, "seed {seed} k={k} {rep}: {dm:e} {dc:e}");
            }
        }
    }
}

#[test]
fn all_initial_state_routes_match_oracle() {
    for seed in 0..5 {
        let (model, ys) = random_problem(200 + seed, 3, 2, 12);
        let oracle = dense_posterior(&model, &ys, &[0]).unwrap();
        for rep in [Rep::Dense, Rep::Factor] {
            for (name, g) in [
                ("fps", run_fps(&model, &ys, rep).unwrap()),
                ("augmented", run_fps_augmented(&model, &ys, rep).unwrap()),
                ("rts", run_fps_via_rts(&model, &ys, rep).unwrap()),
            ] {
                let (dm, dc) = gauss_diff(&g, &oracle);
                assert!(dm < TOL && dc < TOL, "seed {seed} {name} {rep}: {dm:e} {dc:e}");
            }
        }
        let (dm, dc) = gauss_diff(&run_meditch(&model, &ys).unwrap().marginal(), &oracle);
        assert!(dm < TOL && dc < TOL, "seed {seed} meditch");
    }
}

#[test]
fn augmented_route_matches_oracle_longer_chain() {
    let (model, ys) = random_problem(300, 2, 1, 20);
    let oracle = dense_posterior(&model, &ys, &[0]).unwrap();
    for rep in [Rep::Dense, Rep::Factor] {
        let (dm, dc) = gauss_diff(&run_fps_augmented(&model, &ys, rep).unwrap(), &oracle);
        assert!(dm < TOL && dc < TOL, "{rep}: {dm:e} {dc:e}");
    }
}

#[test]
fn intermediate_fixed_point_marginals_match_oracle() {
    let (model, ys) = random_problem(400, 3, 1, 12);
    for rep in [Rep::Dense, Rep::Factor] {
        let m = model.to_rep(rep).unwrap();
        let mut state = fps_init(&m, rep).unwrap();
        for k in 1..=12 {
            state = fps_step(&state, &m.steps[k - 1], &ys[k - 1]).unwrap();
            let oracle = dense_posterior(&model.truncated(k), &ys[..k], &[0]).unwrap();
            let (dm, dc) = gauss_diff(&fps_marginal_at_k(&state).unwrap(), &oracle);
            assert!(dm < TOL && dc < TOL, "k={k} {rep}");
        }
    }
}

#[test]
fn joint_query_is_consistent_with_single_queries() {
    let (model, ys) = random_problem(500, 2, 2, 6);
    let joint = dense_posterior(&model, &ys, &[0, 6]).unwrap();
    let c = joint.covariance();
    let first = dense_posterior(&model, &ys, &[0]).unwrap();
    let last = dense_posterior(&model, &ys, &[6]).unwrap();
    assert!((c.view((0, 0), (2, 2)) - first.covariance()).norm() < 1e-12);
    assert!((c.view((2, 2), (2, 2)) - last.covariance()).norm() < 1e-12);
    assert!((joint.mean.rows(2, 2) - &last.mean).amax() < 1e-12);
}
