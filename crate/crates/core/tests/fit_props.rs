use std::f64::consts::PI;

use ipcc::fit::{
    self, direct_params_for, fit_parameters, grad_nll, gradient_check, nll_objective, Dataset, FitConfig, FitReport,
    Model, Parameterization,
};
use ipcc::ipcc::IpccMatrix;
use ipcc::scene::SceneSpec;
use ipcc::scenes::{empirical_increment_pcc, generate_dataset, scene_increments, GeneratedScene, Pattern, ScenarioConfig};
use ipcc::Error;
use nalgebra::DMatrix;

const DELTA: f64 = 1e-4;

fn scenes(pattern: Pattern, n: usize, t_fut: usize, count: usize, seed: u64) -> Vec<GeneratedScene> {
    let mut cfg = ScenarioConfig::new(pattern, n, 3, t_fut, seed);
    cfg.rho = 0.8;
    cfg.count = count;
    generate_dataset(&cfg).unwrap()
}

fn direct_model(data: &Dataset) -> Model {
    Model::DirectRho {
        n_agents: data.n_agents(),
        steps: data.steps(),
    }
}

/// `Σ + δI` of one scene and step, built entry by entry.
fn dense_cov(data: &Dataset, p: &IpccMatrix, s: usize, t: usize) -> DMatrix<f64> {
    let blocks = data.marginals(s, t).blocks();
    let yaw = data.headings(s, t).as_slice();
    let n = blocks.len();
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let (i, j) = (r / 2, c / 2);
        let ui = [yaw[i].cos(), yaw[i].sin()];
        let uj = [yaw[j].cos(), yaw[j].sin()];
        // σδ from the projected marginal
        let si = blocks[i].sigma_x.hypot(blocks[i].sigma_y);
        let sj = blocks[j].sigma_x.hypot(blocks[j].sigma_y);
        p.get(i, j) * si * sj * ui[r % 2] * uj[c % 2] + if r == c { DELTA } else { 0.0 }
    })
}

#[test]
fn objective_at_truth_matches_entropy() {
    let generated = scenes(Pattern::Mixed, 3, 3, 2000, 40);
    let data = Dataset::from_generated(&generated).unwrap();
    let truth = generated[0].rho.clone();
    let params = direct_params_for(&vec![truth.clone(); 3]);
    let value = nll_objective(&direct_model(&data), &params, &data, DELTA).unwrap();
    let mut entropy = 0.0;
    for s in 0..data.len() {
        for t in 0..3 {
            let cov = dense_cov(&data, &truth, s, t);
            entropy += 0.5 * (cov.determinant().ln() + 6.0 * (1.0 + (2.0 * PI).ln()));
        }
    }
    entropy /= data.len() as f64;
    // per-scene NLL has standard deviation √(N·T)
    let tol = 4.0 * (9.0 / data.len() as f64).sqrt();
    assert!((value - entropy).abs() < tol, "{value} vs {entropy}");
}

#[test]
fn identity_correlation_gives_sum_of_marginal_nlls() {
    let generated = scenes(Pattern::Follow, 3, 2, 1, 41);
    let data = Dataset::from_generated(&generated).unwrap();
    let params = vec![0.0; 6];
    let value = nll_objective(&direct_model(&data), &params, &data, DELTA).unwrap();
    let mut sum = 0.0;
    for t in 0..2 {
        let obs = data.scenes()[0].future_vector(t);
        for (i, b) in data.marginals(0, t).blocks().iter().enumerate() {
            let c = b.cov();
            let (a, off, d) = (c[0][0] + DELTA, c[0][1], c[1][1] + DELTA);
            let det = a * d - off * off;
            let (rx, ry) = (obs[2 * i] - b.mu_x, obs[2 * i + 1] - b.mu_y);
            let quad = (d * rx * rx - 2.0 * off * rx * ry + a * ry * ry) / det;
            sum += 0.5 * (det.ln() + quad + 2.0 * (2.0 * PI).ln());
        }
    }
    assert!((value - sum).abs() < 1e-9 * sum.abs(), "{value} vs {sum}");
}

#[test]
fn zero_regularization_fails_to_factor() {
    let data = Dataset::from_generated(&scenes(Pattern::Follow, 2, 2, 3, 42)).unwrap();
    let err = nll_objective(&direct_model(&data), &[0.0, 0.0], &data, 0.0).unwrap_err();
    assert!(matches!(err, Error::Factorization { scene: 0, step: 0, .. }), "{err}");

    let config = FitConfig {
        delta_reg: 0.0,
        ..FitConfig::default()
    };
    let report = fit_parameters(&config, &data).unwrap();
    assert!(report.failed());
    assert!(report.delta_escalated);
    assert_eq!(report.iterations_run, 0);
    assert!(report.failure.unwrap().contains("factorization"));
}

#[test]
fn gradient_vanishes_at_one_parameter_minimum() {
    let data = Dataset::from_generated(&scenes(Pattern::Follow, 2, 1, 500, 43)).unwrap();
    let model = direct_model(&data);
    let g = |x: f64| grad_nll(&model, &[x], &data, DELTA).unwrap()[0];
    let f = |x: f64| nll_objective(&model, &[x], &data, DELTA).unwrap();
    let (mut lo, mut hi) = (-3.0, 3.0);
    assert!(g(lo) < 0.0 && g(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    assert!(g(x).abs() < 1e-8, "{}", g(x));
    assert!(f(x - 1e-3) > f(x) && f(x + 1e-3) > f(x));
}

#[test]
fn gradient_is_symmetric_under_agent_swap() {
    let generated = scenes(Pattern::Follow, 2, 3, 20, 44);
    let swapped: Vec<_> = generated
        .iter()
        .map(|g| {
            let s = &g.scene;
            let rev = |v: &[ipcc::scene::Trajectory]| v.iter().rev().cloned().collect::<Vec<_>>();
            let scene = SceneSpec::new(rev(s.past()), rev(s.future()), s.yaw().iter().rev().cloned().collect()).unwrap();
            (scene, g.increments.clone())
        })
        .collect();
    let a = Dataset::from_generated(&generated).unwrap();
    let b = Dataset::new(swapped).unwrap();
    let params = [0.3, -0.2, 0.7];
    let ga = grad_nll(&direct_model(&a), &params, &a, DELTA).unwrap();
    let gb = grad_nll(&direct_model(&b), &params, &b, DELTA).unwrap();
    for (x, y) in ga.iter().zip(&gb) {
        assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for param in [Parameterization::DirectRho, Parameterization::RelevanceHead] {
        for seed in 100..105 {
            let (model, params, data) = fit::synthetic_problem(param, 3, 4, 4, seed).unwrap();
            let report = gradient_check(&model, &params, &data, DELTA, 1e-6).unwrap();
            assert!(report.max_rel_error < 1e-5, "{param:?} seed {seed}: {}", report.max_rel_error);
        }
    }
}

#[test]
fn large_step_shows_truncation_error() {
    let (model, params, data) = fit::synthetic_problem(Parameterization::DirectRho, 3, 4, 4, 7).unwrap();
    let fine = gradient_check(&model, &params, &data, DELTA, 1e-6).unwrap().max_rel_error;
    let coarse = gradient_check(&model, &params, &data, DELTA, 1e-1).unwrap().max_rel_error;
    assert!(coarse > 100.0 * fine, "{coarse} vs {fine}");
}

#[test]
fn single_agent_problem_has_no_parameters() {
    let (model, params, data) = fit::synthetic_problem(Parameterization::DirectRho, 1, 4, 2, 0).unwrap();
    assert!(params.is_empty());
    assert!(grad_nll(&model, &params, &data, DELTA).unwrap().is_empty());
}

#[test]
fn small_learning_rate_descends_monotonically() {
    let data = Dataset::from_generated(&scenes(Pattern::Follow, 2, 1, 300, 45)).unwrap();
    let config = FitConfig {
        learning_rate: 0.005,
        max_iters: 100,
        ..FitConfig::default()
    };
    let report = fit_parameters(&config, &data).unwrap();
    assert!(report.nll_trace.windows(2).all(|w| w[1] <= w[0]));
}

fn recovery_error(count: usize, seed: u64) -> (f64, f64) {
    let generated = scenes(Pattern::Follow, 2, 1, count, seed);
    let data = Dataset::from_generated(&generated).unwrap();
    let config = FitConfig {
        max_iters: 150,
        ..FitConfig::default()
    };
    let report = fit_parameters(&config, &data).unwrap();
    let rho = report.recovered_rho[0][0][1];
    let pcc = empirical_increment_pcc(&scene_increments(&generated, 0).unwrap()).unwrap().get(0, 1);
    ((rho - 0.8).abs(), (rho - pcc).abs())
}

#[test]
fn recovery_improves_with_data_and_tracks_empirical_pcc() {
    let seeds = 50..54;
    let small: f64 = seeds.clone().map(|s| recovery_error(1_000, s).0).sum::<f64>();
    let mut large = 0.0;
    for s in seeds {
        let (err, vs_pcc) = recovery_error(10_000, s);
        assert!(err < 0.05);
        assert!(vs_pcc < 0.02, "{vs_pcc}");
        large += err;
    }
    assert!(large < small, "{large} vs {small}");
}

#[test]
fn recovered_matrices_are_valid_and_report_round_trips() {
    let data = Dataset::from_generated(&scenes(Pattern::Mixed, 4, 2, 200, 46)).unwrap();
    let config = FitConfig {
        max_iters: 60,
        ..FitConfig::default()
    };
    let report = fit_parameters(&config, &data).unwrap();
    assert!(!report.failed(), "{:?}", report.failure);
    assert!(report.nll_trace.iter().all(|v| v.is_finite()));
    for rows in &report.recovered_rho {
        IpccMatrix::from_rows(rows).unwrap();
    }
    let back: FitReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
    let csv = report.trace_csv();
    assert!(csv.starts_with("iteration,nll\n0,"));
    assert_eq!(csv.lines().count(), report.nll_trace.len() + 1);
}

#[test]
fn fits_are_deterministic() {
    let data = Dataset::from_generated(&scenes(Pattern::Mixed, 3, 2, 100, 47)).unwrap();
    let config = FitConfig {
        max_iters: 30,
        ..FitConfig::default()
    };
    assert_eq!(fit_parameters(&config, &data).unwrap(), fit_parameters(&config, &data).unwrap());
}
