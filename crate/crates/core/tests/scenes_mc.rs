use ipcc::gaussian::sample_joint;
use ipcc::ipcc::{assemble_joint, IncrementParams, IpccMatrix, MarginalParams, YawVector};
use ipcc::scenes::{
    empirical_increment_pcc, generate_dataset, generate_scene, increments_along_headings, scene_increments,
    yaw_error_distribution, Pattern, ScenarioConfig,
};
use ipcc::Error;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn pcc_of(pattern: Pattern, rho: f64, count: usize) -> f64 {
    let mut cfg = ScenarioConfig::new(pattern, 2, 3, 2, 77);
    cfg.rho = rho;
    cfg.count = count;
    let scenes = generate_dataset(&cfg).unwrap();
    empirical_increment_pcc(&scene_increments(&scenes, 1).unwrap()).unwrap().get(0, 1)
}

#[test]
fn independent_pattern_is_uncorrelated() {
    let r = pcc_of(Pattern::Independent, 0.9, 10_000);
    assert!(r.abs() < 0.05, "{r}");
}

#[test]
fn follow_pattern_reaches_target() {
    let r = pcc_of(Pattern::Follow, 0.9, 10_000);
    assert!(r > 0.85 && r < 0.95, "{r}");
}

#[test]
fn yield_pattern_is_anticorrelated() {
    let r = pcc_of(Pattern::Yield, 0.7, 10_000);
    assert!((r + 0.7).abs() < 0.05, "{r}");
}

#[test]
fn pcc_of_assembled_joint_samples() {
    let theta = YawVector::new(vec![0.3, 2.2]).unwrap();
    let current = [[0.0, 0.0], [5.0, 5.0]];
    let inc = IncrementParams::new(vec![3.0, 4.0], vec![0.7, 1.2]).unwrap();
    let p = IpccMatrix::from_pairs(2, &[(0, 1, 0.6)]).unwrap();
    let marg = MarginalParams::projected(&inc, &theta, &current).unwrap();
    let joint = assemble_joint(&marg, &p, &theta).unwrap().regularized(1e-4).unwrap();
    let samples = sample_joint(&joint, 3, 100_000).unwrap();
    let incs = increments_along_headings(&samples, &current, theta.as_slice()).unwrap();
    let r = empirical_increment_pcc(&incs).unwrap().get(0, 1);
    assert!((r - 0.6).abs() < 0.01, "{r}");
}

#[test]
fn pcc_of_standard_samples_within_three_over_root_k() {
    let p = IpccMatrix::from_rows(&[vec![1.0, 0.5, -0.3], vec![0.5, 1.0, 0.2], vec![-0.3, 0.2, 1.0]]).unwrap();
    let k = 20_000;
    let l = p.matrix().clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = DMatrix::from_fn(k, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let est = empirical_increment_pcc(&(z * l.transpose())).unwrap();
    assert!((est.matrix() - p.matrix()).amax() < 3.0 / (k as f64).sqrt());
}

#[test]
fn pcc_edge_cases() {
    let col = DMatrix::from_fn(5, 1, |r, _| r as f64 * 0.5 - 1.0);
    let dup = DMatrix::from_fn(5, 2, |r, _| col[r]);
    assert_eq!(empirical_increment_pcc(&dup).unwrap().get(0, 1), 1.0);
    let neg = DMatrix::from_fn(5, 2, |r, c| if c == 0 { col[r] } else { -col[r] });
    assert_eq!(empirical_increment_pcc(&neg).unwrap().get(0, 1), -1.0);
    let flat = DMatrix::from_fn(5, 2, |r, c| if c == 0 { col[r] } else { 2.0 });
    assert!(matches!(empirical_increment_pcc(&flat), Err(Error::ZeroVariance(1))));
    assert!(empirical_increment_pcc(&DMatrix::zeros(1, 2)).is_err());
}

#[test]
fn generation_is_deterministic_and_valid() {
    let mut cfg = ScenarioConfig::new(Pattern::Mixed, 5, 4, 6, 12);
    cfg.count = 8;
    let a = generate_dataset(&cfg).unwrap();
    assert_eq!(a, generate_dataset(&cfg).unwrap());
    assert_eq!(a[0], generate_scene(&cfg).unwrap());
    for g in &a {
        assert!(g.rho.min_eigenvalue() >= -1e-12);
        assert_eq!(g.scene.n_agents(), 5);
        assert_eq!(g.increments.len(), 6);
    }
    cfg.seed = 13;
    assert_ne!(a[0], generate_scene(&cfg).unwrap());
}

#[test]
fn single_agent_is_one_straight_trajectory() {
    let mut cfg = ScenarioConfig::new(Pattern::Follow, 1, 3, 5, 1);
    cfg.heading = Some(0.0);
    cfg.noise_sigma = 0.0;
    let g = generate_scene(&cfg).unwrap();
    assert_eq!(g.rho, IpccMatrix::identity(1));
    let pts = g.scene.future()[0].points();
    assert!(pts.iter().all(|p| p[1] == 0.0));
}

#[test]
fn non_psd_target_is_rejected_not_repaired() {
    let mut cfg = ScenarioConfig::new(Pattern::Follow, 3, 2, 2, 0);
    cfg.target_rho = Some(vec![vec![1.0, 0.9, -0.9], vec![0.9, 1.0, 0.9], vec![-0.9, 0.9, 1.0]]);
    assert!(matches!(generate_scene(&cfg), Err(Error::NotPsd(_))));
}

#[test]
fn yaw_error_spread_grows_with_curvature() {
    let mut last = -1.0;
    for k in [0.0, 0.002, 0.01, 0.03] {
        let mut cfg = ScenarioConfig::new(Pattern::Independent, 4, 3, 6, 5);
        cfg.curvature = k;
        cfg.noise_sigma = 0.0;
        cfg.count = 50;
        let scenes: Vec<_> = generate_dataset(&cfg).unwrap().into_iter().map(|g| g.scene).collect();
        let stats = yaw_error_distribution(&scenes).unwrap();
        assert!(stats.std_deg > last || k == 0.0);
        assert_eq!(stats.histogram.iter().sum::<usize>() + stats.underflow + stats.overflow, stats.count);
        if k > 0.0 && k < 0.005 {
            assert!(stats.mean_deg.abs() < 1.0);
        }
        last = stats.std_deg;
    }
    assert!(last < 90.0);
}
