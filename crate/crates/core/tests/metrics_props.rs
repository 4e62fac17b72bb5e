use ipcc::metrics::{min_joint_ade, min_joint_fde};
use ipcc::scene::{ModeSet, Point, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Agents = Vec<Vec<Point>>;

fn random_agents(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Agents {
    (0..n)
        .map(|_| (0..t).map(|_| [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)]).collect())
        .collect()
}

fn trajectories(a: &Agents) -> Vec<Trajectory> {
    a.iter().cloned().map(Trajectory::new).collect()
}

fn mode_set(modes: &[Agents]) -> ModeSet {
    ModeSet::new(modes.iter().map(trajectories).collect(), None).unwrap()
}

fn loop_min(modes: &[Agents], gt: &Agents, final_only: bool) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for m in 0..modes.len() {
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..gt.len() {
            let t_len = gt[i].len();
            let first = if final_only { t_len - 1 } else { 0 };
            for t in first..t_len {
                let dx = modes[m][i][t][0] - gt[i][t][0];
                let dy = modes[m][i][t][1] - gt[i][t][1];
                total += (dx * dx + dy * dy).sqrt();
                count += 1;
            }
        }
        let v = total / count as f64;
        if v < best.0 {
            best = (v, m);
        }
    }
    best
}

#[test]
fn metrics_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..300 {
        let (n, t) = (rng.random_range(1..=5), rng.random_range(1..=10));
        let gt = random_agents(&mut rng, n, t);
        let modes: Vec<Agents> = (0..6).map(|_| random_agents(&mut rng, n, t)).collect();
        let set = mode_set(&modes);
        let ade = min_joint_ade(&set, &trajectories(&gt)).unwrap();
        let fde = min_joint_fde(&set, &trajectories(&gt)).unwrap();
        let (oa, ma) = loop_min(&modes, &gt, false);
        let (of, mf) = loop_min(&modes, &gt, true);
        assert!((ade.value - oa).abs() <= 1e-12 && ade.argmin_mode == ma);
        assert!((fde.value - of).abs() <= 1e-12 && fde.argmin_mode == mf);
    }
}

#[test]
fn simultaneous_agent_permutation_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let gt = random_agents(&mut rng, 4, 6);
    let modes: Vec<Agents> = (0..6).map(|_| random_agents(&mut rng, 4, 6)).collect();
    let perm = [2, 0, 3, 1];
    let permute = |a: &Agents| perm.iter().map(|&i| a[i].clone()).collect::<Agents>();
    let pmodes: Vec<Agents> = modes.iter().map(permute).collect();
    let a = min_joint_ade(&mode_set(&modes), &trajectories(&gt)).unwrap();
    let b = min_joint_ade(&mode_set(&pmodes), &trajectories(&permute(&gt))).unwrap();
    assert!((a.value - b.value).abs() < 1e-12 && a.argmin_mode == b.argmin_mode);
}

#[test]
fn adding_a_mode_never_hurts() {
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    for _ in 0..50 {
        let gt = random_agents(&mut rng, 3, 5);
        let mut modes: Vec<Agents> = vec![random_agents(&mut rng, 3, 5)];
        let mut last = (f64::INFINITY, f64::INFINITY);
        for _ in 0..6 {
            let set = mode_set(&modes);
            let now = (
                min_joint_ade(&set, &trajectories(&gt)).unwrap().value,
                min_joint_fde(&set, &trajectories(&gt)).unwrap().value,
            );
            assert!(now.0 <= last.0 && now.1 <= last.1);
            last = now;
            modes.push(random_agents(&mut rng, 3, 5));
        }
    }
}

#[test]
fn single_step_metrics_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    for _ in 0..50 {
        let gt = random_agents(&mut rng, 3, 1);
        let modes: Vec<Agents> = (0..6).map(|_| random_agents(&mut rng, 3, 1)).collect();
        let set = mode_set(&modes);
        assert_eq!(
            min_joint_ade(&set, &trajectories(&gt)).unwrap(),
            min_joint_fde(&set, &trajectories(&gt)).unwrap()
        );
    }
}
