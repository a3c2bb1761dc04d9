use kpplab::particle::*;
use kpplab::stats::z_score;
use kpplab::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn state(cfg: ParticleConfig, lo: i64, occupied: &[i64], width: usize) -> ParticleState {
    let mut occ = vec![false; width];
    for &s in occupied {
        occ[(s - lo) as usize] = true;
    }
    ParticleState { config: cfg, window_lo: lo, occupied: occ }
}

/// Fixed-Δt approximation of the same chain: in each step every occupied
/// site dies with probability `death·Δt` and fires each neighbour pair with
/// probability `p·Δt`, all against the start-of-step configuration.
fn discrete_time_counts(cfg: &ParticleConfig, theta: f64, start: &[i64], t_end: f64, dt: f64, seed: u64) -> usize {
    let nb = cfg.neighbor_count() as i64;
    let a = (nb - 1) / 2;
    let b = nb - 1 - a;
    let p_birth = (f64::from(cfg.n) + theta) / nb as f64 * dt;
    let p_death = cfg.death() * dt;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut occ: std::collections::BTreeSet<i64> = start.iter().copied().collect();
    let steps = (t_end / dt).round() as usize;
    for _ in 0..steps {
        let current: Vec<i64> = occ.iter().copied().collect();
        let mut next = occ.clone();
        for &x in &current {
            for o in -a..=b {
                let y = x + o;
                if !occ.contains(&y) && rng.random::<f64>() < p_birth {
                    next.insert(y);
                }
            }
        }
        for &x in &current {
            if rng.random::<f64>() < p_death {
                next.remove(&x);
            }
        }
        occ = next;
    }
    occ.len()
}

#[test]
fn event_driven_chain_matches_discrete_time_approximation() {
    let cfg = ParticleConfig::new(2);
    let theta = 1.0;
    let start = [0i64, 1, 2];
    let xi0 = state(cfg, -50, &start, 100);
    let t_end = 1.0;
    let reps = 6000;
    let exact: Vec<usize> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let run = simulate_particles(&xi0, theta, t_end, &[t_end], replica_seed(10_000, r)).unwrap();
            run.systems[0].counts[0]
        })
        .collect();
    let approx: Vec<usize> = (0..reps)
        .into_par_iter()
        .map(|r| discrete_time_counts(&cfg, theta, &start, t_end, 1e-3, replica_seed(20_000, r)))
        .collect();
    let hist = |xs: &[usize]| {
        let mut h = vec![0.0; 16];
        for &x in xs {
            h[x.min(15)] += 1.0 / xs.len() as f64;
        }
        h
    };
    let (he, ha) = (hist(&exact), hist(&approx));
    let tv: f64 = he.iter().zip(&ha).map(|(p, q)| (p - q).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.04, "total variation {tv}: {he:?} vs {ha:?}");
    let ext = |xs: &[usize]| Estimate::proportion(xs.iter().filter(|&&c| c == 0).count(), xs.len());
    assert!(z_score(&ext(&exact), &ext(&approx)) < 4.0);
    let mean = |xs: &[usize]| Estimate::from_samples(&xs.iter().map(|&c| c as f64).collect::<Vec<_>>());
    assert!(z_score(&mean(&exact), &mean(&approx)) < 4.0);
}

#[test]
fn lone_particle_at_small_scale_dies_out() {
    // regression anchor: n = 1, θ = 0 has half of its births blocked by the
    // parent itself, so deaths dominate
    let cfg = ParticleConfig::new(1);
    let xi0 = state(cfg, -20, &[0], 40);
    let extinct = (0..400)
        .filter(|&r| simulate_particles(&xi0, 0.0, 20.0, &[], r).unwrap().extinction_time.is_finite())
        .count();
    assert!(extinct as f64 / 400.0 >= 0.9, "{extinct}/400");
}

#[test]
fn initial_density_round_trip() {
    let sup_error = |n: u32| {
        let xi = init_particles(&InitialCondition::Bump, &ParticleConfig::new(n)).unwrap();
        let d = approx_density(&xi);
        (0..d.len()).map(|i| (d.values()[i] - InitialCondition::Bump.eval(d.x(i), d.dx())).abs()).fold(0.0, f64::max)
    };
    let (e16, e64, e256) = (sup_error(16), sup_error(64), sup_error(256));
    // anchored at the measured n = 64 value (0.19): the block value is read
    // at the block's left end, which overshoots on the decreasing flank
    assert!(e64 < 0.2, "n=64 sup error {e64}");
    assert!(e16 > e64 && e64 > e256, "{e16} {e64} {e256}");
}

#[test]
fn theta_family_is_nested_at_every_event() {
    let cfg = ParticleConfig::new(16);
    let xi0 = init_particles(&InitialCondition::Bump, &cfg).unwrap();
    let times = [0.1, 0.2, 0.3, 0.4, 0.5];
    for r in 0..20 {
        let run = couple_theta_star_particles(&xi0, &[1.0, 2.0, 4.0], 0.5, &times, r).unwrap();
        assert_eq!(run.nesting_violations, 0);
        for w in run.systems.windows(2) {
            assert!(w[0].final_state.is_subset_of(&w[1].final_state));
            for k in 0..times.len() {
                assert!(w[0].r0[k] <= w[1].r0[k]);
                assert!(w[0].counts[k] <= w[1].counts[k]);
            }
        }
    }
}

#[test]
fn top_of_family_has_single_theta_law() {
    let cfg = ParticleConfig::new(8);
    let xi0 = init_particles(&InitialCondition::Bump, &cfg).unwrap();
    let reps = 2000;
    let coupled: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let run = couple_theta_star_particles(&xi0, &[1.0, 3.0], 0.5, &[0.5], replica_seed(30_000, r)).unwrap();
            run.systems[1].counts[0] as f64
        })
        .collect();
    let single: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| simulate_particles(&xi0, 3.0, 0.5, &[0.5], replica_seed(40_000, r)).unwrap().systems[0].counts[0] as f64)
        .collect();
    let (a, b) = (Estimate::from_samples(&coupled), Estimate::from_samples(&single));
    assert!(z_score(&a, &b) < 3.0, "{a:?} vs {b:?}");
}

#[test]
fn runs_are_deterministic() {
    let cfg = ParticleConfig::new(16);
    let xi0 = init_particles(&InitialCondition::Bump, &cfg).unwrap();
    let a = simulate_particles(&xi0, 2.0, 0.3, &[0.1, 0.3], 5).unwrap();
    let b = simulate_particles(&xi0, 2.0, 0.3, &[0.1, 0.3], 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn event_budget_aborts() {
    let mut cfg = ParticleConfig::new(16);
    cfg.event_budget = 100;
    let xi0 = init_particles(&InitialCondition::Bump, &cfg).unwrap();
    assert!(matches!(simulate_particles(&xi0, 2.0, 1.0, &[], 1), Err(Error::EventBudget { .. })));
}

#[test]
fn comparison_report_is_consistent() {
    let cfg = ParticleConfig::new(8);
    let rep = particle_vs_spde(&InitialCondition::Bump, 2.0, &cfg, &GridSpec::default(), 0.2, 50, 50, 9).unwrap();
    assert!((rep.discrepancy - (rep.particle.mean - rep.spde.mean)).abs() < 1e-15);
    for e in [rep.particle, rep.spde] {
        assert!((0.0..=1.0).contains(&e.mean));
    }
    assert!(rep.joint_std_error > 0.0);
}

#[test]
fn snapshot_runs_cover_window() {
    let cfg = ParticleConfig::new(4);
    let xi = init_particles(&InitialCondition::Bump, &cfg).unwrap();
    let mut buf = Vec::new();
    xi.write_snapshot(&mut buf, 0.0).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(' ').collect();
    assert_eq!(header.len(), 5);
    let runs: usize = lines.next().unwrap().split(' ').map(|r| r.parse::<usize>().unwrap()).sum();
    assert_eq!(runs, xi.occupied.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn init_is_monotone_in_data(scale in 0.0f64..3.0, extra in 0.0f64..2.0, n in 1u32..40) {
        let cfg = ParticleConfig::new(n);
        let lo = init_particles(&InitialCondition::Bump.scaled(scale), &cfg).unwrap();
        let hi = init_particles(&InitialCondition::Bump.scaled(scale + extra), &cfg).unwrap();
        prop_assert!(lo.is_subset_of(&hi));
    }

    #[test]
    fn density_is_monotone_in_occupancy(bits in proptest::collection::vec(any::<bool>(), 60), extra in proptest::collection::vec(any::<bool>(), 60)) {
        let cfg = ParticleConfig::new(3);
        let small = ParticleState { config: cfg, window_lo: -30, occupied: bits.clone() };
        let big = ParticleState { config: cfg, window_lo: -30, occupied: bits.iter().zip(&extra).map(|(a, b)| *a || *b).collect() };
        let (a, b) = (approx_density(&small), approx_density(&big));
        prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| x <= y));
    }

    #[test]
    fn total_rate_identity(n in 1u32..100, k in 0usize..500, t1 in 0.0f64..5.0, gap in 0.0f64..5.0) {
        let cfg = ParticleConfig::new(n);
        let single = ClockConfig::new(&cfg, &[t1]);
        let nb = cfg.neighbor_count();
        prop_assert!((single.total_rate(k, nb) - (k as f64 * single.death_rate + (k * nb) as f64 * single.birth_rate_p)).abs() < 1e-9 * (1.0 + single.total_rate(k, nb)));
        prop_assert!((single.total_rate(k, nb) - k as f64 * (2.0 * f64::from(n) + t1)).abs() < 1e-9 * (1.0 + single.total_rate(k, nb)));
        if gap > 0.0 {
            let fam = ClockConfig::new(&cfg, &[t1, t1 + gap]);
            prop_assert!(fam.birth_rate_q[0] >= 0.0);
        }
    }
}
