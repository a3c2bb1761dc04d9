use kpplab::field::{level_marker, right_marker};
use kpplab::spde::extinction_probability;
use kpplab::*;
use proptest::prelude::*;

fn gaussian(width: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| (-x * x / (2.0 * width * width)).exp()
}

/// Plain explicit Euler for `u_t = u_xx + α + (θ − β)u − γu²` on a fixed
/// window with zero ghosts, written independently of the library stepper.
fn reference_euler(u0: &[f64], dx: f64, dt: f64, steps: usize, alpha: f64, theta: f64, beta: f64, gamma: f64) -> Vec<f64> {
    let mut u = u0.to_vec();
    let n = u.len();
    for _ in 0..steps {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let l = if i > 0 { u[i - 1] } else { 0.0 };
            let r = if i + 1 < n { u[i + 1] } else { 0.0 };
            let lap = (l - 2.0 * u[i] + r) / (dx * dx);
            next[i] = (u[i] + dt * (lap + alpha + (theta - beta) * u[i] - gamma * u[i] * u[i])).max(0.0);
        }
        u = next;
    }
    u
}

#[test]
fn deterministic_mode_matches_reference_stencil() {
    let (dx, dt) = (0.1, 0.004);
    let grid = GridSpec::new(dx, dt).fixed(-4.0, 4.0);
    let u0 = Field::from_fn(-4.0, 4.0, dx, gaussian(0.7)).unwrap();
    let p = SpdeParams::kpp(3.0).with_alpha(0.2).with_beta(0.5).with_gamma(1.5).deterministic();
    let tr = simulate(&InitialCondition::Custom(u0.clone()), &p, &grid, 0.4, &[], NoiseStream::new(1, 0)).unwrap();
    let expect = reference_euler(u0.values(), dx, dt, 100, 0.2, 3.0, 0.5, 1.5);
    assert_eq!(tr.final_field.len(), expect.len());
    for (a, b) in tr.final_field.values().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn linear_growth_semigroup_in_deterministic_mode() {
    // γ = 0: total mass obeys m' = θm exactly up to the Euler factor
    let theta = 2.0;
    let grid = GridSpec::default();
    let p = SpdeParams::kpp(theta).with_gamma(0.0).deterministic();
    let tr = simulate(&InitialCondition::Bump, &p, &grid, 1.0, &[], NoiseStream::new(0, 0)).unwrap();
    let steps = (tr.times.len() - 1) as i32;
    let euler = (1.0 + theta * grid.dt).powi(steps);
    assert!((tr.mass.last().unwrap() - euler).abs() < 1e-9 * euler);
    // O(dt) away from the continuum semigroup
    assert!((tr.mass.last().unwrap() - theta.exp()).abs() < 2.0 * theta * theta * grid.dt * theta.exp());
}

#[test]
fn mass_first_moment_is_exponential() {
    // superprocess case: E⟨u_t, 1⟩ = e^{θt}⟨u_0, 1⟩
    let theta = 2.0;
    let p = SpdeParams::kpp(theta).with_gamma(0.0);
    let grid = GridSpec::default();
    let masses: Vec<f64> = (0..2000)
        .map(|r| {
            let tr = simulate(&InitialCondition::Bump, &p, &grid, 0.5, &[], NoiseStream::new(replica_seed(70_000, r), 0))
                .unwrap();
            *tr.mass.last().unwrap()
        })
        .collect();
    let e = Estimate::from_samples(&masses);
    let oracle = (theta * 0.5).exp();
    assert!((e.mean - oracle).abs() < 3.0 * e.std_error, "E mass {} ± {} vs {oracle}", e.mean, e.std_error);
}

/// Front position at level θ/2 in deterministic mode.
fn deterministic_front(theta: f64, dx: f64, times: &[f64]) -> Vec<f64> {
    let grid = GridSpec::new(dx, 0.5 * dx * dx);
    let p = SpdeParams::kpp(theta).deterministic();
    let t_end = *times.last().unwrap();
    let tr = simulate(&InitialCondition::Bump, &p, &grid, t_end, times, NoiseStream::new(0, 0)).unwrap();
    times
        .iter()
        .map(|&t| level_marker(tr.snapshot(t).unwrap(), theta / 2.0).finite().unwrap())
        .collect()
}

#[test]
fn deterministic_front_speed() {
    let x = deterministic_front(4.0, 0.05, &[10.0, 20.0]);
    let slope = (x[1] - x[0]) / 10.0;
    assert!((slope - 4.0).abs() < 0.05 * 4.0, "slope {slope}");
    // logarithmic delay of pulled fronts: x(t) = 2√θ t − 3/(2√θ) ln t + O(1)
    let delayed = 4.0 - 0.75 * 2f64.ln() / 10.0;
    assert!((slope - delayed).abs() < 0.03, "slope {slope} vs {delayed}");
}

#[test]
fn deterministic_snapshots_converge_at_second_order() {
    let theta = 1.0;
    let fine = 0.025;
    let ic = InitialCondition::Custom(Field::from_fn(-6.0, 6.0, fine, gaussian(1.0)).unwrap());
    let p = SpdeParams::kpp(theta).deterministic();
    let run = |dx: f64| {
        // dt = 0.2 dx² keeps the temporal error below the spatial one
        let grid = GridSpec::new(dx, 0.2 * dx * dx).fixed(-6.0, 6.0);
        simulate(&ic, &p, &grid, 0.5, &[], NoiseStream::new(0, 0)).unwrap().final_field
    };
    let (a, b, c) = (run(4.0 * fine), run(2.0 * fine), run(fine));
    let diff = |coarse: &Field, finer: &Field| {
        (0..coarse.len())
            .map(|i| (coarse.values()[i] - finer.value_at(coarse.x(i))).abs())
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (diff(&a, &b), diff(&b, &c));
    let ratio = e1 / e2;
    assert!(ratio > 3.0 && ratio < 5.0, "errors {e1}, {e2}, ratio {ratio}");
}

#[test]
fn translation_equivariance() {
    let grid = GridSpec::default();
    let p = SpdeParams::kpp(3.0);
    for shift_cells in [7i64, -13] {
        let h = shift_cells as f64 * grid.dx;
        let a = simulate(&InitialCondition::Bump, &p, &grid, 0.6, &[], NoiseStream::new(5, 0)).unwrap();
        let b = simulate(
            &InitialCondition::Bump.shifted(h),
            &p,
            &grid,
            0.6,
            &[],
            NoiseStream::new(5, 0).with_cell_offset(-shift_cells),
        )
        .unwrap();
        assert_eq!(a.mass.len(), b.mass.len());
        for (ma, mb) in a.mass.iter().zip(&b.mass) {
            assert!((ma - mb).abs() < 1e-9 * ma.max(1.0));
        }
        let back = kpplab::field::shift(&b.final_field, h).unwrap();
        let (x, y) = a.final_field.align(&back).unwrap();
        for (u, v) in x.values().iter().zip(y.values()) {
            assert!((u - v).abs() < 1e-9);
        }
        match (right_marker(&a.final_field), right_marker(&b.final_field)) {
            (ExtendedReal::Finite(r1), ExtendedReal::Finite(r2)) => assert!((r2 - r1 - h).abs() < 1e-9),
            (r1, r2) => assert_eq!(r1, r2),
        }
    }
}

#[test]
fn same_seed_gives_identical_trajectories() {
    let grid = GridSpec::default();
    let p = SpdeParams::kpp(2.0);
    let a = simulate(&InitialCondition::Bump, &p, &grid, 0.5, &[0.25, 0.5], NoiseStream::new(9, 0)).unwrap();
    let b = simulate(&InitialCondition::Bump, &p, &grid, 0.5, &[0.25, 0.5], NoiseStream::new(9, 0)).unwrap();
    assert_eq!(a, b);
    let c = simulate(&InitialCondition::Bump, &p, &grid, 0.5, &[0.25, 0.5], NoiseStream::new(10, 0)).unwrap();
    assert_ne!(a.mass, c.mass);
}

#[test]
fn batch_estimates_do_not_depend_on_thread_count() {
    let grid = GridSpec::default();
    let p = SpdeParams::kpp(0.5);
    let est = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| extinction_probability(&InitialCondition::Bump, &p, &grid, 1.0, 40, 77).unwrap())
    };
    assert_eq!(est(1), est(3));
}

#[test]
fn subcritical_extinction_is_likely() {
    // regression anchor: θ = 0.1 dies out with high probability by T = 10
    let est = extinction_probability(&InitialCondition::Bump, &SpdeParams::kpp(0.1), &GridSpec::default(), 10.0, 200, 31)
        .unwrap();
    assert!(est.mean >= 0.9, "{est:?}");
}

#[test]
fn ramp_solution_never_dies() {
    let grid = GridSpec::default().trailing_right();
    let est = extinction_probability(&InitialCondition::ZetaRamp { cap: 50.0 }, &SpdeParams::kpp(10.0), &grid, 10.0, 10, 3)
        .unwrap();
    assert_eq!(est.mean, 0.0);
}

#[test]
fn zero_replicas_rejected() {
    let r = extinction_probability(&InitialCondition::Bump, &SpdeParams::kpp(1.0), &GridSpec::default(), 1.0, 0, 1);
    assert!(matches!(r, Err(Error::Precondition(_))));
}

#[test]
fn euler_maruyama_option_runs_and_stays_nonnegative() {
    let grid = GridSpec::default().with_scheme(NoiseScheme::EulerMaruyama);
    let tr = simulate(&InitialCondition::Bump, &SpdeParams::kpp(2.0), &grid, 0.3, &[0.3], NoiseStream::new(4, 0)).unwrap();
    assert!(tr.snapshot(0.3).unwrap().values().iter().all(|&v| v >= 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn snapshots_nonnegative_and_zero_absorbing(seed in 0u64..10_000, theta in 0.0f64..4.0, amp in 0.5f64..3.0) {
        let p = SpdeParams::kpp(theta).with_noise_amp(amp);
        let times = [0.1, 0.2, 0.3, 0.4];
        let tr = simulate(&InitialCondition::Bump.scaled(0.3), &p, &GridSpec::default(), 0.4, &times, NoiseStream::new(seed, 0)).unwrap();
        for (_, f) in &tr.snapshots {
            prop_assert!(f.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
        if let Some(i) = tr.mass.iter().position(|&m| m == 0.0) {
            prop_assert!(tr.mass[i..].iter().all(|&m| m == 0.0));
            prop_assert_eq!(tr.extinction_time, ExtendedReal::Finite(tr.times[i]));
        }
    }

    #[test]
    fn step_on_constant_state_is_logistic(u in 0.0f64..5.0, theta in 0.0f64..5.0) {
        // interior cells of a constant state: u' = u + dt·u(θ − u)
        let grid = GridSpec::new(0.1, 0.005);
        let f = Field::new(0.0, 0.1, vec![u; 11]).unwrap();
        let next = kpplab::spde::step(&f, &SpdeParams::kpp(theta).deterministic(), 0.0, &grid, &[0.0; 11]).unwrap();
        let expect = (u + 0.005 * u * (theta - u)).max(0.0);
        prop_assert!((next.values()[5] - expect).abs() < 1e-12);
    }
}
