//! Order-preserving couplings built on the generic engine.
//!
//! Each construction adds a nonnegative difference component `v` to a base
//! solution, so the declared inequality between the reported views holds
//! exactly on the grid. The base component always uses stream 0 of the
//! given seed, which makes it bit-identical to a plain
//! [`simulate`](crate::spde::simulate) run with `NoiseStream::new(seed, 0)`.

use crate::engine::{self, Component, CoupledSystem, SystemRun};
use crate::error::{precondition, Error, Result};
use crate::field::{right_marker, shift, ExtendedReal, Field};
use crate::initial::InitialCondition;
use crate::noise::NoiseStream;
use crate::spde::{Coefficient, GridSpec, SpdeParams, Trajectory};

/// A coupled system together with one run of it.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub system: CoupledSystem,
    pub run: SystemRun,
}

impl CoupledRun {
    pub fn view(&self, name: &str) -> &Trajectory {
        self.run
            .view(&self.system, name)
            .unwrap_or_else(|| panic!("coupled run has no view `{name}`"))
    }

    pub fn violations(&self) -> u64 {
        self.run.total_violations()
    }
}

fn execute(system: CoupledSystem, grid: &GridSpec, t_end: f64, snapshot_times: &[f64]) -> Result<CoupledRun> {
    let run = engine::run(&system, grid, t_end, snapshot_times)?;
    Ok(CoupledRun { system, run })
}

/// Checks `lower ≤ upper` on the rendered initial window of `system`.
fn check_initial_order(
    system: &CoupledSystem,
    grid: &GridSpec,
    lower: &InitialCondition,
    upper: &InitialCondition,
) -> Result<()> {
    let (first, last) = engine::initial_window(system, grid)?;
    for cell in first..=last {
        let x = cell as f64 * grid.dx;
        let (l, u) = (lower.eval(x, grid.dx), upper.eval(x, grid.dx));
        if l > u {
            return Err(Error::Precondition(format!(
                "initial data not ordered: lower {l} > upper {u} at x = {x}"
            )));
        }
    }
    Ok(())
}

/// `u1` from `u1_0` and `u2 = u1 + v` from `u2_0 ≥ u1_0`, where
/// `∂v = Δv + (θ − v − 2u1)v + √v Ẇ₂`. Views: `u1`, `u2`.
pub fn couple_monotone(
    u1_0: &InitialCondition,
    u2_0: &InitialCondition,
    theta: f64,
    grid: &GridSpec,
    t_end: f64,
    snapshot_times: &[f64],
    seed: u64,
) -> Result<CoupledRun> {
    let p = SpdeParams::kpp(theta);
    let mut sys = CoupledSystem::new();
    let u1 = sys.add_component(Component::plain("u1", Some(u1_0.clone()), p.clone(), NoiseStream::new(seed, 0)))?;
    let v0 = InitialCondition::Difference { upper: Box::new(u2_0.clone()), lower: Box::new(u1_0.clone()) };
    let v = sys.add_component(
        Component::plain("v", Some(v0), p, NoiseStream::new(seed, 1)).with_annihilation(2.0, u1),
    )?;
    let lo = sys.add_view("u1", &[u1])?;
    let hi = sys.add_view("u2", &[u1, v])?;
    sys.require_order(lo, hi)?;
    check_initial_order(&sys, grid, u1_0, u2_0)?;
    execute(sys, grid, t_end, snapshot_times)
}

/// Nested family `u(θ₁) ≤ u(θ₂) ≤ …` from one initial datum: component
/// `i ≥ 1` is `vᵢ = u(θᵢ) − u(θᵢ₋₁)`, solving
/// `∂vᵢ = Δvᵢ + (θᵢ − θᵢ₋₁)u(θᵢ₋₁) + (θᵢ − vᵢ − 2u(θᵢ₋₁))vᵢ + √vᵢ Ẇᵢ`.
/// Views are named `theta0`, `theta1`, ….
pub fn couple_theta_family(
    u0: &InitialCondition,
    thetas: &[f64],
    grid: &GridSpec,
    t_end: f64,
    snapshot_times: &[f64],
    seed: u64,
) -> Result<CoupledRun> {
    precondition(!thetas.is_empty(), "theta family is empty")?;
    precondition(
        thetas.windows(2).all(|w| w[0] < w[1]),
        format!("theta values must be strictly increasing, got {thetas:?}"),
    )?;
    let mut sys = CoupledSystem::new();
    sys.add_component(Component::plain(
        "u",
        Some(u0.clone()),
        SpdeParams::kpp(thetas[0]),
        NoiseStream::new(seed, 0),
    ))?;
    sys.add_view("theta0", &[0])?;
    for i in 1..thetas.len() {
        let below: Vec<usize> = (0..i).collect();
        let mut c = Component::plain(
            format!("v{i}"),
            None,
            SpdeParams::kpp(thetas[i]),
            NoiseStream::new(seed, i as u64),
        );
        for &j in &below {
            c = c
                .with_immigration(thetas[i] - thetas[i - 1], &[j])
                .with_annihilation(2.0, j);
        }
        let idx = sys.add_component(c)?;
        let parts: Vec<usize> = (0..=idx).collect();
        let view = sys.add_view(format!("theta{i}"), &parts)?;
        sys.require_order(view - 1, view)?;
    }
    execute(sys, grid, t_end, snapshot_times)
}

/// Two-member θ family; views `lower` = `u(θ₁)`, `upper` = `u(θ₂)`.
pub fn couple_theta(
    u0: &InitialCondition,
    theta1: f64,
    theta2: f64,
    grid: &GridSpec,
    t_end: f64,
    snapshot_times: &[f64],
    seed: u64,
) -> Result<CoupledRun> {
    precondition(theta1 < theta2, format!("need theta1 < theta2, got {theta1} >= {theta2}"))?;
    let mut out = couple_theta_family(u0, &[theta1, theta2], grid, t_end, snapshot_times, seed)?;
    out.system.views[0].name = "lower".into();
    out.system.views[1].name = "upper".into();
    Ok(out)
}

/// `u1` (stream 0) and `u2` (law of a plain solution from `u2_0`, built from
/// streams 1 and 2) independent, plus `u0 = u1 + v ≤ u1 + u2` solving the
/// equation from `u1_0 + u2_0`.
///
/// `v` starts at `u2_0` with annihilation `2u1`; `w = u2 − v` starts at 0
/// with immigration `2·u1·v` and annihilation `2v`. Views: `u1`, `u2`, `v`,
/// `u0`, `u1+u2`, with orders `v ≤ u2` and `u0 ≤ u1+u2`.
pub fn couple_two_independent(
    u1_0: &InitialCondition,
    u2_0: &InitialCondition,
    theta: f64,
    grid: &GridSpec,
    t_end: f64,
    snapshot_times: &[f64],
    seed: u64,
) -> Result<CoupledRun> {
    let p = SpdeParams::kpp(theta);
    let mut sys = CoupledSystem::new();
    let u1 = sys.add_component(Component::plain("u1", Some(u1_0.clone()), p.clone(), NoiseStream::new(seed, 0)))?;
    let v = sys.add_component(
        Component::plain("v", Some(u2_0.clone()), p.clone(), NoiseStream::new(seed, 1)).with_annihilation(2.0, u1),
    )?;
    let w = sys.add_component(
        Component::plain("w", None, p, NoiseStream::new(seed, 2))
            .with_immigration(2.0, &[u1, v])
            .with_annihilation(2.0, v),
    )?;
    sys.add_view("u1", &[u1])?;
    let u2 = sys.add_view("u2", &[v, w])?;
    let vv = sys.add_view("v", &[v])?;
    let u0 = sys.add_view("u0", &[u1, v])?;
    let sum = sys.add_view("u1+u2", &[u1, v, w])?;
    sys.require_order(vv, u2)?;
    sys.require_order(u0, sum)?;
    execute(sys, grid, t_end, snapshot_times)
}

/// `u^{(α₁)} ≤ u^{(α₂)} = u^{(α₁)} + v` with
/// `∂v = Δv + (α₂ − α₁) + (θ − v − 2u^{(α₁)})v + √v Ẇ₂`. Views: `lower`,
/// `upper`. A point where `α₂ < α₁` is reported as a precondition error
/// when it is first evaluated.
#[allow(clippy::too_many_arguments)]
pub fn couple_immigration(
    u0: &InitialCondition,
    alpha1: &Coefficient,
    alpha2: &Coefficient,
    theta: f64,
    grid: &GridSpec,
    t_end: f64,
    snapshot_times: &[f64],
    seed: u64,
) -> Result<CoupledRun> {
    let extra = match (alpha1, alpha2) {
        (Coefficient::Constant(a1), Coefficient::Constant(a2)) => {
            precondition(a1 <= a2, format!("immigration rates not ordered: {a1} > {a2}"))?;
            Coefficient::Constant(a2 - a1)
        }
        (Coefficient::Constant(a1), Coefficient::Profile(f2)) if *a1 == 0.0 => Coefficient::Profile(f2.clone()),
        (Coefficient::Profile(f1), Coefficient::Profile(f2)) => {
            let (f1, f2) = f1.align(f2)?;
            precondition(
                f1.values().iter().zip(f2.values()).all(|(a, b)| a <= b),
                "immigration profiles not ordered",
            )?;
            Coefficient::Profile(f2.saturating_sub(&f1)?)
        }
        _ => {
            let (a1, a2) = (alpha1.clone(), alpha2.clone());
            Coefficient::function(move |t, x| a2.eval(t, x) - a1.eval(t, x))
        }
    };
    let mut sys = CoupledSystem::new();
    let u = sys.add_component(Component::plain(
        "u",
        Some(u0.clone()),
        SpdeParams::kpp(theta).with_alpha(alpha1.clone()),
        NoiseStream::new(seed, 0),
    ))?;
    let v = sys.add_component(
        Component::plain("v", None, SpdeParams::kpp(theta).with_alpha(extra), NoiseStream::new(seed, 1))
            .with_annihilation(2.0, u),
    )?;
    let lo = sys.add_view("lower", &[u])?;
    let hi = sys.add_view("upper", &[u, v])?;
    sys.require_order(lo, hi)?;
    execute(sys, grid, t_end, snapshot_times)
}

/// Recentres the ordered pair at the lower member's right marker and
/// returns `upper − lower`, using the snapshots nearest to `s`.
pub fn delta_field(lower: &Trajectory, upper: &Trajectory, s: f64) -> Result<Field> {
    let lo = lower
        .snapshot(s)
        .ok_or_else(|| Error::Precondition(format!("no snapshot of the lower member near t = {s}")))?;
    let hi = upper
        .snapshot(s)
        .ok_or_else(|| Error::Precondition(format!("no snapshot of the upper member near t = {s}")))?;
    let r0 = match right_marker(lo) {
        ExtendedReal::Finite(r) => r,
        _ => return Err(Error::Extinct(format!("lower member at t = {s}"))),
    };
    let diff = hi.saturating_sub(lo)?;
    shift(&diff, r0)
}

/// Four-component chain: `u1` from `phi`; `v2` from `ramp − phi`
/// (annihilated by `2u1`); `v3` from `psi` (annihilated by `2u1 + 2v2`);
/// `d4` from 0 with immigration `2·v2·v3` and annihilation `2u1 + 2v3`.
/// Views: `u1`, `u1+v2`, `u1+v2+v3`, `u1+v3+d4`; the last one has the law
/// of a solution from `phi + psi`. Declared orders: `u1 ≤ u1+v2 ≤ u1+v2+v3`.
pub fn sum_chain(
    phi: &InitialCondition,
    ramp_cap: f64,
    psi: &InitialCondition,
    theta: f64,
    seed: u64,
) -> Result<CoupledSystem> {
    let p = SpdeParams::kpp(theta);
    let ramp = InitialCondition::ZetaRamp { cap: ramp_cap };
    let mut sys = CoupledSystem::new();
    let u1 = sys.add_component(Component::plain("u1", Some(phi.clone()), p.clone(), NoiseStream::new(seed, 0)))?;
    let v2 = sys.add_component(
        Component::plain(
            "v2",
            Some(InitialCondition::Difference { upper: Box::new(ramp), lower: Box::new(phi.clone()) }),
            p.clone(),
            NoiseStream::new(seed, 1),
        )
        .with_annihilation(2.0, u1),
    )?;
    let v3 = sys.add_component(
        Component::plain("v3", Some(psi.clone()), p.clone(), NoiseStream::new(seed, 2))
            .with_annihilation(2.0, u1)
            .with_annihilation(2.0, v2),
    )?;
    let d4 = sys.add_component(
        Component::plain("d4", None, p, NoiseStream::new(seed, 3))
            .with_immigration(2.0, &[v2, v3])
            .with_annihilation(2.0, u1)
            .with_annihilation(2.0, v3),
    )?;
    let a = sys.add_view("u1", &[u1])?;
    let b = sys.add_view("u1+v2", &[u1, v2])?;
    let c = sys.add_view("u1+v2+v3", &[u1, v2, v3])?;
    sys.add_view("u1+v3+d4", &[u1, v3, d4])?;
    sys.require_order(a, b)?;
    sys.require_order(b, c)?;
    Ok(sys)
}

/// Runs a prepared system (for example [`sum_chain`]).
pub fn run_system(system: CoupledSystem, grid: &GridSpec, t_end: f64, snapshot_times: &[f64]) -> Result<CoupledRun> {
    execute(system, grid, t_end, snapshot_times)
}
