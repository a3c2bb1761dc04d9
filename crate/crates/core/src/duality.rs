//! Monte Carlo checks of duality identities between Laplace functionals
//! `E[exp(−2⟨u, v⟩)]`.
//!
//! Both sides of every identity are estimated from independent noise: side
//! `k` of a check uses stream `k` of seed `seed + replica`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::field::{left_marker, pairing, ExtendedReal, Field};
use crate::fronts::{upper_left_solution, upper_right_solution};
use crate::initial::{render, InitialCondition};
use crate::noise::NoiseStream;
use crate::replica_seed;
use crate::spde::{run_single, Coefficient, GridSpec, SpdeParams, Trajectory};
use crate::stats::{z_score, Estimate};

/// Factor in the exponent of every Laplace functional: `exp(−2⟨f, g⟩)`.
pub const DUALITY_EXPONENT_SCALE: f64 = 2.0;

/// One identity `lhs = rhs` with independent Monte Carlo estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub identity: String,
    pub params: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub z: f64,
    pub replicas: usize,
}

impl DualityReport {
    fn new(identity: &str, params: String, lhs: Estimate, rhs: Estimate, replicas: usize) -> Self {
        Self { identity: identity.to_owned(), params, z: z_score(&lhs, &rhs), lhs, rhs, replicas }
    }

    pub const CSV_HEADER: &'static str = "identity,params,lhs,lhs_se,rhs,rhs_se,z";

    /// `identity,params,lhs,lhs_se,rhs,rhs_se,z`; `params` is quoted.
    pub fn csv_row(&self) -> String {
        format!(
            "{},\"{}\",{},{},{},{},{}",
            self.identity, self.params, self.lhs.mean, self.lhs.std_error, self.rhs.mean, self.rhs.std_error, self.z
        )
    }
}

/// `exp(−2⟨f, g⟩)`.
pub fn laplace(f: &Field, g: &Field) -> Result<f64> {
    Ok((-DUALITY_EXPONENT_SCALE * pairing(f, g)?).exp())
}

/// Renders compactly supported data on its own support.
fn render_compact(ic: &InitialCondition, dx: f64) -> Result<Field> {
    match ic.support() {
        (Some(a), Some(b)) if a < b => render(ic, a, b, dx),
        (Some(a), Some(_)) => render(ic, a - dx, a + dx, dx),
        _ => Err(crate::Error::Precondition("duality data must be compactly supported".into())),
    }
}

fn run_to(ic: &InitialCondition, p: &SpdeParams, grid: &GridSpec, t: f64, noise: NoiseStream) -> Result<Field> {
    Ok(run_single(ic, p, grid, t, &[], noise)?.final_field)
}

fn laplace_estimate(
    replicas: usize,
    f: impl Fn(usize) -> Result<f64> + Sync + Send,
) -> Result<Estimate> {
    let xs = (0..replicas).into_par_iter().map(f).collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&xs))
}

/// The three evaluations of `E[exp(−2⟨u(s), v(t−s)⟩)]` and their pairwise
/// comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfDualityReport {
    /// At the requested split `s`.
    pub mixed: Estimate,
    /// `s = t`: `E[exp(−2⟨u(t), v₀⟩)]`.
    pub pure_u: Estimate,
    /// `s = 0`: `E[exp(−2⟨u₀, v(t)⟩)]`.
    pub pure_v: Estimate,
    /// mixed vs pure_v, mixed vs pure_u, pure_u vs pure_v.
    pub pairs: Vec<DualityReport>,
}

impl SelfDualityReport {
    pub fn max_z(&self) -> f64 {
        self.pairs.iter().map(|p| p.z).fold(0.0, f64::max)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn self_duality_check(
    u0: &InitialCondition,
    v0: &InitialCondition,
    theta: f64,
    t: f64,
    s: f64,
    replicas: usize,
    grid: &GridSpec,
    seed: u64,
) -> Result<SelfDualityReport> {
    precondition((0.0..=t).contains(&s), format!("need 0 <= s <= t, got s = {s}, t = {t}"))?;
    precondition(replicas >= 2, format!("need at least 2 replicas, got {replicas}"))?;
    let p = SpdeParams::kpp(theta);
    let u_rendered = render_compact(u0, grid.dx)?;
    let v_rendered = render_compact(v0, grid.dx)?;
    let mixed = laplace_estimate(replicas, |r| {
        let sd = replica_seed(seed, r);
        let u = run_to(u0, &p, grid, s, NoiseStream::new(sd, 0))?;
        let v = run_to(v0, &p, grid, t - s, NoiseStream::new(sd, 1))?;
        laplace(&u, &v)
    })?;
    let pure_u = laplace_estimate(replicas, |r| {
        let u = run_to(u0, &p, grid, t, NoiseStream::new(replica_seed(seed, r), 2))?;
        laplace(&u, &v_rendered)
    })?;
    let pure_v = laplace_estimate(replicas, |r| {
        let v = run_to(v0, &p, grid, t, NoiseStream::new(replica_seed(seed, r), 3))?;
        laplace(&u_rendered, &v)
    })?;
    let params = format!("theta={theta} t={t} s={s} dx={} dt={}", grid.dx, grid.dt);
    let pairs = vec![
        DualityReport::new("self_duality:mixed~pure_v", params.clone(), mixed, pure_v, replicas),
        DualityReport::new("self_duality:mixed~pure_u", params.clone(), mixed, pure_u, replicas),
        DualityReport::new("self_duality:pure_u~pure_v", params, pure_u, pure_v, replicas),
    ];
    Ok(SelfDualityReport { mixed, pure_u, pure_v, pairs })
}

/// Time-reversal duality with competition: `v` solves the equation with
/// extra annihilation `β(t, x)`, `z` with `β(T − t, x)`; compares
/// `E[exp(−2⟨v(T), z₀⟩)]` with `E[exp(−2⟨v₀, z(T)⟩)]`.
#[allow(clippy::too_many_arguments)]
pub fn competition_duality_check(
    v0: &InitialCondition,
    z0: &InitialCondition,
    beta: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    theta: f64,
    t_end: f64,
    replicas: usize,
    grid: &GridSpec,
    seed: u64,
) -> Result<DualityReport> {
    precondition(replicas >= 2, format!("need at least 2 replicas, got {replicas}"))?;
    let forward = SpdeParams::kpp(theta).with_beta(Coefficient::Function(beta.clone()));
    // Step k of the reversed run covers [T − (k+1)dt, T − k dt] of the
    // forward clock; its coefficient is read at the start of that interval,
    // so each step uses the value the forward run used on the same interval.
    let dt = grid.dt;
    let reversed = SpdeParams::kpp(theta)
        .with_beta(Coefficient::function(move |t, x| beta((t_end - t - dt).max(0.0), x)));
    let v_rendered = render_compact(v0, grid.dx)?;
    let z_rendered = render_compact(z0, grid.dx)?;
    let lhs = laplace_estimate(replicas, |r| {
        let v = run_to(v0, &forward, grid, t_end, NoiseStream::new(replica_seed(seed, r), 0))?;
        laplace(&v, &z_rendered)
    })?;
    let rhs = laplace_estimate(replicas, |r| {
        let z = run_to(z0, &reversed, grid, t_end, NoiseStream::new(replica_seed(seed, r), 1))?;
        laplace(&v_rendered, &z)
    })?;
    Ok(DualityReport::new(
        "competition_duality",
        format!("theta={theta} T={t_end} dx={} dt={}", grid.dx, grid.dt),
        lhs,
        rhs,
        replicas,
    ))
}

/// `P(R₀(u_t) ≤ x)` from `φ` against `E[exp(−2⟨φ, u^{*,r}_t(· − x)⟩)]`, where
/// `u^{*,r}(· − x)` starts from the ramp saturated on `(x, ∞)`.
#[allow(clippy::too_many_arguments)]
pub fn marker_cdf_via_dual(
    phi: &InitialCondition,
    x: f64,
    t: f64,
    theta: f64,
    replicas: usize,
    n_cap: f64,
    grid: &GridSpec,
    seed: u64,
) -> Result<DualityReport> {
    precondition(replicas >= 2, format!("need at least 2 replicas, got {replicas}"))?;
    let phi_rendered = render_compact(phi, grid.dx)?;
    precondition(!phi_rendered.is_zero(), "phi must be nonzero")?;
    let p = SpdeParams::kpp(theta);
    let below = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let tr: Trajectory = run_single(phi, &p, grid, t, &[], NoiseStream::new(replica_seed(seed, r), 0))?;
            Ok(tr.final_r0() <= ExtendedReal::Finite(x + 1e-9 * grid.dx))
        })
        .collect::<Result<Vec<bool>>>()?;
    let lhs = Estimate::proportion(below.iter().filter(|&&b| b).count(), replicas);
    let rhs = laplace_estimate(replicas, |r| {
        let dual = upper_right_solution(theta, n_cap, x, grid, t, &[], NoiseStream::new(replica_seed(seed, r), 1))?;
        laplace(&phi_rendered, &dual.final_field)
    })?;
    Ok(DualityReport::new(
        "marker_cdf",
        format!("theta={theta} t={t} x={x} N_cap={n_cap} dx={} dt={}", grid.dx, grid.dt),
        lhs,
        rhs,
        replicas,
    ))
}

/// `E[exp(−2⟨u^{*,l}_T, g⟩)]` against `P(u^{(g)}_T has no mass on (−∞, 0))`,
/// the latter read as "every cell at x < 0 is exactly zero".
#[allow(clippy::too_many_arguments)]
pub fn upper_measure_laplace_check(
    g: &InitialCondition,
    theta: f64,
    t_end: f64,
    replicas: usize,
    n_cap: f64,
    grid: &GridSpec,
    seed: u64,
) -> Result<DualityReport> {
    precondition(replicas >= 2, format!("need at least 2 replicas, got {replicas}"))?;
    let g_rendered = render_compact(g, grid.dx)?;
    precondition(
        matches!(left_marker(&g_rendered), ExtendedReal::Finite(l) if l > 0.0) || g_rendered.is_zero(),
        "g must be supported in (0, ∞)",
    )?;
    let lhs = laplace_estimate(replicas, |r| {
        let u = upper_left_solution(theta, n_cap, grid, t_end, &[], NoiseStream::new(replica_seed(seed, r), 0))?;
        laplace(&u.final_field, &g_rendered)
    })?;
    let p = SpdeParams::kpp(theta);
    let clear = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let u = run_to(g, &p, grid, t_end, NoiseStream::new(replica_seed(seed, r), 1))?;
            let tol = 1e-9 * grid.dx;
            Ok((0..u.len()).all(|i| u.x(i) >= -tol || u.values()[i] == 0.0))
        })
        .collect::<Result<Vec<bool>>>()?;
    let rhs = Estimate::proportion(clear.iter().filter(|&&c| c).count(), replicas);
    Ok(DualityReport::new(
        "upper_measure_laplace",
        format!("theta={theta} T={t_end} N_cap={n_cap} dx={} dt={}", grid.dx, grid.dt),
        lhs,
        rhs,
        replicas,
    ))
}
