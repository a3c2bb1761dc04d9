//! Front-speed estimators built on ramp initial data.
//!
//! The solution started from `+∞·1_{x<0}` is approximated by the ramp
//! `ZetaRamp(cap)`; runs use a window that trails the right front.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::couple_theta;
use crate::error::{precondition, Error, Result};
use crate::field::{pairing, recenter_right, ExtendedReal, Field};
use crate::initial::InitialCondition;
use crate::noise::NoiseStream;
use crate::replica_seed;
use crate::spde::{self, FrontSide, GridSpec, SpdeParams, Trajectory, WindowPolicy, DEFAULT_BEHIND};
use crate::stats::{joint_std_error, Estimate};

/// Default ramp height.
pub const DEFAULT_CAP: f64 = 50.0;

/// Stream id used for the sampling-time draws of [`sample_wave`].
const TIME_STREAM: u64 = 1 << 32;

/// Monte Carlo estimate of `E[R₀(u_T)]/T` for ramp data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub theta: f64,
    pub t_end: f64,
    pub replicas: usize,
    pub mean_r0_over_t: f64,
    pub std_error: f64,
    pub n_cap: f64,
}

impl SpeedEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate { mean: self.mean_r0_over_t, std_error: self.std_error, n: self.replicas }
    }
}

/// A travelling-wave sample: a profile recentred so that its right marker
/// sits exactly at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveSample {
    pub profile: Field,
    pub s: f64,
    pub t_end: f64,
}

/// Moving windows cannot hold ramp data; they are turned into a window that
/// trails the front on `side` with the same pad.
fn ramp_grid(grid: &GridSpec, side: FrontSide) -> GridSpec {
    match &grid.window {
        WindowPolicy::Moving { left_pad, right_pad } => {
            let pad = match side {
                FrontSide::Right => *right_pad,
                FrontSide::Left => *left_pad,
            };
            grid.clone().with_window(WindowPolicy::Trailing { behind: DEFAULT_BEHIND, pad, side })
        }
        _ => grid.clone(),
    }
}

/// Run from `ZetaRamp(n_cap)` (mass saturated on the left half-line).
pub fn upper_left_solution(
    theta: f64,
    n_cap: f64,
    grid: &GridSpec,
    t_end: f64,
    snapshot_times: &[f64],
    noise: NoiseStream,
) -> Result<Trajectory> {
    precondition(n_cap > 0.0, format!("ramp cap must be positive, got {n_cap}"))?;
    spde::run_single(
        &InitialCondition::ZetaRamp { cap: n_cap },
        &SpdeParams::kpp(theta),
        &ramp_grid(grid, FrontSide::Right),
        t_end,
        snapshot_times,
        noise,
    )
}

/// Mirror image of [`upper_left_solution`], with the ramp starting at `at`
/// and saturated on `(at, ∞)`.
pub fn upper_right_solution(
    theta: f64,
    n_cap: f64,
    at: f64,
    grid: &GridSpec,
    t_end: f64,
    snapshot_times: &[f64],
    noise: NoiseStream,
) -> Result<Trajectory> {
    precondition(n_cap > 0.0, format!("ramp cap must be positive, got {n_cap}"))?;
    spde::run_single(
        &InitialCondition::ZetaRampRight { cap: n_cap }.shifted(at),
        &SpdeParams::kpp(theta),
        &ramp_grid(grid, FrontSide::Left),
        t_end,
        snapshot_times,
        noise,
    )
}

fn finite_r0(r: ExtendedReal, what: &str) -> Result<f64> {
    r.finite().ok_or_else(|| Error::Extinct(what.to_owned()))
}

/// Per-replica `R₀(u_T)` from ramp data on stream `stream`.
fn ramp_markers(
    theta: f64,
    t_end: f64,
    replicas: usize,
    n_cap: f64,
    grid: &GridSpec,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let s = replica_seed(seed, r);
            let tr = upper_left_solution(theta, n_cap, grid, t_end, &[], NoiseStream::new(s, stream))?;
            finite_r0(tr.final_r0(), &format!("ramp run, replica {r} (seed {s})"))
        })
        .collect()
}

/// `E[R₀(u_T)]/T` over `replicas` ramp runs.
pub fn estimate_b(theta: f64, t_end: f64, replicas: usize, n_cap: f64, grid: &GridSpec, seed: u64) -> Result<SpeedEstimate> {
    precondition(t_end >= 1.0, format!("speed estimates need T >= 1, got {t_end}"))?;
    precondition(replicas >= 2, format!("need at least 2 replicas, got {replicas}"))?;
    let xs: Vec<f64> = ramp_markers(theta, t_end, replicas, n_cap, grid, seed, 0)?
        .into_iter()
        .map(|r| r / t_end)
        .collect();
    let e = Estimate::from_samples(&xs);
    Ok(SpeedEstimate {
        theta,
        t_end,
        replicas,
        mean_r0_over_t: e.mean,
        std_error: e.std_error,
        n_cap,
    })
}

/// `α_T = (2/T) ∫_0^{T/2} E[R₀(u_{T/2+s})] ds`, with the time integral taken
/// by the trapezoid rule over each trajectory's own steps.
pub fn estimate_alpha_t(theta: f64, t_end: f64, replicas: usize, n_cap: f64, grid: &GridSpec, seed: u64) -> Result<Estimate> {
    precondition(t_end >= 1.0, format!("speed estimates need T >= 1, got {t_end}"))?;
    precondition(replicas >= 2, format!("need at least 2 replicas, got {replicas}"))?;
    let xs = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let s = replica_seed(seed, r);
            let tr = upper_left_solution(theta, n_cap, grid, t_end, &[], NoiseStream::new(s, 0))?;
            let start = tr.index_at(t_end / 2.0);
            let mut integral = 0.0;
            for i in start..tr.times.len() - 1 {
                let a = finite_r0(tr.r0[i], &format!("ramp run, replica {r} (seed {s})"))?;
                let b = finite_r0(tr.r0[i + 1], &format!("ramp run, replica {r} (seed {s})"))?;
                integral += 0.5 * (tr.times[i + 1] - tr.times[i]) * (a + b);
            }
            Ok(2.0 / t_end * integral)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&xs))
}

/// Draws `count` profiles from the Cesàro average over `[0, T]` of the
/// recentred ramp solution. Sample `i` uses seed `seed + i` both for its
/// time draw and for its noise.
pub fn sample_wave(
    theta: f64,
    t_end: f64,
    n_cap: f64,
    grid: &GridSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<WaveSample>> {
    precondition(t_end >= 1.0, format!("wave sampling needs T >= 1, got {t_end}"))?;
    precondition(count >= 1, "need at least one wave sample")?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let sd = replica_seed(seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(sd);
            rng.set_stream(TIME_STREAM);
            let s_raw: f64 = rng.random_range(0.0..=t_end);
            let s = (s_raw / grid.dt).round() * grid.dt;
            let tr = upper_left_solution(theta, n_cap, grid, s, &[], NoiseStream::new(sd, 0))?;
            let profile = recenter_right(&tr.final_field)
                .map_err(|_| Error::Extinct(format!("wave sample {i} (seed {sd}) at s = {s}")))?;
            Ok(WaveSample { profile, s, t_end })
        })
        .collect()
}

/// Three independent estimates for `E[R₀(u_{s+t})] ≤ E[R₀(u_s)] + E[R₀(u_t)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityReport {
    pub s: f64,
    pub t: f64,
    pub lhs: Estimate,
    pub rhs_s: Estimate,
    pub rhs_t: Estimate,
    /// `lhs − rhs_s − rhs_t`.
    pub difference: f64,
    pub joint_std_error: f64,
    /// `difference ≤ 3 · joint_std_error`.
    pub pass: bool,
}

pub fn check_subadditivity(
    theta: f64,
    s: f64,
    t: f64,
    replicas: usize,
    n_cap: f64,
    grid: &GridSpec,
    seed: u64,
) -> Result<SubadditivityReport> {
    precondition(s >= 1.0 && t >= 1.0, format!("need s, t >= 1, got s = {s}, t = {t}"))?;
    precondition(replicas >= 2, format!("need at least 2 replicas, got {replicas}"))?;
    let lhs = Estimate::from_samples(&ramp_markers(theta, s + t, replicas, n_cap, grid, seed, 0)?);
    let rhs_s = Estimate::from_samples(&ramp_markers(theta, s, replicas, n_cap, grid, seed, 1)?);
    let rhs_t = Estimate::from_samples(&ramp_markers(theta, t, replicas, n_cap, grid, seed, 2)?);
    let difference = lhs.mean - rhs_s.mean - rhs_t.mean;
    let se = joint_std_error(&[lhs.std_error, rhs_s.std_error, rhs_t.std_error]);
    Ok(SubadditivityReport {
        s,
        t,
        lhs,
        rhs_s,
        rhs_t,
        difference,
        joint_std_error: se,
        pass: difference <= 3.0 * se,
    })
}

/// `B̂(θ₂) − B̂(θ₁)` from θ-coupled ramp runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedGap {
    pub theta1: f64,
    pub theta2: f64,
    pub t_end: f64,
    pub gap: Estimate,
    /// Smallest per-replica gap; nonnegative by the coupling order.
    pub min_replica_gap: f64,
    pub z: f64,
}

pub fn speed_gap(
    theta1: f64,
    theta2: f64,
    t_end: f64,
    replicas: usize,
    n_cap: f64,
    grid: &GridSpec,
    seed: u64,
) -> Result<SpeedGap> {
    precondition(theta1 < theta2, format!("need theta1 < theta2, got {theta1} >= {theta2}"))?;
    precondition(t_end >= 1.0, format!("speed estimates need T >= 1, got {t_end}"))?;
    precondition(replicas >= 2, format!("need at least 2 replicas, got {replicas}"))?;
    let ic = InitialCondition::ZetaRamp { cap: n_cap };
    let g = ramp_grid(grid, FrontSide::Right);
    let gaps = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let s = replica_seed(seed, r);
            let run = couple_theta(&ic, theta1, theta2, &g, t_end, &[], s)?;
            let what = format!("coupled ramp run, replica {r} (seed {s})");
            let lo = finite_r0(run.view("lower").final_r0(), &what)?;
            let hi = finite_r0(run.view("upper").final_r0(), &what)?;
            Ok((hi - lo) / t_end)
        })
        .collect::<Result<Vec<f64>>>()?;
    let gap = Estimate::from_samples(&gaps);
    Ok(SpeedGap {
        theta1,
        theta2,
        t_end,
        min_replica_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
        z: gap.mean / gap.std_error,
        gap,
    })
}

/// Mass of the recentred field on `(−2a, ∞)`.
pub fn front_mass(f: &Field, a: f64) -> Result<f64> {
    precondition(a > 0.0, format!("front window half-width must be positive, got {a}"))?;
    let g = recenter_right(f)?;
    let ind = Field::new(
        g.origin(),
        g.dx(),
        (0..g.len()).map(|i| if g.x(i) > -2.0 * a { 1.0 } else { 0.0 }).collect(),
    )?;
    pairing(&g, &ind)
}
