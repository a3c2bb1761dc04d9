//! Rescaled long-range contact process on `n⁻²ℤ` and its shared-clock
//! coupling across growth parameters.
//!
//! Each site has `N = round(2·c1·n^{3/2})` neighbours including itself
//! (offsets `−⌊(N−1)/2⌋ ..= ⌈(N−1)/2⌉`). An occupied site `x` fires a birth
//! clock towards each neighbour `y` at rate `(n + θ)/N`; `y` becomes occupied
//! if vacant. Occupied sites die at rate `n`. The density
//! `A(z) = (2·c1·n^{1/2})⁻¹ Σ_{y ~ z} ξ(y)` approximates
//! `∂A = (c1²/6)ΔA + θA − A² + √(2A) Ẇ` for large `n`.
//!
//! A family `θ₁ < … < θ_m` is simulated on one event stream: shared death
//! clocks, a shared birth family of rate `(n + θ₁)/N` per pair, and for each
//! gap an extra family of rate `(θ_{k+1} − θ_k)/N` that only systems above
//! the gap respond to. Occupancy is stored as one bit per system per site.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::duality::laplace;
use crate::error::{precondition, Error, Result};
use crate::field::{pairing, right_marker, ExtendedReal, Field};
use crate::initial::{render, InitialCondition};
use crate::noise::NoiseStream;
use crate::replica_seed;
use crate::spde::{run_single, GridSpec, SpdeParams};
use crate::stats::{joint_std_error, Estimate};

/// Stream id of the particle event generator.
const PARTICLE_STREAM: u64 = 1 << 33;
/// Largest supported family size (one bit per system).
pub const MAX_FAMILY: usize = 64;

/// Scale parameters of the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub n: u32,
    pub c1: f64,
    /// Per-site death rate; `None` uses `n`.
    pub death_rate: Option<f64>,
    /// Abort after this many events.
    pub event_budget: u64,
}

impl ParticleConfig {
    pub fn new(n: u32) -> Self {
        Self { n, c1: 1.0, death_rate: None, event_budget: 2_000_000_000 }
    }

    pub fn validate(&self) -> Result<()> {
        precondition(self.n >= 1, "particle scale n must be at least 1")?;
        precondition(self.c1.is_finite() && self.c1 > 0.0, format!("c1 must be positive, got {}", self.c1))?;
        if let Some(d) = self.death_rate {
            precondition(d.is_finite() && d >= 0.0, format!("death rate must be nonnegative, got {d}"))?;
        }
        precondition(self.neighbor_count() >= 1, "neighbourhood is empty")
    }

    pub fn neighbor_count(&self) -> usize {
        (2.0 * self.c1 * f64::from(self.n).powf(1.5)).round() as usize
    }

    /// Lattice spacing `n⁻²`.
    pub fn site_dx(&self) -> f64 {
        1.0 / f64::from(self.n).powi(2)
    }

    pub fn death(&self) -> f64 {
        self.death_rate.unwrap_or(f64::from(self.n))
    }

    /// Neighbour offsets `(−a, b)` with `a + b + 1 = N`.
    fn offsets(&self) -> (i64, i64) {
        let n = self.neighbor_count() as i64;
        let a = (n - 1) / 2;
        (a, n - 1 - a)
    }

    /// Density scale `(2·c1·n^{1/2})⁻¹`.
    fn density_scale(&self) -> f64 {
        1.0 / (2.0 * self.c1 * f64::from(self.n).sqrt())
    }
}

/// Per-pair clock rates of a θ family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockConfig {
    /// `(n + θ₁)/N`.
    pub birth_rate_p: f64,
    /// `(θ_{k+1} − θ_k)/N` for each gap (empty for a single θ).
    pub birth_rate_q: Vec<f64>,
    pub death_rate: f64,
}

impl ClockConfig {
    pub fn new(cfg: &ParticleConfig, thetas: &[f64]) -> Self {
        let nb = cfg.neighbor_count() as f64;
        Self {
            birth_rate_p: (f64::from(cfg.n) + thetas[0]) / nb,
            birth_rate_q: thetas.windows(2).map(|w| (w[1] - w[0]) / nb).collect(),
            death_rate: cfg.death(),
        }
    }

    /// Total jump rate with `k` occupied sites:
    /// `k·death + k·N·(birth_P + Σ birth_Q)`.
    pub fn total_rate(&self, k: usize, neighbor_count: usize) -> f64 {
        let births = self.birth_rate_p + self.birth_rate_q.iter().sum::<f64>();
        k as f64 * (self.death_rate + neighbor_count as f64 * births)
    }
}

/// Occupancy of one system over a window of lattice sites.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub config: ParticleConfig,
    /// Site index of `occupied[0]`.
    pub window_lo: i64,
    pub occupied: Vec<bool>,
}

impl ParticleState {
    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn window_hi(&self) -> i64 {
        self.window_lo + self.occupied.len() as i64 - 1
    }

    pub fn is_empty(&self) -> bool {
        !self.occupied.iter().any(|&o| o)
    }

    /// `ξ ⊆ other` (windows may differ).
    pub fn is_subset_of(&self, other: &ParticleState) -> bool {
        self.occupied.iter().enumerate().all(|(i, &o)| {
            !o || {
                let j = self.window_lo + i as i64 - other.window_lo;
                j >= 0 && (j as usize) < other.occupied.len() && other.occupied[j as usize]
            }
        })
    }

    /// Writes `t n c1 window_lo window_hi` and a run-length encoding of the
    /// occupancy: alternating run lengths starting with a vacant run.
    pub fn write_snapshot<W: Write>(&self, mut w: W, t: f64) -> io::Result<()> {
        writeln!(w, "{} {} {} {} {}", t, self.config.n, self.config.c1, self.window_lo, self.window_hi())?;
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &o in &self.occupied {
            if o == current {
                len += 1;
            } else {
                runs.push(len.to_string());
                current = o;
                len = 1;
            }
        }
        runs.push(len.to_string());
        writeln!(w, "{}", runs.join(" "))
    }
}

/// Blockwise initial configuration: block `k` covers `N` sites starting at
/// site `k·N`; with `m = ⌊2·c1·n^{1/2}·f₀(x_k)⌋` evaluated at the block's
/// left end `x_k = k·N·n⁻²`, its first `m + 1` sites are occupied when
/// `m ≥ 1` and none otherwise.
pub fn init_particles(f0: &InitialCondition, cfg: &ParticleConfig) -> Result<ParticleState> {
    cfg.validate()?;
    let (Some(l), Some(r)) = f0.support() else {
        return Err(Error::Precondition("particle initial data must be compactly supported".into()));
    };
    let nb = cfg.neighbor_count() as i64;
    let dx = cfg.site_dx();
    let k_lo = (l / (nb as f64 * dx)).floor() as i64 - 1;
    let k_hi = (r / (nb as f64 * dx)).ceil() as i64 + 1;
    let pad = 2 * nb;
    let window_lo = k_lo * nb - pad;
    let len = ((k_hi + 1) * nb + pad - window_lo) as usize;
    let mut occupied = vec![false; len];
    let height = 2.0 * cfg.c1 * f64::from(cfg.n).sqrt();
    for k in k_lo..=k_hi {
        let x = (k * nb) as f64 * dx;
        let v = f0.eval(x, dx);
        precondition(v.is_finite() && v >= 0.0, format!("f0({x}) = {v} is not a finite nonnegative value"))?;
        let m = (height * v).floor() as i64;
        if m >= 1 {
            let start = (k * nb - window_lo) as usize;
            for s in start..start + (m + 1).min(nb) as usize {
                occupied[s] = true;
            }
        }
    }
    Ok(ParticleState { config: *cfg, window_lo, occupied })
}

/// Neighbour-sum density on the site lattice (`dx = n⁻²`).
pub fn approx_density(xi: &ParticleState) -> Field {
    density_of(&xi.config, xi.window_lo, xi.occupied.iter().map(|&o| o as u32))
}

/// [`approx_density`] sampled at the grid points `k·dx` of its window.
pub fn approx_density_sampled(xi: &ParticleState, dx: f64) -> Result<Field> {
    let f = approx_density(xi);
    f.resample(f.origin(), f.end(), dx)
}

fn density_of(cfg: &ParticleConfig, window_lo: i64, occ: impl Iterator<Item = u32>) -> Field {
    let occ: Vec<u32> = occ.collect();
    let (a, b) = cfg.offsets();
    let len = occ.len();
    let mut prefix = vec![0u64; len + 1];
    for i in 0..len {
        prefix[i + 1] = prefix[i] + u64::from(occ[i]);
    }
    let scale = cfg.density_scale();
    let values = (0..len as i64)
        .map(|z| {
            let lo = (z - a).clamp(0, len as i64) as usize;
            let hi = (z + b + 1).clamp(0, len as i64) as usize;
            (prefix[hi] - prefix[lo]) as f64 * scale
        })
        .collect();
    Field::from_cells(window_lo, cfg.site_dx(), values)
}

/// Samples of one system of a particle run.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrajectory {
    pub theta: f64,
    pub times: Vec<f64>,
    /// Density at each sample time.
    pub densities: Vec<Field>,
    pub r0: Vec<ExtendedReal>,
    pub counts: Vec<usize>,
    pub final_state: ParticleState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRun {
    /// One trajectory per θ, in increasing θ order.
    pub systems: Vec<ParticleTrajectory>,
    pub events: u64,
    /// Sites whose membership pattern across the family was not nested
    /// after an event.
    pub nesting_violations: u64,
    /// First time every system is empty.
    pub extinction_time: ExtendedReal,
}

/// Event-driven family simulation on a shared event stream.
struct Family {
    cfg: ParticleConfig,
    m: usize,
    window_lo: i64,
    masks: Vec<u64>,
    /// Sites with a nonzero mask.
    union: Vec<i64>,
    /// Position in `union`, or `u32::MAX`.
    pos: Vec<u32>,
}

impl Family {
    fn new(xi0: &ParticleState, m: usize) -> Self {
        let full = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
        let masks: Vec<u64> = xi0.occupied.iter().map(|&o| if o { full } else { 0 }).collect();
        let mut fam = Self {
            cfg: xi0.config,
            m,
            window_lo: xi0.window_lo,
            pos: vec![u32::MAX; masks.len()],
            masks,
            union: Vec::new(),
        };
        for i in 0..fam.masks.len() {
            if fam.masks[i] != 0 {
                fam.pos[i] = fam.union.len() as u32;
                fam.union.push(fam.window_lo + i as i64);
            }
        }
        fam
    }

    fn idx(&self, site: i64) -> usize {
        (site - self.window_lo) as usize
    }

    fn ensure_room(&mut self, site: i64) {
        let nb = self.cfg.neighbor_count() as i64;
        let len = self.masks.len() as i64;
        let grow = (len / 2).max(4 * nb) as usize;
        if site - self.window_lo < nb {
            let mut masks = vec![0u64; grow];
            masks.extend_from_slice(&self.masks);
            self.masks = masks;
            let mut pos = vec![u32::MAX; grow];
            pos.extend_from_slice(&self.pos);
            self.pos = pos;
            self.window_lo -= grow as i64;
        }
        if self.window_lo + self.masks.len() as i64 - 1 - site < nb {
            self.masks.resize(self.masks.len() + grow, 0);
            self.pos.resize(self.pos.len() + grow, u32::MAX);
        }
    }

    fn set_mask(&mut self, site: i64, mask: u64) {
        let i = self.idx(site);
        let was = self.masks[i];
        self.masks[i] = mask;
        if was == 0 && mask != 0 {
            self.pos[i] = self.union.len() as u32;
            self.union.push(site);
        } else if was != 0 && mask == 0 {
            let p = self.pos[i] as usize;
            let last = *self.union.last().expect("union holds the site");
            self.union.swap_remove(p);
            if last != site {
                let li = self.idx(last);
                self.pos[li] = p as u32;
            }
            self.pos[i] = u32::MAX;
        }
    }

    /// Membership across the family must be upward closed in θ.
    fn nested(&self, site: i64) -> bool {
        let mask = self.masks[self.idx(site)];
        if mask == 0 {
            return true;
        }
        let full = if self.m == 64 { u64::MAX } else { (1u64 << self.m) - 1 };
        let low = mask & mask.wrapping_neg();
        mask == full & !(low - 1)
    }

    fn state(&self, j: usize) -> ParticleState {
        ParticleState {
            config: self.cfg,
            window_lo: self.window_lo,
            occupied: self.masks.iter().map(|&mk| mk >> j & 1 == 1).collect(),
        }
    }

    fn density(&self, j: usize) -> Field {
        density_of(&self.cfg, self.window_lo, self.masks.iter().map(|&mk| (mk >> j & 1) as u32))
    }
}

/// Shared-clock simulation of the nested family `θ₁ < … < θ_m` from one
/// initial configuration, recording densities at `sample_times`.
pub fn couple_theta_star_particles(
    xi0: &ParticleState,
    thetas: &[f64],
    t_end: f64,
    sample_times: &[f64],
    seed: u64,
) -> Result<ParticleRun> {
    let cfg = xi0.config;
    cfg.validate()?;
    precondition(!thetas.is_empty() && thetas.len() <= MAX_FAMILY, "need between 1 and 64 theta values")?;
    precondition(
        thetas.windows(2).all(|w| w[0] < w[1]),
        format!("theta values must be strictly increasing, got {thetas:?}"),
    )?;
    precondition(thetas.iter().all(|t| t.is_finite() && f64::from(cfg.n) + t >= 0.0), "birth rates must be nonnegative")?;
    precondition(t_end > 0.0, format!("particle horizon must be positive, got {t_end}"))?;
    for &s in sample_times {
        precondition((0.0..=t_end).contains(&s), format!("sample time {s} outside [0, {t_end}]"))?;
    }
    let m = thetas.len();
    let clocks = ClockConfig::new(&cfg, thetas);
    let nb = cfg.neighbor_count();
    let (a, b) = cfg.offsets();
    // per-source rates of each event category
    let death = clocks.death_rate;
    let p_rate = clocks.birth_rate_p * nb as f64;
    let q_rates: Vec<f64> = clocks.birth_rate_q.iter().map(|q| q * nb as f64).collect();
    let per_source = death + p_rate + q_rates.iter().sum::<f64>();
    // systems above gap k
    let above: Vec<u64> = (0..m.saturating_sub(1))
        .map(|k| {
            let full = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
            full & !((1u64 << (k + 1)) - 1)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PARTICLE_STREAM);
    let mut fam = Family::new(xi0, m);
    let mut samples: Vec<f64> = sample_times.to_vec();
    samples.sort_by(f64::total_cmp);
    let mut trajs: Vec<ParticleTrajectory> = thetas
        .iter()
        .map(|&theta| ParticleTrajectory {
            theta,
            times: Vec::new(),
            densities: Vec::new(),
            r0: Vec::new(),
            counts: Vec::new(),
            final_state: xi0.clone(),
        })
        .collect();
    let record = |fam: &Family, t: f64, trajs: &mut Vec<ParticleTrajectory>| {
        for (j, tr) in trajs.iter_mut().enumerate() {
            let d = fam.density(j);
            tr.times.push(t);
            tr.r0.push(right_marker(&d));
            tr.counts.push(fam.masks.iter().filter(|&&mk| mk >> j & 1 == 1).count());
            tr.densities.push(d);
        }
    };

    let mut t = 0.0;
    let mut next = 0;
    let mut events = 0u64;
    let mut violations = 0u64;
    let mut extinction_time = if fam.union.is_empty() { ExtendedReal::Finite(0.0) } else { ExtendedReal::PosInf };
    loop {
        let k = fam.union.len();
        let dt = if k == 0 || per_source == 0.0 {
            f64::INFINITY
        } else {
            let e: f64 = Exp1.sample(&mut rng);
            e / (k as f64 * per_source)
        };
        let t_next = t + dt;
        while next < samples.len() && samples[next] < t_next.min(f64::MAX) {
            record(&fam, samples[next], &mut trajs);
            next += 1;
        }
        if t_next > t_end {
            break;
        }
        t = t_next;
        events += 1;
        if events > cfg.event_budget {
            return Err(Error::EventBudget { budget: cfg.event_budget, time: t });
        }
        let x = fam.union[rng.random_range(0..k)];
        let mx = fam.masks[fam.idx(x)];
        let u: f64 = rng.random::<f64>() * per_source;
        if u < death {
            fam.set_mask(x, 0);
            if fam.union.is_empty() {
                extinction_time = ExtendedReal::Finite(t);
            }
            continue;
        }
        let responders = if u < death + p_rate {
            mx
        } else {
            let mut acc = death + p_rate;
            let mut gap = q_rates.len() - 1;
            for (g, q) in q_rates.iter().enumerate() {
                acc += q;
                if u < acc {
                    gap = g;
                    break;
                }
            }
            mx & above[gap]
        };
        let y = x + rng.random_range(-a..=b);
        if responders == 0 {
            continue;
        }
        fam.ensure_room(y);
        let my = fam.masks[fam.idx(y)];
        if my | responders != my {
            fam.set_mask(y, my | responders);
            if !fam.nested(y) {
                violations += 1;
            }
        }
    }
    while next < samples.len() {
        record(&fam, samples[next], &mut trajs);
        next += 1;
    }
    for (j, tr) in trajs.iter_mut().enumerate() {
        tr.final_state = fam.state(j);
    }
    Ok(ParticleRun { systems: trajs, events, nesting_violations: violations, extinction_time })
}

/// Single-θ run.
pub fn simulate_particles(
    xi0: &ParticleState,
    theta: f64,
    t_end: f64,
    sample_times: &[f64],
    seed: u64,
) -> Result<ParticleRun> {
    couple_theta_star_particles(xi0, &[theta], t_end, sample_times, seed)
}

/// Constants `(a, c)` of the scaling `A(t, y) = a·u(a·t, c·y)` between the
/// density limit `∂A = (c1²/6)A_yy + θA − A² + √(2A)Ẇ` and
/// `∂u = u_xx + (θ/a)u − u² + √u Ẇ`: `a = c²/(6/c1²)`, `a² = 2c`.
pub fn density_scaling(c1: f64) -> (f64, f64) {
    let k = c1 * c1 / 6.0;
    // a = k c², a² = 2c  ⇒  k² c⁴ = 2c  ⇒  c = (2/k²)^{1/3}
    let c = (2.0 / (k * k)).cbrt();
    (k * c * c, c)
}

/// Particle-versus-grid comparison of the Laplace functional
/// `E[exp(−2⟨A_T, f₂⟩)]`, plus mean masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleComparison {
    pub n: u32,
    pub theta: f64,
    pub t_end: f64,
    pub particle: Estimate,
    pub spde: Estimate,
    pub discrepancy: f64,
    pub joint_std_error: f64,
    pub particle_mass: Estimate,
    pub spde_mass: Estimate,
}

/// Runs `particle_replicas` particle systems from `f0` at scale `cfg` and
/// `spde_replicas` grid solutions of the rescaled equation, all in particle
/// units: the grid run uses `θ/a`, horizon `a·T` and data `f₀(·/c)/a`, and
/// its functional is `(a/c)⟨u, f₂(·/c)⟩` (see [`density_scaling`]).
#[allow(clippy::too_many_arguments)]
pub fn particle_vs_spde(
    f0: &InitialCondition,
    theta: f64,
    cfg: &ParticleConfig,
    grid: &GridSpec,
    t_end: f64,
    particle_replicas: usize,
    spde_replicas: usize,
    seed: u64,
) -> Result<ParticleComparison> {
    precondition(particle_replicas >= 2 && spde_replicas >= 2, "need at least 2 replicas per side")?;
    let particle = particle_functional(f0, theta, cfg, t_end, particle_replicas, seed)?;
    let spde = spde_functional(f0, theta, cfg.c1, grid, t_end, spde_replicas, seed)?;
    let (p_lap, p_mass) = particle;
    let (s_lap, s_mass) = spde;
    Ok(ParticleComparison {
        n: cfg.n,
        theta,
        t_end,
        discrepancy: p_lap.mean - s_lap.mean,
        joint_std_error: joint_std_error(&[p_lap.std_error, s_lap.std_error]),
        particle: p_lap,
        spde: s_lap,
        particle_mass: p_mass,
        spde_mass: s_mass,
    })
}

/// `(E[exp(−2⟨A_T, f₂⟩)], E[⟨A_T, 1⟩])` over particle replicas; replica `r`
/// uses seed `seed + r`.
pub fn particle_functional(
    f0: &InitialCondition,
    theta: f64,
    cfg: &ParticleConfig,
    t_end: f64,
    replicas: usize,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    let xi0 = init_particles(f0, cfg)?;
    let out = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let run = simulate_particles(&xi0, theta, t_end, &[t_end], replica_seed(seed, r))?;
            let d = &run.systems[0].densities[0];
            let f2 = render(&InitialCondition::Bump, d.origin(), d.end(), d.dx())?;
            Ok((laplace(d, &f2)?, d.mass()))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (lap, mass): (Vec<f64>, Vec<f64>) = out.into_iter().unzip();
    Ok((Estimate::from_samples(&lap), Estimate::from_samples(&mass)))
}

/// The grid side of [`particle_vs_spde`], reported in particle units.
pub fn spde_functional(
    f0: &InitialCondition,
    theta: f64,
    c1: f64,
    grid: &GridSpec,
    t_end: f64,
    replicas: usize,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    let (a, c) = density_scaling(c1);
    let (Some(l), Some(r)) = f0.support() else {
        return Err(Error::Precondition("initial data must be compactly supported".into()));
    };
    let u0 = render(f0, l, r, grid.dx / c)?;
    let u0 = Field::new(u0.origin() * c, grid.dx, u0.values().iter().map(|v| v / a).collect())?;
    let ic = InitialCondition::Custom(u0);
    let p = SpdeParams::kpp(theta / a);
    let out = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let tr = run_single(&ic, &p, grid, a * t_end, &[], NoiseStream::new(replica_seed(seed, rep), 5))?;
            let u = &tr.final_field;
            let f2 = Field::from_fn(u.origin(), u.end(), u.dx(), |x| (1.0 - (x / c).abs()).max(0.0))?;
            let pair = a / c * pairing(u, &f2)?;
            Ok(((-crate::duality::DUALITY_EXPONENT_SCALE * pair).exp(), a / c * u.mass()))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (lap, mass): (Vec<f64>, Vec<f64>) = out.into_iter().unzip();
    Ok((Estimate::from_samples(&lap), Estimate::from_samples(&mass)))
}
