//! Explicit stochastic stepping of
//! `∂u = Δu + α + (θ − β)u − γu² + noise_amp·√u·Ẇ` on a lattice.
//!
//! A plain run is the one-component case of the coupled engine in
//! [`crate::engine`], so a component of a coupled system and a plain run
//! driven by the same [`NoiseStream`] are bit-identical.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, Component, CoupledSystem};
use crate::error::{precondition, Error, Result};
use crate::field::{ExtendedReal, Field};
use crate::initial::InitialCondition;
use crate::noise::NoiseStream;
use crate::stats::Estimate;

/// A coefficient of the equation: constant, a fixed spatial profile (zero
/// outside its window), or an arbitrary function of `(t, x)`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Profile(Field),
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl Coefficient {
    pub fn zero() -> Self {
        Coefficient::Constant(0.0)
    }

    pub fn function(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Function(Arc::new(f))
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(c) => Some(*c),
            _ => None,
        }
    }

    /// True only when the coefficient is provably zero everywhere.
    pub fn is_zero(&self) -> bool {
        match self {
            Coefficient::Constant(c) => *c == 0.0,
            Coefficient::Profile(f) => f.is_zero(),
            Coefficient::Function(_) => false,
        }
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Profile(f) => f.value_at(x),
            Coefficient::Function(f) => f(t, x),
        }
    }

    /// Window outside of which the coefficient vanishes, when known.
    pub(crate) fn profile_window(&self) -> Option<(f64, f64)> {
        match self {
            Coefficient::Profile(f) if !f.is_zero() => Some((f.origin(), f.end())),
            _ => None,
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Profile(p) => write!(f, "Profile([{}, {}], dx={})", p.origin(), p.end(), p.dx()),
            Coefficient::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl From<f64> for Coefficient {
    fn from(c: f64) -> Self {
        Coefficient::Constant(c)
    }
}

/// Coefficients of the equation.
#[derive(Debug, Clone)]
pub struct SpdeParams {
    pub theta: f64,
    /// Immigration rate.
    pub alpha: Coefficient,
    /// Extra annihilation rate.
    pub beta: Coefficient,
    /// Overcrowding rate.
    pub gamma: Coefficient,
    pub noise_amp: f64,
}

impl SpdeParams {
    /// `∂u = Δu + θu − u² + √u Ẇ`.
    pub fn kpp(theta: f64) -> Self {
        Self {
            theta,
            alpha: Coefficient::zero(),
            beta: Coefficient::zero(),
            gamma: Coefficient::Constant(1.0),
            noise_amp: 1.0,
        }
    }

    /// Same coefficients with the noise switched off.
    pub fn deterministic(self) -> Self {
        Self { noise_amp: 0.0, ..self }
    }

    pub fn with_alpha(self, alpha: impl Into<Coefficient>) -> Self {
        Self { alpha: alpha.into(), ..self }
    }

    pub fn with_beta(self, beta: impl Into<Coefficient>) -> Self {
        Self { beta: beta.into(), ..self }
    }

    pub fn with_gamma(self, gamma: impl Into<Coefficient>) -> Self {
        Self { gamma: gamma.into(), ..self }
    }

    pub fn with_noise_amp(self, noise_amp: f64) -> Self {
        Self { noise_amp, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        precondition(
            self.theta.is_finite() && self.theta > 0.0,
            format!("theta must be positive, got {}", self.theta),
        )?;
        precondition(
            self.noise_amp.is_finite() && self.noise_amp >= 0.0,
            format!("noise_amp must be nonnegative, got {}", self.noise_amp),
        )?;
        for (name, c) in [("alpha", &self.alpha), ("beta", &self.beta), ("gamma", &self.gamma)] {
            if let Some(v) = c.as_constant() {
                precondition(v.is_finite() && v >= 0.0, format!("{name} must be nonnegative, got {v}"))?;
            }
        }
        Ok(())
    }
}

/// Which front a trailing window follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrontSide {
    Right,
    Left,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WindowPolicy {
    /// Fixed window `[lo, hi]` with zero-Dirichlet ghosts outside.
    Fixed { lo: f64, hi: f64 },
    /// Grows by `left_pad`/`right_pad` cells whenever a positive cell comes
    /// within half a pad of an edge.
    Moving { left_pad: usize, right_pad: usize },
    /// For data that is saturated on one side (ramp initial data): follows
    /// the front on `side`, keeping `behind` length units of bulk and
    /// trimming the rest. The cut-off side carries a zero boundary value.
    Trailing { behind: f64, pad: usize, side: FrontSide },
}

/// How the `noise_amp·√u·Ẇ` term is discretised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NoiseScheme {
    /// Deterministic Euler step, clamped at 0, followed by the exact
    /// transition of the cell-wise Feller diffusion `dv = amp·√(v/dx)·dB`
    /// (Poisson–Gamma mixture with an atom at 0). Same per-step mean and
    /// variance as Euler–Maruyama, but newly reached cells carrying tiny
    /// mass die with probability close to one, so the support — and with it
    /// the markers — moves at a finite speed.
    #[default]
    Feller,
    /// `u′ = max(0, u + dt·drift + amp·√u·dW)` with Gaussian `dW`. The
    /// Laplacian puts noiseless mass into every empty neighbour, so the
    /// support grows by one cell per step.
    EulerMaruyama,
}

/// Lattice spacing, time step, window policy and noise scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dx: f64,
    pub dt: f64,
    pub window: WindowPolicy,
    #[serde(default)]
    pub scheme: NoiseScheme,
}

pub const DEFAULT_DX: f64 = 0.1;
pub const DEFAULT_DT: f64 = 0.002;
pub const DEFAULT_PAD: usize = 64;
/// Bulk kept behind a followed front, in length units.
pub const DEFAULT_BEHIND: f64 = 10.0;

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            dx: DEFAULT_DX,
            dt: DEFAULT_DT,
            window: WindowPolicy::Moving { left_pad: DEFAULT_PAD, right_pad: DEFAULT_PAD },
            scheme: NoiseScheme::Feller,
        }
    }
}

impl GridSpec {
    pub fn new(dx: f64, dt: f64) -> Self {
        Self { dx, dt, ..Self::default() }
    }

    pub fn with_window(self, window: WindowPolicy) -> Self {
        Self { window, ..self }
    }

    pub fn with_scheme(self, scheme: NoiseScheme) -> Self {
        Self { scheme, ..self }
    }

    pub fn fixed(self, lo: f64, hi: f64) -> Self {
        self.with_window(WindowPolicy::Fixed { lo, hi })
    }

    /// Trailing window following the right front (ramp data on the left).
    pub fn trailing_right(self) -> Self {
        self.with_window(WindowPolicy::Trailing {
            behind: DEFAULT_BEHIND,
            pad: DEFAULT_PAD,
            side: FrontSide::Right,
        })
    }

    /// Trailing window following the left front (ramp data on the right).
    pub fn trailing_left(self) -> Self {
        self.with_window(WindowPolicy::Trailing {
            behind: DEFAULT_BEHIND,
            pad: DEFAULT_PAD,
            side: FrontSide::Left,
        })
    }

    pub fn validate(&self) -> Result<()> {
        precondition(self.dx.is_finite() && self.dx > 0.0, format!("dx must be positive, got {}", self.dx))?;
        precondition(self.dt.is_finite() && self.dt > 0.0, format!("dt must be positive, got {}", self.dt))?;
        precondition(
            self.dt <= 0.5 * self.dx * self.dx * (1.0 + 1e-12),
            format!("dt = {} violates dt <= dx^2/2 = {}", self.dt, 0.5 * self.dx * self.dx),
        )?;
        match &self.window {
            WindowPolicy::Fixed { lo, hi } => precondition(
                lo.is_finite() && hi.is_finite() && hi - lo >= self.dx,
                format!("fixed window [{lo}, {hi}] must span at least one cell"),
            ),
            WindowPolicy::Moving { left_pad, right_pad } => precondition(
                *left_pad >= 2 && *right_pad >= 2,
                "moving-window pads must be at least 2 cells",
            ),
            WindowPolicy::Trailing { behind, pad, .. } => precondition(
                *pad >= 2 && behind.is_finite() && *behind > 0.0,
                "trailing window needs pad >= 2 and behind > 0",
            ),
        }
    }
}

/// Time series of one (possibly composite) field.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Sample times `k * dt`, starting at 0.
    pub times: Vec<f64>,
    pub r0: Vec<ExtendedReal>,
    pub l0: Vec<ExtendedReal>,
    pub mass: Vec<f64>,
    /// Snapshots at the requested times (snapped to the step grid).
    pub snapshots: Vec<(f64, Field)>,
    /// First sample time at which the field is identically zero.
    pub extinction_time: ExtendedReal,
    /// State at the last sample time.
    pub final_field: Field,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    pub fn final_r0(&self) -> ExtendedReal {
        *self.r0.last().expect("trajectory has at least one sample")
    }

    /// Index of the sample nearest to `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let dt = if self.times.len() > 1 { self.times[1] - self.times[0] } else { 1.0 };
        ((t / dt).round().max(0.0) as usize).min(self.times.len() - 1)
    }

    pub fn r0_at(&self, t: f64) -> ExtendedReal {
        self.r0[self.index_at(t)]
    }

    pub fn snapshot(&self, t: f64) -> Option<&Field> {
        self.snapshots
            .iter()
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
            .map(|(_, f)| f)
    }

    pub fn went_extinct(&self) -> bool {
        self.extinction_time.is_finite()
    }

    /// CSV with columns `t,R0,L0,mass,extinct`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,R0,L0,mass,extinct")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.times[i],
                self.r0[i],
                self.l0[i],
                self.mass[i],
                u8::from(self.mass[i] == 0.0)
            )?;
        }
        Ok(())
    }
}

/// One Euler–Maruyama step on a fixed window with zero ghosts:
/// `u′ᵢ = max(0, uᵢ + dt·[Δ_dx u + αᵢ + (θ−βᵢ)uᵢ − γᵢuᵢ²] + noise_amp·√uᵢ·dWᵢ)`.
/// `dw` holds the noise increments (variance `dt/dx`), one per cell.
/// [`simulate`] uses the scheme selected in the grid instead.
pub fn step(u: &Field, p: &SpdeParams, t: f64, grid: &GridSpec, dw: &[f64]) -> Result<Field> {
    p.validate()?;
    grid.validate()?;
    precondition(
        (u.dx() - grid.dx).abs() <= 1e-12 * grid.dx,
        format!("field dx {} differs from grid dx {}", u.dx(), grid.dx),
    )?;
    precondition(dw.len() == u.len(), format!("{} increments for {} cells", dw.len(), u.len()))?;
    let first = u
        .grid_offset()
        .ok_or_else(|| Error::GridMismatch("field origin is not on the lattice dx*Z".into()))?;
    let component = Component::plain("u", None, p.clone(), NoiseStream::new(0, 0));
    let mut out = vec![0.0; u.len()];
    let coefs = engine::CoefBuffers::evaluate(&component.params, t, first, u.len(), grid.dx)?;
    let state = [u.values().to_vec()];
    engine::advance_component(&engine::Kernel {
        component: &component,
        index: 0,
        state: &state,
        coefs: &coefs,
        dw: Some(dw),
        feller: None,
        dx: grid.dx,
        dt: grid.dt,
        t,
        step: 0,
        first,
    }, &mut out)?;
    Ok(Field::from_cells(first, grid.dx, out))
}

/// Runs the equation from `ic` up to time `t_end`, recording series every
/// step and snapshots at `snapshot_times`.
pub fn simulate(
    ic: &InitialCondition,
    p: &SpdeParams,
    grid: &GridSpec,
    t_end: f64,
    snapshot_times: &[f64],
    noise: NoiseStream,
) -> Result<Trajectory> {
    precondition(t_end > 0.0, format!("simulation horizon must be positive, got {t_end}"))?;
    run_single(ic, p, grid, t_end, snapshot_times, noise)
}

/// [`simulate`] without the positivity check on the horizon; `t_end = 0`
/// returns the rendered initial state.
pub(crate) fn run_single(
    ic: &InitialCondition,
    p: &SpdeParams,
    grid: &GridSpec,
    t_end: f64,
    snapshot_times: &[f64],
    noise: NoiseStream,
) -> Result<Trajectory> {
    let mut system = CoupledSystem::new();
    let u = system.add_component(Component::plain("u", Some(ic.clone()), p.clone(), noise))?;
    system.add_view("u", &[u])?;
    let mut run = engine::run(&system, grid, t_end, snapshot_times)?;
    Ok(run.views.swap_remove(0))
}

/// Fraction of replicas extinct by time `t_end`, with binomial standard
/// error. Replica `r` uses seed `seed + r`.
pub fn extinction_probability(
    ic: &InitialCondition,
    p: &SpdeParams,
    grid: &GridSpec,
    t_end: f64,
    replicas: usize,
    seed: u64,
) -> Result<Estimate> {
    precondition(replicas >= 2, format!("need at least 2 replicas, got {replicas}"))?;
    let extinct = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let noise = NoiseStream::new(crate::replica_seed(seed, r), 0);
            simulate(ic, p, grid, t_end, &[], noise).map(|tr| tr.went_extinct())
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(Estimate::proportion(extinct.iter().filter(|&&e| e).count(), replicas))
}
