//! The initial-condition zoo and its rendering onto grids.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::field::{heavyside, Field};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialCondition {
    /// `eps * H_0(x - x0)`.
    Heavyside { eps: f64, x0: f64 },
    /// `0 ∨ (1 − |x|)`.
    Bump,
    /// `H_0(x + 1) + H_0(−x − 1)`.
    SplitHeavyside,
    /// `min(N, N·(−x)/dx)` for `x < 0`, zero on `x ≥ 0`; increases to the
    /// function that is `+∞` on the negative half-line.
    ZetaRamp { cap: f64 },
    /// `ZetaRamp(cap) + ψ`.
    ZetaRampPlus { cap: f64, psi: Field },
    /// Mirror image of [`InitialCondition::ZetaRamp`]: ramp on `x > 0`.
    ZetaRampRight { cap: f64 },
    /// `x ↦ inner(x − by)`.
    Shifted { inner: Box<InitialCondition>, by: f64 },
    /// `factor * inner`.
    Scaled { inner: Box<InitialCondition>, factor: f64 },
    /// `max(upper − lower, 0)`; the initial datum of the difference
    /// component in a monotone coupling.
    Difference { upper: Box<InitialCondition>, lower: Box<InitialCondition> },
    Custom(Field),
}

impl InitialCondition {
    pub fn shifted(self, by: f64) -> Self {
        InitialCondition::Shifted { inner: Box::new(self), by }
    }

    pub fn scaled(self, factor: f64) -> Self {
        InitialCondition::Scaled { inner: Box::new(self), factor }
    }

    /// Pointwise value; `dx` sets the ramp width of the ζ_N variants.
    pub fn eval(&self, x: f64, dx: f64) -> f64 {
        match self {
            InitialCondition::Heavyside { eps, x0 } => eps * heavyside(x - x0),
            InitialCondition::Bump => (1.0 - x.abs()).max(0.0),
            InitialCondition::SplitHeavyside => heavyside(x + 1.0) + heavyside(-x - 1.0),
            InitialCondition::ZetaRamp { cap } => zeta(-x, *cap, dx),
            InitialCondition::ZetaRampPlus { cap, psi } => zeta(-x, *cap, dx) + psi.value_at(x),
            InitialCondition::ZetaRampRight { cap } => zeta(x, *cap, dx),
            InitialCondition::Shifted { inner, by } => inner.eval(x - by, dx),
            InitialCondition::Scaled { inner, factor } => factor * inner.eval(x, dx),
            InitialCondition::Difference { upper, lower } => (upper.eval(x, dx) - lower.eval(x, dx)).max(0.0),
            InitialCondition::Custom(f) => f.value_at(x),
        }
    }

    /// Bounds of the support; `None` marks an unbounded side.
    pub fn support(&self) -> (Option<f64>, Option<f64>) {
        match self {
            InitialCondition::Heavyside { x0, .. } => (None, Some(*x0)),
            InitialCondition::Bump => (Some(-1.0), Some(1.0)),
            InitialCondition::SplitHeavyside => (None, None),
            InitialCondition::ZetaRamp { .. } => (None, Some(0.0)),
            InitialCondition::ZetaRampPlus { psi, .. } => (None, Some(psi.end().max(0.0))),
            InitialCondition::ZetaRampRight { .. } => (Some(0.0), None),
            InitialCondition::Shifted { inner, by } => {
                let (l, r) = inner.support();
                (l.map(|l| l + by), r.map(|r| r + by))
            }
            InitialCondition::Scaled { inner, .. } => inner.support(),
            InitialCondition::Difference { upper, .. } => upper.support(),
            InitialCondition::Custom(f) => (Some(f.origin()), Some(f.end())),
        }
    }
}

fn zeta(y: f64, cap: f64, dx: f64) -> f64 {
    if y > 0.0 {
        (cap * y / dx).min(cap)
    } else {
        0.0
    }
}

/// Evaluates `ic` at the aligned grid points `k * dx` of `[a, b]`.
pub fn render(ic: &InitialCondition, a: f64, b: f64, dx: f64) -> Result<Field> {
    precondition(a < b, format!("render window [{a}, {b}] is empty"))?;
    precondition(dx > 0.0, "render needs dx > 0")?;
    Field::from_fn(a, b, dx, |x| ic.eval(x, dx))
}
