//! Generic engine for triangular systems of coupled components.
//!
//! Component `c` solves
//!
//! ```text
//! ∂v_c = Δv_c + α_c + Σ_k a_k Π_{j∈F_k} v_j + (θ_c − β_c − γ_c v_c − Σ_m b_m v_{s_m}) v_c + amp_c √v_c Ẇ_c
//! ```
//!
//! where the immigration factors `F_k` and annihilation sources `s_m` index
//! earlier components only. Every component owns its noise stream. Views
//! (named sums of components, added in index order) are recorded, and
//! declared orders between views are checked cell-by-cell after every step.

use serde::Serialize;

use crate::error::{precondition, Error, Result};
use crate::field::{ExtendedReal, Field};
use crate::initial::InitialCondition;
use crate::noise::{feller_transition, NoiseGenerator, NoiseStream};
use crate::spde::{Coefficient, FrontSide, GridSpec, NoiseScheme, SpdeParams, Trajectory, WindowPolicy};

/// Largest admissible `(γu + Σ b·v)·dt` in one step.
pub const STABILITY_LIMIT: f64 = 0.5;

/// Immigration term `coef · Π factors` (empty product = 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Immigration {
    pub coef: f64,
    pub factors: Vec<usize>,
}

/// Extra death rate `coef · v_source`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annihilation {
    pub coef: f64,
    pub source: usize,
}

#[derive(Debug, Clone)]
pub struct Component {
    pub name: String,
    /// `None` starts the component at zero.
    pub initial: Option<InitialCondition>,
    pub params: SpdeParams,
    pub immigration: Vec<Immigration>,
    pub annihilation: Vec<Annihilation>,
    pub noise: NoiseStream,
}

impl Component {
    pub fn plain(
        name: impl Into<String>,
        initial: Option<InitialCondition>,
        params: SpdeParams,
        noise: NoiseStream,
    ) -> Self {
        Self {
            name: name.into(),
            initial,
            params,
            immigration: Vec::new(),
            annihilation: Vec::new(),
            noise,
        }
    }

    pub fn with_immigration(mut self, coef: f64, factors: &[usize]) -> Self {
        self.immigration.push(Immigration { coef, factors: factors.to_vec() });
        self
    }

    pub fn with_annihilation(mut self, coef: f64, source: usize) -> Self {
        self.annihilation.push(Annihilation { coef, source });
        self
    }
}

/// A named sum of components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct View {
    pub name: String,
    pub parts: Vec<usize>,
}

/// Declared pointwise order `view[lower] ≤ view[upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Order {
    pub lower: usize,
    pub upper: usize,
}

#[derive(Debug, Clone, Default)]
pub struct CoupledSystem {
    pub components: Vec<Component>,
    pub views: Vec<View>,
    pub orders: Vec<Order>,
}

impl CoupledSystem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a component; its wiring may only reference earlier ones.
    pub fn add_component(&mut self, c: Component) -> Result<usize> {
        let idx = self.components.len();
        for imm in &c.immigration {
            precondition(
                imm.coef.is_finite() && imm.coef >= 0.0,
                format!("component `{}`: immigration coefficient must be nonnegative", c.name),
            )?;
            precondition(
                imm.factors.iter().all(|&f| f < idx),
                format!("component `{}`: immigration must come from earlier components", c.name),
            )?;
        }
        for ann in &c.annihilation {
            precondition(
                ann.coef.is_finite() && ann.coef >= 0.0,
                format!("component `{}`: annihilation coefficient must be nonnegative", c.name),
            )?;
            precondition(
                ann.source < idx,
                format!("component `{}`: annihilation must come from earlier components", c.name),
            )?;
        }
        precondition(
            self.components.iter().all(|o| o.noise != c.noise),
            format!("component `{}` reuses the noise stream of another component", c.name),
        )?;
        c.params.validate()?;
        self.components.push(c);
        Ok(idx)
    }

    pub fn add_view(&mut self, name: impl Into<String>, parts: &[usize]) -> Result<usize> {
        let name = name.into();
        precondition(!parts.is_empty(), format!("view `{name}` has no parts"))?;
        precondition(
            parts.windows(2).all(|w| w[0] < w[1]) && parts.iter().all(|&p| p < self.components.len()),
            format!("view `{name}` must list existing components in increasing order"),
        )?;
        self.views.push(View { name, parts: parts.to_vec() });
        Ok(self.views.len() - 1)
    }

    pub fn require_order(&mut self, lower: usize, upper: usize) -> Result<()> {
        precondition(
            lower < self.views.len() && upper < self.views.len(),
            "order constraint references an unknown view",
        )?;
        self.orders.push(Order { lower, upper });
        Ok(())
    }

    pub fn view_index(&self, name: &str) -> Option<usize> {
        self.views.iter().position(|v| v.name == name)
    }

    /// Serializable description of the wiring (the reproducibility sidecar).
    pub fn wiring(&self) -> Wiring {
        Wiring {
            components: self
                .components
                .iter()
                .map(|c| ComponentWiring {
                    name: c.name.clone(),
                    initial: c.initial.as_ref().map(|ic| format!("{ic:?}")),
                    theta: c.params.theta,
                    alpha: format!("{:?}", c.params.alpha),
                    beta: format!("{:?}", c.params.beta),
                    gamma: format!("{:?}", c.params.gamma),
                    noise_amp: c.params.noise_amp,
                    noise: c.noise,
                    immigration: c.immigration.clone(),
                    annihilation: c.annihilation.clone(),
                })
                .collect(),
            views: self.views.clone(),
            orders: self.orders.clone(),
        }
    }

    fn has_sources(&self) -> bool {
        self.components.iter().any(|c| !c.params.alpha.is_zero())
            || self.components.iter().any(|c| c.immigration.iter().any(|i| i.factors.is_empty() && i.coef > 0.0))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentWiring {
    pub name: String,
    pub initial: Option<String>,
    pub theta: f64,
    pub alpha: String,
    pub beta: String,
    pub gamma: String,
    pub noise_amp: f64,
    pub noise: NoiseStream,
    pub immigration: Vec<Immigration>,
    pub annihilation: Vec<Annihilation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Wiring {
    pub components: Vec<ComponentWiring>,
    pub views: Vec<View>,
    pub orders: Vec<Order>,
}

/// Outcome of one declared order over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub lower: String,
    pub upper: String,
    /// Number of (step, cell) pairs where the order failed.
    pub violations: u64,
    /// `(t, x)` of the first failure.
    pub first_violation: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SystemRun {
    /// One trajectory per view, in declaration order.
    pub views: Vec<Trajectory>,
    pub orders: Vec<OrderReport>,
    pub steps: u64,
    /// First time at which every component is identically zero.
    pub extinction_time: ExtendedReal,
}

impl SystemRun {
    pub fn view(&self, system: &CoupledSystem, name: &str) -> Option<&Trajectory> {
        system.view_index(name).map(|i| &self.views[i])
    }

    pub fn total_violations(&self) -> u64 {
        self.orders.iter().map(|o| o.violations).sum()
    }
}

// ---------------------------------------------------------------------------
// kernel

pub(crate) enum CoefValues {
    Const(f64),
    Cells(Vec<f64>),
}

impl CoefValues {
    #[inline(always)]
    fn get(&self, i: usize) -> f64 {
        match self {
            CoefValues::Const(c) => *c,
            CoefValues::Cells(v) => v[i],
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            CoefValues::Const(c) => *c == 0.0,
            CoefValues::Cells(v) => v.iter().all(|&x| x == 0.0),
        }
    }

    fn evaluate(name: &str, c: &Coefficient, t: f64, first: i64, len: usize, dx: f64) -> Result<Self> {
        if let Some(v) = c.as_constant() {
            return Ok(CoefValues::Const(v));
        }
        let mut cells = Vec::with_capacity(len);
        for i in 0..len {
            let x = (first + i as i64) as f64 * dx;
            let v = c.eval(t, x);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Precondition(format!(
                    "coefficient {name} evaluates to {v} at t = {t}, x = {x}; it must be finite and nonnegative"
                )));
            }
            cells.push(v);
        }
        Ok(CoefValues::Cells(cells))
    }
}

pub(crate) struct CoefBuffers {
    alpha: CoefValues,
    beta: CoefValues,
    gamma: CoefValues,
    /// Window the cell buffers were evaluated on.
    key: (i64, usize),
}

impl CoefBuffers {
    pub(crate) fn evaluate(p: &SpdeParams, t: f64, first: i64, len: usize, dx: f64) -> Result<Self> {
        Ok(Self {
            alpha: CoefValues::evaluate("alpha", &p.alpha, t, first, len, dx)?,
            beta: CoefValues::evaluate("beta", &p.beta, t, first, len, dx)?,
            gamma: CoefValues::evaluate("gamma", &p.gamma, t, first, len, dx)?,
            key: (first, len),
        })
    }

    fn time_dependent(p: &SpdeParams) -> bool {
        [&p.alpha, &p.beta, &p.gamma].iter().any(|c| matches!(c, Coefficient::Function(_)))
    }
}

pub(crate) struct Kernel<'a> {
    pub component: &'a Component,
    pub index: usize,
    pub state: &'a [Vec<f64>],
    pub coefs: &'a CoefBuffers,
    /// Noise increments (variance `dt/dx`); read only at cells with `v > 0`.
    pub dw: Option<&'a [f64]>,
    /// Generator and rate `2dx/(amp² dt)` of the exact noise transition.
    pub feller: Option<(&'a NoiseGenerator, f64)>,
    pub dx: f64,
    pub dt: f64,
    pub t: f64,
    pub step: u64,
    pub first: i64,
}

/// Euler–Maruyama update of one component from beginning-of-step values.
pub(crate) fn advance_component(k: &Kernel<'_>, out: &mut [f64]) -> Result<()> {
    let c = k.component;
    let u = &k.state[k.index];
    let n = u.len();
    let inv_dx2 = 1.0 / (k.dx * k.dx);
    let theta = c.params.theta;
    let amp = c.params.noise_amp;
    let (alpha, beta, gamma) = (&k.coefs.alpha, &k.coefs.beta, &k.coefs.gamma);
    for i in 0..n {
        let ui = u[i];
        let l = if i > 0 { u[i - 1] } else { 0.0 };
        let r = if i + 1 < n { u[i + 1] } else { 0.0 };
        let mut source = alpha.get(i);
        for imm in &c.immigration {
            let mut p = imm.coef;
            for &f in &imm.factors {
                p *= k.state[f][i];
            }
            source += p;
        }
        if ui == 0.0 && l == 0.0 && r == 0.0 && source == 0.0 {
            out[i] = 0.0;
            continue;
        }
        let g = gamma.get(i);
        let mut kill = g * ui;
        for ann in &c.annihilation {
            kill += ann.coef * k.state[ann.source][i];
        }
        if kill * k.dt > STABILITY_LIMIT {
            return Err(Error::Stability { time: k.t, component: c.name.clone(), value: kill * k.dt });
        }
        let drift = (l - 2.0 * ui + r) * inv_dx2 + source + (theta - beta.get(i)) * ui - kill * ui;
        let mut next = ui + k.dt * drift;
        if ui > 0.0 && amp > 0.0 {
            if let Some(dw) = k.dw {
                next += amp * ui.sqrt() * dw[i];
            }
        }
        if !next.is_finite() {
            return Err(Error::NonFinite {
                step: k.step,
                time: k.t,
                x: (k.first + i as i64) as f64 * k.dx,
            });
        }
        next = next.max(0.0);
        if let Some((gen, lambda)) = k.feller {
            if next > 0.0 {
                next = feller_transition(next, lambda, &mut gen.cell_rng(k.step, k.first + i as i64));
            }
        }
        out[i] = next;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// run loop

/// Positive-cell range `(lo, hi)` of a slice.
fn support(v: &[f64]) -> Option<(usize, usize)> {
    let lo = v.iter().position(|&x| x > 0.0)?;
    let hi = v.iter().rposition(|&x| x > 0.0)?;
    Some((lo, hi))
}

fn union(a: Option<(usize, usize)>, b: Option<(usize, usize)>) -> Option<(usize, usize)> {
    match (a, b) {
        (Some((a0, a1)), Some((b0, b1))) => Some((a0.min(b0), a1.max(b1))),
        (x, None) | (None, x) => x,
    }
}

/// Initial lattice window `(first, last)` (absolute cell indices, inclusive).
pub fn initial_window(system: &CoupledSystem, grid: &GridSpec) -> Result<(i64, i64)> {
    let dx = grid.dx;
    let tol = 1e-6;
    let bounded = |side: &str| -> Result<Vec<(f64, f64)>> {
        let mut out = Vec::new();
        for c in &system.components {
            if let Some(ic) = &c.initial {
                match ic.support() {
                    (Some(l), Some(r)) => out.push((l, r)),
                    _ => {
                        return Err(Error::Precondition(format!(
                            "component `{}` has unbounded initial support; a {side} window cannot contain it",
                            c.name
                        )))
                    }
                }
            }
            if let Some(w) = c.params.alpha.profile_window() {
                out.push(w);
            }
        }
        Ok(out)
    };
    let (first, last) = match &grid.window {
        WindowPolicy::Fixed { lo, hi } => ((lo / dx - tol).ceil() as i64, (hi / dx + tol).floor() as i64),
        WindowPolicy::Moving { left_pad, right_pad } => {
            let spans = bounded("moving")?;
            let lo = spans.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
            let hi = spans.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
            (
                (lo / dx + tol).floor() as i64 - *left_pad as i64,
                (hi / dx - tol).ceil() as i64 + *right_pad as i64,
            )
        }
        WindowPolicy::Trailing { behind, pad, side } => {
            let anchor = trailing_anchor(system, *side)?;
            let behind_cells = (behind / dx).ceil() as i64;
            match side {
                FrontSide::Right => {
                    let a = (anchor / dx - tol).ceil() as i64;
                    (a - behind_cells, a + *pad as i64)
                }
                FrontSide::Left => {
                    let a = (anchor / dx + tol).floor() as i64;
                    (a - *pad as i64, a + behind_cells)
                }
            }
        }
    };
    precondition(last > first, "initial window must contain at least two cells")?;
    Ok((first, last))
}

/// Front position a trailing window starts from: the initial support edge
/// of the first component, or of the first component that has one.
fn trailing_anchor(system: &CoupledSystem, side: FrontSide) -> Result<f64> {
    for c in &system.components {
        if let Some(ic) = &c.initial {
            let (l, r) = ic.support();
            let edge = match side {
                FrontSide::Right => r,
                FrontSide::Left => l,
            };
            return edge.ok_or_else(|| {
                Error::Precondition(format!(
                    "component `{}` has no {side:?} support edge for a trailing window to follow",
                    c.name
                ))
            });
        }
    }
    Ok(0.0)
}

struct ViewRecorder {
    times: Vec<f64>,
    r0: Vec<ExtendedReal>,
    l0: Vec<ExtendedReal>,
    mass: Vec<f64>,
    snapshots: Vec<(f64, Field)>,
    extinction_time: ExtendedReal,
}

impl ViewRecorder {
    fn new(capacity: usize) -> Self {
        Self {
            times: Vec::with_capacity(capacity),
            r0: Vec::with_capacity(capacity),
            l0: Vec::with_capacity(capacity),
            mass: Vec::with_capacity(capacity),
            snapshots: Vec::new(),
            extinction_time: ExtendedReal::PosInf,
        }
    }

    fn record(&mut self, t: f64, values: &[f64], first: i64, dx: f64) {
        let origin = first as f64 * dx;
        self.times.push(t);
        match support(values) {
            Some((lo, hi)) => {
                self.r0.push(ExtendedReal::Finite(origin + hi as f64 * dx));
                self.l0.push(ExtendedReal::Finite(origin + lo as f64 * dx));
                let s: f64 = values[lo..=hi].iter().sum();
                let ends = if lo == 0 { values[0] } else { 0.0 }
                    + if hi == values.len() - 1 { values[hi] } else { 0.0 };
                self.mass.push((s - 0.5 * ends) * dx);
            }
            None => {
                self.r0.push(ExtendedReal::NegInf);
                self.l0.push(ExtendedReal::PosInf);
                self.mass.push(0.0);
                if self.extinction_time == ExtendedReal::PosInf {
                    self.extinction_time = ExtendedReal::Finite(t);
                }
            }
        }
    }
}

/// Per-run mutable state: window, component values and scratch buffers.
struct State {
    first: i64,
    comps: Vec<Vec<f64>>,
    next: Vec<Vec<f64>>,
    dw: Vec<Vec<f64>>,
    view_sums: Vec<Vec<f64>>,
    supports: Vec<Option<(usize, usize)>>,
}

impl State {
    fn len(&self) -> usize {
        self.comps[0].len()
    }

    fn grow(&mut self, left: usize, right: usize) {
        for v in self.comps.iter_mut() {
            if left > 0 {
                v.splice(0..0, std::iter::repeat_n(0.0, left));
            }
            v.resize(v.len() + right, 0.0);
        }
        let n = self.len();
        for v in self.next.iter_mut().chain(self.dw.iter_mut()).chain(self.view_sums.iter_mut()) {
            v.resize(n, 0.0);
        }
        self.first -= left as i64;
        for s in self.supports.iter_mut().flatten() {
            s.0 += left;
            s.1 += left;
        }
    }

    fn trim(&mut self, left: usize, right: usize) {
        let n = self.len();
        for v in self.comps.iter_mut() {
            v.truncate(n - right);
            v.drain(0..left);
        }
        let n = self.len();
        for v in self.next.iter_mut().chain(self.dw.iter_mut()).chain(self.view_sums.iter_mut()) {
            v.truncate(n);
        }
        self.first += left as i64;
        for c in 0..self.comps.len() {
            self.supports[c] = support(&self.comps[c]);
        }
    }

    fn fill_view_sums(&mut self, views: &[View]) {
        for (vi, view) in views.iter().enumerate() {
            if view.parts.len() == 1 {
                continue;
            }
            let sum = &mut self.view_sums[vi];
            sum.copy_from_slice(&self.comps[view.parts[0]]);
            for &p in &view.parts[1..] {
                for (s, x) in sum.iter_mut().zip(&self.comps[p]) {
                    *s += x;
                }
            }
        }
    }

    fn view_values<'a>(&'a self, views: &[View], vi: usize) -> &'a [f64] {
        let view = &views[vi];
        if view.parts.len() == 1 {
            &self.comps[view.parts[0]]
        } else {
            &self.view_sums[vi]
        }
    }

    /// Applies the window policy after a step.
    fn adjust_window(&mut self, policy: &WindowPolicy, dx: f64) {
        let n = self.len();
        let all = self.supports.iter().fold(None, |acc, s| union(acc, *s));
        let Some((lo, hi)) = all else { return };
        match policy {
            WindowPolicy::Fixed { .. } => {}
            WindowPolicy::Moving { left_pad, right_pad } => {
                let left = if lo < left_pad / 2 { *left_pad } else { 0 };
                let right = if n - 1 - hi < right_pad / 2 { *right_pad } else { 0 };
                if left + right > 0 {
                    self.grow(left, right);
                }
            }
            WindowPolicy::Trailing { behind, pad, side } => {
                let behind_cells = (behind / dx).ceil() as usize;
                let anchor = self.supports[0].unwrap_or((lo, hi));
                match side {
                    FrontSide::Right => {
                        if n - 1 - hi < pad / 2 {
                            self.grow(0, *pad);
                        }
                        let cut = anchor.1.saturating_sub(behind_cells);
                        if cut > *pad {
                            self.trim(cut, 0);
                        }
                    }
                    FrontSide::Left => {
                        if lo < pad / 2 {
                            self.grow(*pad, 0);
                        }
                        let n = self.len();
                        let anchor_lo = self.supports[0].map_or(lo, |s| s.0);
                        let keep_to = anchor_lo + behind_cells;
                        if keep_to + 1 + pad < n {
                            self.trim(0, n - 1 - keep_to);
                        }
                    }
                }
            }
        }
    }
}

/// Steps `system` to `t_end`, recording every view each step and
/// snapshots at `snapshot_times` (snapped to the step grid).
pub fn run(system: &CoupledSystem, grid: &GridSpec, t_end: f64, snapshot_times: &[f64]) -> Result<SystemRun> {
    grid.validate()?;
    precondition(!system.components.is_empty(), "coupled system has no components")?;
    precondition(!system.views.is_empty(), "coupled system has no views")?;
    precondition(t_end.is_finite() && t_end >= 0.0, format!("invalid horizon {t_end}"))?;
    for &s in snapshot_times {
        precondition(
            s >= 0.0 && s <= t_end + 0.5 * grid.dt,
            format!("snapshot time {s} outside [0, {t_end}]"),
        )?;
    }
    let (dx, dt) = (grid.dx, grid.dt);
    let n_steps = (t_end / dt).round() as u64;
    let (first, last) = initial_window(system, grid)?;
    let n = (last - first + 1) as usize;

    let mut comps = Vec::with_capacity(system.components.len());
    for c in &system.components {
        let v: Vec<f64> = match &c.initial {
            Some(ic) => (0..n)
                .map(|i| ic.eval((first + i as i64) as f64 * dx, dx))
                .collect(),
            None => vec![0.0; n],
        };
        if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::InvalidField(format!(
                "initial value {x} of component `{}` at x = {} is negative or non-finite",
                c.name,
                (first + i as i64) as f64 * dx
            )));
        }
        comps.push(v);
    }
    let nc = comps.len();
    let nv = system.views.len();
    let supports = comps.iter().map(|v| support(v)).collect();
    let mut st = State {
        first,
        comps,
        next: vec![vec![0.0; n]; nc],
        dw: vec![vec![0.0; n]; nc],
        view_sums: vec![vec![0.0; n]; nv],
        supports,
    };
    let mut generators: Vec<NoiseGenerator> = system.components.iter().map(|c| c.noise.generator()).collect();
    let mut coefs: Vec<Option<CoefBuffers>> = (0..nc).map(|_| None).collect();
    let time_dependent: Vec<bool> = system.components.iter().map(|c| CoefBuffers::time_dependent(&c.params)).collect();
    let sd = (dt / dx).sqrt();
    let has_sources = system.has_sources();

    let mut snaps: Vec<(u64, f64)> = snapshot_times
        .iter()
        .map(|&s| ((s / dt).round() as u64, s))
        .collect();
    snaps.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut next_snap = 0;

    let cap = n_steps as usize + 1;
    let mut recorders: Vec<ViewRecorder> = (0..nv).map(|_| ViewRecorder::new(cap)).collect();
    let mut orders: Vec<OrderReport> = system
        .orders
        .iter()
        .map(|o| OrderReport {
            lower: system.views[o.lower].name.clone(),
            upper: system.views[o.upper].name.clone(),
            violations: 0,
            first_violation: None,
        })
        .collect();
    let mut extinction_time = ExtendedReal::PosInf;

    let mut observe = |st: &mut State, k: u64, recorders: &mut Vec<ViewRecorder>, next_snap: &mut usize| {
        let t = k as f64 * dt;
        st.fill_view_sums(&system.views);
        for (oi, o) in system.orders.iter().enumerate() {
            let lo = st.view_values(&system.views, o.lower);
            let hi = st.view_values(&system.views, o.upper);
            for i in 0..lo.len() {
                if lo[i] > hi[i] {
                    let rep = &mut orders[oi];
                    rep.violations += 1;
                    if rep.first_violation.is_none() {
                        rep.first_violation = Some((t, (st.first + i as i64) as f64 * dx));
                    }
                }
            }
        }
        for (vi, rec) in recorders.iter_mut().enumerate() {
            rec.record(t, st.view_values(&system.views, vi), st.first, dx);
        }
        while *next_snap < snaps.len() && snaps[*next_snap].0 == k {
            for (vi, rec) in recorders.iter_mut().enumerate() {
                let f = Field::from_cells(st.first, dx, st.view_values(&system.views, vi).to_vec());
                rec.snapshots.push((t, f));
            }
            *next_snap += 1;
        }
    };

    observe(&mut st, 0, &mut recorders, &mut next_snap);
    let mut steps_done = 0;
    let all_zero = |st: &State| st.supports.iter().all(Option::is_none);
    if all_zero(&st) && !has_sources {
        extinction_time = ExtendedReal::Finite(0.0);
    } else {
        for k in 0..n_steps {
            let t = k as f64 * dt;
            let len = st.len();
            for c in 0..nc {
                let stale = match &coefs[c] {
                    Some(b) => time_dependent[c] || b.key != (st.first, len),
                    None => true,
                };
                if stale {
                    coefs[c] = Some(CoefBuffers::evaluate(&system.components[c].params, t, st.first, len, dx)?);
                }
            }
            for c in 0..nc {
                let comp = &system.components[c];
                let inert = st.supports[c].is_none()
                    && coefs[c].as_ref().is_some_and(|b| b.alpha.is_zero())
                    && comp
                        .immigration
                        .iter()
                        .all(|imm| imm.coef == 0.0 || imm.factors.iter().any(|&f| st.supports[f].is_none()));
                if inert {
                    st.next[c].iter_mut().for_each(|x| *x = 0.0);
                    continue;
                }
                let amp = comp.params.noise_amp;
                let dw = if amp > 0.0 && grid.scheme == NoiseScheme::EulerMaruyama {
                    if let Some((lo, hi)) = st.supports[c] {
                        let buf = &mut st.dw[c][lo..=hi];
                        generators[c].standard_normals(k, st.first + lo as i64, buf);
                        buf.iter_mut().for_each(|z| *z *= sd);
                    }
                    Some(st.dw[c].as_slice())
                } else {
                    None
                };
                let feller = (amp > 0.0 && grid.scheme == NoiseScheme::Feller)
                    .then(|| (&generators[c], 2.0 * dx / (amp * amp * dt)));
                let kernel = Kernel {
                    component: comp,
                    index: c,
                    state: &st.comps,
                    coefs: coefs[c].as_ref().expect("coefficients evaluated above"),
                    dw,
                    feller,
                    dx,
                    dt,
                    t,
                    step: k,
                    first: st.first,
                };
                advance_component(&kernel, &mut st.next[c])?;
            }
            std::mem::swap(&mut st.comps, &mut st.next);
            for c in 0..nc {
                st.supports[c] = support(&st.comps[c]);
            }
            steps_done = k + 1;
            observe(&mut st, k + 1, &mut recorders, &mut next_snap);
            if all_zero(&st) && !has_sources {
                extinction_time = ExtendedReal::Finite((k + 1) as f64 * dt);
                break;
            }
            st.adjust_window(&grid.window, dx);
        }
    }

    // snapshots requested after an early extinction are identically zero
    let n = st.len();
    while next_snap < snaps.len() {
        let t = snaps[next_snap].0 as f64 * dt;
        for rec in recorders.iter_mut() {
            rec.snapshots.push((t, Field::from_cells(st.first, dx, vec![0.0; n])));
        }
        next_snap += 1;
    }
    st.fill_view_sums(&system.views);
    let views = recorders
        .into_iter()
        .enumerate()
        .map(|(vi, rec)| Trajectory {
            final_field: Field::from_cells(st.first, dx, st.view_values(&system.views, vi).to_vec()),
            times: rec.times,
            r0: rec.r0,
            l0: rec.l0,
            mass: rec.mass,
            snapshots: rec.snapshots,
            extinction_time: rec.extinction_time,
        })
        .collect();
    Ok(SystemRun { views, orders, steps: steps_done, extinction_time })
}
