//! Uniform-grid samples of nonnegative continuous functions and the
//! marker, norm and pairing functionals defined on them.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether two grids line up.
const GRID_TOL: f64 = 1e-6;

/// A real number extended by the two infinities.
///
/// Variant order gives the natural order `NegInf < Finite(_) < PosInf`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub enum ExtendedReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtendedReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    /// Maps the infinities onto the IEEE infinities.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtendedReal::NegInf => f64::NEG_INFINITY,
            ExtendedReal::Finite(v) => v,
            ExtendedReal::PosInf => f64::INFINITY,
        }
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::NegInf => write!(f, "-inf"),
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::PosInf => write!(f, "inf"),
        }
    }
}

/// Nonnegative function sampled at `origin + i * dx`, `i = 0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    origin: f64,
    dx: f64,
    values: Vec<f64>,
}

impl Field {
    pub fn new(origin: f64, dx: f64, values: Vec<f64>) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidField(format!("dx must be positive, got {dx}")));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidField(format!("origin must be finite, got {origin}")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidField(format!(
                "need at least 2 grid values, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidField(format!("value {v} at index {i} is negative or non-finite")));
        }
        Ok(Self { origin, dx, values })
    }

    pub fn zeros(origin: f64, dx: f64, len: usize) -> Result<Self> {
        Self::new(origin, dx, vec![0.0; len])
    }

    /// Samples `f` on the grid points `k * dx` lying in `[lo, hi]`.
    pub fn from_fn(lo: f64, hi: f64, dx: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidField(format!("empty window [{lo}, {hi}]")));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidField(format!("dx must be positive, got {dx}")));
        }
        let first = (lo / dx - GRID_TOL).ceil() as i64;
        let last = (hi / dx + GRID_TOL).floor() as i64;
        let len = (last - first + 1).max(2) as usize;
        let values = (0..len).map(|i| f((first + i as i64) as f64 * dx)).collect();
        Self::new(first as f64 * dx, dx, values)
    }

    /// Field on the aligned grid starting at absolute cell index `first`.
    pub(crate) fn from_cells(first: i64, dx: f64, values: Vec<f64>) -> Self {
        debug_assert!(values.len() >= 2);
        Self { origin: first as f64 * dx, dx, values }
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.dx
    }

    /// Coordinate of the last grid point.
    pub fn end(&self) -> f64 {
        self.x(self.values.len() - 1)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Absolute index `round(origin / dx)` when the origin sits on the
    /// lattice `dx * Z`.
    pub fn grid_offset(&self) -> Option<i64> {
        let k = (self.origin / self.dx).round();
        ((self.origin / self.dx - k).abs() < GRID_TOL).then_some(k as i64)
    }

    /// Piecewise-linear interpolant, zero outside the window.
    pub fn value_at(&self, x: f64) -> f64 {
        let s = (x - self.origin) / self.dx;
        if s < -GRID_TOL || s > (self.len() - 1) as f64 + GRID_TOL {
            return 0.0;
        }
        let s = s.clamp(0.0, (self.len() - 1) as f64);
        let i = s.floor() as usize;
        if i + 1 >= self.len() {
            return self.values[self.len() - 1];
        }
        let w = s - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Integral of the field against the constant 1 (trapezoidal).
    pub fn mass(&self) -> f64 {
        trapezoid(&self.values) * self.dx
    }

    /// Pointwise scaling by a nonnegative constant.
    pub fn scaled(&self, c: f64) -> Result<Field> {
        Field::new(self.origin, self.dx, self.values.iter().map(|v| v * c).collect())
    }

    /// Linear resampling onto the aligned grid `k * dx` covering `[lo, hi]`.
    pub fn resample(&self, lo: f64, hi: f64, dx: f64) -> Result<Field> {
        Field::from_fn(lo, hi, dx, |x| self.value_at(x))
    }

    /// Pointwise sum on an identical grid.
    pub fn add(&self, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            origin: self.origin,
            dx: self.dx,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    /// Clamped pointwise difference `max(self - other, 0)` on an identical grid.
    pub fn saturating_sub(&self, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            origin: self.origin,
            dx: self.dx,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).max(0.0))
                .collect(),
        })
    }

    /// Returns the two fields extended by zeros onto their common hull.
    pub fn align(&self, other: &Field) -> Result<(Field, Field)> {
        let shift = self.offset_to(other)?;
        let lo = shift.min(0);
        let hi = (shift + other.len() as i64).max(self.len() as i64);
        let len = (hi - lo) as usize;
        let mut a = vec![0.0; len];
        let mut b = vec![0.0; len];
        a[(-lo) as usize..(-lo) as usize + self.len()].copy_from_slice(&self.values);
        let ob = (shift - lo) as usize;
        b[ob..ob + other.len()].copy_from_slice(&other.values);
        let origin = self.origin + lo as f64 * self.dx;
        Ok((
            Field { origin, dx: self.dx, values: a },
            Field { origin, dx: self.dx, values: b },
        ))
    }

    fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.offset_to(other)? != 0 || self.len() != other.len() {
            return Err(Error::GridMismatch(format!(
                "windows differ: [{}, {}] vs [{}, {}]",
                self.origin,
                self.end(),
                other.origin,
                other.end()
            )));
        }
        Ok(())
    }

    /// Integer cell offset of `other`'s origin relative to ours.
    fn offset_to(&self, other: &Field) -> Result<i64> {
        if (self.dx - other.dx).abs() > 1e-12 * self.dx.max(other.dx) {
            return Err(Error::GridMismatch(format!("dx {} vs {}", self.dx, other.dx)));
        }
        let s = (other.origin - self.origin) / self.dx;
        let k = s.round();
        if (s - k).abs() > GRID_TOL {
            return Err(Error::GridMismatch(format!(
                "origins {} and {} are not commensurate with dx {}",
                self.origin, other.origin, self.dx
            )));
        }
        Ok(k as i64)
    }
}

fn trapezoid(v: &[f64]) -> f64 {
    match v.len() {
        0 | 1 => 0.0,
        n => v.iter().sum::<f64>() - 0.5 * (v[0] + v[n - 1]),
    }
}

/// Trapezoidal approximation of `∫ f g dx` over the overlap of the windows.
/// Disjoint windows give 0.
pub fn pairing(f: &Field, g: &Field) -> Result<f64> {
    let shift = f.offset_to(g)?;
    let lo = shift.max(0);
    let hi = (shift + g.len() as i64).min(f.len() as i64);
    if hi - lo < 2 {
        return Ok(0.0);
    }
    let products: Vec<f64> = (lo..hi)
        .map(|i| f.values[i as usize] * g.values[(i - shift) as usize])
        .collect();
    Ok(trapezoid(&products) * f.dx)
}

/// Coordinate of the rightmost strictly positive grid value, `-inf` for the
/// zero field.
pub fn right_marker(f: &Field) -> ExtendedReal {
    match f.values.iter().rposition(|&v| v > 0.0) {
        Some(i) => ExtendedReal::Finite(f.x(i)),
        None => ExtendedReal::NegInf,
    }
}

/// Coordinate of the leftmost strictly positive grid value, `+inf` for the
/// zero field.
pub fn left_marker(f: &Field) -> ExtendedReal {
    match f.values.iter().position(|&v| v > 0.0) {
        Some(i) => ExtendedReal::Finite(f.x(i)),
        None => ExtendedReal::PosInf,
    }
}

/// Rightmost point where the linear interpolant of `f` is at least `level`.
///
/// Used as the front position in deterministic runs, where the grid
/// support spreads one cell per step and the support marker is meaningless.
pub fn level_marker(f: &Field, level: f64) -> ExtendedReal {
    let Some(i) = f.values.iter().rposition(|&v| v >= level) else {
        return ExtendedReal::NegInf;
    };
    if i + 1 == f.len() {
        return ExtendedReal::Finite(f.x(i));
    }
    let (a, b) = (f.values[i], f.values[i + 1]);
    let w = if a > b { (a - level) / (a - b) } else { 0.0 };
    ExtendedReal::Finite(f.x(i) + w * f.dx)
}

/// `H_0(y) = 1 ∧ (−y ∨ 0)`.
pub fn heavyside(y: f64) -> f64 {
    (-y).clamp(0.0, 1.0)
}

/// Checks `f(x) >= eps * H_0(x - x0)` at every grid point of `f`.
pub fn in_class_h(f: &Field, eps: f64, x0: f64) -> bool {
    (0..f.len()).all(|i| f.values[i] >= eps * heavyside(f.x(i) - x0) - 1e-12)
}

/// Checks whether some `[l0, l0 + d0] ⊆ [−1/2, 0]` carries values `>= m0`
/// at all of its grid points. Candidate left ends are the grid points in
/// `[−1/2, −d0]` together with the two extreme placements.
pub fn in_m(f: &Field, d0: f64, m0: f64) -> bool {
    let eps = 1e-9;
    let mut candidates = vec![-0.5, -d0];
    candidates.extend(
        (0..f.len())
            .map(|i| f.x(i))
            .filter(|&x| x >= -0.5 - eps && x <= -d0 + eps),
    );
    candidates.into_iter().any(|l0| {
        let r0 = l0 + d0;
        if l0 < f.origin - eps || r0 > f.end() + eps {
            return false;
        }
        let mut covered = (0..f.len()).filter(|&i| {
            let x = f.x(i);
            x >= l0 - eps && x <= r0 + eps
        });
        let mut any = false;
        let all = covered.all(|i| {
            any = true;
            f.values[i] >= m0
        });
        any && all
    })
}

/// `sup_x |f(x)| e^{−λ|x|}` over the grid.
pub fn lambda_norm(f: &Field, lambda: f64) -> f64 {
    (0..f.len())
        .map(|i| f.values[i] * (-lambda * f.x(i).abs()).exp())
        .fold(0.0, f64::max)
}

/// Returns `x ↦ f(x + h)`; `h` must be a multiple of `dx`.
pub fn shift(f: &Field, h: f64) -> Result<Field> {
    let k = (h / f.dx).round();
    if (h - k * f.dx).abs() > 1e-9 * f.dx.max(h.abs()) {
        return Err(Error::NonCommensurateShift { shift: h, dx: f.dx });
    }
    Ok(Field { origin: f.origin - k * f.dx, dx: f.dx, values: f.values.clone() })
}

/// Recentres `f` so that its rightmost positive grid point sits exactly at 0.
pub fn recenter_right(f: &Field) -> Result<Field> {
    let i = f
        .values
        .iter()
        .rposition(|&v| v > 0.0)
        .ok_or_else(|| Error::Precondition("cannot recentre the zero field".into()))?;
    Ok(Field { origin: -(i as f64 * f.dx), dx: f.dx, values: f.values.clone() })
}

/// Writes the snapshot text format: a header line `t x0 dx n` followed by
/// the `n` values separated by whitespace.
pub fn write_snapshot<W: Write>(mut w: W, t: f64, f: &Field) -> io::Result<()> {
    writeln!(w, "{} {} {} {}", t, f.origin, f.dx, f.len())?;
    let mut line = String::new();
    for (i, v) in f.values.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        line.push_str(&v.to_string());
    }
    writeln!(w, "{line}")
}

/// Parses the snapshot text format written by [`write_snapshot`].
pub fn read_snapshot<R: BufRead>(r: R) -> Result<(f64, Field)> {
    let mut tokens = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::Snapshot(e.to_string()))?;
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    if tokens.len() < 4 {
        return Err(Error::Snapshot("missing header `t x0 dx n`".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Snapshot(format!("{s}: {e}")));
    let t = num(&tokens[0])?;
    let x0 = num(&tokens[1])?;
    let dx = num(&tokens[2])?;
    let n: usize = tokens[3].parse().map_err(|e| Error::Snapshot(format!("n: {e}")))?;
    if tokens.len() != 4 + n {
        return Err(Error::Snapshot(format!("header announces {n} values, found {}", tokens.len() - 4)));
    }
    let values = tokens[4..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
    Ok((t, Field::new(x0, dx, values)?))
}
