//! Limit-shape variational problems on a triangulated grid.
//!
//! Nodes carry heights `H[i, j]` at `x = x_min + i h`, `t = j h` (square cells). Each
//! cell is split along its `(i,j)-(i+1,j+1)` diagonal into a lower triangle
//! `(i,j),(i+1,j),(i+1,j+1)` and an upper one `(i,j),(i,j+1),(i+1,j+1)`, and `H` is
//! linear on each. With this split the slope constraint `grad H` in the closed triangle
//! `0 <= s <= 1, t <= 0, s + t >= 0` becomes four edge constraints:
//! `0 <= H[i+1,j] - H[i,j] <= h`, `H[i,j+1] <= H[i,j]`, `H[i+1,j+1] >= H[i,j]`.
//!
//! The objective `sum sigma(grad H) h^2/2 + F^f(H)` is concave, and the feasible set
//! is a polytope of difference constraints, so nonlinear Gauss-Seidel with exact
//! one-dimensional maximisation converges to the global maximum.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{GridSpec, HeightField};
use crate::surface::{free_entropy, sigma_unchecked, sin_pi, Profile, DEFAULT_ETA};

/// Default relative objective tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Consecutive sweeps below tolerance required to stop.
pub const DEFAULT_STALL: usize = 50;
/// Default number of cells along the longer side of the box.
pub const DEFAULT_CELLS: usize = 128;

/// Tolerance for edge constraints when checking admissibility, relative to `h`.
const ADM_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Slopes near the boundary of the triangle

fn cot_pi(x: f64) -> f64 {
    (PI * x).cos() / sin_pi(x)
}

/// Euclidean projection onto the closed triangle shrunk by `eta` on every side.
fn clip_slope(s: f64, t: f64, eta: f64) -> (f64, f64) {
    if 1.0 - s >= eta && -t >= eta && s + t >= eta {
        return (s, t);
    }
    let verts = [(2.0 * eta, -eta), (1.0 - eta, -eta), (1.0 - eta, 2.0 * eta - 1.0)];
    let mut best = (f64::INFINITY, (s, t));
    for k in 0..3 {
        let (a, b) = (verts[k], verts[(k + 1) % 3]);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let w = (((s - a.0) * dx + (t - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
        let p = (a.0 + w * dx, a.1 + w * dy);
        let d = (p.0 - s).powi(2) + (p.1 - t).powi(2);
        if d < best.0 {
            best = (d, p);
        }
    }
    best.1
}

/// Clamps a slope into the closed triangle (rounding-level excursions only).
fn clamp_slope(s: f64, t: f64) -> (f64, f64) {
    let s = s.clamp(0.0, 1.0);
    let t = t.min(0.0).max(-s);
    (s, t)
}

/// Gradient and Hessian `(gs, gt, hss, hst, htt)` of sigma at an interior slope.
fn sigma_derivs(s: f64, t: f64) -> (f64, f64, f64, f64, f64) {
    let a = sin_pi(s);
    let b = sin_pi(-t);
    let c = sin_pi(s + t);
    let (ca, cb, cc) = (cot_pi(s), cot_pi(-t), cot_pi(s + t));
    ((a / c).ln(), (b / c).ln(), PI * (ca - cc), -PI * cc, -PI * (cb + cc))
}

// ---------------------------------------------------------------------------
// Problems

/// Time-dependent drift `f(s)` with its derivative.
#[derive(Clone)]
pub struct DriftFunction {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    df: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for DriftFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("DriftFunction")
    }
}

impl DriftFunction {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static, df: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        DriftFunction { f: Arc::new(f), df: Arc::new(df) }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| 0.0)
    }

    /// `f(s) = a + b s`.
    pub fn linear(a: f64, b: f64) -> Self {
        Self::new(move |s| a + b * s, move |_| b)
    }

    pub fn value(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    pub fn derivative(&self, s: f64) -> f64 {
        (self.df)(s)
    }
}

/// Pinning rule: `Some(value)` fixes the node at `(x, t)` on a grid of spacing `h`.
pub type PinFn = Arc<dyn Fn(f64, f64, f64) -> Option<f64> + Send + Sync>;

/// Boundary data, box and optional drift and pinning.
#[derive(Clone)]
pub struct VariationalProblem {
    pub h0: Profile,
    pub h_t: Profile,
    pub t_max: f64,
    pub theta: f64,
    pub grid: GridSpec,
    pub drift: Option<DriftFunction>,
    pub pin: Option<PinFn>,
}

impl std::fmt::Debug for VariationalProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VariationalProblem")
            .field("t_max", &self.t_max)
            .field("theta", &self.theta)
            .field("grid", &self.grid)
            .field("drift", &self.drift.is_some())
            .field("pinned", &self.pin.is_some())
            .finish()
    }
}

/// Grid with square cells over `[x_lo, x_hi] x [0, t_max]`, about `cells` cells on the
/// longer side, both cell counts multiples of 8 so that three coarser levels exist.
pub fn square_grid(x_lo: f64, x_hi: f64, t_max: f64, cells: usize) -> Result<GridSpec> {
    if !(t_max > 0.0) || !(x_hi > x_lo) {
        return invalid(format!("empty box [{x_lo}, {x_hi}] x [0, {t_max}]"));
    }
    let long = (x_hi - x_lo).max(t_max);
    let h0 = long / cells.max(8) as f64;
    let nt = ((t_max / h0).ceil() as usize).div_ceil(8) * 8;
    let h = t_max / nt as f64;
    let ncx = (((x_hi - x_lo) / h - 1e-9).ceil() as usize).div_ceil(8) * 8;
    Ok(GridSpec { x_min: x_lo, dx: h, nx: ncx + 1, t_max, nt })
}

impl VariationalProblem {
    /// Box spanning both supports with one cell of margin, `DEFAULT_CELLS` cells on the long side.
    pub fn new(h0: Profile, h_t: Profile, t_max: f64, theta: f64) -> Result<Self> {
        Self::with_cells(h0, h_t, t_max, theta, DEFAULT_CELLS)
    }

    pub fn with_cells(h0: Profile, h_t: Profile, t_max: f64, theta: f64, cells: usize) -> Result<Self> {
        for (name, p) in [("h(., 0)", &h0), ("h(., T)", &h_t)] {
            if (p.mass() - theta).abs() > crate::surface::MASS_TOL * theta.max(1.0) {
                return invalid(format!("boundary profile {name} has mass {} instead of theta = {theta}", p.mass()));
            }
        }
        let (a0, b0) = h0.support();
        let (a1, b1) = h_t.support();
        let lo = a0.min(a1);
        let hi = b0.max(b1);
        let margin = (hi - lo).max(t_max) / cells.max(8) as f64;
        let grid = square_grid(lo - margin, hi + margin, t_max, cells)?;
        Ok(VariationalProblem { h0, h_t, t_max, theta, grid, drift: None, pin: None })
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Result<Self> {
        if (grid.dx - grid.dt()).abs() > 1e-12 * grid.dx || (grid.t_max - self.t_max).abs() > 1e-12 {
            return invalid("variational grids need square cells spanning [0, T]");
        }
        self.grid = grid;
        Ok(self)
    }

    pub fn with_drift(mut self, f: DriftFunction) -> Self {
        self.drift = Some(f);
        self
    }

    pub fn with_pin(mut self, pin: PinFn) -> Self {
        self.pin = Some(pin);
        self
    }

    fn h(&self) -> f64 {
        self.grid.dx
    }

    /// The same problem on a grid with twice the spacing, if the counts allow it.
    fn coarsen(&self) -> Option<Self> {
        let g = self.grid;
        if !g.nt.is_multiple_of(2) || !(g.nx - 1).is_multiple_of(2) || g.nt < 8 || g.nx < 9 {
            return None;
        }
        let mut c = self.clone();
        c.grid = GridSpec { x_min: g.x_min, dx: 2.0 * g.dx, nx: (g.nx - 1) / 2 + 1, t_max: g.t_max, nt: g.nt / 2 };
        Some(c)
    }

    /// Fixed nodes (boundary rows, side columns, pinned) and their values.
    fn fixed(&self) -> (Vec<bool>, Vec<f64>) {
        let g = self.grid;
        let (nx, nt) = (g.nx, g.nt);
        let mut fixed = vec![false; nx * (nt + 1)];
        let mut vals = vec![0.0; nx * (nt + 1)];
        for j in 0..=nt {
            for i in 0..nx {
                let k = j * nx + i;
                let (x, t) = (g.x(i), g.t(j));
                let v = if j == 0 {
                    Some(self.h0.at(x))
                } else if j == nt {
                    Some(self.h_t.at(x))
                } else if i == 0 {
                    Some(0.0)
                } else if i == nx - 1 {
                    Some(self.theta)
                } else {
                    self.pin.as_ref().and_then(|p| p(x, t, g.dx))
                };
                if let Some(v) = v {
                    fixed[k] = true;
                    vals[k] = v;
                }
            }
        }
        (fixed, vals)
    }

    /// Per-node linear coefficient of the discretised drift functional.
    fn linear_coeffs(&self) -> Vec<f64> {
        let g = self.grid;
        let h = self.h();
        let mut c = vec![0.0; g.nx * (g.nt + 1)];
        if let Some(f) = &self.drift {
            for j in 1..g.nt {
                let d = f.derivative(g.t(j)) * h * h;
                for i in 1..g.nx - 1 {
                    c[j * g.nx + i] = d;
                }
            }
        }
        c
    }
}

// ---------------------------------------------------------------------------
// Fields

/// Heights on the grid nodes, row-major in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleGridField {
    pub grid: GridSpec,
    pub theta: f64,
    pub values: Vec<f64>,
}

impl AdmissibleGridField {
    pub fn from_fn(grid: GridSpec, theta: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let hf = HeightField::from_fn(grid, theta, f);
        AdmissibleGridField { grid, theta, values: hf.values }
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    pub fn to_height_field(&self) -> HeightField {
        HeightField { grid: self.grid, theta: self.theta, values: self.values.clone(), coarse: false }
    }

    pub fn from_height_field(hf: &HeightField) -> Result<Self> {
        if (hf.grid.dx - hf.grid.dt()).abs() > 1e-12 * hf.grid.dx {
            return invalid("grid fields need square cells");
        }
        Ok(AdmissibleGridField { grid: hf.grid, theta: hf.theta, values: hf.values.clone() })
    }

    /// Largest violation of the edge constraints, in units of `h`.
    pub fn max_violation(&self) -> f64 {
        let g = self.grid;
        let h = g.dx;
        let v = |i: usize, j: usize| self.values[j * g.nx + i];
        let mut worst = 0.0f64;
        for j in 0..=g.nt {
            for i in 0..g.nx {
                if i + 1 < g.nx {
                    let d = v(i + 1, j) - v(i, j);
                    worst = worst.max(-d / h).max((d - h) / h);
                }
                if j < g.nt {
                    worst = worst.max((v(i, j + 1) - v(i, j)) / h);
                    if i + 1 < g.nx {
                        worst = worst.max((v(i, j) - v(i + 1, j + 1)) / h);
                    }
                }
            }
        }
        worst
    }

    pub fn check_admissible(&self) -> Result<()> {
        let w = self.max_violation();
        if w > ADM_TOL {
            return invalid(format!("field violates the slope constraints by {w:.3e} (relative to the cell size)"));
        }
        Ok(())
    }

    /// Cell slopes of the lower and upper triangles of cell `(i, j)`.
    fn cell_slopes(&self, i: usize, j: usize) -> [(f64, f64); 2] {
        let h = self.grid.dx;
        let v = |a: usize, b: usize| self.values[b * self.grid.nx + a];
        [
            ((v(i + 1, j) - v(i, j)) / h, (v(i + 1, j + 1) - v(i + 1, j)) / h),
            ((v(i + 1, j + 1) - v(i, j + 1)) / h, (v(i, j + 1) - v(i, j)) / h),
        ]
    }

    pub fn sup_distance(&self, other: &AdmissibleGridField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Mismatch);
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// `sum_triangles sigma(slope) * h^2 / 2` for an admissible field.
pub fn entropy_functional(f: &AdmissibleGridField) -> Result<f64> {
    f.check_admissible()?;
    Ok(entropy_unchecked(f))
}

fn entropy_unchecked(f: &AdmissibleGridField) -> f64 {
    let g = f.grid;
    let area = g.dx * g.dx / 2.0;
    (0..g.nt)
        .into_par_iter()
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..g.nx - 1 {
                for (s, t) in f.cell_slopes(i, j) {
                    let (s, t) = clamp_slope(s, t);
                    acc += sigma_unchecked(s, t);
                }
            }
            acc * area
        })
        .sum()
}

/// `F^f(H) = -f(T) M(T) + f(0) M(0) + int f'(s) M(s) ds`, `M(s) = int H(y, s) dy`,
/// trapezoid rules in both variables. Exact summation by parts of `-int int f dH/ds`.
pub fn drift_functional(f: &AdmissibleGridField, drift: &DriftFunction) -> f64 {
    let g = f.grid;
    let h = g.dx;
    let m = |j: usize| {
        let row = &f.values[j * g.nx..(j + 1) * g.nx];
        let inner: f64 = row.iter().sum();
        (inner - 0.5 * (row[0] + row[g.nx - 1])) * h
    };
    let mut total = -drift.value(g.t_max) * m(g.nt) + drift.value(0.0) * m(0);
    for j in 0..=g.nt {
        let w = if j == 0 || j == g.nt { 0.5 } else { 1.0 };
        total += w * drift.derivative(g.t(j)) * m(j) * h;
    }
    total
}

// ---------------------------------------------------------------------------
// Corridors

/// `[lower, upper]` for node `(i, j)` from its neighbours.
#[inline]
fn node_interval(v: &[f64], nx: usize, nt: usize, h: f64, i: usize, j: usize) -> (f64, f64) {
    let at = |a: usize, b: usize| v[b * nx + a];
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    if i > 0 {
        lo = lo.max(at(i - 1, j));
        hi = hi.min(at(i - 1, j) + h);
    }
    if i + 1 < nx {
        lo = lo.max(at(i + 1, j) - h);
        hi = hi.min(at(i + 1, j));
    }
    if j > 0 {
        hi = hi.min(at(i, j - 1));
        if i > 0 {
            lo = lo.max(at(i - 1, j - 1));
        }
    }
    if j < nt {
        lo = lo.max(at(i, j + 1));
        if i + 1 < nx {
            hi = hi.min(at(i + 1, j + 1));
        }
    }
    (lo, hi)
}

/// Min-propagation (`upper = true`) or max-propagation to a fixed point.
fn relax(v: &mut [f64], fixed: &[bool], grid: GridSpec, upper: bool) {
    let (nx, nt, h) = (grid.nx, grid.nt, grid.dx);
    loop {
        let mut changed = false;
        for pass in 0..2 {
            for jj in 0..=nt {
                let j = if pass == 0 { jj } else { nt - jj };
                for ii in 0..nx {
                    let i = if pass == 0 { ii } else { nx - 1 - ii };
                    let k = j * nx + i;
                    if fixed[k] {
                        continue;
                    }
                    let (lo, hi) = node_interval(v, nx, nt, h, i, j);
                    let new = if upper { v[k].min(hi) } else { v[k].max(lo) };
                    if new != v[k] {
                        v[k] = new;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Pointwise largest and smallest admissible extensions of the fixed data.
pub fn corridor(problem: &VariationalProblem) -> Result<(AdmissibleGridField, AdmissibleGridField)> {
    let (fixed, vals) = problem.fixed();
    let g = problem.grid;
    let mut hmax: Vec<f64> = vals.iter().zip(&fixed).map(|(&v, &f)| if f { v } else { f64::INFINITY }).collect();
    let mut hmin: Vec<f64> = vals.iter().zip(&fixed).map(|(&v, &f)| if f { v } else { f64::NEG_INFINITY }).collect();
    relax(&mut hmax, &fixed, g, true);
    relax(&mut hmin, &fixed, g, false);
    let a = AdmissibleGridField { grid: g, theta: problem.theta, values: hmax };
    let b = AdmissibleGridField { grid: g, theta: problem.theta, values: hmin };
    let bad = a.values.iter().zip(&b.values).any(|(x, y)| !x.is_finite() || !y.is_finite() || *y > *x + 1e-12);
    if bad || a.max_violation() > ADM_TOL || b.max_violation() > ADM_TOL {
        return Err(Error::NoExtension("the boundary data admit no admissible height function on this grid".into()));
    }
    Ok((a, b))
}

/// Greatest admissible field below `max(v, hmin)` agreeing with the fixed data.
fn project(v: &mut [f64], problem: &VariationalProblem, hmin: &[f64]) {
    let (fixed, vals) = problem.fixed();
    for k in 0..v.len() {
        v[k] = if fixed[k] { vals[k] } else { v[k].max(hmin[k]) };
    }
    relax(v, &fixed, problem.grid, true);
}

// ---------------------------------------------------------------------------
// Node updates

/// Local data of one node: slopes of the up to six triangles in its star, and the
/// derivative of each slope with respect to the node value (times `h`).
struct Star {
    tri: [(f64, f64, f64, f64); 6],
    len: usize,
}

impl Star {
    fn new(v: &[f64], nx: usize, nt: usize, h: f64, a: usize, b: usize) -> Self {
        let at = |i: usize, j: usize| v[j * nx + i];
        let lower = |i: usize, j: usize| ((at(i + 1, j) - at(i, j)) / h, (at(i + 1, j + 1) - at(i + 1, j)) / h);
        let upper = |i: usize, j: usize| ((at(i + 1, j + 1) - at(i, j + 1)) / h, (at(i, j + 1) - at(i, j)) / h);
        let mut tri = [(0.0, 0.0, 0.0, 0.0); 6];
        let mut len = 0;
        let mut push = |st: (f64, f64), gx: f64, gy: f64| {
            tri[len] = (st.0, st.1, gx, gy);
            len += 1;
        };
        let has_right = a + 1 < nx;
        let has_up = b < nt;
        if has_right && has_up {
            push(lower(a, b), -1.0, 0.0);
            push(upper(a, b), 0.0, -1.0);
        }
        if a > 0 && has_up {
            push(lower(a - 1, b), 1.0, -1.0);
        }
        if a > 0 && b > 0 {
            push(lower(a - 1, b - 1), 0.0, 1.0);
            push(upper(a - 1, b - 1), 1.0, 0.0);
        }
        if has_right && b > 0 {
            push(upper(a, b - 1), -1.0, 1.0);
        }
        Star { tri, len }
    }

    /// Local objective at displacement `d` from the current value.
    fn value(&self, d: f64, h: f64, c: f64, v0: f64) -> f64 {
        let mut acc = 0.0;
        for &(s0, t0, gx, gy) in &self.tri[..self.len] {
            let (s, t) = clamp_slope(s0 + d * gx / h, t0 + d * gy / h);
            acc += sigma_unchecked(s, t);
        }
        acc * h * h / 2.0 + c * (v0 + d)
    }

    /// First and second derivative of the local objective at displacement `d`.
    fn derivs(&self, d: f64, h: f64, c: f64, eta: f64) -> (f64, f64) {
        let (mut d1, mut d2) = (0.0, 0.0);
        for &(s0, t0, gx, gy) in &self.tri[..self.len] {
            let (s, t) = clip_slope(s0 + d * gx / h, t0 + d * gy / h, eta);
            let (gs, gt, hss, hst, htt) = sigma_derivs(s, t);
            d1 += gs * gx + gt * gy;
            d2 += hss * gx * gx + 2.0 * hst * gx * gy + htt * gy * gy;
        }
        (d1 * h / 2.0 + c, d2 / 2.0)
    }
}

/// Maximiser of the local objective over `[lo, hi]` (displacements from `v0`).
fn maximise_1d(star: &Star, v0: f64, lo: f64, hi: f64, h: f64, c: f64, eta: f64) -> f64 {
    if hi - lo <= 1e-15 * h {
        return lo;
    }
    let (dl, dh) = (lo - v0, hi - v0);
    if star.derivs(dl, h, c, eta).0 <= 0.0 {
        return lo;
    }
    if star.derivs(dh, h, c, eta).0 >= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (dl, dh);
    let mut d = 0.0f64.clamp(a, b);
    for _ in 0..100 {
        let (g, gg) = star.derivs(d, h, c, eta);
        if g > 0.0 {
            a = d;
        } else {
            b = d;
        }
        let mut nd = if gg < 0.0 { d - g / gg } else { 0.5 * (a + b) };
        if !(nd > a && nd < b) {
            nd = 0.5 * (a + b);
        }
        let done = (nd - d).abs() <= 1e-15 * h.max(v0.abs()) || b - a <= 1e-15 * h;
        d = nd;
        if done {
            break;
        }
    }
    v0 + d
}

// ---------------------------------------------------------------------------
// Solver

/// Starting field for the solver.
#[derive(Clone, Debug, PartialEq)]
pub enum Start {
    /// Largest admissible extension.
    Max,
    /// Smallest admissible extension.
    Min,
    /// Average of the two.
    Mid,
    /// A supplied field (projected onto the admissible set).
    Field(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub stall: usize,
    pub max_sweeps: usize,
    pub omega: f64,
    pub eta: f64,
    /// Coarser levels solved first (0 = single level).
    pub levels: usize,
    pub start: Start,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: DEFAULT_TOL, stall: DEFAULT_STALL, max_sweeps: 200_000, omega: 1.9, eta: DEFAULT_ETA, levels: 3, start: Start::Mid }
    }
}

/// Rate functional report for a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// `int int sigma(grad H)`.
    pub entropy_term: f64,
    /// `(1/2) (E_T - E_0)` with `E = int int ln|x - y| dh dh`.
    pub free_entropy_term: f64,
    /// `F^f(H)`, zero without drift.
    pub drift_term: f64,
    /// `entropy_term + drift_term`, the maximised quantity.
    pub objective: f64,
    /// `-entropy_term - free_entropy_term - drift_term`.
    pub j_value: f64,
    /// `(J - J_min) / theta`, when `J_min` is known.
    pub i_value: Option<f64>,
    pub j_min: Option<f64>,
    pub tol: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after selected sweeps `(level, sweep, objective)`.
    pub history: Vec<(usize, usize, f64)>,
}

/// Evaluates `J` (and `I` when `j_min` is given) for a field of the problem's grid.
pub fn rate_j(f: &AdmissibleGridField, problem: &VariationalProblem, j_min: Option<f64>) -> Result<RateReport> {
    let entropy = entropy_functional(f)?;
    let e0 = free_entropy(&problem.h0, problem.theta)?;
    let e1 = free_entropy(&problem.h_t, problem.theta)?;
    let fe = 0.5 * (e1 - e0);
    let drift = problem.drift.as_ref().map_or(0.0, |d| drift_functional(f, d));
    let j = -entropy - fe - drift;
    Ok(RateReport {
        entropy_term: entropy,
        free_entropy_term: fe,
        drift_term: drift,
        objective: entropy + drift,
        j_value: j,
        i_value: j_min.map(|m| (j - m) / problem.theta),
        j_min,
        tol: DEFAULT_TOL,
        sweeps: 0,
        converged: true,
        history: Vec::new(),
    })
}

fn objective(v: &[f64], problem: &VariationalProblem, coeffs: &[f64]) -> f64 {
    let f = AdmissibleGridField { grid: problem.grid, theta: problem.theta, values: v.to_vec() };
    let lin: f64 = v.iter().zip(coeffs).map(|(a, b)| a * b).sum();
    entropy_unchecked(&f) + lin
}

/// Discrete Euler-Lagrange residual: derivative of the objective with respect to each
/// free node divided by `h^2` (a discretisation of `-div grad sigma(grad H)` plus the
/// drift term); zero at fixed nodes and at nodes pinned by active constraints.
pub fn euler_lagrange_residual(f: &AdmissibleGridField, problem: &VariationalProblem, eta: f64) -> Vec<f64> {
    let g = problem.grid;
    let (fixed, _) = problem.fixed();
    let coeffs = problem.linear_coeffs();
    let h = g.dx;
    (0..=g.nt)
        .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
        .map(|(i, j)| {
            let k = j * g.nx + i;
            if fixed[k] {
                return 0.0;
            }
            let (lo, hi) = node_interval(&f.values, g.nx, g.nt, h, i, j);
            if hi - lo <= 1e-12 * h {
                return 0.0;
            }
            let star = Star::new(&f.values, g.nx, g.nt, h, i, j);
            star.derivs(0.0, h, coeffs[k], eta).0 / (h * h)
        })
        .collect()
}

/// Solution of a variational problem.
#[derive(Clone, Debug)]
pub struct Solution {
    pub field: AdmissibleGridField,
    pub report: RateReport,
}

fn sweep(v: &mut [f64], problem: &VariationalProblem, fixed: &[bool], coeffs: &[f64], opts: &SolverOptions) {
    let g = problem.grid;
    let (nx, nt, h) = (g.nx, g.nt, g.dx);
    for colour in 0..3 {
        let snapshot: &[f64] = v;
        let updates: Vec<(usize, f64)> = (0..=nt)
            .into_par_iter()
            .flat_map_iter(|j| {
                let first = (colour + 3 - j % 3) % 3;
                (first..nx).step_by(3).filter_map(move |i| {
                    let k = j * nx + i;
                    if fixed[k] {
                        return None;
                    }
                    let (lo, hi) = node_interval(snapshot, nx, nt, h, i, j);
                    let v0 = snapshot[k];
                    if hi - lo <= 1e-15 * h {
                        return (lo != v0).then_some((k, lo));
                    }
                    let star = Star::new(snapshot, nx, nt, h, i, j);
                    let c = coeffs[k];
                    let best = maximise_1d(&star, v0, lo, hi, h, c, opts.eta);
                    let over = (v0 + opts.omega * (best - v0)).clamp(lo, hi);
                    let pick = if opts.omega != 1.0 && star.value(over - v0, h, c, v0) >= star.value(0.0, h, c, v0) {
                        over
                    } else if star.value(best - v0, h, c, v0) >= star.value(0.0, h, c, v0) {
                        best
                    } else {
                        v0
                    };
                    (pick != v0).then_some((k, pick))
                })
            })
            .collect();
        for (k, val) in updates {
            v[k] = val;
        }
    }
}

fn solve_level(v: &mut Vec<f64>, problem: &VariationalProblem, opts: &SolverOptions, level: usize, history: &mut Vec<(usize, usize, f64)>) -> (usize, bool) {
    let (fixed, _) = problem.fixed();
    let coeffs = problem.linear_coeffs();
    let mut obj = objective(v, problem, &coeffs);
    history.push((level, 0, obj));
    let mut quiet = 0;
    for it in 1..=opts.max_sweeps {
        sweep(v, problem, &fixed, &coeffs, opts);
        let new = objective(v, problem, &coeffs);
        debug_assert!(new >= obj - 1e-12 * obj.abs().max(1e-12), "objective decreased: {obj} -> {new}");
        let rel = if new == obj { 0.0 } else { (new - obj).abs() / new.abs().max(f64::MIN_POSITIVE) };
        obj = new;
        if it.is_power_of_two() || it % 1000 == 0 {
            history.push((level, it, obj));
        }
        quiet = if rel < opts.tol { quiet + 1 } else { 0 };
        if quiet >= opts.stall {
            history.push((level, it, obj));
            return (it, true);
        }
    }
    (opts.max_sweeps, false)
}

fn prolong(coarse: &[f64], cg: GridSpec, fg: GridSpec) -> Vec<f64> {
    let c = |i: usize, j: usize| coarse[j * cg.nx + i];
    let mut out = vec![0.0; fg.nx * (fg.nt + 1)];
    for j in 0..=fg.nt {
        for i in 0..fg.nx {
            let (ci, cj) = (i / 2, j / 2);
            let v = match (i % 2, j % 2) {
                (0, 0) => c(ci, cj),
                (1, 0) => 0.5 * (c(ci, cj) + c(ci + 1, cj)),
                (0, 1) => 0.5 * (c(ci, cj) + c(ci, cj + 1)),
                _ => 0.5 * (c(ci, cj) + c(ci + 1, cj + 1)),
            };
            out[j * fg.nx + i] = v;
        }
    }
    out
}

fn start_values(problem: &VariationalProblem, start: &Start, hmax: &AdmissibleGridField, hmin: &AdmissibleGridField) -> Result<Vec<f64>> {
    Ok(match start {
        Start::Max => hmax.values.clone(),
        Start::Min => hmin.values.clone(),
        Start::Mid => {
            let mut v: Vec<f64> = hmax.values.iter().zip(&hmin.values).map(|(a, b)| 0.5 * (a + b)).collect();
            project(&mut v, problem, &hmin.values);
            v
        }
        Start::Field(f) => {
            if f.len() != hmax.values.len() {
                return Err(Error::Mismatch);
            }
            let mut v = f.clone();
            project(&mut v, problem, &hmin.values);
            v
        }
    })
}

/// Maximises `int int sigma(grad H) + F^f(H)` over admissible fields with the problem's
/// boundary data. Coarser levels supply the starting field when `levels > 0` and the
/// start is not a supplied field.
pub fn solve_limit_shape(problem: &VariationalProblem, opts: &SolverOptions) -> Result<Solution> {
    let mut chain = vec![problem.clone()];
    if !matches!(opts.start, Start::Field(_)) {
        while chain.len() <= opts.levels {
            match chain.last().expect("nonempty").coarsen() {
                Some(c) => chain.push(c),
                None => break,
            }
        }
    }
    let mut history = Vec::new();
    let mut values: Option<Vec<f64>> = None;
    let mut total_sweeps = 0;
    let mut converged = false;
    for (level, p) in chain.iter().enumerate().rev() {
        let (hmax, hmin) = corridor(p)?;
        let mut v = match values.take() {
            None => start_values(p, &opts.start, &hmax, &hmin)?,
            Some(coarse) => {
                let fine = chain[level].grid;
                let coarse_grid = chain[level + 1].grid;
                let mut v = prolong(&coarse, coarse_grid, fine);
                project(&mut v, p, &hmin.values);
                v
            }
        };
        let (n, ok) = solve_level(&mut v, p, opts, level, &mut history);
        total_sweeps += n;
        converged = ok;
        values = Some(v);
    }
    let field = AdmissibleGridField { grid: problem.grid, theta: problem.theta, values: values.expect("at least one level") };
    let mut report = rate_j(&field, problem, None)?;
    report.j_min = Some(report.j_value);
    report.i_value = Some(0.0);
    report.tol = opts.tol;
    report.sweeps = total_sweeps;
    report.converged = converged;
    report.history = history;
    if !converged {
        log::warn!("limit-shape solver stopped at the sweep cap ({} sweeps) before meeting tol = {}", opts.max_sweeps, opts.tol);
    }
    Ok(Solution { field, report })
}

// ---------------------------------------------------------------------------
// Translating ramps

/// `H(x, t) = clamp(rho (x - a - v t), 0, theta)`: slope `(rho, -rho v)` on a band.
pub fn translating_ramp(a: f64, rho: f64, v: f64, theta: f64) -> impl Fn(f64, f64) -> f64 + Clone + Send + Sync {
    move |x, t| (rho * (x - a - v * t)).clamp(0.0, theta)
}

/// Boundary profiles of a translating ramp at times 0 and `t_max`.
pub fn ramp_boundaries(a: f64, rho: f64, v: f64, theta: f64, t_max: f64) -> (Profile, Profile) {
    let p0 = Profile::ramp_with_density(a, theta, rho);
    let p1 = p0.translated(v * t_max);
    (p0, p1)
}

/// Pins every node outside the open parallelogram where the translating ramp is affine,
/// including nodes whose star reaches outside it, to the ramp's values.
pub fn ramp_parallelogram_pin(a: f64, rho: f64, v: f64, theta: f64) -> PinFn {
    let ramp = translating_ramp(a, rho, v, theta);
    Arc::new(move |x, t, h| {
        let inside = |x: f64, t: f64| {
            let u = rho * (x - a - v * t);
            u > 1e-12 && u < theta - 1e-12
        };
        let star = [(0.0, 0.0), (h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h), (h, h), (-h, -h)];
        if star.iter().all(|&(dx, dt)| inside(x + dx, t + dt)) {
            None
        } else {
            Some(ramp(x, t))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::sigma;
    use crate::surface::Slope;

    fn ramp_problem(theta: f64, rho: f64, v: f64, t_max: f64, cells: usize) -> VariationalProblem {
        let (p0, p1) = ramp_boundaries(0.0, rho, v, theta, t_max);
        VariationalProblem::with_cells(p0, p1, t_max, theta, cells).unwrap()
    }

    #[test]
    fn sigma_derivatives_match_finite_differences() {
        for &(s, t) in &[(0.5, -0.2), (0.3, -0.1), (0.9, -0.6), (0.66, -0.33)] {
            let (gs, gt, hss, hst, htt) = sigma_derivs(s, t);
            let e = 1e-5;
            let fs = (sigma_unchecked(s + e, t) - sigma_unchecked(s - e, t)) / (2.0 * e);
            let ft = (sigma_unchecked(s, t + e) - sigma_unchecked(s, t - e)) / (2.0 * e);
            assert!((gs - fs).abs() < 1e-7 && (gt - ft).abs() < 1e-7);
            let d = |a: f64, b: f64| sigma_derivs(a, b);
            assert!((hss - (d(s + e, t).0 - d(s - e, t).0) / (2.0 * e)).abs() < 1e-5);
            assert!((hst - (d(s, t + e).0 - d(s, t - e).0) / (2.0 * e)).abs() < 1e-5);
            assert!((htt - (d(s, t + e).1 - d(s, t - e).1) / (2.0 * e)).abs() < 1e-5);
        }
    }

    #[test]
    fn clip_lands_inside() {
        for &(s, t) in &[(0.0, 0.0), (1.0, -1.0), (1.0, 0.0), (0.5, 0.0), (1.2, -0.1), (0.3, -0.4), (0.5, -0.2)] {
            let (a, b) = clip_slope(s, t, 1e-6);
            let sl = Slope { s: a, t: b };
            assert!(sl.margin() >= 1e-6 - 1e-15, "{s} {t} -> {a} {b}");
        }
    }

    #[test]
    fn constant_slope_entropy_is_area_times_sigma() {
        let grid = square_grid(-1.0, 3.0, 1.0, 64).unwrap();
        let (rho, v) = (0.6, 0.5);
        let f = AdmissibleGridField::from_fn(grid, 10.0, |x, t| rho * x - rho * v * t + 5.0);
        let area = (grid.x_max() - grid.x_min) * grid.t_max;
        let e = entropy_functional(&f).unwrap();
        let exact = area * sigma(Slope::new(rho, -rho * v).unwrap()).unwrap();
        assert!((e - exact).abs() < 1e-12 * exact.abs());
        // A boundary slope gives zero.
        let f = AdmissibleGridField::from_fn(grid, 10.0, |x, _| 0.4 * x + 2.0);
        assert!(entropy_functional(&f).unwrap().abs() < 1e-14);
    }

    #[test]
    fn entropy_converges_under_refinement() {
        // Smooth quadratic field with slopes well inside the triangle.
        let field = |x: f64, t: f64| 0.5 * x + 0.1 * x * x - 0.25 * t - 0.05 * t * t + 0.05 * x * t;
        let exact = {
            let inner = |t: f64| {
                quadrature::integrate(
                    |x| {
                        let s = 0.5 + 0.2 * x + 0.05 * t;
                        let tt = -0.25 - 0.1 * t + 0.05 * x;
                        sigma_unchecked(s, tt)
                    },
                    0.0,
                    1.0,
                    1e-13,
                )
                .integral
            };
            quadrature::integrate(inner, 0.0, 1.0, 1e-12).integral
        };
        let mut errs = Vec::new();
        for cells in [16, 32, 64] {
            let grid = GridSpec { x_min: 0.0, dx: 1.0 / cells as f64, nx: cells + 1, t_max: 1.0, nt: cells };
            let f = AdmissibleGridField::from_fn(grid, 1.0, field);
            errs.push((entropy_functional(&f).unwrap() - exact).abs());
        }
        assert!(errs[0] / errs[1] > 1.8 && errs[1] / errs[2] > 1.8, "{errs:?}");
    }

    #[test]
    fn inadmissible_field_is_rejected() {
        let grid = square_grid(0.0, 1.0, 1.0, 8).unwrap();
        let f = AdmissibleGridField::from_fn(grid, 1.0, |x, t| x * 1.5 + t * 0.0);
        assert!(entropy_functional(&f).is_err());
    }

    #[test]
    fn corridor_brackets_ramp() {
        let p = ramp_problem(1.0, 0.8, 0.5, 1.0, 32);
        let (hmax, hmin) = corridor(&p).unwrap();
        let ramp = AdmissibleGridField::from_fn(p.grid, 1.0, translating_ramp(0.0, 0.8, 0.5, 1.0));
        for k in 0..ramp.values.len() {
            assert!(hmin.values[k] <= ramp.values[k] + 1e-12 && ramp.values[k] <= hmax.values[k] + 1e-12);
        }
    }

    #[test]
    fn infeasible_boundaries_are_reported() {
        // The final profile lies to the left of the initial one: H would increase in time.
        let p0 = Profile::ramp(0.0, 1.0);
        let p1 = Profile::ramp(-0.5, 1.0);
        let p = VariationalProblem::with_cells(p0, p1, 1.0, 1.0, 16).unwrap();
        assert!(corridor(&p).is_err());
        assert!(solve_limit_shape(&p, &SolverOptions::default()).is_err());
    }

    #[test]
    fn equal_boundaries_give_zero_rate() {
        let p0 = Profile::ramp_with_density(0.0, 1.0, 0.5);
        let p = VariationalProblem::with_cells(p0.clone(), p0, 1.0, 1.0, 32).unwrap();
        let sol = solve_limit_shape(&p, &SolverOptions::default()).unwrap();
        assert!(sol.report.j_value.abs() < 1e-8, "{:?}", sol.report);
        assert_eq!(sol.report.i_value, Some(0.0));
        // Time-constant field.
        let g = p.grid;
        for j in 0..=g.nt {
            for i in 0..g.nx {
                assert!((sol.field.value(i, j) - sol.field.value(i, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ramp_is_critical_in_pinned_parallelogram() {
        let (theta, rho, v) = (1.0, 0.8, 0.5);
        let p = ramp_problem(theta, rho, v, 1.0, 32).with_pin(ramp_parallelogram_pin(0.0, rho, v, theta));
        let ramp = AdmissibleGridField::from_fn(p.grid, theta, translating_ramp(0.0, rho, v, theta));
        let r = euler_lagrange_residual(&ramp, &p, DEFAULT_ETA);
        let worst = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(worst < 1e-9, "{worst}");
        // Without pinning the ramp is not stationary at the edges of the band.
        let q = ramp_problem(theta, rho, v, 1.0, 32);
        let r = euler_lagrange_residual(&ramp, &q, DEFAULT_ETA);
        assert!(r.iter().any(|x| x.abs() > 1e-3));
    }

    #[test]
    fn pinned_ramp_recovered_from_both_corridor_ends() {
        let (theta, rho, v) = (1.0, 0.8, 0.5);
        let p = ramp_problem(theta, rho, v, 1.0, 32).with_pin(ramp_parallelogram_pin(0.0, rho, v, theta));
        let ramp = AdmissibleGridField::from_fn(p.grid, theta, translating_ramp(0.0, rho, v, theta));
        let target = rate_j(&ramp, &p, None).unwrap().objective;
        let mut objs = Vec::new();
        for start in [Start::Max, Start::Min] {
            let opts = SolverOptions { start, levels: 0, ..SolverOptions::default() };
            let s = solve_limit_shape(&p, &opts).unwrap();
            assert!(s.report.converged);
            assert!(s.field.sup_distance(&ramp).unwrap() < p.grid.dx, "{}", s.field.sup_distance(&ramp).unwrap());
            objs.push(s.report.objective);
        }
        assert!((objs[0] - objs[1]).abs() <= 2.0 * DEFAULT_TOL * target.abs(), "{objs:?}");
        assert!((objs[0] - target).abs() <= 2.0 * DEFAULT_TOL * target.abs().max(1e-3) + 1e-12, "{objs:?} vs {target}");
    }

    #[test]
    fn objective_history_is_monotone() {
        let p = ramp_problem(1.0, 0.8, 0.5, 1.0, 32);
        let s = solve_limit_shape(&p, &SolverOptions { levels: 0, start: Start::Max, ..SolverOptions::default() }).unwrap();
        for w in s.report.history.windows(2) {
            if w[0].0 == w[1].0 {
                assert!(w[1].2 >= w[0].2 - 1e-12 * w[0].2.abs());
            }
        }
        s.field.check_admissible().unwrap();
        // Boundary rows are bit-identical to the sampled profiles.
        let g = p.grid;
        for i in 0..g.nx {
            assert_eq!(s.field.value(i, 0), p.h0.at(g.x(i)));
            assert_eq!(s.field.value(i, g.nt), p.h_t.at(g.x(i)));
        }
    }

    #[test]
    fn free_strip_beats_translating_ramp() {
        // In the whole strip the ramp spreads out: strictly larger entropy than the ramp.
        let (theta, rho, v) = (1.0, 0.8, 0.5);
        let p = ramp_problem(theta, rho, v, 1.0, 32);
        let ramp = AdmissibleGridField::from_fn(p.grid, theta, translating_ramp(0.0, rho, v, theta));
        let s = solve_limit_shape(&p, &SolverOptions::default()).unwrap();
        assert!(s.report.objective > rate_j(&ramp, &p, None).unwrap().objective + 1e-3);
        let i_ramp = rate_j(&ramp, &p, s.report.j_min).unwrap().i_value.unwrap();
        assert!(i_ramp > 0.0);
    }

    #[test]
    fn constant_drift_does_not_move_the_maximiser() {
        let (theta, rho, v) = (1.0, 0.8, 0.5);
        let p = ramp_problem(theta, rho, v, 1.0, 16);
        let c = 0.7;
        let pd = p.clone().with_drift(DriftFunction::constant(c));
        let opts = SolverOptions { tol: 1e-12, ..SolverOptions::default() };
        let a = solve_limit_shape(&p, &opts).unwrap();
        let b = solve_limit_shape(&pd, &opts).unwrap();
        assert!(a.field.sup_distance(&b.field).unwrap() < 1e-9);
        // F^f = c (M(0) - M(T)), a first-moment difference.
        let g = p.grid;
        let m = |j: usize| {
            let row: Vec<f64> = (0..g.nx).map(|i| a.field.value(i, j)).collect();
            (row.iter().sum::<f64>() - 0.5 * (row[0] + row[g.nx - 1])) * g.dx
        };
        assert!((b.report.drift_term - c * (m(0) - m(g.nt))).abs() < 1e-12);
    }

    #[test]
    fn linear_drift_pushes_mass() {
        // f(s) = k s with k > 0 rewards decreasing H early... compare total mass at mid time.
        let (theta, rho, v) = (1.0, 0.8, 0.5);
        let p = ramp_problem(theta, rho, v, 1.0, 16);
        let a = solve_limit_shape(&p, &SolverOptions::default()).unwrap();
        let b = solve_limit_shape(&p.clone().with_drift(DriftFunction::linear(0.0, 2.0)), &SolverOptions::default()).unwrap();
        let g = p.grid;
        let mid = g.nt / 2;
        let m = |f: &AdmissibleGridField| (0..g.nx).map(|i| f.value(i, mid)).sum::<f64>();
        // F^f gains f'(s) M(s): a positive slope rewards larger M, i.e. particles moving later.
        assert!(m(&b.field) > m(&a.field));
    }
}
