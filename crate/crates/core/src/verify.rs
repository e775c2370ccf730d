//! Finite-N versus variational comparisons along N schedules.
//!
//! Each harness computes an exact (transfer-matrix) quantity for a sequence of
//! system sizes, the corresponding variational value, and the gap sequence with a
//! monotone-trend verdict.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{GridSpec, HeightField, ParticleConfig, Real, YoungDiagram};
use crate::sampler::{ball_log_probability_problem, unit_drift, Corridor, TransferProblem, DEFAULT_STATE_CAP};
use crate::surface::{sigma, Profile, Slope};
use crate::symfun::{skew_jack_pathsum, skew_macdonald_pathsum, QParams};
use crate::variational::{
    ramp_boundaries, rate_j, solve_limit_shape, translating_ramp, AdmissibleGridField, DriftFunction, SolverOptions, VariationalProblem,
};
use crate::weights::WeightMode;

/// True when every gap is strictly smaller than the previous one.
pub fn strictly_decreasing(gaps: &[f64]) -> bool {
    gaps.len() >= 2 && gaps.windows(2).all(|w| w[1] < w[0])
}

/// Drift `f` with `b_t = exp(f(t / N))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftSpec {
    Constant { c: f64 },
    /// `f(s) = a + b s`.
    Linear { a: f64, b: f64 },
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec::Constant { c: 0.0 }
    }
}

impl DriftSpec {
    pub fn function(&self) -> DriftFunction {
        match *self {
            DriftSpec::Constant { c } => DriftFunction::constant(c),
            DriftSpec::Linear { a, b } => DriftFunction::linear(a, b),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, DriftSpec::Constant { c } if c == 0.0)
    }

    /// `b_t = exp(f(t / N))` for `t = 0..steps`.
    pub fn specialization(&self, n: usize, steps: usize) -> Vec<f64> {
        let f = self.function();
        (0..steps).map(|t| f.value(t as f64 / n as f64).exp()).collect()
    }
}

// ---------------------------------------------------------------------------
// Ball probabilities

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpConfig {
    pub theta: Real,
    pub ns: Vec<usize>,
    pub eps: f64,
    /// Gaps of the initial configuration are `theta + gap_excess`, so `rho = theta / (theta + gap_excess)`.
    pub gap_excess: i64,
    /// Ramp speed; `v * t_macro * N` must be an integer.
    pub v: f64,
    pub t_macro: f64,
    /// Cells on the long side of the grid used to evaluate `J`.
    pub cells: usize,
    pub state_cap: usize,
}

impl LdpConfig {
    pub fn new(theta: Real) -> Self {
        LdpConfig { theta, ns: vec![4, 6, 8], eps: 0.25, gap_excess: 1, v: 0.5, t_macro: 2.0, cells: 512, state_cap: DEFAULT_STATE_CAP }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpRow {
    pub n: usize,
    pub steps: usize,
    /// `(1/N^2) ln P(ball)`.
    pub log_prob: f64,
    /// `-(1/theta) J - T ln 2`.
    pub predicted: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpReport {
    pub theta: f64,
    pub eps: f64,
    pub rho: f64,
    pub v: f64,
    pub t_macro: f64,
    /// `J_h(H*)` on the solver grid.
    pub j_value: f64,
    /// `-Area sigma(rho, -rho v)`.
    pub j_closed_form: f64,
    pub grid_cells: usize,
    pub rows: Vec<LdpRow>,
    pub decreasing: bool,
    pub note: Option<String>,
}

/// Ball probabilities around a translating ramp `H*` of density `rho` and speed `v`.
///
/// The initial configuration has equal gaps `theta + k`; the final one is its
/// translate by `v T N` lattice units. Both are endpoints of the walk, so `H*`
/// has exactly the boundary data of the conditioned ensemble up to O(1/N).
pub fn verify_ldp(cfg: &LdpConfig) -> Result<LdpReport> {
    let theta = cfg.theta;
    let th = theta.value();
    if cfg.gap_excess < 1 {
        return invalid("gap_excess must be at least 1 (packed configurations are frozen)");
    }
    let rho = th / (th + cfg.gap_excess as f64);
    let slope = Slope::new(rho, -rho * cfg.v)?;
    let area = (th / rho) * cfg.t_macro;
    let j_closed = -area * sigma(slope)?;

    // J on a grid via the variational module; the ramp starts at 0 in these units.
    let (p0, p1) = ramp_boundaries(0.0, rho, cfg.v, th, cfg.t_macro);
    let problem = VariationalProblem::with_cells(p0, p1, cfg.t_macro, th, cfg.cells)?;
    let ramp = AdmissibleGridField::from_fn(problem.grid, th, translating_ramp(0.0, rho, cfg.v, th));
    let j_value = rate_j(&ramp, &problem, None)?.j_value;

    let mut rows = Vec::new();
    let mut note = None;
    for &n in &cfg.ns {
        let steps_f = cfg.t_macro * n as f64;
        let shift_f = cfg.v * steps_f;
        if (steps_f - steps_f.round()).abs() > 1e-9 || (shift_f - shift_f.round()).abs() > 1e-9 {
            return invalid(format!("T N = {steps_f} and v T N = {shift_f} must be integers at N = {n}"));
        }
        let (steps, shift) = (steps_f.round() as usize, shift_f.round() as i64);
        let shape: Vec<i64> = (0..n).map(|i| cfg.gap_excess * (n - 1 - i) as i64).collect();
        let y = ParticleConfig::new(theta, Real::integer(0), shape)?;
        let z = y.shifted(shift);
        // Align the ramp with the centre of the initial configuration's support.
        let nf = n as f64;
        let centre = (y.position(n - 1) + y.position(0) + th) / (2.0 * nf);
        let a = centre - 0.5 * th / rho;
        let h_star = ramp_field(a, rho, cfg.v, th, cfg.t_macro, steps);
        let p = TransferProblem::new(y.clone(), Some(z), steps, unit_drift(steps), WeightMode::Plain)?
            .with_corridor(Corridor::from_ball(&h_star, cfg.eps, &y, steps))
            .with_cap(cfg.state_cap);
        let log_prob = match ball_log_probability_problem(&p) {
            Ok(v) => v,
            Err(e @ Error::StateExplosion { .. }) => {
                note = Some(format!("schedule truncated at N = {n}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let predicted = -j_value / th - cfg.t_macro * std::f64::consts::LN_2;
        rows.push(LdpRow { n, steps, log_prob, predicted, gap: (log_prob - predicted).abs() });
    }
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    Ok(LdpReport {
        theta: th,
        eps: cfg.eps,
        rho,
        v: cfg.v,
        t_macro: cfg.t_macro,
        j_value,
        j_closed_form: j_closed,
        grid_cells: cfg.cells,
        decreasing: strictly_decreasing(&gaps),
        rows,
        note,
    })
}

/// Translating ramp sampled with rows at the integer times `t / N`.
fn ramp_field(a: f64, rho: f64, v: f64, theta: f64, t_macro: f64, steps: usize) -> HeightField {
    let lo = a - 1.0;
    let hi = a + theta / rho + v * t_macro + 1.0;
    let nx = 4097;
    let grid = GridSpec { x_min: lo, dx: (hi - lo) / (nx - 1) as f64, nx, t_max: t_macro, nt: steps };
    HeightField::from_fn(grid, theta, translating_ramp(a, rho, v, theta))
}

// ---------------------------------------------------------------------------
// Skew Jack and Macdonald asymptotics

/// Self-similar diagrams: `lambda` is the `N x floor(alpha N)` rectangle, `mu` is empty,
/// `tau N` steps. The boundary data are the packed profile on `[-theta, 0]` and its
/// translate by `alpha`, over time `tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticConfig {
    pub theta: f64,
    pub ns: Vec<usize>,
    pub alpha: f64,
    pub tau: f64,
    #[serde(default)]
    pub drift: DriftSpec,
    /// `q = exp(kappa / N)` for each kappa (Macdonald only).
    #[serde(default)]
    pub kappas: Vec<f64>,
    pub cells: usize,
    pub tol: f64,
}

impl AsymptoticConfig {
    pub fn new(theta: f64) -> Self {
        AsymptoticConfig { theta, ns: vec![4, 6, 8, 10], alpha: 0.5, tau: 1.0, drift: DriftSpec::default(), kappas: vec![-0.5, -2.0], cells: 128, tol: 1e-9 }
    }

    fn diagrams(&self, n: usize) -> Result<(YoungDiagram, YoungDiagram, usize)> {
        let cols = (self.alpha * n as f64 + 1e-9).floor();
        let steps = (self.tau * n as f64 + 1e-9).floor() as usize;
        if cols < 0.0 || (cols as usize) > steps {
            return invalid(format!("alpha = {} and tau = {} give no walks at N = {n}", self.alpha, self.tau));
        }
        Ok((YoungDiagram::rectangle(n, cols as u32), YoungDiagram::empty(), steps))
    }

    fn theta_real(&self) -> Real {
        // Exact theta keeps jack_principal in closed form; the path sum is float anyway.
        [(1, 2), (1, 1), (2, 1), (1, 3), (3, 1), (3, 2), (2, 3), (1, 4), (4, 1)]
            .iter()
            .map(|&(p, q)| (p, q, p as f64 / q as f64))
            .find(|&(_, _, v)| (v - self.theta).abs() < 1e-15)
            .and_then(|(p, q, _)| Real::ratio(p, q).ok())
            .unwrap_or(Real::float(self.theta))
    }
}

/// The variational side: `(1/theta) sup { int int sigma + F^f }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitValue {
    pub objective: f64,
    pub target: f64,
    pub drift_term: f64,
    pub cells: usize,
    pub tol: f64,
    pub sweeps: usize,
    pub converged: bool,
}

pub fn asymptotic_target(cfg: &AsymptoticConfig) -> Result<LimitValue> {
    let th = cfg.theta;
    let h0 = Profile::ramp(-th, th);
    let h1 = h0.translated(cfg.alpha);
    let mut problem = VariationalProblem::with_cells(h0, h1, cfg.tau, th, cfg.cells)?;
    if !cfg.drift.is_zero() {
        problem = problem.with_drift(cfg.drift.function());
    }
    let opts = SolverOptions { tol: cfg.tol, ..SolverOptions::default() };
    let s = solve_limit_shape(&problem, &opts)?;
    Ok(LimitValue {
        objective: s.report.objective,
        target: s.report.objective / th,
        drift_term: s.report.drift_term,
        cells: cfg.cells,
        tol: cfg.tol,
        sweeps: s.report.sweeps,
        converged: s.report.converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRow {
    pub n: usize,
    pub steps: usize,
    /// `(1/N^2) ln` of the skew value.
    pub scaled_log: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JackReport {
    pub config: AsymptoticConfig,
    pub limit: LimitValue,
    pub rows: Vec<AsymptoticRow>,
    pub decreasing: bool,
    pub note: Option<String>,
}

fn rows_until_explosion(ns: &[usize], mut f: impl FnMut(usize) -> Result<AsymptoticRow>) -> Result<(Vec<AsymptoticRow>, Option<String>)> {
    let mut rows = Vec::new();
    for &n in ns {
        match f(n) {
            Ok(r) => rows.push(r),
            Err(e @ Error::StateExplosion { .. }) => return Ok((rows, Some(format!("schedule truncated at N = {n}: {e}")))),
            Err(e) => return Err(e),
        }
    }
    Ok((rows, None))
}

/// `(1/N^2) ln J_{lambda'/mu'}(b; 1/theta)` against `(1/theta) J^f_h`.
pub fn verify_jack(cfg: &AsymptoticConfig) -> Result<JackReport> {
    let limit = asymptotic_target(cfg)?;
    let theta = cfg.theta_real();
    let (rows, note) = rows_until_explosion(&cfg.ns, |n| {
        let (lambda, mu, steps) = cfg.diagrams(n)?;
        let b: Vec<Real> = cfg.drift.specialization(n, steps).into_iter().map(Real::float).collect();
        let v = skew_jack_pathsum(&lambda, &mu, &b, n, theta)?;
        let scaled_log = v.log_value / (n * n) as f64;
        Ok(AsymptoticRow { n, steps, scaled_log, gap: (scaled_log - limit.target).abs() })
    })?;
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    Ok(JackReport { config: cfg.clone(), limit, decreasing: strictly_decreasing(&gaps), rows, note })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaRun {
    pub kappa: f64,
    pub rows: Vec<AsymptoticRow>,
    pub decreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacdonaldReport {
    pub config: AsymptoticConfig,
    pub limit: LimitValue,
    pub runs: Vec<KappaRun>,
    /// `|value(kappa_1) - value(kappa_2)|` per N for the first two kappas.
    pub kappa_gaps: Vec<f64>,
    pub kappa_gaps_decreasing: bool,
    /// Every kappa gap is at rounding level (at theta = 1 the value is a Schur function for all q).
    pub kappa_gaps_vanish: bool,
    pub note: Option<String>,
}

/// `(1/N^2) ln P_{lambda'/mu'}(b; q, t)` with `q = exp(kappa / N)`, `t = q^theta`,
/// against the same `(1/theta) J^f_h` for every kappa.
pub fn verify_macdonald(cfg: &AsymptoticConfig) -> Result<MacdonaldReport> {
    if cfg.kappas.is_empty() || cfg.kappas.iter().any(|&k| !(k < 0.0)) {
        return invalid("kappas must be a nonempty list of negative numbers");
    }
    let limit = asymptotic_target(cfg)?;
    let mut runs = Vec::new();
    let mut note = None;
    for &kappa in &cfg.kappas {
        let (rows, nt) = rows_until_explosion(&cfg.ns, |n| {
            let (lambda, mu, steps) = cfg.diagrams(n)?;
            let b = cfg.drift.specialization(n, steps);
            let v = skew_macdonald_pathsum(&lambda, &mu, &b, n, QParams::from_kappa(kappa, n, cfg.theta)?)?;
            let scaled_log = v.log_value / (n * n) as f64;
            Ok(AsymptoticRow { n, steps, scaled_log, gap: (scaled_log - limit.target).abs() })
        })?;
        note = note.or(nt);
        let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
        runs.push(KappaRun { kappa, decreasing: strictly_decreasing(&gaps), rows });
    }
    let kappa_gaps: Vec<f64> = if runs.len() >= 2 {
        runs[0].rows.iter().zip(&runs[1].rows).map(|(a, b)| (a.scaled_log - b.scaled_log).abs()).collect()
    } else {
        Vec::new()
    };
    let scale = runs.iter().flat_map(|r| r.rows.iter().map(|x| x.scaled_log.abs())).fold(1.0, f64::max);
    Ok(MacdonaldReport {
        config: cfg.clone(),
        limit,
        kappa_gaps_decreasing: strictly_decreasing(&kappa_gaps),
        kappa_gaps_vanish: !kappa_gaps.is_empty() && kappa_gaps.iter().all(|&g| g <= 1e-12 * scale),
        kappa_gaps,
        runs,
        note,
    })
}
