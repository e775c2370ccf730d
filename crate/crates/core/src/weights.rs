//! Vandermonde-ratio step weights, path weights and the three transition
//! kernels (plain, drifted, q-deformed).
//!
//! For a step `e` from `x` the plain weight is
//! `prod_{i<j} (x_i - x_j + theta (e_i - e_j)) / (x_i - x_j)`, and the
//! q-weight replaces each difference `a - b` by `q^a - q^b`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{invalid, Error, Result};
use crate::lattice::{big_to_f64, ParticleConfig, Real, StepVector, WalkEnsemble};

/// Largest `N` for which `{0,1}^N` is enumerated.
pub const DEFAULT_ENUM_CAP: usize = 20;

/// Largest number of pair factors multiplied in exact path weights.
pub const DEFAULT_EXACT_PAIR_CAP: usize = 1_000_000;

/// A step weight, stored in log space with an optional exact value.
#[derive(Clone, Debug, PartialEq)]
pub struct StepWeight {
    pub feasible: bool,
    pub log_value: f64,
    pub exact: Option<BigRational>,
}

impl StepWeight {
    fn zero(exact_mode: bool) -> Self {
        StepWeight {
            feasible: false,
            log_value: f64::NEG_INFINITY,
            exact: exact_mode.then(BigRational::zero),
        }
    }

    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// Drift values `b_0, ..., b_{T-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftProfile {
    b: Vec<Real>,
}

impl DriftProfile {
    pub fn new(b: Vec<Real>) -> Result<Self> {
        if let Some(v) = b.iter().find(|v| !(v.value() > 0.0) || !v.value().is_finite()) {
            return invalid(format!("drift values must be positive, got {v}"));
        }
        Ok(DriftProfile { b })
    }

    pub fn constant(b: Real, steps: usize) -> Result<Self> {
        Self::new(vec![b; steps])
    }

    pub fn unit(steps: usize) -> Self {
        DriftProfile { b: vec![Real::integer(1); steps] }
    }

    /// `b_t = exp(f(t / N))`.
    pub fn from_fn(f: impl Fn(f64) -> f64, n: usize, steps: usize) -> Result<Self> {
        Self::new((0..steps).map(|t| Real::float(f(t as f64 / n as f64).exp())).collect())
    }

    pub fn from_f64(b: &[f64]) -> Result<Self> {
        Self::new(b.iter().map(|&v| Real::float(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn get(&self, t: usize) -> Real {
        self.b[t]
    }

    pub fn values(&self) -> Vec<f64> {
        self.b.iter().map(Real::value).collect()
    }

    pub fn is_exact(&self) -> bool {
        self.b.iter().all(Real::is_exact)
    }
}

/// Which weight family a computation uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightMode {
    Plain,
    /// q-deformed weights with `q` in (0, 1).
    Q(f64),
}

impl WeightMode {
    pub fn check(&self) -> Result<()> {
        match *self {
            WeightMode::Q(q) if !(q > 0.0 && q < 1.0) => invalid(format!("q must lie in (0,1), got {q}")),
            _ => Ok(()),
        }
    }
}

/// `q = exp(kappa / N)`.
pub fn q_from_kappa(kappa: f64, n: usize) -> f64 {
    (kappa / n as f64).exp()
}

/// Plain pair factor `(d + theta (ei - ej)) / d` for a pair at distance `d > 0`.
#[inline]
pub fn pair_factor_plain(d: f64, theta: f64, ei: u8, ej: u8) -> f64 {
    (d + theta * (ei as f64 - ej as f64)) / d
}

/// q pair factor `(q^{a+theta ei} - q^{b+theta ej}) / (q^a - q^b)` with `a - b = d`,
/// written as `q^{theta ej} expm1(lq (d + theta (ei - ej))) / expm1(lq d)`, `lq = ln q`.
#[inline]
pub fn pair_factor_q(d: f64, theta: f64, lq: f64, ei: u8, ej: u8) -> f64 {
    let shift = theta * (ei as f64 - ej as f64);
    (lq * theta * ej as f64).exp() * (lq * (d + shift)).exp_m1() / (lq * d).exp_m1()
}

#[inline]
pub fn pair_factor(mode: WeightMode, d: f64, theta: f64, ei: u8, ej: u8) -> f64 {
    match mode {
        WeightMode::Plain => pair_factor_plain(d, theta, ei, ej),
        WeightMode::Q(q) => pair_factor_q(d, theta, q.ln(), ei, ej),
    }
}

fn check_len(x: &ParticleConfig, e: &StepVector) -> Result<()> {
    if x.len() != e.len() {
        return invalid(format!("step has {} entries for {} particles", e.len(), x.len()));
    }
    Ok(())
}

/// Exact plain ratio. With `theta = p/q`, every pair factor is
/// `(q d + p (ei - ej)) / (q d)` where `q d` is an integer.
fn exact_ratio(x: &ParticleConfig, e: &StepVector, theta: num_rational::Rational64) -> BigRational {
    let (p, q) = (*theta.numer(), *theta.denom());
    let n = x.len();
    let m = x.shape();
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for i in 0..n {
        for j in i + 1..n {
            let qd = q * (m[i] - m[j]) + p * (j - i) as i64;
            let shift = p * (e.0[i] as i64 - e.0[j] as i64);
            num *= qd + shift;
            den *= qd;
        }
    }
    BigRational::new(num, den)
}

/// Plain Vandermonde ratio `V(x + theta e) / V(x)`. Feasibility is decided
/// from the adjacent-pair rule first, so packed pairs never produce `0/0`.
pub fn vandermonde_ratio(x: &ParticleConfig, e: &StepVector) -> Result<StepWeight> {
    check_len(x, e)?;
    let theta = x.theta();
    if !x.is_feasible(e) {
        return Ok(StepWeight::zero(theta.is_exact()));
    }
    let exact = theta.as_exact().map(|t| exact_ratio(x, e, t));
    let th = theta.value();
    let n = x.len();
    let mut acc = KahanSum::default();
    for i in 0..n {
        for j in i + 1..n {
            if e.0[i] != e.0[j] {
                acc.add(pair_factor_plain(x.distance(i, j), th, e.0[i], e.0[j]).ln());
            }
        }
    }
    Ok(StepWeight { feasible: true, log_value: acc.sum(), exact })
}

/// q-deformed step weight without the drift factor.
pub fn q_ratio(x: &ParticleConfig, e: &StepVector, q: f64) -> Result<StepWeight> {
    check_len(x, e)?;
    WeightMode::Q(q).check()?;
    if !x.is_feasible(e) {
        return Ok(StepWeight::zero(false));
    }
    let th = x.theta().value();
    let lq = q.ln();
    let n = x.len();
    let mut acc = KahanSum::default();
    for i in 0..n {
        for j in i + 1..n {
            if e.0[i] == 0 && e.0[j] == 0 {
                continue;
            }
            acc.add(pair_factor_q(x.distance(i, j), th, lq, e.0[i], e.0[j]).ln());
        }
    }
    Ok(StepWeight { feasible: true, log_value: acc.sum(), exact: None })
}

fn enum_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::CapExceeded {
            what: "step enumeration over {0,1}^N",
            size: n,
            cap,
            hint: "; the level sums equal binomial(N, k) identically",
        });
    }
    Ok(())
}

/// All `e` with exactly `k` ones, in increasing mask order.
pub fn steps_with_ones(n: usize, k: usize) -> impl Iterator<Item = StepVector> {
    (0u64..1u64 << n).filter(move |m| m.count_ones() as usize == k).map(move |m| StepVector::from_mask(m, n))
}

/// `sum_{|e| = k} V(x + theta e) / V(x)` by enumeration, in exact arithmetic.
pub fn level_sum(x: &ParticleConfig, k: usize) -> Result<BigRational> {
    level_sum_capped(x, k, DEFAULT_ENUM_CAP)
}

pub fn level_sum_capped(x: &ParticleConfig, k: usize, cap: usize) -> Result<BigRational> {
    let n = x.len();
    enum_cap(n, cap)?;
    if k > n {
        return invalid(format!("k = {k} exceeds N = {n}"));
    }
    let Some(theta) = x.theta().as_exact() else {
        return invalid("level_sum needs a rational theta");
    };
    // Common denominator prod (q d): sum the numerators as integers.
    let (p, q) = (*theta.numer(), *theta.denom());
    let m = x.shape();
    let mut dists = Vec::with_capacity(n * n / 2);
    let mut den = BigInt::one();
    for i in 0..n {
        for j in i + 1..n {
            let qd = q * (m[i] - m[j]) + p * (j - i) as i64;
            dists.push((i, j, qd));
            den *= qd;
        }
    }
    let mut total = BigInt::zero();
    for e in steps_with_ones(n, k) {
        if !x.is_feasible(&e) {
            continue;
        }
        let mut num = BigInt::one();
        for &(i, j, qd) in &dists {
            num *= qd + p * (e.0[i] as i64 - e.0[j] as i64);
        }
        total += num;
    }
    Ok(BigRational::new(total, den))
}

/// `2^{-N} V(x + theta e) / V(x)`.
pub fn kernel_plain(x: &ParticleConfig, e: &StepVector) -> Result<f64> {
    let w = vandermonde_ratio(x, e)?;
    Ok((w.log_value - x.len() as f64 * std::f64::consts::LN_2).exp())
}

/// Exact plain kernel probability (rational theta).
pub fn kernel_plain_exact(x: &ParticleConfig, e: &StepVector) -> Result<BigRational> {
    let w = vandermonde_ratio(x, e)?;
    let Some(v) = w.exact else {
        return invalid("exact kernel needs a rational theta");
    };
    Ok(v / BigRational::from_integer(BigInt::from(2u8).pow(x.len() as u32)))
}

/// `(1 + b)^{-N} b^{|e|} V(x + theta e) / V(x)`.
pub fn kernel_drifted(x: &ParticleConfig, e: &StepVector, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return invalid(format!("drift b must be positive, got {b}"));
    }
    let w = vandermonde_ratio(x, e)?;
    let n = x.len() as f64;
    Ok((w.log_value + e.ones() as f64 * b.ln() - n * b.ln_1p()).exp())
}

/// Exact drifted kernel probability (rational theta and b).
pub fn kernel_drifted_exact(x: &ParticleConfig, e: &StepVector, b: &BigRational) -> Result<BigRational> {
    if !b.is_positive() {
        return invalid("drift b must be positive");
    }
    let w = vandermonde_ratio(x, e)?;
    let Some(v) = w.exact else {
        return invalid("exact kernel needs a rational theta");
    };
    let one_b = BigRational::one() + b;
    Ok(v * pow_big(b, e.ones()) / pow_big(&one_b, x.len()))
}

pub(crate) fn pow_big(b: &BigRational, k: usize) -> BigRational {
    num_traits::pow(b.clone(), k)
}

/// `prod_{i=1}^N (1 + b t^{i-1})` with `t = q^theta`.
pub fn macdonald_normalization(n: usize, q: f64, theta: f64, b: f64) -> f64 {
    let t = q.powf(theta);
    (0..n).map(|i| 1.0 + b * t.powi(i as i32)).product()
}

/// Brute-force `sum_e q-weight(e) b^{|e|}`.
pub fn macdonald_weight_sum(x: &ParticleConfig, q: f64, b: f64) -> Result<f64> {
    let n = x.len();
    enum_cap(n, DEFAULT_ENUM_CAP)?;
    let mut acc = KahanSum::default();
    for mask in 0u64..1u64 << n {
        let e = StepVector::from_mask(mask, n);
        let w = q_ratio(x, &e, q)?;
        if w.feasible {
            acc.add((w.log_value + e.ones() as f64 * b.ln()).exp());
        }
    }
    Ok(acc.sum())
}

/// q-deformed kernel with drift `b`, normalized by `prod (1 + b t^{i-1})`.
/// Debug builds re-derive the normalization by enumeration when `N <= 10`.
pub fn kernel_macdonald(x: &ParticleConfig, e: &StepVector, q: f64, b: f64) -> Result<f64> {
    WeightMode::Q(q).check()?;
    if !(b > 0.0) {
        return invalid(format!("drift b must be positive, got {b}"));
    }
    let w = q_ratio(x, e, q)?;
    let z = macdonald_normalization(x.len(), q, x.theta().value(), b);
    if cfg!(debug_assertions) && x.len() <= 10 {
        let brute = macdonald_weight_sum(x, q, b)?;
        debug_assert!((brute - z).abs() <= 1e-10 * z, "normalization {brute} vs {z}");
    }
    Ok((w.log_value + e.ones() as f64 * b.ln()).exp() / z)
}

/// Weight of a whole walk.
#[derive(Clone, Debug, PartialEq)]
pub struct PathWeight {
    pub feasible: bool,
    pub log_value: f64,
    pub exact: Option<BigRational>,
}

/// `prod_t w(x(t), e(t)) b_t^{|e(t)|}`. The exact value is present in plain mode when
/// theta and every `b_t` are rational and the pair-factor count stays under the cap.
pub fn path_weight(w: &WalkEnsemble, drift: &DriftProfile, mode: WeightMode) -> Result<PathWeight> {
    path_weight_capped(w, drift, mode, DEFAULT_EXACT_PAIR_CAP)
}

pub fn path_weight_capped(w: &WalkEnsemble, drift: &DriftProfile, mode: WeightMode, pair_cap: usize) -> Result<PathWeight> {
    mode.check()?;
    let steps = w.steps();
    if drift.len() != steps {
        return invalid(format!("drift has {} values for {steps} steps", drift.len()));
    }
    let n = w.particles();
    let pairs = n * n.saturating_sub(1) / 2 * steps;
    let want_exact = mode == WeightMode::Plain && w.theta().is_exact() && drift.is_exact() && pairs <= pair_cap;
    let mut exact = want_exact.then(BigRational::one);
    let mut acc = KahanSum::default();
    for t in 0..steps {
        let x = w.config(t);
        let e = w.step_vector(t);
        let sw = match mode {
            WeightMode::Plain => vandermonde_ratio(&x, &e)?,
            WeightMode::Q(q) => q_ratio(&x, &e, q)?,
        };
        if !sw.feasible {
            return Ok(PathWeight {
                feasible: false,
                log_value: f64::NEG_INFINITY,
                exact: want_exact.then(BigRational::zero),
            });
        }
        let k = e.ones();
        acc.add(sw.log_value + k as f64 * drift.get(t).value().ln());
        if let (Some(ex), Some(v), Some(b)) = (exact.as_mut(), sw.exact, drift.get(t).as_big()) {
            *ex *= v * pow_big(&b, k);
        }
    }
    Ok(PathWeight { feasible: true, log_value: acc.sum(), exact })
}

/// Neumaier-compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Largest and smallest feasible plain ratios over all steps of `x`, for fitting the
/// lower-bound constant of the ratio bounds.
pub fn ratio_extremes(x: &ParticleConfig) -> Result<(f64, f64)> {
    let n = x.len();
    enum_cap(n, DEFAULT_ENUM_CAP)?;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for mask in 0u64..1u64 << n {
        let w = vandermonde_ratio(x, &StepVector::from_mask(mask, n))?;
        if w.feasible {
            let v = w.exact.as_ref().map(big_to_f64).unwrap_or_else(|| w.value());
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Ok((lo, hi))
}
