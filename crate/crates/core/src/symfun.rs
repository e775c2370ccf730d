//! Principal specializations of Jack and Macdonald polynomials, q-Pochhammer and
//! q-Gamma functions, skew Schur functions by Jacobi-Trudi, and skew Jack/Macdonald
//! polynomials evaluated as weighted sums over walks.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::lattice::{big_to_f64, diagram_to_config, Real, YoungDiagram};
use crate::sampler::{path_sum, TransferProblem};
use crate::surface::{free_entropy, free_entropy_q, Profile};
use crate::weights::{DriftProfile, WeightMode};

/// A real value kept as `sign * exp(log_value)`, plus its exact rational when known.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyValue {
    pub log_value: f64,
    pub sign: i8,
    pub exact: Option<BigRational>,
}

impl PolyValue {
    pub fn zero(exact: bool) -> Self {
        PolyValue { log_value: f64::NEG_INFINITY, sign: 0, exact: exact.then(BigRational::zero) }
    }

    pub fn from_log(log_value: f64, sign: i8) -> Self {
        PolyValue { log_value, sign, exact: None }
    }

    pub fn from_exact(r: BigRational) -> Self {
        let sign = if r.is_zero() { 0 } else if r.is_positive() { 1 } else { -1 };
        PolyValue { log_value: big_log_value(&r), sign, exact: Some(r) }
    }

    pub fn value(&self) -> f64 {
        match &self.exact {
            Some(r) => big_to_f64(r),
            None => self.sign as f64 * self.log_value.exp(),
        }
    }
}

/// `ln |r|` without overflowing on huge numerators or denominators.
fn big_log_value(r: &BigRational) -> f64 {
    if r.is_zero() {
        return f64::NEG_INFINITY;
    }
    big_int_ln(&r.numer().abs()) - big_int_ln(&r.denom().abs())
}

fn big_int_ln(n: &BigInt) -> f64 {
    let bits = n.bits();
    if bits < 1000 {
        return num_traits::ToPrimitive::to_f64(n).expect("finite below 1000 bits").ln();
    }
    let shift = bits - 64;
    let top: BigInt = n >> shift;
    num_traits::ToPrimitive::to_f64(&top).expect("64-bit").ln() + shift as f64 * std::f64::consts::LN_2
}

// ---------------------------------------------------------------------------
// Jack

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta.is_finite()) {
        return invalid(format!("theta must be positive, got {theta}"));
    }
    Ok(())
}

/// `J_lambda(1^N; theta)` for the monic normalization, as the product over boxes
/// `(N theta + (j-1) - theta (i-1)) / (arm + theta leg + theta)`. Exact when theta is
/// rational; zero when `lambda` has more than `N` rows.
pub fn jack_principal(lambda: &YoungDiagram, n: usize, theta: Real) -> Result<PolyValue> {
    let th = theta.value();
    check_theta(th)?;
    if lambda.num_rows() > n {
        return Ok(PolyValue::zero(theta.is_exact()));
    }
    let conj = lambda.transpose();
    let nf = n as f64;
    let mut log = 0.0;
    let mut exact = theta.as_exact().map(|_| BigRational::one());
    for i in 1..=lambda.num_rows() {
        for j in 1..=lambda.row(i - 1) as usize {
            let arm = (lambda.row(i - 1) as usize - j) as i64;
            let leg = (conj.row(j - 1) as usize - i) as i64;
            log += (nf * th + (j - 1) as f64 - th * (i - 1) as f64).ln() - (arm as f64 + th * leg as f64 + th).ln();
            if let (Some(e), Some(r)) = (exact.as_mut(), theta.as_exact()) {
                let (p, q) = (BigInt::from(*r.numer()), BigInt::from(*r.denom()));
                // Multiply through by q.
                let num = BigInt::from(n as i64) * &p + BigInt::from(j as i64 - 1) * &q - &p * BigInt::from(i as i64 - 1);
                let den = BigInt::from(arm) * &q + &p * BigInt::from(leg) + &p;
                *e *= BigRational::new(num, den);
            }
        }
    }
    debug_assert!({
        let g = jack_principal_gamma(lambda, n, th)?;
        (g - log).abs() <= 1e-10 * (1.0 + log.abs())
    });
    Ok(match exact {
        Some(e) => PolyValue { log_value: log, sign: 1, exact: Some(e) },
        None => PolyValue::from_log(log, 1),
    })
}

/// `ln J_lambda(1^N; theta)` from the Gamma-function form with `x_i = lambda_i - theta (i-1)`:
/// `prod_{i<j} Gamma(x_i - x_j + theta) / Gamma(x_i - x_j) * prod_i Gamma(theta) / Gamma(i theta)`.
pub fn jack_principal_gamma(lambda: &YoungDiagram, n: usize, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if lambda.num_rows() > n {
        return Ok(f64::NEG_INFINITY);
    }
    let x: Vec<f64> = (0..n).map(|i| lambda.row(i) as f64 - theta * i as f64).collect();
    let mut log = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = x[i] - x[j];
            log += ln_gamma(d + theta) - ln_gamma(d);
        }
        log += ln_gamma(theta) - ln_gamma((i + 1) as f64 * theta);
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// q-Pochhammer and q-Gamma

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return invalid(format!("q must lie in (0,1), got {q}"));
    }
    Ok(())
}

/// `-sum_{n>=1} (c1^n - c2^n) / (n (1 - q^n))`, i.e. `ln((c1;q)_inf / (c2;q)_inf)` for
/// `|c1|, |c2| <= 1/2`.
fn poch_tail_diff(c1: f64, c2: f64, q: f64) -> f64 {
    let mut s = 0.0;
    let (mut p1, mut p2, mut qn) = (1.0, 1.0, 1.0);
    for n in 1..=400 {
        p1 *= c1;
        p2 *= c2;
        qn *= q;
        let term = (p1 - p2) / (n as f64 * (1.0 - qn));
        s -= term;
        if term.abs() <= 1e-18 * s.abs().max(1e-300) && p1.abs().max(p2.abs()) < 1e-17 {
            break;
        }
    }
    s
}

/// `ln((a;q)_inf / (b;q)_inf)` for `0 <= a, b < 1`, summing `ln1p((b-a) q^k / (1 - b q^k))`
/// term by term until both arguments drop below 1/2, then closing with the series tail.
pub fn log_poch_ratio(a: f64, b: f64, q: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&a) && (0.0..1.0).contains(&b) && q > 0.0 && q < 1.0);
    let mut s = 0.0;
    let (mut qa, mut qb) = (a, b);
    while qa.max(qb) > 0.5 {
        s += ((qb - qa) / (1.0 - qb)).ln_1p();
        qa *= q;
        qb *= q;
    }
    s + poch_tail_diff(qa, qb, q)
}

/// `(a; q)_inf` for real `a`.
pub fn q_pochhammer(a: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    let (log, sign) = log_q_pochhammer(a, q);
    Ok(sign as f64 * log.exp())
}

/// `(ln |(a;q)_inf|, sign)`.
pub fn log_q_pochhammer(a: f64, q: f64) -> (f64, i8) {
    let mut s = 0.0;
    let mut sign = 1i8;
    let mut c = a;
    while c.abs() > 0.5 {
        let f = 1.0 - c;
        if f == 0.0 {
            return (f64::NEG_INFINITY, 0);
        }
        if f < 0.0 {
            sign = -sign;
        }
        s += f.abs().ln();
        c *= q;
    }
    (s + poch_tail_diff(c, 0.0, q), sign)
}

/// `Gamma_q(x) = (1-q)^{1-x} (q;q)_inf / (q^x;q)_inf`; poles at `x = 0, -1, -2, ...`.
pub fn q_gamma(x: f64, q: f64) -> Result<f64> {
    let (l, s) = ln_q_gamma(x, q)?;
    Ok(s as f64 * l.exp())
}

/// `(ln |Gamma_q(x)|, sign)`.
pub fn ln_q_gamma(x: f64, q: f64) -> Result<(f64, i8)> {
    check_q(q)?;
    if x <= 0.0 && x == x.round() {
        return Err(Error::Pole(format!("Gamma_q has a pole at x = {x}")));
    }
    let pre = (1.0 - x) * (1.0 - q).ln();
    if x > 0.0 {
        return Ok((pre + log_poch_ratio(q, q.powf(x), q), 1));
    }
    let (num, _) = log_q_pochhammer(q, q);
    let (den, sign) = log_q_pochhammer(q.powf(x), q);
    Ok((pre + num - den, sign))
}

// ---------------------------------------------------------------------------
// Macdonald

/// Macdonald parameters with `t = q^theta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QParams {
    pub q: f64,
    pub theta: f64,
}

impl QParams {
    pub fn new(q: f64, theta: f64) -> Result<Self> {
        check_q(q)?;
        check_theta(theta)?;
        Ok(QParams { q, theta })
    }

    pub fn t(&self) -> f64 {
        self.q.powf(self.theta)
    }

    /// `q = exp(kappa / N)`.
    pub fn from_kappa(kappa: f64, n: usize, theta: f64) -> Result<Self> {
        Self::new((kappa / n as f64).exp(), theta)
    }
}

/// `ln P_lambda(1, t, ..., t^{N-1}; q, t)` from the Pochhammer product
/// `t^{sum (i-1) lambda_i} prod_{i<j} (q^{l_ij} t^{j-i};q)(t^{j-i+1};q) / ((q^{l_ij} t^{j-i+1};q)(t^{j-i};q))`
/// with `l_ij = lambda_i - lambda_j`.
pub fn macdonald_principal(lambda: &YoungDiagram, n: usize, p: QParams) -> Result<PolyValue> {
    QParams::new(p.q, p.theta)?;
    if lambda.num_rows() > n {
        return Ok(PolyValue::zero(false));
    }
    let t = p.t();
    let lt = t.ln();
    let lq = p.q.ln();
    let mut log = 0.0;
    for i in 0..n {
        log += lt * (i as f64) * lambda.row(i) as f64;
        for j in i + 1..n {
            let g = (j - i) as f64;
            let l = (lambda.row(i) - lambda.row(j)) as f64;
            let a = (lq * l + lt * g).exp();
            log += log_poch_ratio(a, a * t, p.q) + log_poch_ratio(t * t.powf(g), t.powf(g), p.q);
        }
    }
    debug_assert!({
        let g = macdonald_principal_gamma(lambda, n, p)?;
        (g - log).abs() <= 1e-9 * (1.0 + log.abs())
    });
    Ok(PolyValue::from_log(log, 1))
}

/// The same value from the q-Gamma form
/// `q^{theta sum (i-1) lambda_i} prod_{i<j} Gamma_q(x_i - x_j + theta) / Gamma_q(x_i - x_j) prod_i Gamma_q(theta) / Gamma_q(i theta)`.
pub fn macdonald_principal_gamma(lambda: &YoungDiagram, n: usize, p: QParams) -> Result<f64> {
    QParams::new(p.q, p.theta)?;
    if lambda.num_rows() > n {
        return Ok(f64::NEG_INFINITY);
    }
    let th = p.theta;
    let x: Vec<f64> = (0..n).map(|i| lambda.row(i) as f64 - th * i as f64).collect();
    let lg = |v: f64| ln_q_gamma(v, p.q).map(|r| r.0);
    let mut log = 0.0;
    for i in 0..n {
        log += th * p.q.ln() * i as f64 * lambda.row(i) as f64;
        for j in i + 1..n {
            let d = x[i] - x[j];
            log += lg(d + th)? - lg(d)?;
        }
        log += lg(th)? - lg((i + 1) as f64 * th)?;
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// Schur by Jacobi-Trudi

/// Complete homogeneous symmetric polynomials `h_0..=h_kmax` of `b`.
fn complete_homogeneous<T: Clone + Zero + One + std::ops::Add<Output = T> + std::ops::Mul<Output = T>>(b: &[T], kmax: usize) -> Vec<T> {
    let mut h = vec![T::zero(); kmax + 1];
    h[0] = T::one();
    for v in b {
        for k in 1..=kmax {
            h[k] = h[k].clone() + v.clone() * h[k - 1].clone();
        }
    }
    h
}

/// `s_{lambda/mu}(b) = det[h_{lambda_i - mu_j - i + j}(b)]`; exact when every `b` is rational.
pub fn schur_skew_jt(lambda: &YoungDiagram, mu: &YoungDiagram, b: &[Real]) -> Result<PolyValue> {
    let exact = b.iter().all(Real::is_exact);
    if !lambda.contains(mu) {
        return Ok(PolyValue::zero(exact));
    }
    let l = lambda.num_rows();
    if l == 0 {
        return Ok(if exact { PolyValue::from_exact(BigRational::one()) } else { PolyValue::from_log(0.0, 1) });
    }
    let kmax = lambda.row(0) as usize + l;
    let idx = |i: usize, j: usize| lambda.row(i) as i64 - mu.row(j) as i64 - i as i64 + j as i64;
    if exact {
        let bb: Vec<BigRational> = b.iter().map(|v| v.as_big().expect("checked")).collect();
        let h = complete_homogeneous(&bb, kmax);
        let m: Vec<Vec<BigRational>> = (0..l)
            .map(|i| (0..l).map(|j| usize::try_from(idx(i, j)).ok().and_then(|k| h.get(k).cloned()).unwrap_or_else(BigRational::zero)).collect())
            .collect();
        Ok(PolyValue::from_exact(det_exact(m)))
    } else {
        let bf: Vec<f64> = b.iter().map(Real::value).collect();
        let h = complete_homogeneous(&bf, kmax);
        let m: Vec<Vec<f64>> = (0..l)
            .map(|i| (0..l).map(|j| usize::try_from(idx(i, j)).ok().and_then(|k| h.get(k).copied()).unwrap_or(0.0)).collect())
            .collect();
        let (log, sign) = det_log(m);
        Ok(PolyValue::from_log(log, sign))
    }
}

fn det_exact(mut m: Vec<Vec<BigRational>>) -> BigRational {
    let n = m.len();
    let mut det = BigRational::one();
    for c in 0..n {
        let Some(p) = (c..n).find(|&r| !m[r][c].is_zero()) else {
            return BigRational::zero();
        };
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        let piv = m[c][c].clone();
        det *= &piv;
        for r in c + 1..n {
            if m[r][c].is_zero() {
                continue;
            }
            let f = &m[r][c] / &piv;
            for k in c..n {
                let v = &f * &m[c][k];
                m[r][k] -= v;
            }
        }
    }
    det
}

/// `(ln |det|, sign)` by partial pivoting.
fn det_log(mut m: Vec<Vec<f64>>) -> (f64, i8) {
    let n = m.len();
    let mut log = 0.0;
    let mut sign = 1i8;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).expect("nonempty");
        if m[p][c] == 0.0 {
            return (f64::NEG_INFINITY, 0);
        }
        if p != c {
            m.swap(p, c);
            sign = -sign;
        }
        let piv = m[c][c];
        if piv < 0.0 {
            sign = -sign;
        }
        log += piv.abs().ln();
        for r in c + 1..n {
            let f = m[r][c] / piv;
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    (log, sign)
}

// ---------------------------------------------------------------------------
// Skew polynomials as path sums

fn path_problem(lambda: &YoungDiagram, mu: &YoungDiagram, n: usize, theta: Real, drift: DriftProfile, mode: WeightMode) -> Result<Option<TransferProblem>> {
    if lambda.num_rows() > n {
        return Err(Error::TooManyRows { rows: lambda.num_rows(), n });
    }
    let steps = drift.len();
    if !lambda.contains(mu) || (0..n).any(|i| (lambda.row(i) - mu.row(i)) as usize > steps) {
        return Ok(None);
    }
    let y = diagram_to_config(mu, n, theta)?;
    let z = diagram_to_config(lambda, n, theta)?;
    Ok(Some(TransferProblem::new(y, Some(z), steps, drift, mode)?))
}

/// `J_{lambda'/mu'}(b; 1/theta)` as `J_mu(1^N; theta) / J_lambda(1^N; theta)` times the total
/// drifted weight of walks from the configuration of `mu` to that of `lambda` in `len(b)` steps.
/// Exact when theta and every `b_t` are rational.
pub fn skew_jack_pathsum(lambda: &YoungDiagram, mu: &YoungDiagram, b: &[Real], n: usize, theta: Real) -> Result<PolyValue> {
    let exact = theta.is_exact() && b.iter().all(Real::is_exact);
    let Some(p) = path_problem(lambda, mu, n, theta, DriftProfile::new(b.to_vec())?, WeightMode::Plain)? else {
        return Ok(PolyValue::zero(exact));
    };
    let s = path_sum(&p, exact)?;
    let jm = jack_principal(mu, n, theta)?;
    let jl = jack_principal(lambda, n, theta)?;
    if let (Some(w), Some(a), Some(c)) = (&s.exact, &jm.exact, &jl.exact) {
        return Ok(PolyValue::from_exact(w * a / c));
    }
    if s.log_value == f64::NEG_INFINITY {
        return Ok(PolyValue::zero(false));
    }
    Ok(PolyValue::from_log(s.log_value + jm.log_value - jl.log_value, 1))
}

/// `P_{lambda'/mu'}(b; t, q)` (parameters swapped) as
/// `P_mu(1, t, ...; q, t) / P_lambda(1, t, ...; q, t)` times the q-weighted walk sum.
pub fn skew_macdonald_pathsum(lambda: &YoungDiagram, mu: &YoungDiagram, b: &[f64], n: usize, p: QParams) -> Result<PolyValue> {
    QParams::new(p.q, p.theta)?;
    let Some(prob) = path_problem(lambda, mu, n, Real::float(p.theta), DriftProfile::from_f64(b)?, WeightMode::Q(p.q))? else {
        return Ok(PolyValue::zero(false));
    };
    let s = path_sum(&prob, false)?;
    if s.log_value == f64::NEG_INFINITY {
        return Ok(PolyValue::zero(false));
    }
    let pm = macdonald_principal(mu, n, p)?;
    let pl = macdonald_principal(lambda, n, p)?;
    Ok(PolyValue::from_log(s.log_value + pm.log_value - pl.log_value, 1))
}

// ---------------------------------------------------------------------------
// Large-N limits

/// Profile `h(x) = sum_i clamp(x - x_i / N, 0, theta / N)` of the configuration of `lambda`.
pub fn diagram_profile(lambda: &YoungDiagram, n: usize, theta: f64) -> Result<Profile> {
    let nf = n as f64;
    let w = theta / nf;
    let mut xs: Vec<f64> = Vec::with_capacity(2 * n);
    for i in (0..n).rev() {
        let x = (lambda.row(i) as f64 - theta * i as f64) / nf;
        for v in [x, x + w] {
            if xs.last().is_none_or(|&l| v > l + 1e-12 * w) {
                xs.push(v);
            }
        }
    }
    let h = |x: f64| -> f64 {
        (0..n)
            .map(|i| (x - (lambda.row(i) as f64 - theta * i as f64) / nf).clamp(0.0, w))
            .sum()
    };
    let hs = xs.iter().map(|&x| h(x)).collect();
    Profile::new(xs, hs)
}

/// `lim (1/N^2) ln J_lambda(1^N; theta) = (1/(2 theta)) int int ln|x-y| dh dh - theta ln(theta)/2 + 3 theta/4`.
pub fn jack_log_limit(h: &Profile, theta: f64) -> Result<f64> {
    Ok(free_entropy(h, theta)? / (2.0 * theta) - theta * theta.ln() / 2.0 + 0.75 * theta)
}

/// `int x (theta - h(x)) dh(x)`, exact for the piecewise-linear profile. The weight
/// `theta - h` is the mass to the right of `x`.
pub fn moment_x_h_dh(h: &Profile, theta: f64) -> f64 {
    h.segments()
        .iter()
        .map(|&(a, b, r)| {
            let g0 = theta - h.at(a);
            r * (g0 * (b * b - a * a) / 2.0 - r * ((b * b * b - a * a * a) / 3.0 - a * (b * b - a * a) / 2.0))
        })
        .sum()
}

/// Limit of `(1/N^2) ln P_lambda(1, t, ..., t^{N-1}; q, t)` with `q = e^{kappa/N}`, `kappa < 0`:
/// `(1/(2 theta)) int int ln(1 - e^{kappa|x-y|}) dh dh - theta int_0^1 x ln(1 - e^{kappa theta x}) dx
/// - kappa theta^2 int_0^1 (1-x) x / (e^{-kappa theta x} - 1) dx + (kappa/theta) int x (theta - h) dh + kappa theta^2 / 3`.
pub fn macdonald_log_limit(h: &Profile, theta: f64, kappa: f64) -> Result<f64> {
    let fe = free_entropy_q(h, theta, kappa)?;
    let kt = kappa * theta;
    let i1 = quadrature::integrate(|x| if x == 0.0 { 0.0 } else { x * (-(kt * x).exp_m1()).ln() }, 0.0, 1.0, 1e-14).integral;
    let i2 = quadrature::integrate(
        |x| {
            let d = (-kt * x).exp_m1();
            if d == 0.0 {
                (1.0 - x) / -kt
            } else {
                (1.0 - x) * x / d
            }
        },
        0.0,
        1.0,
        1e-14,
    )
    .integral;
    Ok(fe / (2.0 * theta) - theta * i1 - kappa * theta * theta * i2 + kappa / theta * moment_x_h_dh(h, theta) + kappa * theta * theta / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(rows: &[u32]) -> YoungDiagram {
        YoungDiagram::new(rows.to_vec()).unwrap()
    }

    fn r(p: i64, q: i64) -> Real {
        Real::ratio(p, q).unwrap()
    }

    fn big(p: i64, q: i64) -> BigRational {
        BigRational::new(p.into(), q.into())
    }

    #[test]
    fn jack_examples() {
        let j = jack_principal(&d(&[1]), 2, r(1, 1)).unwrap();
        assert_eq!(j.exact.unwrap(), big(2, 1));
        let j = jack_principal(&d(&[2]), 2, r(1, 1)).unwrap();
        assert_eq!(j.exact.unwrap(), big(3, 1));
        assert_eq!(jack_principal(&d(&[1, 1, 1]), 2, r(1, 2)).unwrap().exact.unwrap(), big(0, 1));
        // theta = 1 gives Schur at 1^N: hook content formula for (2,1), N = 3 is 8.
        assert_eq!(jack_principal(&d(&[2, 1]), 3, r(1, 1)).unwrap().exact.unwrap(), big(8, 1));
    }

    #[test]
    fn jack_box_and_gamma_forms_agree() {
        for th in [0.3, 0.5, 1.0, 2.0, 3.7] {
            for lam in YoungDiagram::all_in_box(4, 5) {
                for n in 4..7 {
                    let a = jack_principal(&lam, n, Real::float(th)).unwrap().log_value;
                    let b = jack_principal_gamma(&lam, n, th).unwrap();
                    assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{lam} {n} {th}");
                }
            }
        }
    }

    #[test]
    fn jack_theta_one_is_schur_at_ones() {
        for lam in YoungDiagram::all_in_box(3, 3) {
            let ones = vec![Real::integer(1); 4];
            let s = schur_skew_jt(&lam, &YoungDiagram::empty(), &ones).unwrap();
            assert_eq!(jack_principal(&lam, 4, r(1, 1)).unwrap().exact, s.exact, "{lam}");
        }
    }

    #[test]
    fn pochhammer_matches_direct_product() {
        for &q in &[0.1, 0.5, 0.9, 0.99] {
            for &a in &[-3.0, -0.4, 0.0, 0.3, 0.95, 1.7] {
                let mut p = 1.0;
                for k in 0..100_000 {
                    p *= 1.0 - a * f64::powi(q, k);
                }
                let v = q_pochhammer(a, q).unwrap();
                assert!((v - p).abs() <= 1e-12 * p.abs().max(1e-300), "{a} {q}: {v} vs {p}");
            }
        }
    }

    #[test]
    fn q_gamma_recurrence_and_limit() {
        for &q in &[0.3, 0.8, 0.99] {
            for &x in &[0.4, 1.0, 2.5, -0.5, -1.3] {
                // Gamma_q(x + 1) = [x]_q Gamma_q(x).
                let lhs = q_gamma(x + 1.0, q).unwrap();
                let rhs = (1.0 - q.powf(x)) / (1.0 - q) * q_gamma(x, q).unwrap();
                assert!((lhs - rhs).abs() <= 1e-11 * lhs.abs(), "{x} {q}");
            }
            assert!((q_gamma(1.0, q).unwrap() - 1.0).abs() < 1e-13);
            assert!((q_gamma(2.0, q).unwrap() - 1.0).abs() < 1e-13);
        }
        let q: f64 = 1.0 - 1e-6;
        for &x in &[0.5, 1.5, 3.2] {
            let v = ln_q_gamma(x, q).unwrap().0;
            assert!((v - ln_gamma(x)).abs() < 1e-5, "{x}: {v}");
        }
        assert!(matches!(q_gamma(-2.0, 0.5), Err(Error::Pole(_))));
    }

    #[test]
    fn macdonald_examples_and_forms() {
        let p = QParams::new(0.6, 1.5).unwrap();
        let m = macdonald_principal(&d(&[1]), 2, p).unwrap().value();
        assert!((m - (1.0 + p.t())).abs() < 1e-13);
        for th in [0.5, 1.0, 2.0, 2.7] {
            for q in [0.2, 0.7, 0.99] {
                let p = QParams::new(q, th).unwrap();
                for lam in YoungDiagram::all_in_box(4, 4) {
                    let a = macdonald_principal(&lam, 5, p).unwrap().log_value;
                    let b = macdonald_principal_gamma(&lam, 5, p).unwrap();
                    assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{lam} {q} {th}");
                }
            }
        }
    }

    #[test]
    fn macdonald_at_t_equal_q_is_principal_schur() {
        // s_lambda(1, q, ..., q^{N-1}) = q^{n(lambda)} prod_{i<j} (1 - q^{l_i - l_j + j - i}) / (1 - q^{j - i}).
        let q: f64 = 0.7;
        let n = 4;
        for lam in YoungDiagram::all_in_box(4, 3) {
            let mut v = 1.0;
            for i in 0..n {
                v *= q.powi((i * lam.row(i) as usize) as i32);
                for j in i + 1..n {
                    let e = (lam.row(i) as i32 - lam.row(j) as i32) + (j - i) as i32;
                    v *= (1.0 - q.powi(e)) / (1.0 - q.powi((j - i) as i32));
                }
            }
            let m = macdonald_principal(&lam, n, QParams::new(q, 1.0).unwrap()).unwrap().value();
            assert!((m - v).abs() <= 1e-12 * v, "{lam}");
        }
    }

    #[test]
    fn macdonald_to_jack_with_extrapolation() {
        for th in [0.5, 1.0, 2.0] {
            for lam in [d(&[2, 1]), d(&[3, 3, 1]), d(&[4])] {
                let jack = jack_principal(&lam, 4, Real::float(th)).unwrap().value();
                let at = |h: f64| macdonald_principal(&lam, 4, QParams::new(1.0 - h, th).unwrap()).unwrap().value();
                let extrap = 2.0 * at(1e-5) - at(2e-5);
                assert!((extrap - jack).abs() <= 1e-5 * jack, "{lam} {th}: {extrap} vs {jack}");
                assert!((at(1e-5) - jack).abs() <= 1e-3 * jack);
            }
        }
    }

    #[test]
    fn schur_examples() {
        let b = [r(2, 1), r(3, 1)];
        // s_2(b0, b1) = b0^2 + b0 b1 + b1^2.
        let s = schur_skew_jt(&d(&[2]), &YoungDiagram::empty(), &b).unwrap();
        assert_eq!(s.exact.unwrap(), big(19, 1));
        // s_{21/1} = s_2 + s_11 = h_1^2.
        let s = schur_skew_jt(&d(&[2, 1]), &d(&[1]), &b).unwrap();
        assert_eq!(s.exact.unwrap(), big(25, 1));
        let bf = [Real::float(2.0), Real::float(3.0)];
        assert!((schur_skew_jt(&d(&[2, 1]), &d(&[1]), &bf).unwrap().value() - 25.0).abs() < 1e-12);
        assert_eq!(schur_skew_jt(&d(&[1]), &d(&[2]), &b).unwrap().exact.unwrap(), big(0, 1));
    }

    #[test]
    fn path_sum_example_is_complete_homogeneous() {
        // lambda' = (2): lambda = (1,1), N = 2, T = 2.
        let b = [r(2, 1), r(5, 3)];
        let v = skew_jack_pathsum(&d(&[1, 1]), &YoungDiagram::empty(), &b, 2, r(1, 1)).unwrap();
        let s = schur_skew_jt(&d(&[2]), &YoungDiagram::empty(), &b).unwrap();
        assert_eq!(v.exact, s.exact);
    }

    #[test]
    fn jack_path_sum_is_schur_at_theta_one() {
        let b = [r(1, 2), r(3, 1), r(2, 3), r(5, 4)];
        for steps in 1..=4 {
            for lam in YoungDiagram::all_in_box(3, 3) {
                for mu in YoungDiagram::all_in_box(3, 3).into_iter().filter(|m| lam.contains(m)) {
                    let v = skew_jack_pathsum(&lam, &mu, &b[..steps], 3, r(1, 1)).unwrap();
                    let s = schur_skew_jt(&lam.transpose(), &mu.transpose(), &b[..steps]).unwrap();
                    assert_eq!(v.exact, s.exact, "{lam}/{mu} T={steps}");
                }
            }
        }
    }

    #[test]
    fn jack_path_sum_principal_identity() {
        for (p, q) in [(1, 2), (2, 1), (1, 3)] {
            let th = r(p, q);
            let inv = r(q, p);
            for steps in 1..=4 {
                let ones = vec![Real::integer(1); steps];
                for lam in YoungDiagram::all_in_box(3, 3) {
                    let v = skew_jack_pathsum(&lam, &YoungDiagram::empty(), &ones, 3, th).unwrap();
                    let j = jack_principal(&lam.transpose(), steps, inv).unwrap();
                    assert_eq!(v.exact, j.exact, "{lam} T={steps} theta={p}/{q}");
                }
            }
        }
    }

    #[test]
    fn jack_path_sum_is_homogeneous() {
        let th = r(2, 3);
        let b = [r(1, 2), r(3, 1), r(2, 3)];
        let c = big(5, 7);
        let bc: Vec<Real> = b.iter().map(|v| Real::exact(v.as_exact().unwrap() * num_rational::Rational64::new(5, 7))).collect();
        for lam in YoungDiagram::all_in_box(3, 2) {
            for mu in YoungDiagram::all_in_box(3, 2).into_iter().filter(|m| lam.contains(m)) {
                let v = skew_jack_pathsum(&lam, &mu, &b, 3, th).unwrap().exact.unwrap();
                let w = skew_jack_pathsum(&lam, &mu, &bc, 3, th).unwrap().exact.unwrap();
                let deg = (lam.size() - mu.size()) as usize;
                assert_eq!(w, v * crate::weights::pow_big(&c, deg));
            }
        }
    }

    #[test]
    fn macdonald_path_sum_is_schur_at_theta_one() {
        let b = [0.5, 3.0, 0.7, 1.25];
        let br: Vec<Real> = b.iter().map(|&v| Real::float(v)).collect();
        let p = QParams::new(0.4, 1.0).unwrap();
        for lam in YoungDiagram::all_in_box(3, 3) {
            for mu in YoungDiagram::all_in_box(3, 3).into_iter().filter(|m| lam.contains(m)) {
                let v = skew_macdonald_pathsum(&lam, &mu, &b, 3, p).unwrap().value();
                let s = schur_skew_jt(&lam.transpose(), &mu.transpose(), &br).unwrap().value();
                assert!((v - s).abs() <= 1e-9 * s.abs().max(1.0), "{lam}/{mu}: {v} vs {s}");
            }
        }
    }

    #[test]
    fn macdonald_path_sum_principal_identity() {
        for th in [0.5, 2.0, 1.5] {
            let q: f64 = 0.55;
            let p = QParams::new(q, th).unwrap();
            let dual = QParams::new(p.t(), 1.0 / th).unwrap();
            for steps in 1..=4 {
                let b: Vec<f64> = (0..steps).map(|k| q.powi(k as i32)).collect();
                for lam in YoungDiagram::all_in_box(3, 3) {
                    let v = skew_macdonald_pathsum(&lam, &YoungDiagram::empty(), &b, 3, p).unwrap();
                    let m = macdonald_principal(&lam.transpose(), steps, dual).unwrap();
                    if m.sign == 0 {
                        assert_eq!(v.sign, 0);
                    } else {
                        assert!((v.log_value - m.log_value).abs() < 1e-9, "{lam} T={steps} theta={th}");
                    }
                }
            }
        }
    }

    #[test]
    fn jack_limit_trend() {
        // Rectangle with N rows of length N/2.
        for th in [0.5, 1.0, 2.0] {
            let mut errs = Vec::new();
            for n in [20usize, 40, 80] {
                let lam = YoungDiagram::rectangle(n / 2, (n / 2) as u32);
                let v = jack_principal(&lam, n, Real::float(th)).unwrap().log_value / (n * n) as f64;
                let h = diagram_profile(&lam, n, th).unwrap();
                errs.push((v - jack_log_limit(&h, th).unwrap()).abs());
            }
            assert!(errs[2] < errs[0] && errs[2] < 0.1, "{th}: {errs:?}");
        }
    }

    #[test]
    fn macdonald_limit_trend() {
        for th in [0.5, 1.0, 2.0] {
            for kappa in [-0.5, -2.0] {
                let mut errs = Vec::new();
                for n in [20usize, 40, 80] {
                    let lam = YoungDiagram::rectangle(n / 2, (n / 2) as u32);
                    let p = QParams::from_kappa(kappa, n, th).unwrap();
                    let v = macdonald_principal(&lam, n, p).unwrap().log_value / (n * n) as f64;
                    let h = diagram_profile(&lam, n, th).unwrap();
                    errs.push((v - macdonald_log_limit(&h, th, kappa).unwrap()).abs());
                }
                assert!(errs[2] < errs[0] && errs[2] < 0.1, "{th} {kappa}: {errs:?}");
            }
        }
    }

    #[test]
    fn q_special_values() {
        assert_eq!(q_pochhammer(0.0, 0.3).unwrap(), 1.0);
        let g = q_gamma(3.0, 1.0 - 1e-5).unwrap();
        assert!((g - 2.0).abs() < 1e-4, "{g}");
        assert!(q_gamma(1.0, 1.5).is_err());
    }

    #[test]
    fn single_box_macdonald_path_sum() {
        let p = QParams::new(0.3, 2.0).unwrap();
        let v = skew_macdonald_pathsum(&d(&[1]), &YoungDiagram::empty(), &[1.7], 1, p).unwrap();
        assert!((v.value() - 1.7).abs() < 1e-14);
        assert!((macdonald_principal(&YoungDiagram::empty(), 3, p).unwrap().value() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn macdonald_path_sum_tends_to_jack_path_sum() {
        let b = [0.8, 1.3, 0.6];
        let br: Vec<Real> = b.iter().map(|&v| Real::float(v)).collect();
        for th in [0.5, 2.0] {
            for steps in 1..=3 {
                for lam in YoungDiagram::all_in_box(3, 3) {
                    for mu in YoungDiagram::all_in_box(3, 3).into_iter().filter(|m| lam.contains(m)) {
                        let j = skew_jack_pathsum(&lam, &mu, &br[..steps], 3, Real::float(th)).unwrap();
                        if j.sign == 0 {
                            continue;
                        }
                        let at = |h: f64| skew_macdonald_pathsum(&lam, &mu, &b[..steps], 3, QParams::new(1.0 - h, th).unwrap()).unwrap().value();
                        let m = 2.0 * at(1e-5) - at(2e-5);
                        assert!((m - j.value()).abs() <= 1e-5 * j.value(), "{lam}/{mu} {th}");
                    }
                }
            }
        }
    }

    #[test]
    fn branching_sums_to_one() {
        // sum over lambda of (1+b)^{-N} J_lambda(1^N) / J_mu(1^N) J_{lambda'/mu'}(b) = 1.
        let th = r(1, 2);
        let b = r(3, 5);
        let n = 3;
        for mu in YoungDiagram::all_in_box(3, 3) {
            let mut total = BigRational::zero();
            for lam in YoungDiagram::all_in_box(3, 4).into_iter().filter(|l| l.contains(&mu)) {
                let v = skew_jack_pathsum(&lam, &mu, &[b], n, th).unwrap().exact.unwrap();
                let jl = jack_principal(&lam, n, th).unwrap().exact.unwrap();
                let jm = jack_principal(&mu, n, th).unwrap().exact.unwrap();
                total += v * jl / jm;
            }
            let norm = crate::weights::pow_big(&(BigRational::one() + b.as_big().unwrap()), n);
            assert_eq!(total / norm, BigRational::one(), "{mu}");
        }
    }

    #[test]
    fn skew_values_symmetric_in_b() {
        let b = [0.5, 1.75, 1.1, 0.9];
        for th in [0.5, 2.0] {
            for lam in YoungDiagram::all_in_box(3, 3) {
                for mu in YoungDiagram::all_in_box(3, 3).into_iter().filter(|m| lam.contains(m)) {
                    let base: Vec<Real> = b.iter().map(|&v| Real::float(v)).collect();
                    let v0 = skew_jack_pathsum(&lam, &mu, &base, 3, Real::float(th)).unwrap();
                    let m0 = skew_macdonald_pathsum(&lam, &mu, &b, 3, QParams::new(0.6, th).unwrap()).unwrap();
                    for k in 0..3 {
                        let mut bs = b;
                        bs.swap(k, k + 1);
                        let sw: Vec<Real> = bs.iter().map(|&v| Real::float(v)).collect();
                        let v1 = skew_jack_pathsum(&lam, &mu, &sw, 3, Real::float(th)).unwrap();
                        let m1 = skew_macdonald_pathsum(&lam, &mu, &bs, 3, QParams::new(0.6, th).unwrap()).unwrap();
                        assert!((v0.value() - v1.value()).abs() <= 1e-10 * v0.value().abs().max(1.0));
                        assert!((m0.value() - m1.value()).abs() <= 1e-10 * m0.value().abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn empty_diagram_limits_vanish() {
        for th in [0.5, 1.0, 2.0] {
            let h = Profile::ramp_with_density(-th, th, 1.0);
            assert!(jack_log_limit(&h, th).unwrap().abs() < 1e-12);
            for kappa in [-0.5, -2.0] {
                assert!(macdonald_log_limit(&h, th, kappa).unwrap().abs() < 1e-9, "{th} {kappa}");
            }
        }
    }
}
