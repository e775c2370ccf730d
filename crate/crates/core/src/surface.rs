//! Lobachevsky function, surface tension of the slope triangle, free-entropy
//! double integrals and the constant-slope complex slope and drift.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::lattice::sig17;

// ---------------------------------------------------------------------------
// Lobachevsky / Clausen

/// `zeta(2k) / (k (2k + 1))` for `k = 1..=CLAUSEN_TERMS`.
const CLAUSEN_TERMS: usize = 30;

fn clausen_coeffs() -> &'static [f64; CLAUSEN_TERMS] {
    static C: OnceLock<[f64; CLAUSEN_TERMS]> = OnceLock::new();
    C.get_or_init(|| {
        let mut c = [0.0; CLAUSEN_TERMS];
        for (i, v) in c.iter_mut().enumerate() {
            let k = (i + 1) as f64;
            *v = zeta_even(2 * (i + 1)) / (k * (2.0 * k + 1.0));
        }
        c
    })
}

/// `zeta(s)` for even `s >= 2`: direct sum to `M` plus an Euler-Maclaurin tail.
fn zeta_even(s: usize) -> f64 {
    const M: usize = 64;
    let sf = s as f64;
    let mut sum = 0.0;
    for n in (1..M).rev() {
        sum += (n as f64).powf(-sf);
    }
    let m = M as f64;
    let tail = m.powf(1.0 - sf) / (sf - 1.0) + 0.5 * m.powf(-sf) + sf * m.powf(-sf - 1.0) / 12.0
        - sf * (sf + 1.0) * (sf + 2.0) * m.powf(-sf - 3.0) / 720.0
        + sf * (sf + 1.0) * (sf + 2.0) * (sf + 3.0) * (sf + 4.0) * m.powf(-sf - 5.0) / 30240.0;
    sum + tail
}

/// Clausen function `Cl_2(phi) = sum sin(n phi) / n^2` for `phi` in `[-pi, pi]`,
/// from its power series about the origin.
fn clausen_reduced(phi: f64) -> f64 {
    if phi == 0.0 {
        return 0.0;
    }
    let u = (phi / (2.0 * PI)).powi(2);
    let mut pw = 1.0;
    let mut series = 0.0;
    for &c in clausen_coeffs() {
        pw *= u;
        let term = c * pw;
        series += term;
        if term < 1e-18 {
            break;
        }
    }
    phi - phi * phi.abs().ln() + phi * series
}

/// `L(x) = -int_0^x ln|2 sin z| dz`, odd and pi-periodic.
pub fn lobachevsky(x: f64) -> f64 {
    if !x.is_finite() {
        return f64::NAN;
    }
    let r = x - PI * (x / PI).round();
    0.5 * clausen_reduced(2.0 * r)
}

/// `sin(pi x)` with the argument reduced before scaling, accurate near integers.
pub fn sin_pi(x: f64) -> f64 {
    let n = x.round();
    let r = x - n;
    let s = (PI * r).sin();
    if (n as i64).rem_euclid(2) == 0 {
        s
    } else {
        -s
    }
}

// ---------------------------------------------------------------------------
// Slopes and surface tension

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Slope {
    pub s: f64,
    pub t: f64,
}

/// Slack allowed when testing membership of the closed triangle.
pub const SLOPE_TOL: f64 = 1e-12;

/// Default interior margin for gradient evaluation.
pub const DEFAULT_ETA: f64 = 1e-6;

impl Slope {
    pub fn new(s: f64, t: f64) -> Result<Self> {
        let sl = Slope { s, t };
        if !sl.in_triangle(SLOPE_TOL) {
            return Err(Error::OutsideSlope { s, t, detail: "" });
        }
        Ok(sl)
    }

    /// Membership of the closed triangle `0 <= s <= 1`, `t <= 0`, `s + t >= 0`, with slack.
    pub fn in_triangle(&self, tol: f64) -> bool {
        self.s.is_finite()
            && self.t.is_finite()
            && self.s <= 1.0 + tol
            && self.t <= tol
            && self.s + self.t >= -tol
    }

    /// Distance-like margin to the boundary: the smallest of the three angles over pi.
    pub fn margin(&self) -> f64 {
        (1.0 - self.s).min(-self.t).min(self.s + self.t)
    }

    pub fn is_interior(&self) -> bool {
        self.margin() > 0.0
    }
}

/// `(1/pi) (L(pi (1 - s)) + L(-pi t) + L(pi (s + t)))`.
pub fn sigma(sl: Slope) -> Result<f64> {
    if !sl.in_triangle(SLOPE_TOL) {
        return Err(Error::OutsideSlope { s: sl.s, t: sl.t, detail: "" });
    }
    Ok(sigma_unchecked(sl.s, sl.t))
}

#[inline]
pub(crate) fn sigma_unchecked(s: f64, t: f64) -> f64 {
    (lobachevsky(PI * (1.0 - s)) + lobachevsky(-PI * t) + lobachevsky(PI * (s + t))) / PI
}

/// `(d sigma/ds, d sigma/dt) = (ln(sin(pi s) / sin(pi(s+t))), ln(sin(-pi t) / sin(pi(s+t))))`.
pub fn sigma_grad(sl: Slope) -> Result<(f64, f64)> {
    sigma_grad_eta(sl, DEFAULT_ETA)
}

pub fn sigma_grad_eta(sl: Slope, eta: f64) -> Result<(f64, f64)> {
    if sl.margin() < eta {
        return Err(Error::OutsideSlope { s: sl.s, t: sl.t, detail: " interior (gradient is singular near the boundary)" });
    }
    let ls = sin_pi(sl.s).ln();
    let lt = sin_pi(-sl.t).ln();
    let lst = sin_pi(sl.s + sl.t).ln();
    Ok((ls - lst, lt - lst))
}

/// Complex slope for an interior gradient: the apex `f` of the triangle
/// `{0, -1, f}` in the lower half-plane with angle `pi s` at 0 and `-pi t` at -1.
pub fn complex_slope(sl: Slope) -> Result<Complex64> {
    if !sl.is_interior() {
        return Err(Error::OutsideSlope { s: sl.s, t: sl.t, detail: " interior" });
    }
    let modulus = sin_pi(-sl.t) / sin_pi(sl.s + sl.t);
    Ok(Complex64::from_polar(modulus, -PI * sl.s))
}

/// `arg* z`: the angle in `(-pi, 0)` of a point of the open lower half-plane.
pub fn arg_star(z: Complex64) -> f64 {
    z.im.atan2(z.re)
}

/// Smoothed indicator of `[tv, ell + tv]` at scale `delta`:
/// `(1/pi)(atan((ell + tv - x)/delta) - atan((tv - x)/delta))`.
pub fn kappa_t(x: f64, t: f64, v: f64, ell: f64, delta: f64) -> f64 {
    let a = t * v;
    let b = ell + t * v;
    (((b - x) / delta).atan() - ((a - x) / delta).atan()) / PI
}

/// Hilbert transform of `kappa_t`: `(1/2) ln(((x-b)^2 + delta^2) / ((x-a)^2 + delta^2))`.
pub fn hilbert_kappa_t(x: f64, t: f64, v: f64, ell: f64, delta: f64) -> f64 {
    let a = t * v;
    let b = ell + t * v;
    let d2 = delta * delta;
    0.5 * (((x - b).powi(2) + d2) / ((x - a).powi(2) + d2)).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothedDrift {
    pub kappa: f64,
    pub g: f64,
    pub f_re: f64,
    pub f_im: f64,
}

impl SmoothedDrift {
    pub fn f(&self) -> Complex64 {
        Complex64::new(self.f_re, self.f_im)
    }
}

/// Complex slope and drift of the Cauchy-smoothed translating ramp with slope
/// `(rho, -rho v)`: `d_x H = rho kappa`, `d_t H = -rho v kappa`.
pub fn smoothed_drift(x: f64, t: f64, rho: f64, v: f64, ell: f64, delta: f64) -> Result<SmoothedDrift> {
    if !(delta > 0.0 && delta < ell) {
        return invalid(format!("need 0 < delta < ell, got delta = {delta}, ell = {ell}"));
    }
    if !(rho > 0.0 && rho < 1.0 && v > 0.0 && v < 1.0) {
        return invalid("rho and v must lie in (0, 1)");
    }
    let k = kappa_t(x, t, v, ell, delta);
    let hib = hilbert_kappa_t(x, t, v, ell, delta);
    // ln sin(pi rho v k) - ln sin(pi rho (1 - v) k), finite as k -> 0.
    let log_ratio = if k * rho < 1e-8 {
        (v / (1.0 - v)).ln()
    } else {
        sin_pi(rho * v * k).ln() - sin_pi(rho * (1.0 - v) * k).ln()
    };
    let g = log_ratio - rho * hib;
    let f = Complex64::from_polar(log_ratio.exp(), -PI * rho * k);
    Ok(SmoothedDrift { kappa: k, g, f_re: f.re, f_im: f.im })
}

// ---------------------------------------------------------------------------
// Boundary profiles and free entropy

/// A monotone boundary height profile, piecewise linear through `(xs[k], hs[k])`
/// and constant outside `[xs[0], xs[last]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    xs: Vec<f64>,
    hs: Vec<f64>,
}

impl Profile {
    pub fn new(xs: Vec<f64>, hs: Vec<f64>) -> Result<Self> {
        if xs.len() != hs.len() || xs.len() < 2 {
            return invalid("a profile needs at least two (x, h) samples of equal length");
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("profile x samples must be strictly increasing");
        }
        for k in 0..xs.len() - 1 {
            let rho = (hs[k + 1] - hs[k]) / (xs[k + 1] - xs[k]);
            if !(-1e-9..=1.0 + 1e-9).contains(&rho) {
                return invalid(format!("profile density {rho} at x = {} is outside [0, 1]", xs[k]));
            }
        }
        Ok(Profile { xs, hs })
    }

    pub fn from_fn(f: impl Fn(f64) -> f64, x_lo: f64, x_hi: f64, n: usize) -> Result<Self> {
        let n = n.max(1);
        let xs: Vec<f64> = (0..=n).map(|k| x_lo + (x_hi - x_lo) * k as f64 / n as f64).collect();
        let hs = xs.iter().map(|&x| f(x)).collect();
        Self::new(xs, hs)
    }

    /// Density one on `[a, a + mass]`.
    pub fn ramp(a: f64, mass: f64) -> Self {
        Profile { xs: vec![a, a + mass], hs: vec![0.0, mass] }
    }

    /// Density `rho` on `[a, a + mass / rho]`.
    pub fn ramp_with_density(a: f64, mass: f64, rho: f64) -> Self {
        Profile { xs: vec![a, a + mass / rho], hs: vec![0.0, mass] }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn hs(&self) -> &[f64] {
        &self.hs
    }

    pub fn at(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.hs[0];
        }
        if x >= self.xs[n - 1] {
            return self.hs[n - 1];
        }
        let k = self.xs.partition_point(|&v| v <= x) - 1;
        let w = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        self.hs[k] * (1.0 - w) + self.hs[k + 1] * w
    }

    pub fn mass(&self) -> f64 {
        self.hs[self.hs.len() - 1] - self.hs[0]
    }

    /// Support hull `[first x where density > 0, last such x]`.
    pub fn support(&self) -> (f64, f64) {
        let segs = self.segments();
        match (segs.first(), segs.last()) {
            (Some(a), Some(b)) => (a.0, b.1),
            _ => (self.xs[0], self.xs[0]),
        }
    }

    /// Constant-density pieces `(x0, x1, rho)` with `rho > 0`, adjacent equal densities merged.
    pub fn segments(&self) -> Vec<(f64, f64, f64)> {
        let mut out: Vec<(f64, f64, f64)> = Vec::new();
        for k in 0..self.xs.len() - 1 {
            let (a, b) = (self.xs[k], self.xs[k + 1]);
            let rho = (self.hs[k + 1] - self.hs[k]) / (b - a);
            if rho.abs() <= 1e-15 {
                continue;
            }
            match out.last_mut() {
                Some(last) if last.1 == a && (last.2 - rho).abs() <= 1e-12 * rho.abs().max(1.0) => last.1 = b,
                _ => out.push((a, b, rho)),
            }
        }
        out
    }

    /// First moment `int x dh(x)`.
    pub fn first_moment(&self) -> f64 {
        self.segments().iter().map(|&(a, b, r)| r * (b * b - a * a) / 2.0).sum()
    }

    /// `int h(x) dx` over `[lo, hi]`, exact for the piecewise-linear profile.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let mut pts: Vec<f64> = self.xs.iter().copied().filter(|&x| x > lo && x < hi).collect();
        pts.insert(0, lo);
        pts.push(hi);
        pts.windows(2).map(|w| (w[1] - w[0]) * (self.at(w[0]) + self.at(w[1])) / 2.0).sum()
    }

    pub fn translated(&self, a: f64) -> Self {
        Profile { xs: self.xs.iter().map(|x| x + a).collect(), hs: self.hs.clone() }
    }

    /// CSV `x,h`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,h")?;
        for (x, h) in self.xs.iter().zip(&self.hs) {
            writeln!(w, "{},{}", sig17(*x), sig17(*h))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut xs = Vec::new();
        let mut hs = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if k == 0 {
                if line != "x,h" {
                    return Err(Error::Parse(format!("expected header x,h, got {line:?}")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (a, b) = line.split_once(',').ok_or_else(|| Error::Parse(format!("line {k}: expected x,h")))?;
            let x = a.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {k}: {e}")))?;
            let h = b.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {k}: {e}")))?;
            xs.push(x);
            hs.push(h);
        }
        Self::new(xs, hs)
    }
}

/// Mass tolerance for the free-entropy functionals.
pub const MASS_TOL: f64 = 1e-9;

/// `Phi(u) = u^2 ln|u| / 2 - 3 u^2 / 4`, with `Phi'' = ln|u|`.
fn phi_log(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * u * (0.5 * u.abs().ln() - 0.75)
    }
}

/// `int_a^b int_c^d g(x - y) dy dx` given `G'' = g`, `G` even with `G(0) = 0`.
#[inline]
fn rect(gfun: &impl Fn(f64) -> f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    gfun(b - c) + gfun(a - d) - gfun(b - d) - gfun(a - c)
}

fn check_mass(h: &Profile, theta: f64) -> Result<()> {
    if (h.mass() - theta).abs() > MASS_TOL * theta.max(1.0) {
        return invalid(format!("profile mass {} differs from theta = {theta}", h.mass()));
    }
    Ok(())
}

fn double_integral(h: &Profile, gfun: impl Fn(f64) -> f64) -> f64 {
    let segs = h.segments();
    let mut total = 0.0;
    for (i, &(a, b, r)) in segs.iter().enumerate() {
        total += r * r * rect(&gfun, a, b, a, b);
        for &(c, d, s) in &segs[i + 1..] {
            total += 2.0 * r * s * rect(&gfun, a, b, c, d);
        }
    }
    total
}

/// `int int ln|x - y| dh(x) dh(y)`, integrating the kernel exactly on every pair of
/// constant-density pieces.
pub fn free_entropy(h: &Profile, theta: f64) -> Result<f64> {
    check_mass(h, theta)?;
    Ok(double_integral(h, phi_log))
}

/// `int int ln(1 - e^{kappa |x - y|}) dh(x) dh(y)` for `kappa < 0`.
///
/// Split as `theta^2 ln(-kappa) + free_entropy + int int s(|x-y|)` with the smooth
/// remainder `s(u) = ln(expm1(kappa u) / (kappa u))`, whose even second antiderivative
/// `G(u) = int_0^|u| (|u| - v) s(v) dv` is integrated by double exponential quadrature.
pub fn free_entropy_q(h: &Profile, theta: f64, kappa: f64) -> Result<f64> {
    if !(kappa < 0.0) {
        return invalid(format!("kappa must be negative, got {kappa}"));
    }
    check_mass(h, theta)?;
    let smooth = |v: f64| {
        let x = kappa * v;
        if x.abs() < 1e-8 {
            x / 2.0
        } else {
            (x.exp_m1() / x).ln()
        }
    };
    let gfun = |u: f64| {
        let u = u.abs();
        if u == 0.0 {
            return 0.0;
        }
        quadrature::integrate(|v| (u - v) * smooth(v), 0.0, u, 1e-14 * u * u.max(1.0)).integral
    };
    let log_part = double_integral(h, phi_log);
    let smooth_part = double_integral(h, gfun);
    Ok(theta * theta * (-kappa).ln() + log_part + smooth_part)
}

/// `(2 theta^2 / N^2) sum_{i<j} ln((x_i - x_j) / N)` for scaled positions.
pub fn discrete_free_entropy(positions: &[f64], theta: f64, n_scale: usize) -> f64 {
    let n = n_scale as f64;
    let mut acc = crate::weights::KahanSum::default();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            acc.add(((positions[i] - positions[j]).abs() / n).ln());
        }
    }
    2.0 * theta * theta / (n * n) * acc.sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct Fourier partial sum with an integral tail correction.
    fn lob_fourier(x: f64, k: usize) -> f64 {
        let mut s = 0.0;
        for n in (1..=k).rev() {
            let nf = n as f64;
            s += (2.0 * nf * x).sin() / (nf * nf);
        }
        0.5 * s
    }

    #[test]
    fn lobachevsky_matches_fourier_series() {
        for k in 0..40 {
            let x = -3.0 + 0.157 * k as f64;
            let a = lobachevsky(x);
            let b = lob_fourier(x, 1_000_000);
            // Fourier tail is O(1/K^2) away from the singular points.
            assert!((a - b).abs() < 1e-9, "{x}: {a} vs {b}");
        }
    }

    /// Frozen from the Fourier oracle (1e6 terms, cross-checked at higher precision).
    const LOB_PI_6: f64 = 0.507_470_803_204_826_8;

    #[test]
    fn lobachevsky_golden_maximum() {
        let x = PI / 6.0;
        assert!((lob_fourier(x, 1_000_000) - LOB_PI_6).abs() < 1e-9);
        assert!((lobachevsky(x) - LOB_PI_6).abs() < 1e-15);
        for k in 1..200 {
            assert!(lobachevsky(k as f64 * PI / 200.0) <= LOB_PI_6 + 1e-15);
        }
    }

    #[test]
    fn lobachevsky_matches_quadrature() {
        for &x in &[0.1, 0.5, 1.0, PI / 6.0, PI / 3.0, 1.4] {
            // Split off ln(z) near the origin: ln(2 sin z) = ln z + ln(2 sin z / z).
            let smooth = quadrature::integrate(|z: f64| (2.0 * z.sin() / z).ln(), 0.0, x, 1e-15).integral;
            let q = -(smooth + x * x.ln() - x);
            assert!((lobachevsky(x) - q).abs() < 1e-12, "{x}");
        }
        assert!(lobachevsky(PI / 2.0).abs() < 1e-14);
        assert_eq!(lobachevsky(0.0), 0.0);
    }

    #[test]
    fn sigma_equilateral() {
        let v = sigma(Slope::new(2.0 / 3.0, -1.0 / 3.0).unwrap()).unwrap();
        assert!((v - 3.0 / PI * lobachevsky(PI / 3.0)).abs() < 1e-14);
        let g = sigma_grad(Slope::new(2.0 / 3.0, -1.0 / 3.0).unwrap()).unwrap();
        assert!(g.0.abs() < 1e-14 && g.1.abs() < 1e-14);
        assert!(sigma(Slope { s: 1.2, t: -0.1 }).is_err());
        assert!(sigma_grad(Slope::new(0.5, 0.0).unwrap()).is_err());
    }

    #[test]
    fn sigma_vanishes_on_boundary() {
        for k in 0..=20 {
            let u = k as f64 / 20.0;
            for sl in [Slope { s: 1.0, t: -u }, Slope { s: u, t: 0.0 }, Slope { s: u, t: -u }] {
                assert!(sigma(sl).unwrap().abs() < 1e-14, "{sl:?}");
            }
        }
    }

    #[test]
    fn free_entropy_ramp() {
        let v = free_entropy(&Profile::ramp(0.0, 1.0), 1.0).unwrap();
        assert!((v + 1.5).abs() < 1e-14);
        for a in [0.3, 2.0, 5.0] {
            let v = free_entropy(&Profile::ramp(-1.0, a), a).unwrap();
            assert!((v - a * a * (a.ln() - 1.5)).abs() < 1e-12);
        }
        assert!(free_entropy(&Profile::ramp(0.0, 1.0), 2.0).is_err());
    }

    #[test]
    fn free_entropy_split_ramps() {
        // Two unit-density pieces [0,1] and [2,3]: analytic cross term.
        let h = Profile::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        let cross = quadrature::integrate(
            |x: f64| quadrature::integrate(|y: f64| (y - x).ln(), 2.0, 3.0, 1e-14).integral,
            0.0,
            1.0,
            1e-13,
        )
        .integral;
        let expect = 2.0 * (-1.5) + 2.0 * cross;
        assert!((free_entropy(&h, 2.0).unwrap() - expect).abs() < 1e-11);
    }

    #[test]
    fn free_entropy_q_limits() {
        let h = Profile::ramp(0.0, 1.0);
        let far = free_entropy_q(&h, 1.0, -200.0).unwrap();
        assert!(far.abs() < 2e-2, "{far}");
        let small = free_entropy_q(&h, 1.0, -1e-3).unwrap();
        let approx = (1e-3f64).ln() + free_entropy(&h, 1.0).unwrap();
        assert!((small - approx).abs() < 1e-3);
    }

    #[test]
    fn free_entropy_q_matches_2d_quadrature() {
        let h = Profile::ramp(0.0, 1.0);
        let kappa = -1.0;
        // ln(1 - e^{kappa|x-y|}) on [0,1]^2 = 2 int_0^1 (1 - u) ln(1 - e^{kappa u}) du;
        // split the log singularity at u = 0 as before.
        let smooth = quadrature::integrate(
            |u: f64| 2.0 * (1.0 - u) * ((-(kappa * u).exp_m1()) / (-kappa * u)).ln(),
            0.0,
            1.0,
            1e-15,
        )
        .integral;
        let singular = 2.0 * ((-kappa).ln() * 0.5 + (-0.75));
        let expect = smooth + singular;
        assert!((free_entropy_q(&h, 1.0, kappa).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn complex_slope_sine_law_and_args() {
        let sl = Slope::new(0.6, -0.25).unwrap();
        let f = complex_slope(sl).unwrap();
        assert!((arg_star(f) + PI * sl.s).abs() < 1e-14);
        assert!((arg_star(f + 1.0) - PI * sl.t).abs() < 1e-14);
    }

    #[test]
    fn kappa_envelopes() {
        let (v, ell) = (0.4, 1.0);
        for &delta in &[1e-2, 1e-3] {
            let mid = kappa_t(0.5, 0.0, v, ell, delta);
            assert!(1.0 - mid < 2.0 * delta / ell * 2.0 && mid <= 1.0);
            let far = kappa_t(3.0, 0.0, v, ell, delta);
            assert!(far > 0.0 && far < delta);
        }
    }

    #[test]
    fn drift_envelope_constant_is_stable() {
        let ell = 1.0;
        let mut fitted = Vec::new();
        for &(rho, v) in &[(0.5, 0.5), (0.8, 0.3), (0.3, 0.9)] {
            let zeta = f64::min(rho * v, rho * (1.0 - v)).min(1.0 - rho);
            for &delta in &[1e-2, 1e-3, 1e-4] {
                let mut c = f64::NEG_INFINITY;
                for k in 0..=4000 {
                    let x = -2.0 + 5.0 * k as f64 / 4000.0;
                    let d = smoothed_drift(x, 0.5, rho, v, ell, delta).unwrap();
                    c = c.max(d.g.abs() - (1.0 / zeta).ln() - (ell / delta).ln());
                }
                fitted.push(c);
            }
        }
        let worst = fitted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(worst.is_finite() && worst < 3.0, "{fitted:?}");
    }

    proptest! {
        #[test]
        fn lobachevsky_periodic_and_odd(x in -10.0f64..10.0) {
            prop_assert!((lobachevsky(x + PI) - lobachevsky(x)).abs() < 1e-12);
            prop_assert!((lobachevsky(-x) + lobachevsky(x)).abs() < 1e-14);
        }

        #[test]
        fn sigma_permutation_symmetry(s in 0.0f64..1.0, w in 0.0f64..1.0) {
            let t = -w * s;
            let a = sigma(Slope { s, t }).unwrap();
            let b = sigma(Slope { s: 1.0 + t, t: s - 1.0 }).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= -1e-14);
        }

        #[test]
        fn sigma_grad_matches_differences(s in 0.05f64..0.95, w in 0.05f64..0.95) {
            let t = -w * s;
            let sl = Slope { s, t };
            prop_assume!(sl.margin() > 0.01);
            let (gs, gt) = sigma_grad(sl).unwrap();
            let h = 1e-5;
            let fs = (sigma_unchecked(s + h, t) - sigma_unchecked(s - h, t)) / (2.0 * h);
            let ft = (sigma_unchecked(s, t + h) - sigma_unchecked(s, t - h)) / (2.0 * h);
            prop_assert!((gs - fs).abs() < 1e-6 && (gt - ft).abs() < 1e-6);
        }

        #[test]
        fn complex_slope_sine_law(s in 0.01f64..0.99, w in 0.01f64..0.99) {
            let t = -w * s;
            let f = complex_slope(Slope { s, t }).unwrap();
            let d = sin_pi(s + t);
            prop_assert!((f.norm() * d - sin_pi(-t)).abs() < 1e-12);
            prop_assert!(((f + 1.0).norm() * d - sin_pi(s)).abs() < 1e-12);
        }

        #[test]
        fn free_entropy_translation_and_dilation(a in -3.0f64..3.0, scale in 0.2f64..4.0) {
            let h = Profile::new(vec![0.0, 0.5, 1.0, 2.0], vec![0.0, 0.25, 0.25, 1.0]).unwrap();
            let base = free_entropy(&h, 1.0).unwrap();
            prop_assert!((free_entropy(&h.translated(a), 1.0).unwrap() - base).abs() < 1e-12);
            // Dilating x by `scale` while keeping the mass adds theta^2 ln(scale).
            let d = Profile::new(h.xs().iter().map(|x| x * scale).collect(), h.hs().to_vec());
            if let Ok(d) = d {
                prop_assert!((free_entropy(&d, 1.0).unwrap() - base - scale.ln()).abs() < 1e-12);
            }
        }
    }
}
