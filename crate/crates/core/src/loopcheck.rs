//! Numerical check of the dynamical loop equation.
//!
//! For one step of the kernel
//! `P(x + e | x) ∝ prod_{i<j} (b(x_i + θ e_i) - b(x_j + θ e_j)) / (b(x_i) - b(x_j))
//!                 * prod_i φ⁺(x_i)^{e_i} φ⁻(x_i)^{1 - e_i}`
//! the expectation of
//! `φ⁺(z) prod_j (b(z+θ) - b(x_j+θe_j)) / (b(z) - b(x_j)) + φ⁻(z) prod_j (b(z) - b(x_j+θe_j)) / (b(z) - b(x_j))`
//! has no poles at the particles. Expectations are computed by enumerating `{0,1}^N`,
//! and holomorphy is tested with trapezoid contour integrals.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{ParticleConfig, Real};
use crate::sampler::rng_for;
use crate::surface::Profile;

/// Largest particle count accepted by the enumeration.
pub const LOOP_N_CAP: usize = 12;
/// Default trapezoid node count on a circle.
pub const DEFAULT_NODES: usize = 64;
/// Default radius of the circles around single particles.
pub const DEFAULT_RADIUS: f64 = 0.1;

type C = Complex64;

/// Interaction map `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BMap {
    Identity,
    /// `z -> q^z`.
    QPower { q: f64 },
}

impl BMap {
    pub fn eval(&self, z: C) -> C {
        match *self {
            BMap::Identity => z,
            BMap::QPower { q } => (z * q.ln()).exp(),
        }
    }
}

/// Analytic weight presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Weight {
    Constant { c: f64 },
    /// `sum_k coeffs[k] z^k`.
    Polynomial { coeffs: Vec<f64> },
    /// `a exp(c z)`.
    Exponential { a: f64, c: f64 },
}

impl Weight {
    pub fn eval(&self, z: C) -> C {
        match self {
            Weight::Constant { c } => C::new(*c, 0.0),
            Weight::Polynomial { coeffs } => coeffs.iter().rev().fold(C::new(0.0, 0.0), |acc, &a| acc * z + a),
            Weight::Exponential { a, c } => (z * *c).exp() * *a,
        }
    }

    /// Whether the function can vanish somewhere (only polynomials of positive degree can).
    fn may_vanish(&self) -> bool {
        match self {
            Weight::Constant { c } => *c == 0.0,
            Weight::Polynomial { coeffs } => coeffs.iter().skip(1).any(|&a| a != 0.0) || coeffs.first().is_none_or(|&a| a == 0.0),
            Weight::Exponential { a, .. } => *a == 0.0,
        }
    }
}

/// Preset families for randomized setups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Constant,
    Polynomial,
    Exponential,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Preset::Constant),
            "polynomial" => Ok(Preset::Polynomial),
            "exponential" => Ok(Preset::Exponential),
            _ => Err(Error::Parse(format!("unknown preset {s:?} (expected constant, polynomial or exponential)"))),
        }
    }
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Constant, Preset::Polynomial, Preset::Exponential];

    /// Random weight of this family. Polynomials are quadratics with negative
    /// discriminant, so they have no real zeros.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Weight {
        match self {
            Preset::Constant => Weight::Constant { c: rng.gen_range(0.5..2.0) },
            Preset::Polynomial => Weight::Polynomial {
                coeffs: vec![rng.gen_range(1.0..2.0), rng.gen_range(-0.2..0.2), rng.gen_range(0.02..0.05)],
            },
            Preset::Exponential => Weight::Exponential { a: rng.gen_range(0.5..2.0), c: rng.gen_range(-0.3..0.3) },
        }
    }
}

/// One step of the general kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSetup {
    /// Strictly decreasing positions.
    pub x: Vec<f64>,
    pub theta: f64,
    pub b: BMap,
    pub phi_plus: Weight,
    pub phi_minus: Weight,
}

impl LoopSetup {
    pub fn new(x: Vec<f64>, theta: f64, b: BMap, phi_plus: Weight, phi_minus: Weight) -> Result<Self> {
        if x.is_empty() || x.len() > LOOP_N_CAP {
            return Err(Error::CapExceeded { what: "loop-equation enumeration", size: x.len(), cap: LOOP_N_CAP, hint: "" });
        }
        if !(theta > 0.0) {
            return invalid(format!("theta must be positive, got {theta}"));
        }
        if x.windows(2).any(|w| !(w[0] > w[1])) {
            return invalid("positions must be strictly decreasing");
        }
        if let BMap::QPower { q } = b {
            if !(q > 0.0 && q != 1.0) {
                return invalid(format!("q must be positive and different from 1, got {q}"));
            }
        }
        Ok(LoopSetup { x, theta, b, phi_plus, phi_minus })
    }

    /// Positions of a lattice configuration, shifted to have mean zero.
    pub fn from_config(x: &ParticleConfig, b: BMap, phi_plus: Weight, phi_minus: Weight) -> Result<Self> {
        let mut pos = x.positions();
        let mean = pos.iter().sum::<f64>() / pos.len() as f64;
        pos.iter_mut().for_each(|p| *p -= mean);
        Self::new(pos, x.theta().value(), b, phi_plus, phi_minus)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }
}

/// Enumerated kernel: each step vector (bit `i` is `e_i`) and its probability.
#[derive(Clone, Debug)]
pub struct LoopKernel {
    pub steps: Vec<u32>,
    pub probs: Vec<C>,
    /// `b(x_j + θ e_j)` per step vector.
    moved: Vec<Vec<C>>,
    bx: Vec<C>,
}

pub fn kernel(setup: &LoopSetup) -> Result<LoopKernel> {
    let n = setup.n();
    let b = setup.b;
    let bx: Vec<C> = setup.x.iter().map(|&x| b.eval(C::new(x, 0.0))).collect();
    let bxt: Vec<C> = setup.x.iter().map(|&x| b.eval(C::new(x + setup.theta, 0.0))).collect();
    let fp: Vec<C> = setup.x.iter().map(|&x| setup.phi_plus.eval(C::new(x, 0.0))).collect();
    let fm: Vec<C> = setup.x.iter().map(|&x| setup.phi_minus.eval(C::new(x, 0.0))).collect();
    let mut steps = Vec::with_capacity(1 << n);
    let mut weights = Vec::with_capacity(1 << n);
    let mut moved = Vec::with_capacity(1 << n);
    for mask in 0u32..(1u32 << n) {
        let m: Vec<C> = (0..n).map(|i| if mask >> i & 1 == 1 { bxt[i] } else { bx[i] }).collect();
        let mut w = C::new(1.0, 0.0);
        for i in 0..n {
            w *= if mask >> i & 1 == 1 { fp[i] } else { fm[i] };
            for j in i + 1..n {
                w *= (m[i] - m[j]) / (bx[i] - bx[j]);
            }
        }
        steps.push(mask);
        weights.push(w);
        moved.push(m);
    }
    let z: C = weights.iter().sum();
    let scale: f64 = weights.iter().map(|w| w.norm()).sum();
    if !(z.norm() > 1e-12 * scale) {
        return Err(Error::Pole(format!("normalisation constant vanishes (|Z| = {:.3e})", z.norm())));
    }
    let probs = weights.into_iter().map(|w| w / z).collect();
    Ok(LoopKernel { steps, probs, moved, bx })
}

impl LoopKernel {
    /// The observable at `z`; errors when `b(z)` meets some `b(x_j)`.
    pub fn observable(&self, setup: &LoopSetup, z: C) -> Result<C> {
        let bz = setup.b.eval(z);
        let bzt = setup.b.eval(z + setup.theta);
        let den: Vec<C> = self.bx.iter().map(|&v| bz - v).collect();
        let tiny = den.iter().map(|d| d.norm()).fold(f64::INFINITY, f64::min);
        if tiny <= 1e-14 * bz.norm().max(1.0) {
            return Err(Error::Pole(format!("z = {z} is a particle position")));
        }
        let (pp, pm) = (setup.phi_plus.eval(z), setup.phi_minus.eval(z));
        let mut acc = C::new(0.0, 0.0);
        for (m, &p) in self.moved.iter().zip(&self.probs) {
            let mut a = pp;
            let mut b = pm;
            for j in 0..m.len() {
                a *= (bzt - m[j]) / den[j];
                b *= (bz - m[j]) / den[j];
            }
            acc += p * (a + b);
        }
        Ok(acc)
    }

    /// Trapezoid approximation of `∮ g(z) obs(z) dz` over a circle.
    pub fn contour_integral(&self, setup: &LoopSetup, center: C, radius: f64, nodes: usize, g: impl Fn(C) -> C) -> Result<C> {
        let mut acc = C::new(0.0, 0.0);
        for k in 0..nodes {
            let w = C::from_polar(1.0, 2.0 * PI * k as f64 / nodes as f64);
            let z = center + w * radius;
            acc += g(z) * self.observable(setup, z)? * w * C::new(0.0, radius);
        }
        Ok(acc * (2.0 * PI / nodes as f64))
    }
}

/// Direct evaluation of the observable (enumerates the kernel once per call).
pub fn loop_observable(setup: &LoopSetup, z: C) -> Result<C> {
    kernel(setup)?.observable(setup, z)
}

/// Outcome of the holomorphy checks for one setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidueReport {
    pub n: usize,
    pub theta: f64,
    pub b: BMap,
    /// `|∮ obs dz|` around each particle.
    pub residues: Vec<f64>,
    pub max_residue: f64,
    /// Cauchy integrals at an interior point over two enclosing circles, and their difference.
    pub cauchy_inner: [f64; 2],
    pub cauchy_outer: [f64; 2],
    pub deformation_gap: f64,
    /// Cauchy value minus the direct evaluation.
    pub cauchy_gap: f64,
    pub radius: f64,
    pub nodes: usize,
}

/// Residues on circles of `radius` around every particle, plus the contour-deformation
/// check: the Cauchy integral `(1/2πi) ∮ obs(w) / (w - z0) dw` at `z0 = (x_1 + x_N)/2 + 0.05 i`
/// over circles enclosing the whole configuration at distance `radius` and `2 radius`.
pub fn residue_check(setup: &LoopSetup, radius: f64, nodes: usize) -> Result<ResidueReport> {
    if !(radius > 0.0) || nodes < 3 {
        return invalid("radius must be positive and at least three nodes are needed");
    }
    let gaps = setup.x.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
    if setup.n() > 1 && 2.0 * radius >= gaps {
        return invalid(format!("radius {radius} is too large for the particle spacing {gaps}"));
    }
    for (name, w) in [("phi+", &setup.phi_plus), ("phi-", &setup.phi_minus)] {
        if w.may_vanish() {
            for &x in &setup.x {
                for k in 0..nodes {
                    let z = C::new(x, 0.0) + C::from_polar(radius, 2.0 * PI * k as f64 / nodes as f64);
                    if w.eval(z).norm() < 1e-12 {
                        return invalid(format!("{name} vanishes on the contour near {x}"));
                    }
                }
            }
        }
    }
    let ker = kernel(setup)?;
    let one = |_: C| C::new(1.0, 0.0);
    let residues = setup
        .x
        .iter()
        .map(|&x| ker.contour_integral(setup, C::new(x, 0.0), radius, nodes, one).map(|v| v.norm()))
        .collect::<Result<Vec<_>>>()?;
    let max_residue = residues.iter().copied().fold(0.0, f64::max);

    let (hi, lo) = (setup.x[0], setup.x[setup.n() - 1]);
    let center = C::new(0.5 * (hi + lo), 0.0);
    let z0 = center + C::new(0.0, 0.05);
    let half = 0.5 * (hi - lo);
    let cauchy = |r: f64| -> Result<C> {
        // Enough nodes for the larger circle: the integrand varies on the scale of radius.
        let m = nodes.max((8.0 * (half + r) / radius).ceil() as usize);
        let v = ker.contour_integral(setup, center, half + r, m, |w| (w - z0).inv())?;
        Ok(v / C::new(0.0, 2.0 * PI))
    };
    let inner = cauchy(radius)?;
    let outer = cauchy(2.0 * radius)?;
    let direct = ker.observable(setup, z0)?;
    Ok(ResidueReport {
        n: setup.n(),
        theta: setup.theta,
        b: setup.b,
        residues,
        max_residue,
        cauchy_inner: [inner.re, inner.im],
        cauchy_outer: [outer.re, outer.im],
        deformation_gap: (inner - outer).norm(),
        cauchy_gap: (inner - direct).norm(),
        radius,
        nodes,
    })
}

/// Random lattice setup with `n` particles, gaps `θ + k`, `k < 4`.
pub fn random_setup(n: usize, theta: Real, b: BMap, preset: Preset, seed: u64, stream: u64) -> Result<LoopSetup> {
    let mut rng = rng_for(seed, stream);
    let mut shape = vec![0i64; n];
    for i in (0..n.saturating_sub(1)).rev() {
        shape[i] = shape[i + 1] + rng.gen_range(0..4);
    }
    let cfg = ParticleConfig::new(theta, Real::integer(0), shape)?;
    let (pp, pm) = (preset.sample(&mut rng), preset.sample(&mut rng));
    LoopSetup::from_config(&cfg, b, pp, pm)
}

/// Corpus used by the acceptance check: `cases` setups cycling through
/// θ ∈ {1/2, 1, 2}, both maps and all presets, `N` from 1 to `n_max`.
pub fn corpus(cases: usize, n_max: usize, seed: u64) -> Result<Vec<LoopSetup>> {
    let thetas = [Real::ratio(1, 2)?, Real::integer(1), Real::integer(2)];
    (0..cases)
        .map(|k| {
            let theta = thetas[k % 3];
            let b = if k % 2 == 0 { BMap::Identity } else { BMap::QPower { q: 0.8 + 0.15 * ((k / 2) % 4) as f64 / 3.0 } };
            let preset = Preset::ALL[(k / 3) % 3];
            let n = 1 + k % n_max.max(1);
            random_setup(n, theta, b, preset, seed, k as u64)
        })
        .collect()
}

/// Runs [`residue_check`] over a corpus in parallel.
pub fn check_corpus(setups: &[LoopSetup], radius: f64, nodes: usize) -> Result<Vec<ResidueReport>> {
    setups.par_iter().map(|s| residue_check(s, radius, nodes)).collect()
}

/// `G(z) = exp(θ ∫ ρ(s) / (z - s) ds)` for the density `ρ = h'` of a profile,
/// by adaptive quadrature on each constant-density piece.
pub fn g_function(density: &Profile, theta: f64, z: C) -> Result<C> {
    let segs = density.segments();
    let (lo, hi) = density.support();
    if z.im == 0.0 && z.re >= lo && z.re <= hi {
        return Err(Error::Pole(format!("z = {z} lies on the support [{lo}, {hi}]")));
    }
    let mut acc = C::new(0.0, 0.0);
    for (a, b, rho) in segs {
        let re = quadrature::integrate(|s| (C::new(1.0, 0.0) / (z - s)).re, a, b, 1e-13).integral;
        let im = quadrature::integrate(|s| (C::new(1.0, 0.0) / (z - s)).im, a, b, 1e-13).integral;
        acc += C::new(re, im) * rho;
    }
    Ok((acc * theta).exp())
}

/// `B(z) = G(z) φ⁺(z) + φ⁻(z)`.
pub fn b_function(phi_plus: &Weight, phi_minus: &Weight, density: &Profile, theta: f64, z: C) -> Result<C> {
    Ok(g_function(density, theta, z)? * phi_plus.eval(z) + phi_minus.eval(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{pair_factor, WeightMode};

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn single_particle_observable_is_two() {
        for theta in [0.5, 1.0, 2.0] {
            let s = LoopSetup::new(vec![0.0], theta, BMap::Identity, Weight::Constant { c: 1.0 }, Weight::Constant { c: 1.0 }).unwrap();
            for z in [c(0.3, 0.2), c(-1.0, 0.5), c(7.0, -3.0)] {
                let v = loop_observable(&s, z).unwrap();
                assert!((v - c(2.0, 0.0)).norm() < 1e-13, "{v}");
            }
            assert!(matches!(loop_observable(&s, c(0.0, 0.0)), Err(Error::Pole(_))));
        }
    }

    #[test]
    fn identity_kernel_matches_pair_factors() {
        let theta = Real::integer(2);
        let cfg = ParticleConfig::new(theta, Real::integer(0), vec![3, 1, 1, 0]).unwrap();
        let one = Weight::Constant { c: 1.0 };
        let s = LoopSetup::from_config(&cfg, BMap::Identity, one.clone(), one).unwrap();
        let k = kernel(&s).unwrap();
        let total: f64 = k
            .steps
            .iter()
            .map(|&m| {
                let e: Vec<u8> = (0..4).map(|i| (m >> i & 1) as u8).collect();
                let mut w = 1.0;
                for i in 0..4 {
                    for j in i + 1..4 {
                        w *= pair_factor(WeightMode::Plain, cfg.distance(i, j), 2.0, e[i], e[j]);
                    }
                }
                w
            })
            .sum();
        for (&m, p) in k.steps.iter().zip(&k.probs) {
            let e: Vec<u8> = (0..4).map(|i| (m >> i & 1) as u8).collect();
            let mut w = 1.0;
            for i in 0..4 {
                for j in i + 1..4 {
                    w *= pair_factor(WeightMode::Plain, cfg.distance(i, j), 2.0, e[i], e[j]);
                }
            }
            assert!((p.re - w / total).abs() < 1e-14 && p.im == 0.0);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        for k in 0..12 {
            let b = if k % 2 == 0 { BMap::Identity } else { BMap::QPower { q: 0.9 } };
            let s = random_setup(1 + k % 6, Real::ratio(1, 2).unwrap(), b, Preset::ALL[k % 3], 5, k as u64).unwrap();
            let sum: C = kernel(&s).unwrap().probs.iter().sum();
            assert!((sum - c(1.0, 0.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn residues_vanish_on_corpus() {
        let setups = corpus(30, 6, 11).unwrap();
        for r in check_corpus(&setups, DEFAULT_RADIUS, DEFAULT_NODES).unwrap() {
            assert!(r.max_residue < 1e-9, "{r:?}");
            assert!(r.deformation_gap < 1e-9, "{r:?}");
            assert!(r.cauchy_gap < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn broken_kernel_shows_residues() {
        // Sanity check of the oracle: with θ in the observable but 2θ in the kernel the
        // cancellation fails and residues are visible.
        let s = LoopSetup::new(vec![1.0, -1.0], 1.0, BMap::Identity, Weight::Constant { c: 1.0 }, Weight::Constant { c: 1.0 }).unwrap();
        let wrong = LoopSetup { theta: 2.0, ..s.clone() };
        let kw = kernel(&wrong).unwrap();
        let r = kw.contour_integral(&s, c(1.0, 0.0), 0.1, 64, |_| c(1.0, 0.0)).unwrap();
        assert!(r.norm() > 1e-3);
    }

    #[test]
    fn radius_must_separate_particles() {
        let s = LoopSetup::new(vec![0.5, 0.0], 0.5, BMap::Identity, Weight::Constant { c: 1.0 }, Weight::Constant { c: 1.0 }).unwrap();
        assert!(residue_check(&s, 0.3, 64).is_err());
        assert!(LoopSetup::new(vec![0.0, 0.5], 0.5, BMap::Identity, Weight::Constant { c: 1.0 }, Weight::Constant { c: 1.0 }).is_err());
    }

    #[test]
    fn b_function_trivial_cases() {
        let rho = Profile::ramp(0.0, 1.0);
        let zero = Weight::Constant { c: 0.0 };
        let pm = Weight::Exponential { a: 1.3, c: 0.2 };
        let z = c(2.0, 0.7);
        assert!((b_function(&zero, &pm, &rho, 1.0, z).unwrap() - pm.eval(z)).norm() < 1e-15);
        let one = Weight::Constant { c: 1.0 };
        let far = b_function(&one, &one, &rho, 1.0, c(1e7, 0.0)).unwrap();
        assert!((far - c(2.0, 0.0)).norm() < 1e-6);
        assert!(g_function(&rho, 1.0, c(0.5, 0.0)).is_err());
    }

    #[test]
    fn packed_g_function_closed_form() {
        for theta in [0.5, 1.0, 2.0] {
            let (l, r) = (-0.3, -0.3 + theta);
            let rho = Profile::ramp(l, theta);
            for z in [c(2.0, 0.1), c(-1.0, -0.5), c(0.1, 0.3), c(r + 0.01, 0.0)] {
                let exact = ((z - l) / (z - r)).powf(theta);
                let q = g_function(&rho, theta, z).unwrap();
                assert!((q - exact).norm() < 1e-8 * exact.norm(), "{theta} {z}: {q} vs {exact}");
            }
        }
    }
}
