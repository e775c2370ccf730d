//! Exact distributions over walk space by transfer matrices, forward
//! sampling of the Markov kernels, and a corner-flip Metropolis chain on
//! walks with fixed endpoints.
//!
//! Slices of the transfer matrix hold every ordered shape `m` inside the
//! per-time box `lo(t) <= m <= hi(t)`. Without a corridor every such shape is
//! both reachable from `y` and able to reach `z`, so no state is wasted.

use std::collections::HashMap;
use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::lattice::{
    canonical_path, check_endpoints, path_feasible, HeightField, ParticleConfig, Real, StepVector,
    WalkEnsemble,
};
use crate::weights::{pair_factor, path_weight, pow_big, DriftProfile, KahanSum, WeightMode, DEFAULT_ENUM_CAP};

/// Default cap on the total number of transfer states over all slices.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

/// Name of the generator recorded in output metadata.
pub const RNG_NAME: &str = "ChaCha8 (rand_chacha 0.3), stream = chain index";

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ---------------------------------------------------------------------------
// Corridors

/// Per-time integer bounds on the shape coordinates `m_i(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corridor {
    pub lo: Vec<Vec<i64>>,
    pub hi: Vec<Vec<i64>>,
}

impl Corridor {
    /// The vacuous corridor.
    pub fn unbounded(n: usize, steps: usize) -> Self {
        Corridor { lo: vec![vec![i64::MIN / 4; n]; steps + 1], hi: vec![vec![i64::MAX / 4; n]; steps + 1] }
    }

    /// Exact translation of `||H - H*|| <= eps` at the integer times `t = 0..=T`.
    ///
    /// With particle width `w = theta / N` and `k` particles to the left, the scaled
    /// position `p` must satisfy `p + w >= inf{x : H*(x) >= (k+1) w - eps}` and
    /// `p <= sup{x : H*(x) <= k w + eps}`. Both follow from `H*` being continuous,
    /// nondecreasing and 1-Lipschitz in `x`.
    pub fn from_ball(h_star: &HeightField, eps: f64, y: &ParticleConfig, steps: usize) -> Self {
        let n = y.len();
        let nf = n as f64;
        let th = y.theta().value();
        let w = th / nf;
        let off = y.offset().value();
        let mut lo = vec![vec![0i64; n]; steps + 1];
        let mut hi = vec![vec![0i64; n]; steps + 1];
        let g = &h_star.grid;
        for t in 0..=steps {
            let row = h_star.row_at(t as f64 / nf);
            for i in 0..n {
                let k = (n - 1 - i) as f64;
                let p_lo = level_ge(&row, g.x_min, g.dx, (k + 1.0) * w - eps) - w;
                let p_hi = crate::lattice::level_crossing(&row, g.x_min, g.dx, k * w + eps);
                let to_m = |p: f64| p * nf + i as f64 * th - off;
                lo[t][i] = if p_lo.is_finite() { (to_m(p_lo) - 1e-9).ceil() as i64 } else if p_lo < 0.0 { i64::MIN / 4 } else { i64::MAX / 4 };
                hi[t][i] = if p_hi.is_finite() { (to_m(p_hi) + 1e-9).floor() as i64 } else if p_hi > 0.0 { i64::MAX / 4 } else { i64::MIN / 4 };
            }
        }
        Corridor { lo, hi }
    }
}

/// `inf{x : row(x) >= level}` for a nondecreasing piecewise-linear row.
fn level_ge(row: &[f64], x_min: f64, dx: f64, level: f64) -> f64 {
    if row[0] >= level {
        return f64::NEG_INFINITY;
    }
    let last = row.len() - 1;
    if row[last] < level {
        return f64::INFINITY;
    }
    let k = row.partition_point(|&h| h < level);
    let (a, b) = (row[k - 1], row[k]);
    let w = if b > a { (level - a) / (b - a) } else { 1.0 };
    x_min + (k as f64 - 1.0 + w) * dx
}

// ---------------------------------------------------------------------------
// Transfer problem and slices

/// Endpoint data for the transfer engine.
#[derive(Clone, Debug)]
pub struct TransferProblem {
    pub y: ParticleConfig,
    /// `None` leaves the endpoint free.
    pub z: Option<ParticleConfig>,
    pub steps: usize,
    pub drift: DriftProfile,
    pub mode: WeightMode,
    pub corridor: Option<Corridor>,
    pub state_cap: usize,
}

impl TransferProblem {
    pub fn new(y: ParticleConfig, z: Option<ParticleConfig>, steps: usize, drift: DriftProfile, mode: WeightMode) -> Result<Self> {
        mode.check()?;
        if drift.len() != steps {
            return invalid(format!("drift has {} values for {steps} steps", drift.len()));
        }
        if let Some(z) = &z {
            if !path_feasible(&y, z, steps)? {
                return Err(Error::Infeasible { steps });
            }
        }
        Ok(TransferProblem { y, z, steps, drift, mode, corridor: None, state_cap: DEFAULT_STATE_CAP })
    }

    pub fn with_corridor(mut self, c: Corridor) -> Self {
        self.corridor = Some(c);
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.state_cap = cap;
        self
    }

    /// `ln` of the kernel normalization at step `t`.
    pub fn log_kernel_norm(&self, t: usize) -> f64 {
        let n = self.y.len();
        let b = self.drift.get(t).value();
        match self.mode {
            WeightMode::Plain => n as f64 * b.ln_1p(),
            WeightMode::Q(q) => {
                let tq = q.powf(self.y.theta().value());
                (0..n).map(|i| (b * tq.powi(i as i32)).ln_1p()).sum()
            }
        }
    }

    /// Tightened per-time boxes; `None` when the corridor admits no walk.
    fn boxes(&self) -> Option<(Vec<Vec<i64>>, Vec<Vec<i64>>)> {
        let n = self.y.len();
        let ys = self.y.shape();
        let steps = self.steps;
        let mut lo = vec![vec![0i64; n]; steps + 1];
        let mut hi = vec![vec![0i64; n]; steps + 1];
        for t in 0..=steps {
            for i in 0..n {
                let (mut l, mut h) = (ys[i], ys[i] + t as i64);
                if let Some(z) = &self.z {
                    let zi = z.shape()[i];
                    l = l.max(zi - (steps - t) as i64);
                    h = h.min(zi);
                }
                if let Some(c) = &self.corridor {
                    l = l.max(c.lo[t][i]);
                    h = h.min(c.hi[t][i]);
                }
                lo[t][i] = l;
                hi[t][i] = h;
            }
        }
        // Propagate monotonicity in time, unit speed and the ordering of particles.
        loop {
            let mut changed = false;
            let mut set = |v: &mut i64, new: i64| {
                if new != *v {
                    *v = new;
                    changed = true;
                }
            };
            for t in 0..=steps {
                for i in 0..n {
                    let mut l = lo[t][i];
                    let mut h = hi[t][i];
                    if t > 0 {
                        l = l.max(lo[t - 1][i]);
                        h = h.min(hi[t - 1][i] + 1);
                    }
                    if t < steps {
                        h = h.min(hi[t + 1][i]);
                        l = l.max(lo[t + 1][i] - 1);
                    }
                    if i > 0 {
                        h = h.min(hi[t][i - 1]);
                    }
                    if i + 1 < n {
                        l = l.max(lo[t][i + 1]);
                    }
                    set(&mut lo[t][i], l);
                    set(&mut hi[t][i], h);
                }
            }
            if !changed {
                break;
            }
        }
        for t in 0..=steps {
            for i in 0..n {
                if lo[t][i] > hi[t][i] {
                    return None;
                }
            }
        }
        Some((lo, hi))
    }
}

/// States of one time slice, stored flat.
#[derive(Clone, Debug)]
pub struct Slice {
    n: usize,
    lo: Vec<i64>,
    hi: Vec<i64>,
    width: u32,
    shapes: Vec<i64>,
    index: HashMap<u128, u32>,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.shapes.len() / self.n.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self, k: usize) -> &[i64] {
        &self.shapes[k * self.n..(k + 1) * self.n]
    }

    fn key(&self, s: &[i64]) -> u128 {
        let mut key = 0u128;
        for (v, l) in s.iter().zip(&self.lo) {
            key = (key << self.width) | (v - l) as u128;
        }
        key
    }

    fn find(&self, s: &[i64]) -> Option<usize> {
        if s.iter().zip(self.lo.iter().zip(&self.hi)).any(|(v, (l, h))| v < l || v > h) {
            return None;
        }
        self.index.get(&self.key(s)).map(|&k| k as usize)
    }
}

fn enumerate_slice(lo: &[i64], hi: &[i64], width: u32, budget: usize, time: usize, cap: usize) -> Result<Slice> {
    let n = lo.len();
    let mut shapes = Vec::new();
    let mut cur = vec![0i64; n];
    let mut count = 0usize;
    fn rec(i: usize, lo: &[i64], hi: &[i64], cur: &mut Vec<i64>, out: &mut Vec<i64>, count: &mut usize, budget: usize) -> bool {
        let n = lo.len();
        if i == n {
            out.extend_from_slice(cur);
            *count += 1;
            return *count <= budget;
        }
        let top = if i == 0 { hi[0] } else { hi[i].min(cur[i - 1]) };
        let mut v = lo[i];
        while v <= top {
            cur[i] = v;
            if !rec(i + 1, lo, hi, cur, out, count, budget) {
                return false;
            }
            v += 1;
        }
        true
    }
    if n > 0 && !rec(0, lo, hi, &mut cur, &mut shapes, &mut count, budget) {
        return Err(Error::StateExplosion { states: cap - budget + count, time, cap });
    }
    if n == 0 {
        count = 1;
    }
    let mut slice = Slice { n, lo: lo.to_vec(), hi: hi.to_vec(), width, shapes, index: HashMap::with_capacity(count) };
    for k in 0..count {
        let key = slice.key(slice.shape(k));
        slice.index.insert(key, k as u32);
    }
    Ok(slice)
}

fn build_slices(p: &TransferProblem) -> Result<Option<Vec<Slice>>> {
    let Some((lo, hi)) = p.boxes() else {
        return Ok(None);
    };
    let n = p.y.len();
    let range = (0..=p.steps)
        .flat_map(|t| (0..n).map(move |i| (t, i)))
        .map(|(t, i)| (hi[t][i] - lo[t][i]) as u64)
        .max()
        .unwrap_or(0);
    let width = 64 - range.leading_zeros().min(63);
    let width = width.max(1);
    if n as u32 * width > 128 {
        return Err(Error::CapExceeded { what: "packed transfer-state key (bits)", size: (n as u32 * width) as usize, cap: 128, hint: "" });
    }
    let mut slices = Vec::with_capacity(p.steps + 1);
    let mut total = 0usize;
    for t in 0..=p.steps {
        let s = enumerate_slice(&lo[t], &hi[t], width, p.state_cap - total, t, p.state_cap)?;
        total += s.len();
        slices.push(s);
    }
    Ok(Some(slices))
}

// ---------------------------------------------------------------------------
// Weights inside the engine

trait Mass: Clone + Send + Sync {
    fn nil() -> Self;
    fn is_nil(&self) -> bool;
    fn add_assign(&mut self, o: &Self);
    fn mul(&self, o: &Self) -> Self;
    /// Rescales a slice in place and returns the log of the factor removed.
    fn normalize(v: &mut [Self]) -> f64;
}

impl Mass for f64 {
    fn nil() -> Self {
        0.0
    }
    fn is_nil(&self) -> bool {
        *self == 0.0
    }
    fn add_assign(&mut self, o: &Self) {
        *self += o;
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn normalize(v: &mut [Self]) -> f64 {
        let m = v.iter().cloned().fold(0.0, f64::max);
        if m == 0.0 || !m.is_finite() {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= m);
        m.ln()
    }
}

impl Mass for BigRational {
    fn nil() -> Self {
        Zero::zero()
    }
    fn is_nil(&self) -> bool {
        Zero::is_zero(self)
    }
    fn add_assign(&mut self, o: &Self) {
        *self += o;
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn normalize(_: &mut [Self]) -> f64 {
        0.0
    }
}

trait Weigher<M>: Sync {
    /// Weight of the step `mask` from shape `s` at time `t`, including `b_t^{|e|}`.
    fn weight(&self, t: usize, s: &[i64], mask: u64) -> M;
}

/// Pair factors tabulated by `(integer gap k, index distance g)`.
struct FloatWeigher {
    n: usize,
    kmax: usize,
    /// `[kind][k * n + g]` with kinds (1,0), (0,1), (1,1).
    table: [Vec<f64>; 3],
    /// `b_t^j` for `j = 0..=N`.
    bpow: Vec<Vec<f64>>,
}

impl FloatWeigher {
    fn new(p: &TransferProblem, kmax: usize) -> Self {
        let n = p.y.len();
        let th = p.y.theta().value();
        let mut table = [vec![1.0; (kmax + 1) * n], vec![1.0; (kmax + 1) * n], vec![1.0; (kmax + 1) * n]];
        for k in 0..=kmax {
            for g in 1..n.max(1) {
                let d = k as f64 + g as f64 * th;
                table[0][k * n + g] = pair_factor(p.mode, d, th, 1, 0);
                table[1][k * n + g] = pair_factor(p.mode, d, th, 0, 1);
                table[2][k * n + g] = pair_factor(p.mode, d, th, 1, 1);
            }
        }
        let bpow = (0..p.steps)
            .map(|t| {
                let b = p.drift.get(t).value();
                (0..=n).map(|j| b.powi(j as i32)).collect()
            })
            .collect();
        FloatWeigher { n, kmax, table, bpow }
    }
}

impl Weigher<f64> for FloatWeigher {
    fn weight(&self, t: usize, s: &[i64], mask: u64) -> f64 {
        let n = self.n;
        let mut w = self.bpow[t][mask.count_ones() as usize];
        for i in 0..n {
            let ei = (mask >> i) & 1;
            for j in i + 1..n {
                let ej = (mask >> j) & 1;
                let kind = match (ei, ej) {
                    (0, 0) => continue,
                    (1, 0) => 0,
                    (0, 1) => 1,
                    _ => 2,
                };
                let k = (s[i] - s[j]) as usize;
                debug_assert!(k <= self.kmax);
                w *= self.table[kind][k * n + (j - i)];
            }
        }
        w
    }
}

/// Exact plain weights with `theta = p / q`: each pair factor is `(q k + p g + p D) / (q k + p g)`.
struct ExactWeigher {
    n: usize,
    p: i64,
    q: i64,
    bpow: Vec<Vec<BigRational>>,
}

impl Weigher<BigRational> for ExactWeigher {
    fn weight(&self, t: usize, s: &[i64], mask: u64) -> BigRational {
        let n = self.n;
        let mut num = BigInt::one();
        let mut den = BigInt::one();
        for i in 0..n {
            let ei = ((mask >> i) & 1) as i64;
            for j in i + 1..n {
                let ej = ((mask >> j) & 1) as i64;
                if ei == ej {
                    continue;
                }
                let qd = self.q * (s[i] - s[j]) + self.p * (j - i) as i64;
                num *= qd + self.p * (ei - ej);
                den *= qd;
            }
        }
        BigRational::new(num, den) * &self.bpow[t][mask.count_ones() as usize]
    }
}

/// Steps `e` leading from slice `from` state `s` into the next slice (push direction).
fn successors(s: &[i64], next: &Slice, mut f: impl FnMut(u64, usize)) {
    let n = s.len();
    let mut cur = vec![0i64; n];
    fn rec(i: usize, mask: u64, s: &[i64], next: &Slice, cur: &mut Vec<i64>, f: &mut dyn FnMut(u64, usize)) {
        let n = s.len();
        if i == n {
            if let Some(k) = next.find(cur) {
                f(mask, k);
            }
            return;
        }
        for e in 0..2i64 {
            let v = s[i] + e;
            if i > 0 && v > cur[i - 1] {
                continue;
            }
            cur[i] = v;
            rec(i + 1, mask | ((e as u64) << i), s, next, cur, f);
        }
    }
    rec(0, 0, s, next, &mut cur, &mut f);
}

/// Steps `e` with `s' - e` in slice `prev` (pull direction); yields `(mask, index)`.
fn predecessors(s2: &[i64], prev: &Slice, mut f: impl FnMut(u64, usize)) {
    let n = s2.len();
    let mut cur = vec![0i64; n];
    fn rec(i: usize, mask: u64, s2: &[i64], prev: &Slice, cur: &mut Vec<i64>, f: &mut dyn FnMut(u64, usize)) {
        let n = s2.len();
        if i == n {
            if let Some(k) = prev.find(cur) {
                f(mask, k);
            }
            return;
        }
        for e in 0..2i64 {
            let v = s2[i] - e;
            if v < prev.lo[i] || (i > 0 && v > cur[i - 1]) {
                continue;
            }
            cur[i] = v;
            rec(i + 1, mask | ((e as u64) << i), s2, prev, cur, f);
        }
    }
    rec(0, 0, s2, prev, &mut cur, &mut f);
}

struct Passes<M> {
    alpha: Vec<Vec<M>>,
    alpha_log: Vec<f64>,
    beta: Option<(Vec<Vec<M>>, Vec<f64>)>,
}

fn forward<M: Mass, W: Weigher<M>>(slices: &[Slice], w: &W, start: M) -> (Vec<Vec<M>>, Vec<f64>) {
    let mut alpha: Vec<Vec<M>> = Vec::with_capacity(slices.len());
    let mut logs = Vec::with_capacity(slices.len());
    alpha.push(vec![start]);
    logs.push(0.0);
    for t in 0..slices.len() - 1 {
        let prev = &slices[t];
        let next = &slices[t + 1];
        let a = &alpha[t];
        let mut vals: Vec<M> = (0..next.len())
            .into_par_iter()
            .map(|k| {
                let mut acc = M::nil();
                predecessors(next.shape(k), prev, |mask, j| {
                    if !a[j].is_nil() {
                        acc.add_assign(&a[j].mul(&w.weight(t, prev.shape(j), mask)));
                    }
                });
                acc
            })
            .collect();
        let l = M::normalize(&mut vals);
        logs.push(logs[t] + l);
        alpha.push(vals);
    }
    (alpha, logs)
}

fn backward<M: Mass, W: Weigher<M>>(slices: &[Slice], w: &W, end: impl Fn(usize) -> M + Sync) -> (Vec<Vec<M>>, Vec<f64>) {
    let steps = slices.len() - 1;
    let mut beta: Vec<Vec<M>> = vec![Vec::new(); steps + 1];
    let mut logs = vec![0.0; steps + 1];
    let mut last: Vec<M> = (0..slices[steps].len()).map(&end).collect();
    logs[steps] = M::normalize(&mut last);
    beta[steps] = last;
    for t in (0..steps).rev() {
        let cur = &slices[t];
        let next = &slices[t + 1];
        let b = &beta[t + 1];
        let mut vals: Vec<M> = (0..cur.len())
            .into_par_iter()
            .map(|k| {
                let s = cur.shape(k);
                let mut acc = M::nil();
                successors(s, next, |mask, j| {
                    if !b[j].is_nil() {
                        acc.add_assign(&w.weight(t, s, mask).mul(&b[j]));
                    }
                });
                acc
            })
            .collect();
        logs[t] = logs[t + 1] + M::normalize(&mut vals);
        beta[t] = vals;
    }
    (beta, logs)
}

fn kmax(slices: &[Slice]) -> usize {
    slices
        .iter()
        .flat_map(|s| (0..s.len()).map(move |k| s.shape(k)))
        .map(|sh| if sh.is_empty() { 0 } else { (sh[0] - sh[sh.len() - 1]) as usize })
        .max()
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Results

/// Outcome of the transfer-matrix computation.
#[derive(Clone, Debug)]
pub struct ExactDistribution {
    pub theta: Real,
    pub offset: Real,
    pub steps: usize,
    /// `ln` of the total path weight of the event.
    pub log_weight: f64,
    /// `ln P(event)` under the normalized kernel started at `y`.
    pub log_prob: f64,
    /// Exact event weight and probability (plain mode, rational theta and drift).
    pub exact_weight: Option<BigRational>,
    pub exact_prob: Option<BigRational>,
    /// Per time slice: shapes and their conditional probabilities given the event.
    pub marginals: Vec<Vec<(Vec<i64>, f64)>>,
    pub exact_marginals: Option<Vec<Vec<(Vec<i64>, BigRational)>>>,
    pub total_states: usize,
}

fn empty_event(p: &TransferProblem) -> ExactDistribution {
    ExactDistribution {
        theta: p.y.theta(),
        offset: p.y.offset(),
        steps: p.steps,
        log_weight: f64::NEG_INFINITY,
        log_prob: f64::NEG_INFINITY,
        exact_weight: None,
        exact_prob: None,
        marginals: vec![Vec::new(); p.steps + 1],
        exact_marginals: None,
        total_states: 0,
    }
}

fn end_mass<M: Mass>(p: &TransferProblem, last: &Slice, k: usize, one: &M) -> M {
    match &p.z {
        Some(z) if last.shape(k) != z.shape() => M::nil(),
        _ => one.clone(),
    }
}

fn run<M: Mass, W: Weigher<M>>(p: &TransferProblem, slices: &[Slice], w: &W, one: M, with_beta: bool) -> Passes<M> {
    let (alpha, alpha_log) = forward(slices, w, one.clone());
    let beta = with_beta.then(|| {
        let last = &slices[p.steps];
        backward(slices, w, |k| end_mass(p, last, k, &one))
    });
    Passes { alpha, alpha_log, beta }
}

fn is_exact_capable(p: &TransferProblem) -> bool {
    p.mode == WeightMode::Plain && p.y.theta().is_exact() && p.drift.is_exact()
}

fn exact_weigher(p: &TransferProblem) -> ExactWeigher {
    let th = p.y.theta().as_exact().expect("checked by is_exact_capable");
    let n = p.y.len();
    let bpow = (0..p.steps)
        .map(|t| {
            let b = p.drift.get(t).as_big().expect("checked by is_exact_capable");
            (0..=n).map(|j| pow_big(&b, j)).collect()
        })
        .collect();
    ExactWeigher { n, p: *th.numer(), q: *th.denom(), bpow }
}

/// Total path weight of the event (endpoint and corridor), forward pass only.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSum {
    pub log_value: f64,
    pub exact: Option<BigRational>,
}

pub fn path_sum(p: &TransferProblem, exact: bool) -> Result<PathSum> {
    if p.y.is_empty() {
        return Ok(PathSum { log_value: 0.0, exact: exact.then(BigRational::one) });
    }
    let Some(slices) = build_slices(p)? else {
        return Ok(PathSum { log_value: f64::NEG_INFINITY, exact: exact.then(<BigRational as Zero>::zero) });
    };
    let last = &slices[p.steps];
    let fw = FloatWeigher::new(p, kmax(&slices));
    let (alpha, logs) = forward(&slices, &fw, 1.0);
    let mut acc = KahanSum::default();
    for (k, a) in alpha[p.steps].iter().enumerate() {
        acc.add(a * end_mass::<f64>(p, last, k, &1.0));
    }
    let log_value = if acc.sum() > 0.0 { acc.sum().ln() + logs[p.steps] } else { f64::NEG_INFINITY };
    let exact = if exact {
        if !is_exact_capable(p) {
            return invalid("exact path sums need plain weights with rational theta and drift");
        }
        let ew = exact_weigher(p);
        let (alpha, _) = forward(&slices, &ew, BigRational::one());
        let mut total = <BigRational as Zero>::zero();
        for (k, a) in alpha[p.steps].iter().enumerate() {
            total += a * end_mass::<BigRational>(p, last, k, &BigRational::one());
        }
        Some(total)
    } else {
        None
    };
    Ok(PathSum { log_value, exact })
}

/// Forward-backward pass: event weight, event probability under the kernel, and the
/// conditional marginals of every slice. `exact` adds rational results when available.
pub fn exact_distribution(p: &TransferProblem, exact: bool) -> Result<ExactDistribution> {
    let norm: f64 = (0..p.steps).map(|t| p.log_kernel_norm(t)).sum();
    if p.y.is_empty() {
        let mut d = empty_event(p);
        d.log_weight = 0.0;
        d.log_prob = 0.0;
        d.marginals = vec![vec![(Vec::new(), 1.0)]; p.steps + 1];
        return Ok(d);
    }
    let Some(slices) = build_slices(p)? else {
        return Ok(empty_event(p));
    };
    let total_states = slices.iter().map(Slice::len).sum();
    let fw = FloatWeigher::new(p, kmax(&slices));
    let passes = run(p, &slices, &fw, 1.0, true);
    let (beta, beta_log) = passes.beta.expect("requested");
    // Z = beta_0(y).
    let z0 = beta[0][0];
    if z0 == 0.0 {
        return Ok(ExactDistribution { total_states, ..empty_event(p) });
    }
    let log_weight = z0.ln() + beta_log[0];
    let mut marginals = Vec::with_capacity(p.steps + 1);
    for t in 0..=p.steps {
        let s = &slices[t];
        let scale = passes.alpha_log[t] + beta_log[t] - log_weight;
        let mut m = Vec::new();
        for k in 0..s.len() {
            let v = passes.alpha[t][k] * beta[t][k];
            if v > 0.0 {
                m.push((s.shape(k).to_vec(), (v.ln() + scale).exp()));
            }
        }
        marginals.push(m);
    }
    let mut out = ExactDistribution {
        theta: p.y.theta(),
        offset: p.y.offset(),
        steps: p.steps,
        log_weight,
        log_prob: log_weight - norm,
        exact_weight: None,
        exact_prob: None,
        marginals,
        exact_marginals: None,
        total_states,
    };
    if exact && is_exact_capable(p) {
        let ew = exact_weigher(p);
        let passes = run(p, &slices, &ew, BigRational::one(), true);
        let (beta, _) = passes.beta.expect("requested");
        let zx = beta[0][0].clone();
        let mut exact_m = Vec::with_capacity(p.steps + 1);
        for t in 0..=p.steps {
            let s = &slices[t];
            let mut m = Vec::new();
            for k in 0..s.len() {
                let v = &passes.alpha[t][k] * &beta[t][k];
                if !Zero::is_zero(&v) {
                    m.push((s.shape(k).to_vec(), v / &zx));
                }
            }
            exact_m.push(m);
        }
        let mut norm_exact = BigRational::one();
        for t in 0..p.steps {
            let b = p.drift.get(t).as_big().expect("exact drift");
            norm_exact *= pow_big(&(BigRational::one() + b), p.y.len());
        }
        out.exact_prob = Some(&zx / norm_exact);
        out.exact_weight = Some(zx);
        out.exact_marginals = Some(exact_m);
    }
    Ok(out)
}

impl ExactDistribution {
    /// Marginal law of each particle's shape coordinate at time `t`.
    pub fn particle_marginals(&self, t: usize) -> Vec<Vec<(i64, f64)>> {
        let n = self.marginals[t].first().map_or(0, |(s, _)| s.len());
        let mut out: Vec<HashMap<i64, f64>> = vec![HashMap::new(); n];
        for (s, p) in &self.marginals[t] {
            for (i, &m) in s.iter().enumerate() {
                *out[i].entry(m).or_insert(0.0) += p;
            }
        }
        out.into_iter()
            .map(|h| {
                let mut v: Vec<(i64, f64)> = h.into_iter().collect();
                v.sort_by_key(|e| e.0);
                v
            })
            .collect()
    }

    /// Expected rescaled height field under the conditional law, positions interpolated
    /// linearly in time as in [`crate::lattice::height_field`] (exact at integer times).
    pub fn mean_height(&self, n_scale: usize, grid: crate::lattice::GridSpec) -> HeightField {
        let nf = n_scale as f64;
        let th = self.theta.value();
        let width = th / nf;
        let off = self.offset.value();
        let rows: Vec<Vec<f64>> = (0..=self.steps)
            .map(|t| {
                let pm = self.particle_marginals(t);
                (0..grid.nx)
                    .map(|ix| {
                        let x = grid.x(ix);
                        pm.iter()
                            .enumerate()
                            .map(|(i, law)| {
                                law.iter()
                                    .map(|&(m, p)| p * (x - (off + m as f64 - i as f64 * th) / nf).clamp(0.0, width))
                                    .sum::<f64>()
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        HeightField::from_fn(grid, th, |x, tau| {
            let s = (tau * nf).clamp(0.0, self.steps as f64);
            let k = (s.floor() as usize).min(self.steps.saturating_sub(1));
            let w = if self.steps == 0 { 0.0 } else { s - k as f64 };
            let ix = ((x - grid.x_min) / grid.dx).round() as usize;
            let a = rows[k][ix];
            let b = if self.steps == 0 { a } else { rows[k + 1][ix] };
            a * (1.0 - w) + b * w
        })
    }

    /// Key `m_1|g_1,g_2,...` with gaps `g_i = m_i - m_{i+1}`.
    pub fn config_key(shape: &[i64]) -> String {
        let gaps: Vec<String> = shape.windows(2).map(|w| (w[0] - w[1]).to_string()).collect();
        format!("{}|{}", shape.first().copied().unwrap_or(0), gaps.join(","))
    }

    /// CSV `t,config_key,mass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,config_key,mass")?;
        for (t, slice) in self.marginals.iter().enumerate() {
            for (k, (s, p)) in slice.iter().enumerate() {
                let mass = match &self.exact_marginals {
                    Some(em) => em[t][k].1.to_string(),
                    None => crate::lattice::sig17(*p),
                };
                writeln!(w, "{t},{},{mass}", Self::config_key(s))?;
            }
        }
        Ok(())
    }
}

/// `(1/N^2) ln P(walk ends at z and stays within eps of H*)` under the kernel.
pub fn ball_log_probability(
    y: &ParticleConfig,
    z: &ParticleConfig,
    steps: usize,
    h_star: &HeightField,
    eps: f64,
    drift: &DriftProfile,
    mode: WeightMode,
) -> Result<f64> {
    let p = TransferProblem::new(y.clone(), Some(z.clone()), steps, drift.clone(), mode)?
        .with_corridor(Corridor::from_ball(h_star, eps, y, steps));
    ball_log_probability_problem(&p)
}

pub fn ball_log_probability_problem(p: &TransferProblem) -> Result<f64> {
    let n = p.y.len() as f64;
    let s = path_sum(p, false)?;
    let norm: f64 = (0..p.steps).map(|t| p.log_kernel_norm(t)).sum();
    Ok((s.log_value - norm) / (n * n))
}

// ---------------------------------------------------------------------------
// Forward sampling

/// Exact forward sampling: each step enumerates the feasible `e` (depth-first with
/// incremental weights) and draws one by inverse transform.
pub fn sample_forward(y: &ParticleConfig, steps: usize, drift: &DriftProfile, mode: WeightMode, seed: u64) -> Result<WalkEnsemble> {
    sample_forward_stream(y, steps, drift, mode, seed, 0)
}

pub fn sample_forward_stream(
    y: &ParticleConfig,
    steps: usize,
    drift: &DriftProfile,
    mode: WeightMode,
    seed: u64,
    stream: u64,
) -> Result<WalkEnsemble> {
    mode.check()?;
    let n = y.len();
    if n > DEFAULT_ENUM_CAP {
        return Err(Error::CapExceeded {
            what: "forward sampler enumeration over {0,1}^N",
            size: n,
            cap: DEFAULT_ENUM_CAP,
            hint: "; use sample_mcmc or sample_forward_gibbs for larger N",
        });
    }
    if drift.len() != steps {
        return invalid(format!("drift has {} values for {steps} steps", drift.len()));
    }
    let mut rng = rng_for(seed, stream);
    let th = y.theta().value();
    let mut m = y.shape().to_vec();
    let mut shapes = vec![m.clone()];
    for t in 0..steps {
        let b = drift.get(t).value();
        let total = step_dfs(&m, th, mode, b, None);
        let target = rng.gen::<f64>() * total;
        let mut chosen = 0u64;
        step_dfs(&m, th, mode, b, Some((target, &mut chosen)));
        for (i, v) in m.iter_mut().enumerate() {
            *v += ((chosen >> i) & 1) as i64;
        }
        shapes.push(m.clone());
    }
    WalkEnsemble::from_shapes(y.theta(), y.offset(), shapes)
}

/// Sum of step weights over feasible `e`; with `pick`, stops at the first leaf whose
/// cumulative weight exceeds the target and records its mask.
fn step_dfs(m: &[i64], th: f64, mode: WeightMode, b: f64, pick: Option<(f64, &mut u64)>) -> f64 {
    struct Ctx<'a> {
        m: &'a [i64],
        th: f64,
        mode: WeightMode,
        b: f64,
        acc: f64,
        target: f64,
        found: Option<u64>,
        picking: bool,
        e: Vec<u8>,
    }
    fn rec(c: &mut Ctx, i: usize, w: f64, mask: u64) {
        if c.found.is_some() {
            return;
        }
        let n = c.m.len();
        if i == n {
            c.acc += w;
            if c.picking && c.acc > c.target {
                c.found = Some(mask);
            }
            return;
        }
        for e in 0..2u8 {
            if i > 0 && c.m[i - 1] == c.m[i] && c.e[i - 1] == 0 && e == 1 {
                continue;
            }
            let mut f = if e == 1 { c.b } else { 1.0 };
            for j in 0..i {
                let (ej, ei) = (c.e[j], e);
                if ej == 0 && ei == 0 {
                    continue;
                }
                let d = (c.m[j] - c.m[i]) as f64 + (i - j) as f64 * c.th;
                f *= pair_factor(c.mode, d, c.th, ej, ei);
            }
            c.e[i] = e;
            rec(c, i + 1, w * f, mask | ((e as u64) << i));
        }
    }
    let (target, picking) = match &pick {
        Some((t, _)) => (*t, true),
        None => (0.0, false),
    };
    let mut c = Ctx { m, th, mode, b, acc: 0.0, target, found: None, picking, e: vec![0; m.len()] };
    rec(&mut c, 0, 1.0, 0);
    if let Some((_, out)) = pick {
        // Rounding can leave the target a hair above the final sum; take the last leaf then.
        *out = c.found.unwrap_or_else(|| last_feasible_mask(m));
    }
    c.acc
}

fn last_feasible_mask(m: &[i64]) -> u64 {
    // All ones is always feasible.
    (1u64 << m.len()) - 1
}

/// Approximate forward sampling for large `N`: within each step, `sweeps` rounds of
/// single-site Metropolis updates on `e` targeting `V(x + theta e) b^{|e|}`
/// restricted to feasible `e`. Exact only in the limit of many sweeps.
pub fn sample_forward_gibbs(
    y: &ParticleConfig,
    steps: usize,
    drift: &DriftProfile,
    sweeps: usize,
    seed: u64,
    stream: u64,
) -> Result<WalkEnsemble> {
    if drift.len() != steps {
        return invalid(format!("drift has {} values for {steps} steps", drift.len()));
    }
    let n = y.len();
    let th = y.theta().value();
    let mut rng = rng_for(seed, stream);
    let mut m = y.shape().to_vec();
    let mut shapes = vec![m.clone()];
    let mut x = vec![0.0; n];
    for t in 0..steps {
        let lb = drift.get(t).value().ln();
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = m[i] as f64 - i as f64 * th;
        }
        // Start from an independent fair-coin proposal made feasible left to right.
        let mut e = vec![0u8; n];
        for i in 0..n {
            let want = rng.gen::<bool>() as u8;
            e[i] = if i > 0 && m[i - 1] == m[i] && e[i - 1] == 0 { 0 } else { want };
        }
        for _ in 0..sweeps * n {
            let i = rng.gen_range(0..n);
            let new = 1 - e[i];
            // Feasibility with both neighbours.
            if i > 0 && m[i - 1] == m[i] && e[i - 1] == 0 && new == 1 {
                continue;
            }
            if i + 1 < n && m[i] == m[i + 1] && new == 0 && e[i + 1] == 1 {
                continue;
            }
            let xi_old = x[i] + th * e[i] as f64;
            let xi_new = x[i] + th * new as f64;
            let mut lr = if new == 1 { lb } else { -lb };
            for j in 0..n {
                if j == i {
                    continue;
                }
                let xj = x[j] + th * e[j] as f64;
                lr += ((xi_new - xj).abs()).ln() - ((xi_old - xj).abs()).ln();
            }
            if lr >= 0.0 || rng.gen::<f64>() < lr.exp() {
                e[i] = new;
            }
        }
        for i in 0..n {
            m[i] += e[i] as i64;
        }
        shapes.push(m.clone());
    }
    WalkEnsemble::from_shapes(y.theta(), y.offset(), shapes)
}

// ---------------------------------------------------------------------------
// Metropolis chain on walks with fixed endpoints

#[derive(Clone, Debug)]
pub struct McmcStats {
    pub proposed: u64,
    pub accepted: u64,
    /// Proposals at sites whose steps are not a `(1,0)` or `(0,1)` corner, or that would
    /// break the ordering of particles.
    pub rejected_infeasible: u64,
}

/// State of a corner-flip chain.
#[derive(Clone, Debug)]
pub struct McmcState {
    theta: Real,
    offset: Real,
    shapes: Vec<Vec<i64>>,
    drift: DriftProfile,
    mode: WeightMode,
    pub log_weight: f64,
    pub seed: u64,
    pub sweep_count: u64,
    pub stats: McmcStats,
    rng: ChaCha8Rng,
}

/// How often debug builds compare the local ratio with a full recomputation.
const DEBUG_CHECK_EVERY: u64 = 997;

impl McmcState {
    /// Starts from the canonical path between `y` and `z`.
    pub fn new(y: &ParticleConfig, z: &ParticleConfig, steps: usize, drift: DriftProfile, mode: WeightMode, seed: u64, stream: u64) -> Result<Self> {
        mode.check()?;
        let w = canonical_path(y, z, steps)?;
        let pw = path_weight(&w, &drift, mode)?;
        Ok(McmcState {
            theta: y.theta(),
            offset: y.offset(),
            shapes: w.shapes().to_vec(),
            drift,
            mode,
            log_weight: pw.log_value,
            seed,
            sweep_count: 0,
            stats: McmcStats { proposed: 0, accepted: 0, rejected_infeasible: 0 },
            rng: rng_for(seed, stream),
        })
    }

    pub fn walk(&self) -> WalkEnsemble {
        WalkEnsemble::from_shapes(self.theta, self.offset, self.shapes.clone()).expect("chain preserves validity")
    }

    pub fn shapes(&self) -> &[Vec<i64>] {
        &self.shapes
    }

    fn steps(&self) -> usize {
        self.shapes.len() - 1
    }

    /// Direction of the corner flip at `(i, t)`: `+1` turns `(0,1)` into `(1,0)`,
    /// `-1` the reverse; `None` if the site is not a corner or the flip breaks ordering.
    pub fn flip_direction(&self, i: usize, t: usize) -> Option<i64> {
        let s = &self.shapes;
        let a = s[t][i] - s[t - 1][i];
        let b = s[t + 1][i] - s[t][i];
        let delta = match (a, b) {
            (0, 1) => 1,
            (1, 0) => -1,
            _ => return None,
        };
        let v = s[t][i] + delta;
        if i > 0 && v > s[t][i - 1] {
            return None;
        }
        if i + 1 < s[t].len() && v < s[t][i + 1] {
            return None;
        }
        Some(delta)
    }

    /// `ln` of the weight ratio for moving `m_i(t)` by `delta`, from the pair factors
    /// of particle `i` in steps `t-1` and `t` and the drift of those two steps.
    pub fn local_log_ratio(&self, i: usize, t: usize, delta: i64) -> f64 {
        let th = self.theta.value();
        let s = &self.shapes;
        let n = s[t].len();
        let mut lr = delta as f64 * (self.drift.get(t - 1).value().ln() - self.drift.get(t).value().ln());
        let e_prev: Vec<u8> = (0..n).map(|j| (s[t][j] - s[t - 1][j]) as u8).collect();
        let e_cur: Vec<u8> = (0..n).map(|j| (s[t + 1][j] - s[t][j]) as u8).collect();
        let ei_prev_new = (e_prev[i] as i64 + delta) as u8;
        let ei_cur_new = (e_cur[i] as i64 - delta) as u8;
        for j in 0..n {
            if j == i {
                continue;
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            let sign = if i < j { 1 } else { -1 };
            // Step t-1: origin unchanged.
            let d0 = (s[t - 1][a] - s[t - 1][b]) as f64 + (b - a) as f64 * th;
            let f = |d: f64, ei: u8, ej: u8| {
                let (ea, eb) = if i < j { (ei, ej) } else { (ej, ei) };
                pair_factor(self.mode, d, th, ea, eb)
            };
            lr += f(d0, ei_prev_new, e_prev[j]).ln() - f(d0, e_prev[i], e_prev[j]).ln();
            // Step t: origin moves by delta.
            let d1 = (s[t][a] - s[t][b]) as f64 + (b - a) as f64 * th;
            let d1n = d1 + (sign * delta) as f64;
            lr += f(d1n, ei_cur_new, e_cur[j]).ln() - f(d1, e_cur[i], e_cur[j]).ln();
        }
        lr
    }

    /// Exact local ratio (plain mode, rational theta and drift).
    pub fn local_ratio_exact(&self, i: usize, t: usize, delta: i64) -> Result<BigRational> {
        let (Some(th), true) = (self.theta.as_exact(), self.mode == WeightMode::Plain) else {
            return invalid("exact ratios need plain weights and rational theta");
        };
        let (Some(b0), Some(b1)) = (self.drift.get(t - 1).as_big(), self.drift.get(t).as_big()) else {
            return invalid("exact ratios need rational drift");
        };
        let (p, q) = (*th.numer(), *th.denom());
        let s = &self.shapes;
        let n = s[t].len();
        let mut r = if delta > 0 { b0 / b1 } else { b1 / b0 };
        let e_prev: Vec<i64> = (0..n).map(|j| s[t][j] - s[t - 1][j]).collect();
        let e_cur: Vec<i64> = (0..n).map(|j| s[t + 1][j] - s[t][j]).collect();
        // Pair factor (q k + p g + p (ea - eb)) / (q k + p g) for a < b.
        let factor = |k: i64, g: i64, ea: i64, eb: i64| BigRational::new((q * k + p * g + p * (ea - eb)).into(), (q * k + p * g).into());
        for j in 0..n {
            if j == i {
                continue;
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            let g = (b - a) as i64;
            let pick = |ei: i64, ej: i64| if i < j { (ei, ej) } else { (ej, ei) };
            let k0 = s[t - 1][a] - s[t - 1][b];
            let (ea, eb) = pick(e_prev[i] + delta, e_prev[j]);
            let (oa, ob) = pick(e_prev[i], e_prev[j]);
            r *= factor(k0, g, ea, eb) / factor(k0, g, oa, ob);
            let k1 = s[t][a] - s[t][b];
            let k1n = k1 + if i < j { delta } else { -delta };
            let (ea, eb) = pick(e_cur[i] - delta, e_cur[j]);
            let (oa, ob) = pick(e_cur[i], e_cur[j]);
            r *= factor(k1n, g, ea, eb) / factor(k1, g, oa, ob);
        }
        Ok(r)
    }

    /// Applies a flip without an acceptance test.
    pub fn apply(&mut self, i: usize, t: usize, delta: i64, log_ratio: f64) {
        self.shapes[t][i] += delta;
        self.log_weight += log_ratio;
    }

    /// One proposal at a uniformly chosen interior site.
    pub fn propose(&mut self) -> bool {
        let steps = self.steps();
        let n = self.shapes[0].len();
        if steps < 2 || n == 0 {
            return false;
        }
        self.stats.proposed += 1;
        let i = self.rng.gen_range(0..n);
        let t = self.rng.gen_range(1..steps);
        let Some(delta) = self.flip_direction(i, t) else {
            self.stats.rejected_infeasible += 1;
            return false;
        };
        let lr = self.local_log_ratio(i, t, delta);
        if cfg!(debug_assertions) && self.stats.proposed.is_multiple_of(DEBUG_CHECK_EVERY) {
            let before = path_weight(&self.walk(), &self.drift, self.mode).expect("valid").log_value;
            self.shapes[t][i] += delta;
            let after = path_weight(&self.walk(), &self.drift, self.mode).expect("valid").log_value;
            self.shapes[t][i] -= delta;
            debug_assert!((after - before - lr).abs() < 1e-9 * (1.0 + lr.abs()), "local ratio {lr} vs {}", after - before);
        }
        if lr >= 0.0 || self.rng.gen::<f64>() < lr.exp() {
            self.apply(i, t, delta, lr);
            self.stats.accepted += 1;
            true
        } else {
            false
        }
    }

    /// `N (T - 1)` proposals.
    pub fn sweep(&mut self) {
        let sites = self.shapes[0].len() * self.steps().saturating_sub(1);
        for _ in 0..sites {
            self.propose();
        }
        self.sweep_count += 1;
        if cfg!(debug_assertions) && self.sweep_count.is_multiple_of(64) {
            let w = path_weight(&self.walk(), &self.drift, self.mode).expect("valid").log_value;
            debug_assert!((w - self.log_weight).abs() < 1e-8 * (1.0 + w.abs()));
        }
    }

    /// Recomputes the cached log weight from scratch.
    pub fn resync(&mut self) -> Result<()> {
        self.log_weight = path_weight(&self.walk(), &self.drift, self.mode)?.log_value;
        Ok(())
    }
}

/// Default burn-in: `10 N T` sweeps.
pub fn default_burn_in(n: usize, steps: usize) -> usize {
    10 * n * steps
}

/// Runs `sweeps` sweeps from the canonical path and returns the final walk.
#[allow(clippy::too_many_arguments)]
pub fn sample_mcmc(
    y: &ParticleConfig,
    z: &ParticleConfig,
    steps: usize,
    drift: &DriftProfile,
    mode: WeightMode,
    sweeps: usize,
    seed: u64,
) -> Result<WalkEnsemble> {
    let mut st = McmcState::new(y, z, steps, drift.clone(), mode, seed, 0)?;
    for _ in 0..sweeps {
        st.sweep();
    }
    Ok(st.walk())
}

/// Convenience: unit drift of matching length.
pub fn unit_drift(steps: usize) -> DriftProfile {
    DriftProfile::unit(steps)
}

/// Probability of the walk under exact marginals (for small tests): the product of the
/// kernel probabilities of its steps divided by the event probability.
pub fn conditional_path_probability(w: &WalkEnsemble, dist: &ExactDistribution, drift: &DriftProfile, mode: WeightMode) -> Result<f64> {
    let pw = path_weight(w, drift, mode)?;
    Ok((pw.log_value - dist.log_weight).exp())
}

/// Checks two configurations are compatible endpoints (re-exported for the CLI).
pub fn endpoints_ok(y: &ParticleConfig, z: &ParticleConfig) -> Result<()> {
    check_endpoints(y, z)
}

/// Every walk from `y` to `z` in `T` steps, by brute force (tests and tiny instances).
pub fn enumerate_walks(y: &ParticleConfig, z: &ParticleConfig, steps: usize, cap: usize) -> Result<Vec<WalkEnsemble>> {
    if !path_feasible(y, z, steps)? {
        return Ok(Vec::new());
    }
    let n = y.len();
    let mut out = Vec::new();
    let mut stack: Vec<Vec<Vec<i64>>> = vec![vec![y.shape().to_vec()]];
    while let Some(path) = stack.pop() {
        let t = path.len() - 1;
        let cur = &path[t];
        if t == steps {
            if cur.as_slice() == z.shape() {
                out.push(WalkEnsemble::from_shapes(y.theta(), y.offset(), path)?);
                if out.len() > cap {
                    return Err(Error::CapExceeded { what: "walk enumeration", size: out.len(), cap, hint: "" });
                }
            }
            continue;
        }
        for mask in 0u64..1 << n {
            let e = StepVector::from_mask(mask, n);
            let next: Vec<i64> = cur.iter().zip(&e.0).map(|(m, b)| m + *b as i64).collect();
            let ok = next.windows(2).all(|w| w[0] >= w[1])
                && next.iter().zip(z.shape()).all(|(a, b)| a <= b && b - a <= (steps - t - 1) as i64);
            if ok {
                let mut p2 = path.clone();
                p2.push(next);
                stack.push(p2);
            }
        }
    }
    Ok(out)
}
