//! Young diagrams, configurations on the theta-lattice, Bernoulli walk
//! ensembles and their rescaled height functions.
//!
//! A configuration is stored as `x_i = offset + m_i - i*theta` (0-based `i`)
//! with integer `m` weakly decreasing, so lattice membership holds by
//! construction and adjacent gaps are `theta + (m_i - m_{i+1})`.

use std::fmt;
use std::io::{BufRead, Write};

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance for lattice membership when theta or positions are floats.
pub const FLOAT_LATTICE_TOL: f64 = 1e-9;

/// A real number that remembers an exact rational value when it has one.
#[derive(Clone, Copy, Debug)]
pub struct Real {
    value: f64,
    exact: Option<Rational64>,
}

impl Real {
    pub fn exact(r: Rational64) -> Self {
        Real { value: ratio_to_f64(&r), exact: Some(r) }
    }

    pub fn ratio(p: i64, q: i64) -> Result<Self> {
        if q == 0 {
            return invalid("zero denominator");
        }
        Ok(Self::exact(Rational64::new(p, q)))
    }

    pub fn integer(n: i64) -> Self {
        Self::exact(Rational64::from_integer(n))
    }

    pub fn float(v: f64) -> Self {
        Real { value: v, exact: None }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn as_exact(&self) -> Option<Rational64> {
        self.exact
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn as_big(&self) -> Option<BigRational> {
        self.exact.map(|r| BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom())))
    }

    /// Parses `p/q`, an integer, or a decimal (the last stays floating).
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((p, q)) = s.split_once('/') {
            let p: i64 = p.trim().parse().map_err(|_| Error::Parse(format!("bad numerator in {s:?}")))?;
            let q: i64 = q.trim().parse().map_err(|_| Error::Parse(format!("bad denominator in {s:?}")))?;
            return Self::ratio(p, q);
        }
        if let Ok(n) = s.parse::<i64>() {
            return Ok(Self::integer(n));
        }
        s.parse::<f64>()
            .map(Self::float)
            .map_err(|_| Error::Parse(format!("not a number: {s:?}")))
    }

    pub fn add(&self, other: &Real) -> Real {
        match (self.exact, other.exact) {
            (Some(a), Some(b)) => Real::exact(a + b),
            _ => Real::float(self.value + other.value),
        }
    }

    pub fn sub(&self, other: &Real) -> Real {
        match (self.exact, other.exact) {
            (Some(a), Some(b)) => Real::exact(a - b),
            _ => Real::float(self.value - other.value),
        }
    }

    pub fn scale(&self, k: i64) -> Real {
        match self.exact {
            Some(a) => Real::exact(a * k),
            None => Real::float(self.value * k as f64),
        }
    }

    /// Equality: exact when both sides are exact, within the float tolerance otherwise.
    pub fn same(&self, other: &Real) -> bool {
        match (self.exact, other.exact) {
            (Some(a), Some(b)) => a == b,
            _ => (self.value - other.value).abs() <= FLOAT_LATTICE_TOL,
        }
    }

    /// Nearest integer if the value is an integer (exactly, or within tolerance).
    pub fn as_integer(&self) -> Option<i64> {
        match self.exact {
            Some(r) => r.is_integer().then(|| r.to_integer()),
            None => {
                let n = self.value.round();
                ((self.value - n).abs() <= FLOAT_LATTICE_TOL).then_some(n as i64)
            }
        }
    }

    pub fn floor(&self) -> i64 {
        match self.exact {
            Some(r) => r.floor().to_integer(),
            None => self.value.floor() as i64,
        }
    }

    fn to_json(self) -> NumJson {
        match self.exact {
            Some(r) if r.is_integer() => NumJson::Int(r.to_integer()),
            Some(r) => NumJson::Str(format!("{}/{}", r.numer(), r.denom())),
            None => NumJson::Float(self.value),
        }
    }
}

impl PartialEq for Real {
    fn eq(&self, other: &Self) -> bool {
        self.same(other)
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.exact {
            Some(r) if r.is_integer() => write!(f, "{}", r.numer()),
            Some(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            None => write!(f, "{}", self.value),
        }
    }
}

pub(crate) fn ratio_to_f64(r: &Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub(crate) fn big_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum NumJson {
    Int(i64),
    Float(f64),
    Str(String),
}

impl NumJson {
    fn to_real(&self) -> Result<Real> {
        match self {
            NumJson::Int(n) => Ok(Real::integer(*n)),
            NumJson::Float(v) => Ok(Real::float(*v)),
            NumJson::Str(s) => Real::parse(s),
        }
    }
}

impl Serialize for Real {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        NumJson::deserialize(d)?.to_real().map_err(serde::de::Error::custom)
    }
}

/// Checked positive theta.
pub fn theta_from(r: Real) -> Result<Real> {
    if !(r.value() > 0.0) || !r.value().is_finite() {
        return invalid(format!("theta must be positive, got {r}"));
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// Young diagrams

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "DiagramJson", into = "DiagramJson")]
pub struct YoungDiagram {
    rows: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagramJson {
    rows: Vec<u32>,
}

impl TryFrom<DiagramJson> for YoungDiagram {
    type Error = Error;
    fn try_from(j: DiagramJson) -> Result<Self> {
        YoungDiagram::new(j.rows)
    }
}

impl From<YoungDiagram> for DiagramJson {
    fn from(d: YoungDiagram) -> Self {
        DiagramJson { rows: d.rows }
    }
}

impl YoungDiagram {
    /// Trailing zero rows are dropped.
    pub fn new(mut rows: Vec<u32>) -> Result<Self> {
        if rows.windows(2).any(|w| w[0] < w[1]) {
            return invalid(format!("rows must be weakly decreasing: {rows:?}"));
        }
        while rows.last() == Some(&0) {
            rows.pop();
        }
        Ok(YoungDiagram { rows })
    }

    pub fn empty() -> Self {
        YoungDiagram { rows: Vec::new() }
    }

    /// `rows` copies of a row of length `cols`.
    pub fn rectangle(rows: usize, cols: u32) -> Self {
        if cols == 0 {
            return Self::empty();
        }
        YoungDiagram { rows: vec![cols; rows] }
    }

    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    /// Row `i` (0-based), zero past the last row.
    pub fn row(&self, i: usize) -> u32 {
        self.rows.get(i).copied().unwrap_or(0)
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn size(&self) -> u64 {
        self.rows.iter().map(|&r| r as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn transpose(&self) -> Self {
        let cols = self.row(0) as usize;
        let rows = (0..cols)
            .map(|j| self.rows.iter().filter(|&&r| r as usize > j).count() as u32)
            .collect();
        YoungDiagram { rows }
    }

    pub fn contains(&self, other: &YoungDiagram) -> bool {
        other.rows.len() <= self.rows.len() && other.rows.iter().zip(&self.rows).all(|(a, b)| a <= b)
    }

    /// All diagrams fitting inside a `rows x cols` box, in lexicographic order.
    pub fn all_in_box(rows: usize, cols: u32) -> Vec<YoungDiagram> {
        fn rec(prefix: &mut Vec<u32>, rows: usize, max: u32, out: &mut Vec<YoungDiagram>) {
            if prefix.len() == rows {
                out.push(YoungDiagram::new(prefix.clone()).expect("decreasing by construction"));
                return;
            }
            for r in 0..=max {
                prefix.push(r);
                rec(prefix, rows, r, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), rows, cols, &mut out);
        out
    }
}

impl fmt::Display for YoungDiagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.rows.iter().map(|r| r.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

// ---------------------------------------------------------------------------
// Particle configurations

#[derive(Clone, Debug)]
pub struct ParticleConfig {
    theta: Real,
    offset: Real,
    shape: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigJson {
    theta: NumJson,
    positions: Vec<NumJson>,
}

impl Serialize for ParticleConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let j = ConfigJson {
            theta: self.theta.to_json(),
            positions: (0..self.len()).map(|i| self.position_real(i).to_json()).collect(),
        };
        j.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParticleConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ConfigJson::deserialize(d)?;
        let theta = j.theta.to_real().map_err(serde::de::Error::custom)?;
        let pos: Vec<Real> = j
            .positions
            .iter()
            .map(NumJson::to_real)
            .collect::<Result<_>>()
            .map_err(serde::de::Error::custom)?;
        ParticleConfig::from_positions(theta, &pos).map_err(serde::de::Error::custom)
    }
}

impl PartialEq for ParticleConfig {
    fn eq(&self, other: &Self) -> bool {
        self.same_lattice(other) && self.shape == other.shape
    }
}

impl ParticleConfig {
    /// `shape` must be weakly decreasing; positions are `offset + shape[i] - i*theta`.
    pub fn new(theta: Real, offset: Real, shape: Vec<i64>) -> Result<Self> {
        let theta = theta_from(theta)?;
        if shape.windows(2).any(|w| w[0] < w[1]) {
            return invalid("adjacent gaps must lie in theta + Z>=0");
        }
        Ok(ParticleConfig { theta, offset, shape })
    }

    /// Recovers the lattice structure from explicit positions `x_1 > x_2 > ...`.
    /// The global offset is the fractional part of `x_1`.
    pub fn from_positions(theta: Real, positions: &[Real]) -> Result<Self> {
        let theta = theta_from(theta)?;
        let Some(first) = positions.first() else {
            return Ok(ParticleConfig { theta, offset: Real::integer(0), shape: Vec::new() });
        };
        let base = first.floor();
        let offset = first.sub(&Real::integer(base));
        let mut shape = Vec::with_capacity(positions.len());
        for (i, x) in positions.iter().enumerate() {
            let m = x.sub(&offset).add(&theta.scale(i as i64));
            let Some(m) = m.as_integer() else {
                return invalid(format!("position {i} ({x}) is not on the theta-lattice of x_1"));
            };
            shape.push(m);
        }
        if shape.windows(2).any(|w| w[0] < w[1]) {
            return invalid("positions violate the minimal gap theta");
        }
        Ok(ParticleConfig { theta, offset, shape })
    }

    /// Positions from floats, with theta given separately.
    pub fn from_f64(theta: Real, positions: &[f64]) -> Result<Self> {
        let pos: Vec<Real> = positions.iter().map(|&v| Real::float(v)).collect();
        Self::from_positions(theta, &pos)
    }

    /// Packed configuration `(0, -theta, -2theta, ...)`.
    pub fn packed(n: usize, theta: Real) -> Result<Self> {
        Self::new(theta, Real::integer(0), vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn theta(&self) -> Real {
        self.theta
    }

    pub fn offset(&self) -> Real {
        self.offset
    }

    /// Integer coordinates `m_i` with `x_i = offset + m_i - i*theta`.
    pub fn shape(&self) -> &[i64] {
        &self.shape
    }

    pub fn position(&self, i: usize) -> f64 {
        self.offset.value() + self.shape[i] as f64 - i as f64 * self.theta.value()
    }

    pub fn position_real(&self, i: usize) -> Real {
        self.offset.add(&Real::integer(self.shape[i])).sub(&self.theta.scale(i as i64))
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.position(i)).collect()
    }

    /// `x_i - x_j` for `i < j`: `(m_i - m_j) + (j - i) theta`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        (self.shape[i] - self.shape[j]) as f64 + (j as f64 - i as f64) * self.theta.value()
    }

    /// Gap excess `x_i - x_{i+1} - theta`, an integer.
    pub fn gap_excess(&self, i: usize) -> i64 {
        self.shape[i] - self.shape[i + 1]
    }

    pub fn same_lattice(&self, other: &ParticleConfig) -> bool {
        self.len() == other.len() && self.theta.same(&other.theta) && self.offset.same(&other.offset)
    }

    /// Feasibility of a step: no packed pair with `(e_i, e_{i+1}) = (0, 1)`.
    pub fn is_feasible(&self, e: &StepVector) -> bool {
        e.len() == self.len()
            && (0..self.len().saturating_sub(1))
                .all(|i| !(self.shape[i] == self.shape[i + 1] && e.0[i] == 0 && e.0[i + 1] == 1))
    }

    pub fn step(&self, e: &StepVector) -> Result<ParticleConfig> {
        if !self.is_feasible(e) {
            return invalid(format!("step {e} is infeasible"));
        }
        let shape = self.shape.iter().zip(&e.0).map(|(&m, &b)| m + b as i64).collect();
        Ok(ParticleConfig { theta: self.theta, offset: self.offset, shape })
    }

    pub fn with_shape(&self, shape: Vec<i64>) -> Result<ParticleConfig> {
        ParticleConfig::new(self.theta, self.offset, shape)
    }

    /// Translate every particle by an integer `k`.
    pub fn shifted(&self, k: i64) -> ParticleConfig {
        ParticleConfig {
            theta: self.theta,
            offset: self.offset,
            shape: self.shape.iter().map(|m| m + k).collect(),
        }
    }

    /// Inverse of [`diagram_to_config`]; requires zero offset and nonnegative shape.
    pub fn to_diagram(&self) -> Result<YoungDiagram> {
        if self.offset.value() != 0.0 || self.shape.iter().any(|&m| m < 0) {
            return invalid("configuration does not come from a Young diagram");
        }
        YoungDiagram::new(self.shape.iter().map(|&m| m as u32).collect())
    }
}

impl fmt::Display for ParticleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = (0..self.len()).map(|i| self.position_real(i).to_string()).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// `x_i = lambda_i - (i-1) theta`, rows past the diagram counted as zero.
pub fn diagram_to_config(d: &YoungDiagram, n: usize, theta: Real) -> Result<ParticleConfig> {
    if d.num_rows() > n {
        return Err(Error::TooManyRows { rows: d.num_rows(), n });
    }
    ParticleConfig::new(theta, Real::integer(0), (0..n).map(|i| d.row(i) as i64).collect())
}

// ---------------------------------------------------------------------------
// Steps and walks

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StepVector(pub Vec<u8>);

impl StepVector {
    pub fn new(e: Vec<u8>) -> Result<Self> {
        if e.iter().any(|&b| b > 1) {
            return invalid("step entries must be 0 or 1");
        }
        Ok(StepVector(e))
    }

    pub fn zeros(n: usize) -> Self {
        StepVector(vec![0; n])
    }

    /// Bits of `mask`, least significant bit first.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        StepVector((0..n).map(|i| ((mask >> i) & 1) as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

impl fmt::Display for StepVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|b| b.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `T + 1` configurations joined by feasible Bernoulli steps.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkEnsemble {
    theta: Real,
    offset: Real,
    shapes: Vec<Vec<i64>>,
}

impl WalkEnsemble {
    pub fn new(configs: &[ParticleConfig]) -> Result<Self> {
        let Some(first) = configs.first() else {
            return invalid("a walk needs at least one configuration");
        };
        if configs.iter().any(|c| !c.same_lattice(first)) {
            return Err(Error::Mismatch);
        }
        Self::from_shapes(first.theta, first.offset, configs.iter().map(|c| c.shape.clone()).collect())
    }

    pub fn from_shapes(theta: Real, offset: Real, shapes: Vec<Vec<i64>>) -> Result<Self> {
        let theta = theta_from(theta)?;
        if shapes.is_empty() {
            return invalid("a walk needs at least one configuration");
        }
        let n = shapes[0].len();
        for (t, s) in shapes.iter().enumerate() {
            if s.len() != n || s.windows(2).any(|w| w[0] < w[1]) {
                return invalid(format!("time {t}: not a configuration on the lattice"));
            }
        }
        for t in 0..shapes.len() - 1 {
            for i in 0..n {
                let d = shapes[t + 1][i] - shapes[t][i];
                if !(0..=1).contains(&d) {
                    return invalid(format!("time {t}: particle {i} moves by {d}"));
                }
            }
        }
        Ok(WalkEnsemble { theta, offset, shapes })
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.shapes.len() - 1
    }

    pub fn particles(&self) -> usize {
        self.shapes[0].len()
    }

    pub fn theta(&self) -> Real {
        self.theta
    }

    pub fn offset(&self) -> Real {
        self.offset
    }

    pub fn shapes(&self) -> &[Vec<i64>] {
        &self.shapes
    }

    pub fn config(&self, t: usize) -> ParticleConfig {
        ParticleConfig { theta: self.theta, offset: self.offset, shape: self.shapes[t].clone() }
    }

    pub fn step_vector(&self, t: usize) -> StepVector {
        StepVector(self.shapes[t + 1].iter().zip(&self.shapes[t]).map(|(a, b)| (a - b) as u8).collect())
    }

    pub fn position(&self, t: usize, i: usize) -> f64 {
        self.offset.value() + self.shapes[t][i] as f64 - i as f64 * self.theta.value()
    }

    /// JSON lines `{"t":k,"positions":[...]}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in 0..self.shapes.len() {
            let c = self.config(t);
            let positions: Vec<NumJson> = (0..c.len()).map(|i| c.position_real(i).to_json()).collect();
            let line = serde_json::json!({ "t": t, "positions": positions });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(theta: Real, r: R) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Line {
            t: usize,
            positions: Vec<NumJson>,
        }
        let mut configs = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {k}: {e}")))?;
            if l.t != configs.len() {
                return Err(Error::Parse(format!("line {k}: expected t={}, got {}", configs.len(), l.t)));
            }
            let pos: Vec<Real> = l.positions.iter().map(NumJson::to_real).collect::<Result<_>>()?;
            configs.push(ParticleConfig::from_positions(theta, &pos)?);
        }
        Self::new(&configs)
    }
}

pub fn check_endpoints(y: &ParticleConfig, z: &ParticleConfig) -> Result<()> {
    if y.same_lattice(z) {
        Ok(())
    } else {
        Err(Error::Mismatch)
    }
}

/// `y_i <= z_i <= y_i + T` for every particle.
pub fn path_feasible(y: &ParticleConfig, z: &ParticleConfig, steps: usize) -> Result<bool> {
    check_endpoints(y, z)?;
    Ok(y.shape.iter().zip(&z.shape).all(|(&a, &b)| a <= b && b <= a + steps as i64))
}

/// Canonical witness `x_i(t) = max(y_i, z_i - (T - t))`.
pub fn canonical_path(y: &ParticleConfig, z: &ParticleConfig, steps: usize) -> Result<WalkEnsemble> {
    if !path_feasible(y, z, steps)? {
        return Err(Error::Infeasible { steps });
    }
    let shapes = (0..=steps)
        .map(|t| {
            y.shape
                .iter()
                .zip(&z.shape)
                .map(|(&a, &b)| a.max(b - (steps - t) as i64))
                .collect()
        })
        .collect();
    WalkEnsemble::from_shapes(y.theta, y.offset, shapes)
}

// ---------------------------------------------------------------------------
// Height fields

/// Uniform node grid: `x_min + i dx` for `i < nx`, `j * t_max / nt` for `j <= nt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub dx: f64,
    pub nx: usize,
    pub t_max: f64,
    pub nt: usize,
}

impl GridSpec {
    pub fn dt(&self) -> f64 {
        if self.nt == 0 {
            0.0
        } else {
            self.t_max / self.nt as f64
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx.saturating_sub(1))
    }

    /// Default extent `[min position - theta, max position + T + theta]`, rescaled by `n_scale`.
    pub fn for_walk(w: &WalkEnsemble, n_scale: usize, nx: usize) -> GridSpec {
        let n = n_scale as f64;
        let th = w.theta.value();
        let lo = (0..=w.steps())
            .flat_map(|t| (0..w.particles()).map(move |i| (t, i)))
            .map(|(t, i)| w.position(t, i))
            .fold(f64::INFINITY, f64::min);
        let hi = (0..=w.steps())
            .flat_map(|t| (0..w.particles()).map(move |i| (t, i)))
            .map(|(t, i)| w.position(t, i))
            .fold(f64::NEG_INFINITY, f64::max);
        let x_min = (lo - th) / n;
        let x_max = (hi + w.steps() as f64 + th) / n;
        let nx = nx.max(2);
        GridSpec { x_min, dx: (x_max - x_min) / (nx - 1) as f64, nx, t_max: w.steps() as f64 / n, nt: w.steps() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeightField {
    pub grid: GridSpec,
    pub theta: f64,
    /// Row-major in time: `values[j * nx + i]`.
    pub values: Vec<f64>,
    /// Set when `dx` exceeds the particle width `theta / N`.
    pub coarse: bool,
}

impl HeightField {
    pub fn from_fn(grid: GridSpec, theta: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.nx * (grid.nt + 1));
        for j in 0..=grid.nt {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.t(j)));
            }
        }
        HeightField { grid, theta, values, coarse: false }
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.grid.nx..(j + 1) * self.grid.nx]
    }

    /// Row at time `t`, interpolated linearly between grid rows.
    pub fn row_at(&self, t: f64) -> Vec<f64> {
        let g = &self.grid;
        if g.nt == 0 {
            return self.row(0).to_vec();
        }
        let s = (t / g.dt()).clamp(0.0, g.nt as f64);
        let j = (s.floor() as usize).min(g.nt - 1);
        let w = s - j as f64;
        self.row(j).iter().zip(self.row(j + 1)).map(|(a, b)| a * (1.0 - w) + b * w).collect()
    }

    /// Piecewise-linear evaluation; constant extension outside the grid in x.
    pub fn at(&self, x: f64, t: f64) -> f64 {
        interp_row(&self.row_at(t), self.grid.x_min, self.grid.dx, x)
    }

    /// `inf{x : H(x, t) > level}`; `-inf` if already above at the left edge, `+inf` if never.
    pub fn level_line(&self, level: f64, t: f64) -> f64 {
        level_crossing(&self.row_at(t), self.grid.x_min, self.grid.dx, level)
    }

    pub fn sup_distance(&self, other: &HeightField) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return invalid("height fields live on different grids");
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// CSV with header `x,t,H`, rows ordered by t then x.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,t,H")?;
        for j in 0..=self.grid.nt {
            for i in 0..self.grid.nx {
                writeln!(w, "{},{},{}", sig17(self.grid.x(i)), sig17(self.grid.t(j)), sig17(self.value(i, j)))?;
            }
        }
        Ok(())
    }

    /// Reads the CSV written by [`HeightField::write_csv`]; the grid must be uniform.
    pub fn read_csv<R: BufRead>(r: R, theta: f64) -> Result<Self> {
        let mut xs = Vec::new();
        let mut ts = Vec::new();
        let mut vals = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            if k == 0 {
                if line.trim() != "x,t,H" {
                    return Err(Error::Parse(format!("expected header x,t,H, got {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {k}: {e}")))?;
            if f.len() != 3 {
                return Err(Error::Parse(format!("line {k}: expected 3 fields")));
            }
            xs.push(f[0]);
            ts.push(f[1]);
            vals.push(f[2]);
        }
        let nx = ts.iter().take_while(|&&t| t == ts[0]).count();
        if nx < 2 || vals.len() % nx != 0 {
            return Err(Error::Parse("height field CSV is not a rectangular grid".into()));
        }
        let rows = vals.len() / nx;
        let dx = xs[1] - xs[0];
        let t_max = ts[ts.len() - 1];
        let grid = GridSpec { x_min: xs[0], dx, nx, t_max, nt: rows - 1 };
        Ok(HeightField { grid, theta, values: vals, coarse: false })
    }
}

/// 17 significant digits.
pub fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn interp_row(row: &[f64], x_min: f64, dx: f64, x: f64) -> f64 {
    let s = (x - x_min) / dx;
    if s <= 0.0 {
        return row[0];
    }
    let last = row.len() - 1;
    if s >= last as f64 {
        return row[last];
    }
    let i = s.floor() as usize;
    let w = s - i as f64;
    row[i] * (1.0 - w) + row[i + 1] * w
}

/// Level line of a nondecreasing piecewise-linear row (binary search, ties to the left).
pub(crate) fn level_crossing(row: &[f64], x_min: f64, dx: f64, level: f64) -> f64 {
    if row[0] > level {
        return f64::NEG_INFINITY;
    }
    let last = row.len() - 1;
    if row[last] <= level {
        return f64::INFINITY;
    }
    // Smallest k with row[k] > level; row[k-1] <= level.
    let k = row.partition_point(|&h| h <= level);
    let (a, b) = (row[k - 1], row[k]);
    let w = if b > a { (level - a) / (b - a) } else { 0.0 };
    x_min + (k as f64 - 1.0 + w) * dx
}

/// Rescaled height function of a walk: `H(x,t) = sum_i clamp(x - x_i(t)/N, 0, theta/N)`,
/// positions interpolated linearly between integer steps.
pub fn height_field(w: &WalkEnsemble, n_scale: usize, grid: GridSpec) -> Result<HeightField> {
    if n_scale == 0 || grid.nx < 2 || grid.dx <= 0.0 {
        return invalid("height_field needs n_scale >= 1 and at least two x nodes");
    }
    let n = n_scale as f64;
    let th = w.theta.value();
    let width = th / n;
    let mut values = Vec::with_capacity(grid.nx * (grid.nt + 1));
    let mut pos = vec![0.0; w.particles()];
    for j in 0..=grid.nt {
        let s = (grid.t(j) * n).clamp(0.0, w.steps() as f64);
        let k = (s.floor() as usize).min(w.steps().saturating_sub(1));
        let frac = if w.steps() == 0 { 0.0 } else { s - k as f64 };
        for (i, p) in pos.iter_mut().enumerate() {
            let a = w.position(k, i);
            let b = if w.steps() == 0 { a } else { w.position(k + 1, i) };
            *p = (a * (1.0 - frac) + b * frac) / n;
        }
        for i in 0..grid.nx {
            let x = grid.x(i);
            values.push(pos.iter().map(|&p| (x - p).clamp(0.0, width)).sum());
        }
    }
    Ok(HeightField { grid, theta: th, values, coarse: grid.dx > width })
}

/// Builds a walk from `y` to `z` whose height function follows `h_star`:
/// each particle tracks its rest position clipped between the level lines
/// `m` ranks to either side, then the path is snapped to the nearest valid walk.
pub fn height_to_walk(
    h_star: &HeightField,
    y: &ParticleConfig,
    z: &ParticleConfig,
    steps: usize,
    eps: f64,
) -> Result<WalkEnsemble> {
    if !path_feasible(y, z, steps)? {
        return Err(Error::Infeasible { steps });
    }
    let n = y.len();
    let th = y.theta.value();
    let nf = n as f64;
    if eps < 2.0 * th / nf {
        return invalid(format!("eps = {eps} is below 2 theta / N = {}", 2.0 * th / nf));
    }
    let m = (eps * nf / (2.0 * th)).ceil() as i64;

    let lower = canonical_path(y, z, steps)?;
    let mut target: Vec<Vec<i64>> = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let tau = t as f64 / nf;
        let row = h_star.row_at(tau);
        let mut cur = Vec::with_capacity(n);
        for i in 0..n {
            // Particle i has n - 1 - i particles to its left.
            let rank = (n - 1 - i) as i64;
            let gamma = |k: i64| {
                let level = th * k as f64 / nf;
                if level >= th {
                    f64::INFINITY
                } else {
                    level_crossing(&row, h_star.grid.x_min, h_star.grid.dx, level) * nf
                }
            };
            let lo = gamma(rank - m);
            let hi = gamma(rank + m);
            let x = y.position(i).clamp(lo, hi.max(lo));
            // Back to the integer coordinate, nearest lattice point.
            let mi = (x - y.offset.value() + i as f64 * th).round();
            let mi = if mi.is_finite() { mi as i64 } else { y.shape[i] };
            cur.push(mi.max(lower.shapes[t][i]));
        }
        target.push(cur);
    }
    target[0] = y.shape.clone();
    target[steps] = z.shape.clone();
    let shapes = greatest_walk_below(target, &lower.shapes);
    WalkEnsemble::from_shapes(y.theta, y.offset, shapes)
}

/// Greatest valid walk pointwise below `m`, given a valid walk `floor <= m` with the
/// same endpoints. Valid walks form a lattice under pointwise max/min, so downward
/// relaxation of the difference constraints converges to it.
pub(crate) fn greatest_walk_below(mut m: Vec<Vec<i64>>, floor: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let steps = m.len() - 1;
    let n = m[0].len();
    loop {
        let mut changed = false;
        for t in 1..steps {
            for i in 0..n {
                let mut v = m[t][i];
                v = v.min(m[t + 1][i]);
                v = v.min(m[t - 1][i] + 1);
                if i > 0 {
                    v = v.min(m[t][i - 1]);
                }
                if v != m[t][i] {
                    debug_assert!(v >= floor[t][i]);
                    m[t][i] = v;
                    changed = true;
                }
            }
        }
        for t in (1..steps).rev() {
            for i in (0..n).rev() {
                let mut v = m[t][i].min(m[t + 1][i]).min(m[t - 1][i] + 1);
                if i > 0 {
                    v = v.min(m[t][i - 1]);
                }
                if v != m[t][i] {
                    m[t][i] = v;
                    changed = true;
                }
            }
        }
        if !changed {
            return m;
        }
    }
}

/// Discretizes a monotone profile into a lattice configuration: the particle with
/// `k` particles to its left sits near the level line of height `(k + 1/2) theta / N`.
pub fn config_from_profile(profile: impl Fn(f64) -> f64, x_lo: f64, x_hi: f64, n: usize, theta: Real) -> Result<ParticleConfig> {
    let th = theta.value();
    let nf = n as f64;
    let grid_n = 4096 * n.max(1);
    let dx = (x_hi - x_lo) / grid_n as f64;
    let row: Vec<f64> = (0..=grid_n).map(|k| profile(x_lo + k as f64 * dx)).collect();
    let mut shape = vec![0i64; n];
    for i in (0..n).rev() {
        let rank = (n - 1 - i) as f64;
        let level = (rank + 0.5) * th / nf;
        let p = level_crossing(&row, x_lo, dx, level);
        if !p.is_finite() {
            return invalid("profile does not reach total mass theta inside the window");
        }
        // Centre of the particle interval [x, x + theta] sits at N p.
        let x = p * nf - th / 2.0;
        let mut mi = (x + i as f64 * th).round() as i64;
        if i + 1 < n {
            mi = mi.max(shape[i + 1]);
        }
        shape[i] = mi;
    }
    ParticleConfig::new(theta, Real::integer(0), shape)
}
