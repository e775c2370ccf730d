use std::io::BufRead;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use thetawalk::lattice::{HeightField, ParticleConfig, Real, YoungDiagram};
use thetawalk::loopcheck::{random_setup, residue_check, BMap, Preset};
use thetawalk::sampler::{default_burn_in, exact_distribution, sample_forward_gibbs, sample_forward_stream, McmcState, TransferProblem};
use thetawalk::surface::{sigma, sigma_grad, Profile, Slope};
use thetawalk::symfun::{
    jack_principal, jack_principal_gamma, macdonald_principal, macdonald_principal_gamma, skew_jack_pathsum, skew_macdonald_pathsum, PolyValue,
    QParams,
};
use thetawalk::variational::{rate_j, solve_limit_shape, AdmissibleGridField, SolverOptions, Start, VariationalProblem};
use thetawalk::verify::{verify_jack, verify_ldp, verify_macdonald, AsymptoticConfig, LdpConfig};
use thetawalk::weights::{DriftProfile, WeightMode};

use crate::config::*;

/// What a command produced.
pub enum Body {
    /// Emitted as `{"meta": ..., "result": ...}`.
    Json(Value),
    /// CSV or a table; the metadata goes in leading `#` lines.
    Text(String),
}

pub struct Outcome {
    pub body: Body,
    /// `Some(false)` for a failed verification.
    pub passed: Option<bool>,
    /// Extra files `(path, text body)`, also given a metadata header.
    pub files: Vec<(String, String)>,
}

impl Outcome {
    fn json(v: Value) -> Self {
        Outcome { body: Body::Json(v), passed: None, files: Vec::new() }
    }

    fn verdict(mut self, pass: bool) -> Self {
        self.passed = Some(pass);
        self
    }
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let seed = cfg.seed;
    match &cfg.params {
        Params::Sample(p) => sample(p, seed),
        Params::ExactDist(p) => exact_dist(p),
        Params::VerifyLdp(p) => ldp(p),
        Params::VerifyJack(p) => jack_trend(p),
        Params::VerifyMacdonald(p) => macdonald_trend(p),
        Params::LimitShape(p) => limit_shape(p),
        Params::Rate(p) => rate(p),
        Params::Jack(p) => jack(p),
        Params::Macdonald(p) => macdonald(p),
        Params::SurfaceTension(p) => surface(p),
        Params::LoopCheck(p) => loop_check(p, seed),
    }
}

fn start_config(n: usize, theta: Real, y: &[Real]) -> Result<ParticleConfig> {
    Ok(if y.is_empty() { ParticleConfig::packed(n, theta)? } else { ParticleConfig::from_positions(theta, y)? })
}

fn weight_mode(q: Option<f64>) -> Result<WeightMode> {
    let mode = q.map_or(WeightMode::Plain, WeightMode::Q);
    mode.check()?;
    Ok(mode)
}

fn sample(p: &SampleParams, seed: u64) -> Result<Outcome> {
    let y = start_config(p.n, p.theta, &p.y)?;
    let drift = DriftProfile::constant(p.b, p.steps)?;
    let mode = weight_mode(p.q)?;
    let streams: Vec<u64> = (0..p.samples as u64).collect();
    let walks = match p.method.as_str() {
        "forward" => streams.par_iter().map(|&s| sample_forward_stream(&y, p.steps, &drift, mode, seed, s)).collect::<Result<Vec<_>, _>>()?,
        "gibbs" => {
            if p.q.is_some() {
                bail!("method gibbs supports plain weights only");
            }
            let sweeps = if p.sweeps == 0 { 10 * y.len() } else { p.sweeps };
            streams.par_iter().map(|&s| sample_forward_gibbs(&y, p.steps, &drift, sweeps, seed, s)).collect::<Result<Vec<_>, _>>()?
        }
        "mcmc" => {
            if p.z.is_empty() {
                bail!("method mcmc needs end positions --z");
            }
            let z = ParticleConfig::from_positions(p.theta, &p.z)?;
            let sweeps = if p.sweeps == 0 { default_burn_in(y.len(), p.steps) } else { p.sweeps };
            streams
                .par_iter()
                .map(|&s| {
                    let mut st = McmcState::new(&y, &z, p.steps, drift.clone(), mode, seed, s)?;
                    for _ in 0..sweeps {
                        st.sweep();
                    }
                    Ok(st.walk())
                })
                .collect::<Result<Vec<_>, thetawalk::Error>>()?
        }
        other => bail!("method: unknown sampler {other:?} (expected forward, gibbs or mcmc)"),
    };
    let shapes: Vec<_> = walks.iter().map(|w| w.shapes().to_vec()).collect();
    let finals: Vec<Vec<f64>> = walks.iter().map(|w| (0..w.particles()).map(|i| w.position(w.steps(), i)).collect()).collect();
    Ok(Outcome::json(json!({
        "theta": y.theta().to_string(),
        "offset": y.offset().to_string(),
        "steps": p.steps,
        "shapes": shapes,
        "final_positions": finals,
    })))
}

fn exact_dist(p: &ExactDistParams) -> Result<Outcome> {
    let y = start_config(p.n, p.theta, &p.y)?;
    let z = if p.z.is_empty() { None } else { Some(ParticleConfig::from_positions(p.theta, &p.z)?) };
    let drift = DriftProfile::constant(p.b, p.steps)?;
    let problem = TransferProblem::new(y, z, p.steps, drift, weight_mode(p.q)?)?.with_cap(p.state_cap);
    let d = exact_distribution(&problem, p.exact)?;
    let exact_prob = d.exact_prob.as_ref().map(|r| r.to_string());
    match p.format.as_str() {
        "csv" => {
            let mut buf = Vec::new();
            d.write_csv(&mut buf)?;
            let mut text = format!("# log_prob={}\n", d.log_prob);
            if let Some(e) = &exact_prob {
                text.push_str(&format!("# exact_prob={e}\n"));
            }
            text.push_str(&String::from_utf8(buf)?);
            Ok(Outcome { body: Body::Text(text), passed: None, files: Vec::new() })
        }
        "json" => {
            let slices: Vec<Value> = d
                .marginals
                .iter()
                .enumerate()
                .map(|(t, slice)| {
                    let rows: Vec<Value> = slice
                        .iter()
                        .enumerate()
                        .map(|(k, (s, m))| {
                            let exact = d.exact_marginals.as_ref().map(|em| em[t][k].1.to_string());
                            json!({"key": thetawalk::sampler::ExactDistribution::config_key(s), "shape": s, "mass": m, "exact": exact})
                        })
                        .collect();
                    json!({"t": t, "configs": rows})
                })
                .collect();
            Ok(Outcome::json(json!({
                "log_prob": d.log_prob,
                "log_weight": d.log_weight,
                "exact_prob": exact_prob,
                "total_states": d.total_states,
                "marginals": slices,
            })))
        }
        other => bail!("format: expected csv or json, got {other:?}"),
    }
}

fn ldp(p: &LdpParams) -> Result<Outcome> {
    let cfg = LdpConfig {
        theta: p.theta,
        ns: p.ns.clone(),
        eps: p.eps,
        gap_excess: p.gap_excess,
        v: p.v,
        t_macro: p.t_macro,
        cells: p.cells,
        state_cap: p.state_cap,
    };
    let r = verify_ldp(&cfg)?;
    let pass = r.decreasing && r.rows.len() == cfg.ns.len();
    Ok(Outcome::json(serde_json::to_value(&r)?).verdict(pass))
}

fn asymptotic(p: &AsymptoticParams) -> AsymptoticConfig {
    AsymptoticConfig {
        theta: p.theta,
        ns: p.ns.clone(),
        alpha: p.alpha,
        tau: p.tau,
        drift: p.drift.spec(),
        kappas: p.kappas.clone(),
        cells: p.cells,
        tol: p.tol,
    }
}

fn jack_trend(p: &AsymptoticParams) -> Result<Outcome> {
    let cfg = asymptotic(p);
    let r = verify_jack(&cfg)?;
    let pass = r.decreasing && r.rows.len() == cfg.ns.len();
    Ok(Outcome::json(serde_json::to_value(&r)?).verdict(pass))
}

fn macdonald_trend(p: &AsymptoticParams) -> Result<Outcome> {
    let cfg = asymptotic(p);
    if cfg.kappas.is_empty() {
        bail!("kappas: at least one value is needed");
    }
    let r = verify_macdonald(&cfg)?;
    let pass = r.runs.iter().all(|k| k.decreasing && k.rows.len() == cfg.ns.len()) && (r.kappa_gaps_decreasing || r.kappa_gaps_vanish);
    Ok(Outcome::json(serde_json::to_value(&r)?).verdict(pass))
}

/// `ramp:a,mass,rho` or a CSV path.
fn profile(spec: &str, what: &str) -> Result<Profile> {
    if let Some(args) = spec.strip_prefix("ramp:") {
        let v: Vec<f64> = args
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{what}: bad ramp parameters {args:?}"))?;
        return match v[..] {
            [a, mass, rho] => Ok(Profile::ramp_with_density(a, mass, rho)),
            _ => bail!("{what}: ramp needs a,mass,rho"),
        };
    }
    let f = std::fs::File::open(spec).with_context(|| format!("{what}: cannot open {spec:?}"))?;
    Ok(Profile::read_csv(std::io::BufReader::new(f))?)
}

fn start(s: &str) -> Result<Start> {
    Ok(match s {
        "max" => Start::Max,
        "min" => Start::Min,
        "mid" => Start::Mid,
        other => bail!("start: expected max, min or mid, got {other:?}"),
    })
}

fn with_drift(problem: VariationalProblem, d: &DriftParams) -> VariationalProblem {
    let spec = d.spec();
    if spec.is_zero() {
        problem
    } else {
        problem.with_drift(spec.function())
    }
}

fn limit_shape(p: &LimitShapeParams) -> Result<Outcome> {
    let h0 = profile(&p.h0, "h0")?;
    let ht = profile(&p.ht, "ht")?;
    let problem = with_drift(VariationalProblem::with_cells(h0, ht, p.t_max, p.theta, p.cells)?, &p.drift);
    let opts = SolverOptions { tol: p.tol, levels: p.levels, start: start(&p.start)?, ..SolverOptions::default() };
    let sol = solve_limit_shape(&problem, &opts)?;
    let mut files = Vec::new();
    if let Some(path) = &p.field_out {
        let mut buf = Vec::new();
        sol.field.to_height_field().write_csv(&mut buf)?;
        files.push((path.clone(), String::from_utf8(buf)?));
    }
    Ok(Outcome { body: Body::Json(json!({"grid": problem.grid, "report": sol.report})), passed: None, files })
}

/// Height-field CSV with any `#` header lines skipped.
fn read_field(path: &str, theta: f64) -> Result<HeightField> {
    let f = std::fs::File::open(path).with_context(|| format!("field: cannot open {path:?}"))?;
    let lines: Vec<String> = std::io::BufReader::new(f).lines().collect::<Result<_, _>>()?;
    let body: String = lines.iter().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    Ok(HeightField::read_csv(body.as_bytes(), theta)?)
}

fn rate(p: &RateParams) -> Result<Outcome> {
    if p.field.is_empty() {
        bail!("field: a height field CSV is required");
    }
    let hf = read_field(&p.field, p.theta)?;
    let field = AdmissibleGridField::from_height_field(&hf)?;
    let xs: Vec<f64> = (0..hf.grid.nx).map(|i| hf.grid.x(i)).collect();
    let h0 = Profile::new(xs.clone(), hf.row(0).to_vec())?;
    let ht = Profile::new(xs, hf.row(hf.grid.nt).to_vec())?;
    let problem = VariationalProblem::new(h0, ht, hf.grid.t_max, p.theta)?.with_grid(hf.grid)?;
    let problem = with_drift(problem, &p.drift);
    let j_min = if p.with_min { Some(solve_limit_shape(&problem, &SolverOptions::default())?.report.j_value) } else { None };
    let report = rate_j(&field, &problem, j_min)?;
    Ok(Outcome::json(json!({"grid": hf.grid, "violation": field.max_violation(), "report": report})))
}

fn poly_json(v: &PolyValue) -> Value {
    json!({
        "log_value": v.log_value,
        "sign": v.sign,
        "value": v.value(),
        "exact": v.exact.as_ref().map(|r| r.to_string()),
    })
}

fn diagrams(lambda: &[u32], mu: &[u32]) -> Result<(YoungDiagram, YoungDiagram)> {
    let l = YoungDiagram::new(lambda.to_vec()).map_err(|e| anyhow!("lambda: {e}"))?;
    let m = YoungDiagram::new(mu.to_vec()).map_err(|e| anyhow!("mu: {e}"))?;
    if !l.contains(&m) {
        bail!("mu: not contained in lambda");
    }
    Ok((l, m))
}

fn jack(p: &JackParams) -> Result<Outcome> {
    let (l, m) = diagrams(&p.lambda, &p.mu)?;
    if p.b.is_empty() {
        if !m.is_empty() {
            bail!("b: skew polynomials need explicit specialization values");
        }
        let v = jack_principal(&l, p.n, p.theta)?;
        let g = jack_principal_gamma(&l, p.n, p.theta.value())?;
        return Ok(Outcome::json(json!({"specialization": "principal", "value": poly_json(&v), "gamma_form_log": g})));
    }
    let v = skew_jack_pathsum(&l, &m, &p.b, p.n, p.theta)?;
    Ok(Outcome::json(json!({"specialization": "path-sum", "value": poly_json(&v)})))
}

fn macdonald(p: &MacdonaldParams) -> Result<Outcome> {
    let (l, m) = diagrams(&p.lambda, &p.mu)?;
    let qp = QParams::new(p.q, p.theta)?;
    if p.b.is_empty() {
        if !m.is_empty() {
            bail!("b: skew polynomials need explicit specialization values");
        }
        let v = macdonald_principal(&l, p.n, qp)?;
        let g = macdonald_principal_gamma(&l, p.n, qp)?;
        return Ok(Outcome::json(json!({"specialization": "principal", "value": poly_json(&v), "gamma_form_log": g})));
    }
    let v = skew_macdonald_pathsum(&l, &m, &p.b, p.n, qp)?;
    Ok(Outcome::json(json!({"specialization": "path-sum", "value": poly_json(&v)})))
}

fn surface(p: &SurfaceParams) -> Result<Outcome> {
    let sl = Slope::new(p.s, p.t)?;
    let grad = sigma_grad(sl).ok().map(|(a, b)| [a, b]);
    Ok(Outcome::json(json!({"s": p.s, "t": p.t, "sigma": sigma(sl)?, "grad": grad})))
}

fn loop_check(p: &LoopParams, seed: u64) -> Result<Outcome> {
    let presets: Vec<Preset> = if p.preset == "all" { Preset::ALL.to_vec() } else { vec![p.preset.parse()?] };
    let b = p.q.map_or(BMap::Identity, |q| BMap::QPower { q });
    let jobs: Vec<(Preset, usize)> = presets.iter().flat_map(|&pr| (0..p.cases).map(move |k| (pr, k))).collect();
    let reports = jobs
        .par_iter()
        .enumerate()
        .map(|(stream, &(pr, _))| {
            let setup = random_setup(p.n, p.theta, b, pr, seed, stream as u64)?;
            residue_check(&setup, p.radius, p.nodes)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<(Preset, usize, &thetawalk::loopcheck::ResidueReport, bool)> = jobs
        .iter()
        .zip(&reports)
        .map(|(&(pr, k), r)| (pr, k, r, r.max_residue < p.tol && r.deformation_gap < p.tol))
        .collect();
    let pass = rows.iter().all(|r| r.3);
    let body = match p.format.as_str() {
        "table" => {
            let mut t = format!("# tol={:e}\n{:<12} {:>4} {:>3} {:>13} {:>13} {:>13}  verdict\n", p.tol, "preset", "case", "n", "max_residue", "deformation", "cauchy");
            for (pr, k, r, ok) in &rows {
                let name = serde_json::to_value(pr)?.as_str().unwrap_or_default().to_string();
                t.push_str(&format!(
                    "{name:<12} {k:>4} {:>3} {:>13.3e} {:>13.3e} {:>13.3e}  {}\n",
                    r.n,
                    r.max_residue,
                    r.deformation_gap,
                    r.cauchy_gap,
                    if *ok { "pass" } else { "FAIL" }
                ));
            }
            Body::Text(t)
        }
        "json" => Body::Json(json!({
            "tol": p.tol,
            "cases": rows.iter().map(|(pr, k, r, ok)| json!({"preset": pr, "case": k, "pass": ok, "report": r})).collect::<Vec<_>>(),
        })),
        other => bail!("format: expected table or json, got {other:?}"),
    };
    Ok(Outcome { body, passed: Some(pass), files: Vec::new() })
}
