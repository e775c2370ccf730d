//! Run configurations: one parameter struct per subcommand, usable both as clap
//! flags and as the `params` object of a JSON config file.

use anyhow::{bail, Context};
use clap::{Args, FromArgMatches};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thetawalk::lattice::Real;
use thetawalk::loopcheck::{DEFAULT_NODES, DEFAULT_RADIUS};

pub const CONFIG_VERSION: u32 = 1;

fn real(s: &str) -> Result<Real, String> {
    Real::parse(s).map_err(|e| e.to_string())
}

/// Defaults of an `Args` struct, as clap would fill them with no flags given.
fn clap_defaults<T: Args + FromArgMatches>() -> T {
    let cmd = T::augment_args(clap::Command::new("defaults").no_binary_name(true));
    let m = cmd.try_get_matches_from(Vec::<String>::new()).expect("every parameter has a default");
    T::from_arg_matches(&m).expect("defaults parse")
}

macro_rules! clap_default {
    ($($t:ty),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                clap_defaults()
            }
        }
    )*};
}

clap_default!(
    SampleParams,
    ExactDistParams,
    LdpParams,
    AsymptoticParams,
    LimitShapeParams,
    RateParams,
    JackParams,
    MacdonaldParams,
    SurfaceParams,
    LoopParams
);

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleParams {
    /// Particle count for a packed start (ignored when --y is given).
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value = "1", value_parser = real)]
    pub theta: Real,
    /// Initial positions, decreasing, e.g. `0,-1,-2`.
    #[arg(long, value_delimiter = ',', value_parser = real, allow_hyphen_values = true)]
    pub y: Vec<Real>,
    /// End positions (method `mcmc` only).
    #[arg(long, value_delimiter = ',', value_parser = real, allow_hyphen_values = true)]
    pub z: Vec<Real>,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    /// Constant drift `b`.
    #[arg(long, default_value = "1", value_parser = real)]
    pub b: Real,
    /// q-deformed weights.
    #[arg(long)]
    pub q: Option<f64>,
    /// forward, gibbs or mcmc.
    #[arg(long, default_value = "forward")]
    pub method: String,
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// Gibbs rounds per step, or MCMC sweeps (0 picks the default burn-in).
    #[arg(long, default_value_t = 0)]
    pub sweeps: usize,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactDistParams {
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value = "1", value_parser = real)]
    pub theta: Real,
    #[arg(long, value_delimiter = ',', value_parser = real, allow_hyphen_values = true)]
    pub y: Vec<Real>,
    /// Conditioning endpoint; free end when omitted.
    #[arg(long, value_delimiter = ',', value_parser = real, allow_hyphen_values = true)]
    pub z: Vec<Real>,
    #[arg(long, default_value_t = 4)]
    pub steps: usize,
    #[arg(long, default_value = "1", value_parser = real)]
    pub b: Real,
    #[arg(long)]
    pub q: Option<f64>,
    /// Rational arithmetic (needs rational theta and b, plain weights).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub exact: bool,
    #[arg(long, default_value_t = thetawalk::sampler::DEFAULT_STATE_CAP)]
    pub state_cap: usize,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    pub format: String,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdpParams {
    #[arg(long, default_value = "1", value_parser = real)]
    pub theta: Real,
    #[arg(long, value_delimiter = ',', default_value = "4,6,8")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 0.25)]
    pub eps: f64,
    #[arg(long, default_value_t = 1)]
    pub gap_excess: i64,
    #[arg(long, default_value_t = 0.5)]
    pub v: f64,
    #[arg(long, default_value_t = 2.0)]
    pub t_macro: f64,
    #[arg(long, default_value_t = 512)]
    pub cells: usize,
    #[arg(long, default_value_t = 40_000_000)]
    pub state_cap: usize,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    /// Drift `f(s) = c + slope s`, with `b_t = exp(f(t/N))`.
    #[arg(long = "drift-c", default_value_t = 0.0, allow_hyphen_values = true)]
    pub c: f64,
    #[arg(long = "drift-slope", default_value_t = 0.0, allow_hyphen_values = true)]
    pub slope: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams { c: 0.0, slope: 0.0 }
    }
}

impl DriftParams {
    pub fn spec(&self) -> thetawalk::verify::DriftSpec {
        use thetawalk::verify::DriftSpec;
        if self.slope == 0.0 {
            DriftSpec::Constant { c: self.c }
        } else {
            DriftSpec::Linear { a: self.c, b: self.slope }
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsymptoticParams {
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,10")]
    pub ns: Vec<usize>,
    /// Columns of the rectangle per particle.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Steps per particle.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[command(flatten)]
    pub drift: DriftParams,
    /// `q = exp(kappa/N)` values (Macdonald only).
    #[arg(long, value_delimiter = ',', default_value = "-0.5,-2", allow_hyphen_values = true)]
    pub kappas: Vec<f64>,
    #[arg(long, default_value_t = 128)]
    pub cells: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitShapeParams {
    /// Initial profile: `ramp:a,mass,rho` or a CSV file with header `x,h`.
    #[arg(long, default_value = "ramp:0,1,1")]
    pub h0: String,
    /// Final profile, same syntax.
    #[arg(long, default_value = "ramp:0,1,1")]
    pub ht: String,
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 128)]
    pub cells: usize,
    #[command(flatten)]
    pub drift: DriftParams,
    #[arg(long, default_value_t = thetawalk::variational::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// max, min or mid.
    #[arg(long, default_value = "mid")]
    pub start: String,
    /// Also write the optimal field as CSV `x,t,H` to this path.
    #[arg(long)]
    pub field_out: Option<String>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateParams {
    /// Height field CSV `x,t,H`; its first and last rows give the boundary data.
    #[arg(long, default_value = "")]
    pub field: String,
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    #[command(flatten)]
    pub drift: DriftParams,
    /// Solve for the optimum too, so the report carries `I = (J - J_min)/theta`.
    #[arg(long, default_value_t = false)]
    pub with_min: bool,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JackParams {
    #[arg(long, value_delimiter = ',', default_value = "2,1")]
    pub lambda: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    pub mu: Vec<u32>,
    /// Specialization values; empty means `1^n` (principal specialization only).
    #[arg(long, value_delimiter = ',', value_parser = real)]
    pub b: Vec<Real>,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value = "1", value_parser = real)]
    pub theta: Real,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacdonaldParams {
    #[arg(long, value_delimiter = ',', default_value = "2,1")]
    pub lambda: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    pub mu: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    pub b: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub q: f64,
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceParams {
    #[arg(long, default_value_t = 0.5)]
    pub s: f64,
    #[arg(long, default_value_t = -0.25, allow_hyphen_values = true)]
    pub t: f64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopParams {
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value = "1", value_parser = real)]
    pub theta: Real,
    /// constant, polynomial, exponential or all.
    #[arg(long, default_value = "all")]
    pub preset: String,
    /// Cases per preset.
    #[arg(long, default_value_t = 4)]
    pub cases: usize,
    /// Use `b(z) = q^z` instead of the identity.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    pub radius: f64,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// table or json.
    #[arg(long, default_value = "table")]
    pub format: String,
}

/// Parameters of one subcommand.
#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    Sample(SampleParams),
    ExactDist(ExactDistParams),
    VerifyLdp(LdpParams),
    VerifyJack(AsymptoticParams),
    VerifyMacdonald(AsymptoticParams),
    LimitShape(LimitShapeParams),
    Rate(RateParams),
    Jack(JackParams),
    Macdonald(MacdonaldParams),
    SurfaceTension(SurfaceParams),
    LoopCheck(LoopParams),
}

impl Params {
    pub fn command(&self) -> &'static str {
        match self {
            Params::Sample(_) => "sample",
            Params::ExactDist(_) => "exact-dist",
            Params::VerifyLdp(_) => "verify-ldp",
            Params::VerifyJack(_) => "verify-jack",
            Params::VerifyMacdonald(_) => "verify-macdonald",
            Params::LimitShape(_) => "limit-shape",
            Params::Rate(_) => "rate",
            Params::Jack(_) => "jack",
            Params::Macdonald(_) => "macdonald",
            Params::SurfaceTension(_) => "surface-tension",
            Params::LoopCheck(_) => "loop-check",
        }
    }

    fn to_value(&self) -> serde_json::Value {
        let v = match self {
            Params::Sample(p) => serde_json::to_value(p),
            Params::ExactDist(p) => serde_json::to_value(p),
            Params::VerifyLdp(p) => serde_json::to_value(p),
            Params::VerifyJack(p) | Params::VerifyMacdonald(p) => serde_json::to_value(p),
            Params::LimitShape(p) => serde_json::to_value(p),
            Params::Rate(p) => serde_json::to_value(p),
            Params::Jack(p) => serde_json::to_value(p),
            Params::Macdonald(p) => serde_json::to_value(p),
            Params::SurfaceTension(p) => serde_json::to_value(p),
            Params::LoopCheck(p) => serde_json::to_value(p),
        };
        v.expect("parameters serialize")
    }

    fn from_value(command: &str, v: serde_json::Value) -> anyhow::Result<Self> {
        // Every params struct defaults missing fields, so a failing single-field object
        // pins the error to that field.
        fn de<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> anyhow::Result<T> {
            match serde_json::from_value(v.clone()) {
                Ok(t) => Ok(t),
                Err(e) => {
                    if let serde_json::Value::Object(map) = &v {
                        for (k, val) in map {
                            let single = serde_json::Value::Object([(k.clone(), val.clone())].into_iter().collect());
                            if let Err(e) = serde_json::from_value::<T>(single) {
                                bail!("params.{k}: {e}");
                            }
                        }
                    }
                    bail!("params: {e}")
                }
            }
        }
        Ok(match command {
            "sample" => Params::Sample(de(v)?),
            "exact-dist" => Params::ExactDist(de(v)?),
            "verify-ldp" => Params::VerifyLdp(de(v)?),
            "verify-jack" => Params::VerifyJack(de(v)?),
            "verify-macdonald" => Params::VerifyMacdonald(de(v)?),
            "limit-shape" => Params::LimitShape(de(v)?),
            "rate" => Params::Rate(de(v)?),
            "jack" => Params::Jack(de(v)?),
            "macdonald" => Params::Macdonald(de(v)?),
            "surface-tension" => Params::SurfaceTension(de(v)?),
            "loop-check" => Params::LoopCheck(de(v)?),
            other => bail!("command: unknown command {other:?}"),
        })
    }
}

/// A complete, replayable run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: u32,
    command: String,
    #[serde(default)]
    seed: u64,
    #[serde(default = "empty_object")]
    params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl RunConfig {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(RawConfig {
            version: CONFIG_VERSION,
            command: self.params.command().to_string(),
            seed: self.seed,
            params: self.params.to_value(),
        })
        .expect("config serializes")
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).context("config is not valid JSON")?;
        if value.get("version").is_none() {
            bail!("version: missing required field (current version is {CONFIG_VERSION})");
        }
        let raw: RawConfig = serde_json::from_value(value).map_err(|e| anyhow::anyhow!("config: {e}"))?;
        if raw.version != CONFIG_VERSION {
            bail!("version: unsupported config version {} (expected {CONFIG_VERSION})", raw.version);
        }
        Ok(RunConfig { seed: raw.seed, params: Params::from_value(&raw.command, raw.params)? })
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.to_json()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
