//! `thetawalk`: sampling, exact distributions, limit shapes and verification runs.
//!
//! Every subcommand can be driven by flags or replayed from a JSON config with
//! `thetawalk run CONFIG`. Exit status: 0 on success, 2 when a verification fails,
//! 1 on usage or runtime errors.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::Body;
use config::*;

#[derive(Parser)]
#[command(name = "thetawalk", version, about = "Non-intersecting theta-Bernoulli walks: sampling, limit shapes and verification")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// RNG seed (a config file's own seed takes precedence).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (default: standard output).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Print the JSON config for this invocation instead of running it.
    #[arg(long, global = true)]
    print_config: bool,
    /// More logging on standard error (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw walk ensembles (exact forward, approximate Gibbs, or bridge MCMC).
    Sample(SampleParams),
    /// Exact marginals by transfer matrix (CSV `t,config_key,mass`).
    ExactDist(ExactDistParams),
    /// Ball probabilities against the rate functional for growing N.
    VerifyLdp(LdpParams),
    /// Skew Jack asymptotics against the variational value.
    VerifyJack(AsymptoticParams),
    /// Skew Macdonald asymptotics for several kappa.
    VerifyMacdonald(AsymptoticParams),
    /// Solve the limit-shape problem between two boundary profiles.
    LimitShape(LimitShapeParams),
    /// Rate functional of a given height field.
    Rate(RateParams),
    /// Jack polynomial at a principal or path-sum specialization.
    Jack(JackParams),
    /// Macdonald polynomial at a principal or path-sum specialization.
    Macdonald(MacdonaldParams),
    /// Surface tension and its gradient at a slope.
    SurfaceTension(SurfaceParams),
    /// Loop-equation holomorphy check on random setups.
    LoopCheck(LoopParams),
    /// Run a JSON config file.
    Run {
        config: PathBuf,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let params = match &cli.cmd {
        Cmd::Sample(p) => Params::Sample(p.clone()),
        Cmd::ExactDist(p) => Params::ExactDist(p.clone()),
        Cmd::VerifyLdp(p) => Params::VerifyLdp(p.clone()),
        Cmd::VerifyJack(p) => Params::VerifyJack(p.clone()),
        Cmd::VerifyMacdonald(p) => Params::VerifyMacdonald(p.clone()),
        Cmd::LimitShape(p) => Params::LimitShape(p.clone()),
        Cmd::Rate(p) => Params::Rate(p.clone()),
        Cmd::Jack(p) => Params::Jack(p.clone()),
        Cmd::Macdonald(p) => Params::Macdonald(p.clone()),
        Cmd::SurfaceTension(p) => Params::SurfaceTension(p.clone()),
        Cmd::LoopCheck(p) => Params::LoopCheck(p.clone()),
        Cmd::Run { config } => {
            let text = std::fs::read_to_string(config).with_context(|| format!("cannot read config {}", config.display()))?;
            return RunConfig::parse(&text).with_context(|| format!("invalid config {}", config.display()));
        }
    };
    Ok(RunConfig { seed: cli.seed, params })
}

fn meta(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "command": cfg.params.command(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": {
            "thetawalk": thetawalk::VERSION,
            "thetawalk-cli": env!("CARGO_PKG_VERSION"),
            "rng": thetawalk::sampler::RNG_NAME,
        },
        "config": cfg.to_json(),
    })
}

fn render(body: &Body, meta: &serde_json::Value) -> Result<String> {
    Ok(match body {
        Body::Json(v) => {
            let mut s = serde_json::to_string_pretty(&json!({"meta": meta, "result": v}))?;
            s.push('\n');
            s
        }
        Body::Text(t) => format!("# meta {}\n{t}", serde_json::to_string(meta)?),
    })
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn execute(cli: &Cli) -> Result<Option<bool>> {
    let cfg = resolve(cli)?;
    if cli.print_config {
        write_out(cli.out.as_ref(), &(serde_json::to_string_pretty(&cfg.to_json())? + "\n"))?;
        return Ok(None);
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot configure the thread pool")?;
    }
    log::info!("running {} (config {})", cfg.params.command(), cfg.hash());
    let outcome = commands::run(&cfg)?;
    let m = meta(&cfg);
    for (path, text) in &outcome.files {
        write_out(Some(&PathBuf::from(path)), &render(&Body::Text(text.clone()), &m)?)?;
    }
    write_out(cli.out.as_ref(), &render(&outcome.body, &m)?)?;
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).target(env_logger::Target::Stderr).init();
    match execute(&cli) {
        Ok(Some(false)) => {
            log::error!("verification failed");
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
