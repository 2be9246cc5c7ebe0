//! Batch runner: reads a scenario file, runs one command and writes
//! `report.json` plus CSV artifacts into an output directory.

pub mod commands;
pub mod config;
pub mod setup;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hilbert_diffuse::positivity::tau_of_r;
use hilbert_diffuse::sde::InitialLaw;
use serde_json::{json, Value};
use thiserror::Error;

pub use commands::{Command, Outcome, Status};
use config::ScenarioFile;
use setup::{Probes, Setup};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read scenario {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid scenario")]
    Invalid(Vec<String>),
    #[error("error in {module}: {source}")]
    Run {
        module: &'static str,
        source: hilbert_diffuse::Error,
    },
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("cannot start {jobs} worker threads: {message}")]
    Pool { jobs: usize, message: String },
}

impl CliError {
    fn write(path: &Path, e: std::io::Error) -> Self {
        CliError::Write {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Request {
    pub command: Command,
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Every problem that would stop `command` from running on this scenario.
/// Empty iff the scenario is runnable.
pub fn validate(text: &str, command: Command, seed: Option<u64>) -> Vec<String> {
    let file = match ScenarioFile::parse(text) {
        Ok(f) => f,
        Err(errs) => return errs.iter().map(|e| e.to_string()).collect(),
    };
    match setup::build(&file, seed) {
        Ok(s) => command_checks(&file, &s, command),
        Err(errs) => errs.iter().map(|e| e.to_string()).collect(),
    }
}

fn command_checks(f: &ScenarioFile, s: &Setup, command: Command) -> Vec<String> {
    let mut out = Vec::new();
    let at = |key: &str, msg: String| f.error(key, msg).to_string();
    let probes = match &s.probes {
        Probes::List(v) => v.clone(),
        _ => Vec::new(),
    };
    match command {
        Command::Positivity => {
            if let Some(&t) = probes.iter().find(|&&t| !(t > 0.0 && t <= s.horizon)) {
                out.push(at("probes", format!("probe time {t} is outside (0, T] with T = {}", s.horizon)));
            }
        }
        Command::LemmaTau => match tau_of_r(s.target.radius(), s.model.drift(), s.variant) {
            Ok(tau) => {
                if let Some(&t) = probes.iter().find(|&&t| !(t > 0.0 && t <= tau * (1.0 + 1e-9))) {
                    out.push(at("probes", format!("probe time {t} is outside (0, tau] with tau = {tau}")));
                }
                if let InitialLaw::Dirac(x) = &s.initial {
                    let r = s.target.q_dist_sq(x.coords()).sqrt();
                    if r > s.target.radius() / 2.0 {
                        out.push(at(
                            "initial.point",
                            format!("lies at Q-distance {r} from the target center, beyond R/2"),
                        ));
                    }
                }
            }
            Err(e) => out.push(at("target.radius", e.to_string())),
        },
        Command::Chain => {
            if let Ok(tau) = tau_of_r(s.target.radius(), s.model.drift(), s.variant) {
                let m = s.chain_horizon.unwrap_or(s.horizon);
                if m <= tau {
                    let key = if s.chain_horizon.is_some() { "M" } else { "T" };
                    out.push(at(key, format!("chaining needs a horizon above tau = {tau}, got {m}")));
                }
            }
        }
        Command::OracleCompare => match commands::oracle_setup(s) {
            Ok((rho0, _)) => {
                if let Some(given) = s.oracle_dt {
                    match hilbert_diffuse::kolmogorov::stable_step(&rho0, &s.model, s.spectrum.q()) {
                        Ok(stable) if given > stable => {
                            out.push(at("oracle.dt", format!("{given} violates the stability bound dt <= {stable}")))
                        }
                        Ok(_) => {}
                        Err(e) => out.push(e.to_string()),
                    }
                }
            }
            Err(e) => out.push(at("spectrum.dim", e.to_string())),
        },
        Command::WeakIdentity => {
            let d = s.spectrum.dim();
            for (name, phi) in &s.test_functions {
                if phi.coords().iter().any(|&c| c >= d) {
                    out.push(at("test_function", format!("{name} uses a coordinate beyond dimension {d}")));
                }
            }
        }
        Command::Simulate | Command::WienerCheck | Command::Observables | Command::Novikov => {}
    }
    out
}

fn load(req: &Request) -> Result<(ScenarioFile, Setup), CliError> {
    let text = fs::read_to_string(&req.scenario).map_err(|e| CliError::Read {
        path: req.scenario.clone(),
        message: e.to_string(),
    })?;
    let diagnostics = validate(&text, req.command, req.seed);
    if !diagnostics.is_empty() {
        return Err(CliError::Invalid(diagnostics));
    }
    let file = ScenarioFile::parse(&text).expect("validated");
    let setup = setup::build(&file, req.seed).expect("validated");
    Ok((file, setup))
}

fn execute(req: &Request, setup: &Setup) -> Result<Outcome, CliError> {
    let work = || {
        req.command.run(setup).map_err(|source| CliError::Run {
            module: req.command.module(),
            source,
        })
    };
    match req.jobs {
        None => work(),
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Pool {
                jobs,
                message: e.to_string(),
            })?
            .install(work),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::write(path, e))
}

/// Runs the request, writes its outputs and returns the process exit code.
/// Problems are reported on stderr and, when possible, in `report.json`.
pub fn run(req: &Request) -> i32 {
    let start = Instant::now();
    let mut report = json!({ "command": req.command.name() });
    let outcome = load(req).and_then(|(file, s)| {
        report["config"] = json!(file.echo());
        report["seed"] = json!(s.seed);
        report["seed_source"] = json!(s.seed_source.name());
        execute(req, &s)
    });
    let code = match &outcome {
        Ok(o) => {
            report["status"] = json!(o.status.name());
            report["result"] = o.result.clone();
            o.status.exit_code()
        }
        Err(e) => {
            report["status"] = json!("error");
            report["error"] = json!(e.to_string());
            if let CliError::Invalid(d) = e {
                report["diagnostics"] = json!(d);
            }
            if let CliError::Run { module, .. } = e {
                report["module"] = json!(module);
            }
            eprintln!("{e}");
            if let CliError::Invalid(d) = e {
                for line in d {
                    eprintln!("  {line}");
                }
            }
            1
        }
    };
    report["wall_time_seconds"] = json!(start.elapsed().as_secs_f64());
    match write_outputs(&req.out, outcome.ok().map(|o| o.artifacts).unwrap_or_default(), &report) {
        Ok(()) => code,
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}

fn write_outputs(out: &Path, artifacts: Vec<(String, Vec<u8>)>, report: &Value) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::write(out, e))?;
    for (name, bytes) in artifacts {
        write_file(&out.join(name), &bytes)?;
    }
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    write_file(&out.join("report.json"), text.as_bytes())
}
