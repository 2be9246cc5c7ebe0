//! One function per command. Each produces the `result` section of the
//! report, a status and any CSV artifacts.

use std::fmt::Write as _;

use clap::ValueEnum;
use hilbert_diffuse::batch::{Record, TimeGrid};
use hilbert_diffuse::kolmogorov::{
    compare_mc_fp, default_half_width, evolve_fp, stable_step, weak_identity_residual, GridDensity,
};
use hilbert_diffuse::observables::{c_constant, novikov_demo, DiagnosticsReport, PathDiagnostics};
use hilbert_diffuse::positivity::{
    chain_experiment, gaussian_control, geometric_probes, hit_probability, lemma_stay_check, tau_of_r,
    ProbeResult, Scenario, Verdict,
};
use hilbert_diffuse::q_wiener::{empirical_covariance, sample_paths, wiener_covariance};
use hilbert_diffuse::sde::Simulation;
use hilbert_diffuse::spectral_space::{h_norm, SpectralVector};
use hilbert_diffuse::Error;
use serde_json::{json, Value};

use crate::setup::Setup;

type Result<T> = std::result::Result<T, Error>;

/// Agreement threshold, in standard errors, for the covariance check.
const COVARIANCE_Z: f64 = 4.0;
const ORACLE_TV_LIMIT: f64 = 0.05;
const ORACLE_MASS_LIMIT: f64 = 1e-6;
const CONTROL_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    WienerCheck,
    Positivity,
    LemmaTau,
    Chain,
    Observables,
    Novikov,
    OracleCompare,
    WeakIdentity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::WienerCheck => "wiener-check",
            Command::Positivity => "positivity",
            Command::LemmaTau => "lemma-tau",
            Command::Chain => "chain",
            Command::Observables => "observables",
            Command::Novikov => "novikov",
            Command::OracleCompare => "oracle-compare",
            Command::WeakIdentity => "weak-identity",
        }
    }

    /// Library module doing the work, named in error messages.
    pub fn module(self) -> &'static str {
        match self {
            Command::Simulate => "sde_engine",
            Command::WienerCheck => "q_wiener",
            Command::Positivity | Command::LemmaTau | Command::Chain => "positivity_lab",
            Command::Observables | Command::Novikov => "proof_observables",
            Command::OracleCompare | Command::WeakIdentity => "kolmogorov_oracle",
        }
    }

    pub fn run(self, s: &Setup) -> Result<Outcome> {
        match self {
            Command::Simulate => simulate(s),
            Command::WienerCheck => wiener_check(s),
            Command::Positivity => positivity(s),
            Command::LemmaTau => lemma_tau(s),
            Command::Chain => chain(s),
            Command::Observables => observables(s),
            Command::Novikov => novikov(s),
            Command::OracleCompare => oracle_compare(s),
            Command::WeakIdentity => weak_identity(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Inconclusive => "inconclusive",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Inconclusive => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub result: Value,
    /// File name and contents.
    pub artifacts: Vec<(String, Vec<u8>)>,
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Positive => "positive",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn probes_csv(probes: &[ProbeResult]) -> Vec<u8> {
    let mut out = String::from("requested_time,time,step,hits,trials,estimate,wilson_lower,wilson_upper,verdict\n");
    for p in probes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.requested_time,
            p.time,
            p.step,
            p.hit.hits,
            p.hit.trials,
            p.hit.estimate,
            p.hit.ci.lower,
            p.hit.ci.upper,
            verdict_name(p.verdict)
        );
    }
    out.into_bytes()
}

fn scenario(s: &Setup, horizon: f64, probes: Vec<f64>) -> Scenario<f64> {
    Scenario {
        model: s.model.clone(),
        spectrum: s.spectrum.clone(),
        initial: s.initial.clone(),
        target: s.target.clone(),
        horizon,
        step: s.step,
        probes,
        paths: s.paths,
        seed: s.seed,
    }
}

fn simulation(s: &Setup) -> Result<Simulation<f64>> {
    let grid = TimeGrid::covering(s.horizon, s.step)?;
    Ok(Simulation::new(s.model.clone(), s.spectrum.clone(), s.initial.clone(), grid, s.paths, s.seed))
}

fn simulate(s: &Setup) -> Result<Outcome> {
    let batch = simulation(s)?.with_record(Record::Every(s.stride)).run()?;
    let mut csv = Vec::new();
    batch.write_csv(&mut csv)?;
    Ok(Outcome {
        status: Status::Pass,
        result: batch.summary_json(&s.spectrum),
        artifacts: vec![("trajectories.csv".into(), csv)],
    })
}

/// Probe set for the covariance check: diagonal entries of the first
/// modes at two times, plus an off-diagonal pair.
pub fn covariance_probes(dim: usize, horizon: f64) -> Vec<(usize, usize, f64, f64)> {
    let half = horizon / 2.0;
    let mut v: Vec<(usize, usize, f64, f64)> = (0..dim.min(3)).map(|i| (i, i, half, horizon)).collect();
    v.push((0, 0, horizon, horizon));
    if dim > 1 {
        v.push((0, 1, half, horizon));
    }
    v
}

fn wiener_check(s: &Setup) -> Result<Outcome> {
    let grid = TimeGrid::covering(s.horizon, s.step)?;
    let d = s.spectrum.dim();
    let probes = covariance_probes(d, grid.horizon());
    let half = grid.nearest_index(grid.horizon() / 2.0);
    let horizon = grid.horizon();
    let half_t = grid.time(half);
    let batch = sample_paths(&s.spectrum, grid, s.paths, s.seed, &Record::Steps(vec![half, grid.steps()]));
    let mut rows = Vec::new();
    let mut csv = String::from("i,j,t,s,estimate,std_error,exact,z\n");
    let mut ok = true;
    for (i, j, t, u) in probes {
        let t = if t < horizon { half_t } else { horizon };
        let u = if u < horizon { half_t } else { horizon };
        let (ei, ej) = (SpectralVector::basis(d, i), SpectralVector::basis(d, j));
        let est = empirical_covariance(&batch, t, u, &ei, &ej)?;
        let exact = wiener_covariance(&s.spectrum, t, u, &ei, &ej);
        let z = est.z_score(exact);
        let agrees = z.abs() <= COVARIANCE_Z;
        ok &= agrees;
        let _ = writeln!(csv, "{},{},{t},{u},{},{},{exact},{z}", i + 1, j + 1, est.value, est.std_error);
        rows.push(json!({
            "i": i + 1, "j": j + 1, "t": t, "s": u,
            "estimate": est.value, "std_error": est.std_error,
            "exact": exact, "z": z, "agrees": agrees,
        }));
    }
    Ok(Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        result: json!({ "paths": s.paths, "tolerance_z": COVARIANCE_Z, "probes": rows }),
        artifacts: vec![("covariance.csv".into(), csv.into_bytes())],
    })
}

fn positivity(s: &Setup) -> Result<Outcome> {
    let probes = s.probes.resolve(s.horizon, || geometric_probes(s.horizon, 6));
    let sc = scenario(s, s.horizon, probes);
    let report = hit_probability(&sc)?;
    let mut result = serde_json::to_value(&report).expect("report serializes");
    if s.model.drift().is_zero() {
        let control = report
            .probes
            .iter()
            .map(|p| {
                gaussian_control(&s.model, &s.spectrum, &s.initial, &s.target, p.time, CONTROL_SAMPLES, s.seed)
                    .map(|e| json!({ "time": p.time, "estimate": e.value, "std_error": e.std_error }))
            })
            .collect::<Result<Vec<_>>>()?;
        result["gaussian_control"] = Value::Array(control);
    }
    Ok(Outcome {
        status: if report.inconclusive() {
            Status::Inconclusive
        } else {
            Status::Pass
        },
        result,
        artifacts: vec![("probes.csv".into(), probes_csv(&report.probes))],
    })
}

fn lemma_tau(s: &Setup) -> Result<Outcome> {
    let tau = tau_of_r(s.target.radius(), s.model.drift(), s.variant)?;
    let probes = s.probes.resolve(tau, || vec![tau / 4.0, tau / 2.0, tau]);
    let horizon = probes.iter().copied().fold(0.0, f64::max);
    let report = lemma_stay_check(&scenario(s, horizon, probes), s.variant)?;
    let mut csv = String::from("requested_time,time,escape_hits,escape_upper,hits,trials,wilson_lower,verdict\n");
    for p in &report.probes {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            p.requested_time,
            p.time,
            p.escape.hits,
            p.escape.ci.upper,
            p.hit.hits,
            p.hit.trials,
            p.hit.ci.lower,
            verdict_name(p.verdict)
        );
    }
    let refuted = !report.drift_ok || report.probes.iter().any(|p| !p.escape_upper_below_one);
    Ok(Outcome {
        status: if refuted {
            Status::Fail
        } else if report.inconclusive() {
            Status::Inconclusive
        } else {
            Status::Pass
        },
        result: serde_json::to_value(&report).expect("report serializes"),
        artifacts: vec![("probes.csv".into(), csv.into_bytes())],
    })
}

fn chain(s: &Setup) -> Result<Outcome> {
    let tau = tau_of_r(s.target.radius(), s.model.drift(), s.variant)?;
    let horizon = s.chain_horizon.unwrap_or(s.horizon);
    let report = chain_experiment(&scenario(s, horizon, vec![tau]), horizon, s.variant)?;
    let status = if !report.restart_agrees {
        Status::Fail
    } else if report.positivity.inconclusive() {
        Status::Inconclusive
    } else {
        Status::Pass
    };
    Ok(Outcome {
        status,
        artifacts: vec![("probes.csv".into(), probes_csv(&report.positivity.probes))],
        result: serde_json::to_value(&report).expect("report serializes"),
    })
}

fn observables(s: &Setup) -> Result<Outcome> {
    // N only enters the bound; a Dirac at the origin gets the smallest
    // admissible radius
    let radius = s.initial_radius.map(|r| r.max(1e-12));
    let constants = c_constant(radius.unwrap_or(1.0), s.horizon, &s.spectrum, s.model.drift())?;
    let psi0 = radius.map_or(0.0, |r| r * r) + s.horizon * constants.lambda;
    let (_, diags) = simulation(s)?
        .with_record(Record::Steps(vec![]))
        .run_observed(|_| PathDiagnostics::new(s.spectrum.q(), psi0, false))?;
    let report = DiagnosticsReport::from_paths(&diags, s.horizon, constants)?;
    let mut csv = String::from("path,quadratic_variation,min_discounted_integral,clock,max_gronwall_gap,degenerate_steps\n");
    for (p, d) in diags.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{p},{},{},{},{},{}",
            d.quadratic_variation(),
            d.min_discounted_integral(),
            d.clock(),
            d.max_gronwall_gap(),
            d.degenerate_steps()
        );
    }
    let mut result = serde_json::to_value(&report).expect("report serializes");
    let status = match radius {
        Some(_) => {
            let holds = report.min_discounted_integral >= -report.constants.c;
            result["lower_bound_holds"] = json!(holds);
            if holds {
                Status::Pass
            } else {
                Status::Fail
            }
        }
        None => {
            // an unbounded initial law has no constant to compare against
            result["constants"] = Value::Null;
            Status::Pass
        }
    };
    Ok(Outcome {
        status,
        result,
        artifacts: vec![("paths.csv".into(), csv.into_bytes())],
    })
}

fn novikov(s: &Setup) -> Result<Outcome> {
    let report = novikov_demo(s.horizon, s.step, s.paths, s.seed)?;
    let ok = report.residual_euler <= 0.1 && report.min_integral >= -1.0 - 1e-2;
    Ok(Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        result: serde_json::to_value(report).expect("report serializes"),
        artifacts: Vec::new(),
    })
}

/// Grid density at time 0 and the step used, shared with `validate`.
pub fn oracle_setup(s: &Setup) -> Result<(GridDensity<f64>, f64)> {
    let d = s.spectrum.dim();
    if d > 2 {
        return Err(Error::Config(format!("the grid oracle supports dimension 1 or 2, got {d}")));
    }
    let half_width = default_half_width(s.spectrum.q()[0], s.horizon, h_norm(&s.initial.mean()), s.model.drift().sup_h());
    let rho0 = GridDensity::from_initial(&s.initial, half_width, s.oracle_cells)?;
    let stable = stable_step(&rho0, &s.model, s.spectrum.q())?;
    Ok((rho0, s.oracle_dt.unwrap_or(stable)))
}

fn oracle_compare(s: &Setup) -> Result<Outcome> {
    let (rho0, dt) = oracle_setup(s)?;
    let fp = evolve_fp(&rho0, &s.model, s.spectrum.q(), s.horizon, dt)?;
    let sim = simulation(s)?;
    let grid = TimeGrid::covering(s.horizon, s.step)?;
    let batch = sim.with_record(Record::Steps(vec![grid.steps()])).run()?;
    let coords: Vec<usize> = (0..s.spectrum.dim()).collect();
    let tv = compare_mc_fp(&batch, &s.model, &fp.density, &s.model, grid.horizon(), &coords)?;
    let mut density = Vec::new();
    fp.density.write_csv(&mut density)?;
    let ok = tv.total_variation <= ORACLE_TV_LIMIT && fp.mass_drift <= ORACLE_MASS_LIMIT;
    let meta = fp.density.metadata_json();
    Ok(Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        result: json!({
            "tv": tv,
            "tv_limit": ORACLE_TV_LIMIT,
            "mass_limit": ORACLE_MASS_LIMIT,
            "fp": {
                "steps": fp.steps,
                "dt": fp.dt,
                "mass_drift": fp.mass_drift,
                "min_value": fp.min_value,
                "clamped": fp.clamped,
                "boundary_mass": fp.boundary_mass,
                "boundary_warning": fp.boundary_warning,
            },
            "density": meta,
        }),
        artifacts: vec![
            ("density.csv".into(), density),
            (
                "density.json".into(),
                serde_json::to_string_pretty(&meta).expect("json").into_bytes(),
            ),
        ],
    })
}

fn weak_identity(s: &Setup) -> Result<Outcome> {
    let batch = simulation(s)?.with_record(Record::Every(s.stride)).run()?;
    let t = batch.grid().horizon();
    let h = batch.grid().step();
    let mut ok = true;
    let mut rows = Vec::new();
    let mut csv = String::from("test_function,residual,std_error,tolerance,agrees\n");
    for (name, phi) in &s.test_functions {
        let r = weak_identity_residual(&batch, phi, &s.model, &s.spectrum, t)?;
        let tolerance = 3.0 * r.std_error + 10.0 * h;
        let agrees = r.residual <= tolerance;
        ok &= agrees;
        let _ = writeln!(csv, "{name},{},{},{tolerance},{agrees}", r.residual, r.std_error);
        let mut row = serde_json::to_value(r).expect("residual serializes");
        row["test_function"] = json!(name);
        row["tolerance"] = json!(tolerance);
        row["agrees"] = json!(agrees);
        rows.push(row);
    }
    Ok(Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        result: json!({ "time": t, "step": h, "test_functions": rows }),
        artifacts: vec![("weak_identity.csv".into(), csv.into_bytes())],
    })
}
