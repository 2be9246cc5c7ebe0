//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p hilbert-diffuse-core --test acceptance`.

use std::time::Instant;

use hilbert_diffuse::batch::{Record, TimeGrid};
use hilbert_diffuse::kolmogorov::{
    compare_mc_fp, default_half_width, evolve_fp, stable_step, weak_identity_residual, CylindricalTestFunction,
    GridDensity, CATALOG_SIZE,
};
use hilbert_diffuse::observables::{c_constant, novikov_demo, PathDiagnostics};
use hilbert_diffuse::positivity::{
    gaussian_control, geometric_probes, hit_probability_targets, lemma_stay_check, shift_experiment, tau_of_r,
    Scenario, TauVariant, Verdict,
};
use hilbert_diffuse::q_wiener::{empirical_covariance, sample_paths, wiener_covariance};
use hilbert_diffuse::sde::{DriftModel, InitialLaw, LinearOperator, Model, Simulation};
use hilbert_diffuse::spectral_space::{CovarianceSpectrum, Ellipsoid, SpectralVector};
use hilbert_diffuse::stats::{mean_se, variance_se};
use hilbert_diffuse::Result;

const SEED: u64 = 20_240_611;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn basis(d: usize, j: usize, scale: f64) -> SpectralVector<f64> {
    SpectralVector::basis(d, j).scale(scale)
}

fn wiener_covariance_check() -> Result<Outcome> {
    let s = CovarianceSpectrum::geom2(8)?;
    let grid = TimeGrid::covering(2.0, 1e-2)?;
    let probes = [(0, 0, 0.5, 1.0), (1, 1, 1.0, 1.0), (0, 1, 1.0, 2.0), (7, 7, 0.25, 2.0)];
    let steps = [25, 50, 100, 200].to_vec();
    let batch = sample_paths(&s, grid, 100_000, SEED, &Record::Steps(steps));
    let mut worst: f64 = 0.0;
    for (i, j, t, u) in probes {
        let (a, b) = (basis(8, i, 1.0), basis(8, j, 1.0));
        let est = empirical_covariance(&batch, t, u, &a, &b)?;
        let exact = wiener_covariance(&s, t, u, &a, &b);
        worst = worst.max(est.z_score(exact).abs());
    }
    outcome(worst <= 4.0, format!("max |z| = {worst:.2} over 4 probes (limit 4)"))
}

fn ou_exactness() -> Result<Outcome> {
    let d = 8;
    let s = CovarianceSpectrum::poly2(d)?;
    let op = LinearOperator::heat(d);
    let x0 = SpectralVector::new(vec![1.0; d])?;
    let model = Model::Linear {
        operator: op.clone(),
        drift: DriftModel::zero(&s),
    };
    let grid = TimeGrid::covering(1.0, 1e-2)?;
    let batch = Simulation::new(model, s.clone(), InitialLaw::dirac(x0.clone()), grid, 10_000, SEED)
        .with_record(Record::Steps(vec![10, 100]))
        .run()?;
    let mut worst: f64 = 0.0;
    for t in [0.1, 1.0] {
        let slot = batch.slot_of_time(t)?;
        for j in 0..d {
            let xs: Vec<f64> = batch.marginal(slot).map(|x| x[j]).collect();
            let mean = mean_se(xs.iter().copied());
            let var = variance_se(&xs);
            let m = op.decay(j, t) * x0[j];
            let v = s.q()[j] * op.convolution_factor(j, t);
            worst = worst.max(mean.z_score(m).abs()).max(var.z_score(v).abs());
        }
    }
    outcome(worst <= 3.0, format!("max |z| = {worst:.2} over 8 modes x 2 times (limit 3)"))
}

fn quadratic_variation() -> Result<Outcome> {
    let d = 16;
    let s = CovarianceSpectrum::poly2(d)?;
    let sim = Simulation::new(
        Model::Bounded(DriftModel::tanh(&s)),
        s.clone(),
        InitialLaw::dirac(basis(d, 0, 1.0)),
        TimeGrid::covering(1.0, 1e-3)?,
        1000,
        SEED,
    )
    .with_record(Record::Steps(vec![]));
    let (_, diags) = sim.run_observed(|_| PathDiagnostics::new(s.q(), 0.0, false))?;
    let qv = mean_se(diags.iter().map(|d| d.quadratic_variation()));
    let degenerate: usize = diags.iter().map(|d| d.degenerate_steps()).sum();
    outcome(
        (0.95..=1.05).contains(&qv.value) && degenerate == 0,
        format!("mean QV = {:.4}, degenerate steps = {degenerate}", qv.value),
    )
}

fn lemma_staying_bound() -> Result<Outcome> {
    let d = 8;
    let s = CovarianceSpectrum::poly2(d)?;
    let f = DriftModel::tanh(&s);
    let tau = tau_of_r(1.0, &f, TauVariant::HNorm)?;
    let a = basis(d, 0, 2.0);
    let sc = Scenario {
        model: Model::Bounded(f),
        spectrum: s.clone(),
        initial: InitialLaw::dirac(a.clone()),
        target: Ellipsoid::new(a, 1.0, s)?,
        horizon: tau,
        step: 1e-3,
        probes: vec![tau / 4.0, tau / 2.0, tau],
        paths: 10_000,
        seed: SEED,
    };
    let r = lemma_stay_check(&sc, TauVariant::HNorm)?;
    let hits_ok = r.probes.iter().all(|p| p.verdict == Verdict::Positive && p.hit.ci.lower > 0.0);
    let lowers: Vec<String> = r.probes.iter().map(|p| format!("{:.3}", p.hit.ci.lower)).collect();
    outcome(
        r.drift_ok && hits_ok,
        format!(
            "tau = {:.5}, max drift integral = {:.5} <= {:.5}, Wilson lower bounds [{}]",
            r.tau,
            r.drift_integral_max,
            r.drift_integral_bound + r.drift_slack,
            lowers.join(", ")
        ),
    )
}

fn positivity_sweep() -> Result<Outcome> {
    let d = 8;
    let s = CovarianceSpectrum::poly2(d)?;
    let initial = InitialLaw::shell(SpectralVector::zeros(d), 2.0, 0.5)?;
    let near = Ellipsoid::new(SpectralVector::zeros(d), 1.0, s.clone())?;
    let far = Ellipsoid::new(basis(d, 0, 3.0), 1.0, s.clone())?;
    let sc = Scenario {
        model: Model::Bounded(DriftModel::tanh(&s)),
        spectrum: s.clone(),
        initial: initial.clone(),
        target: near.clone(),
        horizon: 2.0,
        step: 2.0f64.powi(-7),
        probes: geometric_probes(2.0, 6),
        paths: 100_000,
        seed: SEED,
    };
    let reports = hit_probability_targets(&sc, &[near, far.clone()])?;
    let near_ok = reports[0].all_positive();
    let control_model = Model::Bounded(DriftModel::zero(&s));
    let mut control_ok = true;
    let mut far_positive = 0;
    for p in &reports[1].probes {
        if p.verdict == Verdict::Positive {
            far_positive += 1;
        }
        let c = gaussian_control(&control_model, &s, &initial, &far, p.time, 20_000, SEED)?;
        control_ok &= c.value > 0.0;
    }
    outcome(
        near_ok && control_ok,
        format!(
            "K_1(0): {}/6 positive; K_1(3e_1): {far_positive}/6 positive, {} inconclusive; zero-drift control positive at all probes: {control_ok}",
            reports[0].probes.iter().filter(|p| p.verdict == Verdict::Positive).count(),
            6 - far_positive
        ),
    )
}

fn lower_bound_statistic() -> Result<Outcome> {
    let d = 16;
    let s = CovarianceSpectrum::poly2(d)?;
    let zero = DriftModel::zero(&s);
    let consts = c_constant(1.0, 1.0, &s, &zero)?;
    let sim = Simulation::new(
        Model::Bounded(zero),
        s.clone(),
        InitialLaw::shell(SpectralVector::zeros(d), 1.0, 0.5)?,
        TimeGrid::covering(1.0, 1e-3)?,
        10_000,
        SEED,
    )
    .with_record(Record::Steps(vec![]));
    let (_, diags) = sim.run_observed(|_| PathDiagnostics::new(s.q(), 0.0, false))?;
    let min = diags
        .iter()
        .map(|d| d.min_discounted_integral())
        .fold(f64::INFINITY, f64::min);
    let floor = -consts.c - 0.1;
    outcome(min >= floor, format!("min = {min:.4} >= -C(1,1) - 0.1 = {floor:.4}"))
}

fn novikov() -> Result<Outcome> {
    let r = novikov_demo(1.0, 1e-4, 1000, SEED)?;
    outcome(
        r.residual_euler <= 0.1 && r.min_integral_euler >= -1.01,
        format!(
            "max residual = {:.4} (corrected {:.2e}), min integral = {:.4}, min u = {:.2e}",
            r.residual_euler, r.residual_milstein, r.min_integral_euler, r.min_u
        ),
    )
}

fn oracle_equivalence() -> Result<Outcome> {
    let s = CovarianceSpectrum::poly2(1)?;
    let f = DriftModel::tanh(&s);
    let model = Model::Bounded(f.clone());
    let law = InitialLaw::gaussian(SpectralVector::new(vec![0.5])?, vec![0.09])?;
    let batch = Simulation::new(model.clone(), s.clone(), law.clone(), TimeGrid::covering(1.0, 1e-3)?, 100_000, SEED)
        .with_record(Record::Steps(vec![1000]))
        .run()?;
    let l = default_half_width(1.0, 1.0, 0.5, f.sup_h());
    let rho0 = GridDensity::from_initial(&law, l, 200)?;
    let dt = stable_step(&rho0, &model, s.q())?;
    let fp = evolve_fp(&rho0, &model, s.q(), 1.0, dt)?;
    let tv = compare_mc_fp(&batch, &model, &fp.density, &model, 1.0, &[0])?;
    outcome(
        tv.total_variation <= 0.05 && fp.mass_drift <= 1e-6,
        format!("TV = {:.4}, mass drift = {:.1e}", tv.total_variation, fp.mass_drift),
    )
}

fn weak_identity() -> Result<Outcome> {
    let d = 2;
    let s = CovarianceSpectrum::poly2(d)?;
    let f = DriftModel::tanh(&s);
    let models = [
        Model::Bounded(f.clone()),
        Model::Linear {
            operator: LinearOperator::heat(d),
            drift: f,
        },
    ];
    let law = InitialLaw::gaussian(SpectralVector::zeros(d), vec![0.25; d])?;
    let h = 1e-3;
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for model in &models {
        let batch = Simulation::new(model.clone(), s.clone(), law.clone(), TimeGrid::covering(1.0, h)?, 10_000, SEED)
            .with_record(Record::Every(10))
            .run()?;
        for i in 0..CATALOG_SIZE {
            let phi = CylindricalTestFunction::catalog(i)?;
            let r = weak_identity_residual(&batch, &phi, model, &s, 1.0)?;
            let limit = 3.0 * r.std_error + 10.0 * h;
            pass &= r.residual <= limit;
            worst = worst.max(r.residual / limit);
        }
    }
    outcome(pass, format!("max residual / (3 SE + 10h) = {worst:.3} over 3 functions x 2 models"))
}

fn determinism_and_shift() -> Result<Outcome> {
    let d = 8;
    let s = CovarianceSpectrum::poly2(d)?;
    let sims = [
        Simulation::new(
            Model::Bounded(DriftModel::non_lipschitz(&s)),
            s.clone(),
            InitialLaw::shell(SpectralVector::zeros(d), 2.0, 0.5)?,
            TimeGrid::covering(0.5, 1e-2)?,
            2000,
            SEED,
        ),
        Simulation::new(
            Model::Linear {
                operator: LinearOperator::heat(d),
                drift: DriftModel::tanh(&s),
            },
            s.clone(),
            InitialLaw::gaussian(SpectralVector::zeros(d), vec![1.0; d])?,
            TimeGrid::covering(0.5, 1e-2)?,
            2000,
            SEED,
        ),
    ];
    let mut identical = true;
    for sim in &sims {
        let mut runs = Vec::new();
        for threads in [1, 3, 8] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("thread pool");
            runs.push(pool.install(|| sim.run())?);
        }
        identical &= runs.windows(2).all(|w| w[0] == w[1]);
    }
    let sc = Scenario {
        model: Model::Bounded(DriftModel::tanh(&s)),
        spectrum: s.clone(),
        initial: InitialLaw::shell(SpectralVector::zeros(d), 2.0, 0.5)?,
        target: Ellipsoid::new(SpectralVector::zeros(d), 1.0, s.clone())?,
        horizon: 1.0,
        step: 1e-2,
        probes: vec![0.5, 1.0],
        paths: 1000,
        seed: SEED,
    };
    let shift = shift_experiment(&sc, &basis(d, 0, 2.0))?;
    outcome(
        identical && shift.max_deviation <= 1e-12 && shift.counts_equal,
        format!(
            "bit-identical across 1/3/8 threads: {identical}; shift deviation = {:.2e}",
            shift.max_deviation
        ),
    )
}

type Check = fn() -> Result<Outcome>;

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("Q-Wiener covariance", wiener_covariance_check),
        ("OU exactness of the mild integrator", ou_exactness),
        ("quadratic variation of the projected martingale", quadratic_variation),
        ("staying bound up to tau(R)", lemma_staying_bound),
        ("positivity sweep", positivity_sweep),
        ("lower-bound statistic", lower_bound_statistic),
        ("exponential martingale", novikov),
        ("Monte Carlo vs Fokker-Planck", oracle_equivalence),
        ("weak identity", weak_identity),
        ("determinism and shift equivariance", determinism_and_shift),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({}; {:.1} s)",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
