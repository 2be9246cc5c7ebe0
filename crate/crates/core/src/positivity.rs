//! Monte Carlo estimates of `P(X_t in K_R(a))` and the experiments around
//! them: the staying time `tau(R)`, chaining over `[0, M]`, and the shift
//! equivariance of the bounded model.
//!
//! A probe is "positive" when the Wilson lower bound of its hit estimate is
//! above zero. Zero hits are "inconclusive": sampling can certify
//! positivity but never refute it.

use serde::Serialize;

use crate::batch::{Record, Scheme, TimeGrid, TrajectoryBatch};
use crate::error::{precondition, Error, Result};
use crate::noise::{stream_rng, NormalStream, Purpose};
use crate::scalar::Real;
use crate::sde::{restart_from, DriftModel, InitialLaw, Model, Simulation, StepContext, StepObserver};
use crate::spectral_space::{CovarianceSpectrum, Ellipsoid, SpectralVector};
use crate::stats::{ks_two_sample, mean_se, normal_interval, Estimate, KsResult, Proportion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TauVariant {
    /// `R / (6 (1 + sup ||F||_Q))`.
    QNorm,
    /// `R / (6 (1 + sup ||F||))`, the smaller of the two.
    HNorm,
}

impl TauVariant {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "q_norm" => Ok(TauVariant::QNorm),
            "h_norm" => Ok(TauVariant::HNorm),
            other => Err(Error::Config(format!(
                "unknown tau variant '{other}' (expected q_norm or h_norm)"
            ))),
        }
    }
}

pub fn tau_of_r<T: Real>(radius: T, drift: &DriftModel<T>, variant: TauVariant) -> Result<T> {
    precondition(radius > T::zero() && radius.is_finite(), || {
        format!("R must be positive, got {radius}")
    })?;
    let sup = match variant {
        TauVariant::QNorm => drift.sup_q(),
        TauVariant::HNorm => drift.sup_h(),
    };
    Ok(radius / (T::of(6.0) * (T::one() + sup)))
}

/// `count` probe times `T 2^{-(count-1-i)}`, geometric in `(0, T]`.
pub fn geometric_probes<T: Real>(horizon: T, count: usize) -> Vec<T> {
    (0..count)
        .map(|i| horizon * T::of(0.5f64.powi((count - 1 - i) as i32)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub model: Model<T>,
    pub spectrum: CovarianceSpectrum<T>,
    pub initial: InitialLaw<T>,
    pub target: Ellipsoid<T>,
    pub horizon: T,
    /// Largest admissible integration step; the grid is refined so that
    /// the horizon is a grid point.
    pub step: T,
    pub probes: Vec<T>,
    pub paths: usize,
    pub seed: u64,
}

impl<T: Real> Scenario<T> {
    pub fn validate(&self) -> Result<()> {
        let d = self.spectrum.dim();
        for got in [self.initial.dim(), self.target.center().dim(), self.model.drift().dim()] {
            if got != d {
                return Err(Error::Dimension { expected: d, got });
            }
        }
        precondition(!self.probes.is_empty(), || "at least one probe time is required".into())?;
        precondition(
            self.probes.iter().all(|&t| t > T::zero() && t <= self.horizon),
            || format!("probe times must lie in (0, {}]", self.horizon),
        )?;
        precondition(self.paths > 0, || "need at least one path".into())?;
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid<T>> {
        TimeGrid::covering(self.horizon, self.step)
    }

    fn simulation(&self, grid: TimeGrid<T>, record: Record) -> Simulation<T> {
        Simulation::new(
            self.model.clone(),
            self.spectrum.clone(),
            self.initial.clone(),
            grid,
            self.paths,
            self.seed,
        )
        .with_record(record)
    }

    pub fn tau(&self, variant: TauVariant) -> Result<T> {
        tau_of_r(self.target.radius(), self.model.drift(), variant)
    }
}

/// Grid steps of the probe times (at least step 1).
fn snap<T: Real>(grid: &TimeGrid<T>, probes: &[T]) -> Vec<usize> {
    probes.iter().map(|&t| grid.nearest_index(t).max(1)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Positive,
    Inconclusive,
}

impl Verdict {
    pub fn of(p: &Proportion) -> Self {
        if p.ci.lower > 0.0 {
            Verdict::Positive
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub requested_time: f64,
    /// Grid time actually used.
    pub time: f64,
    pub step: usize,
    pub hit: Proportion,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityReport {
    pub model: &'static str,
    pub drift: &'static str,
    pub scheme: Scheme,
    pub dim: usize,
    pub paths: usize,
    pub seed: u64,
    pub target_center: Vec<f64>,
    pub target_radius: f64,
    pub tau_q: f64,
    pub tau_h: f64,
    pub probes: Vec<ProbeResult>,
}

impl PositivityReport {
    /// Some probe saw no hits.
    pub fn inconclusive(&self) -> bool {
        self.probes.iter().any(|p| p.verdict == Verdict::Inconclusive)
    }

    pub fn all_positive(&self) -> bool {
        !self.inconclusive()
    }
}

/// Hit counts of `target` at the given grid steps of a batch.
pub fn probe_hits<T: Real>(
    batch: &TrajectoryBatch<T>,
    target: &Ellipsoid<T>,
    requested: &[T],
    steps: &[usize],
) -> Result<Vec<ProbeResult>> {
    target.spectrum().check_dim(batch.dim())?;
    requested
        .iter()
        .zip(steps)
        .map(|(&t, &k)| {
            let slot = batch.slot_of_step(k).ok_or(Error::OffGrid {
                time: t.as_f64(),
                spacing: batch.grid().step().as_f64(),
            })?;
            let hits = batch.marginal(slot).filter(|x| target.contains_coords(x)).count();
            let hit = Proportion::new(hits, batch.paths());
            Ok(ProbeResult {
                requested_time: t.as_f64(),
                time: batch.grid().time(k).as_f64(),
                step: k,
                verdict: Verdict::of(&hit),
                hit,
            })
        })
        .collect()
}

fn report<T: Real>(s: &Scenario<T>, target: &Ellipsoid<T>, probes: Vec<ProbeResult>) -> Result<PositivityReport> {
    Ok(PositivityReport {
        model: s.model.kind_name(),
        drift: s.model.drift().name(),
        scheme: s.model.scheme(),
        dim: s.spectrum.dim(),
        paths: s.paths,
        seed: s.seed,
        target_center: target.center().coords().iter().map(|v| v.as_f64()).collect(),
        target_radius: target.radius().as_f64(),
        tau_q: tau_of_r(target.radius(), s.model.drift(), TauVariant::QNorm)?.as_f64(),
        tau_h: tau_of_r(target.radius(), s.model.drift(), TauVariant::HNorm)?.as_f64(),
        probes,
    })
}

/// Estimates `P(X_t in K_R(a))` at every probe time.
pub fn hit_probability<T: Real>(scenario: &Scenario<T>) -> Result<PositivityReport> {
    let target = scenario.target.clone();
    Ok(hit_probability_targets(scenario, &[target])?.remove(0))
}

/// Like [`hit_probability`] for several targets on one shared batch.
pub fn hit_probability_targets<T: Real>(
    scenario: &Scenario<T>,
    targets: &[Ellipsoid<T>],
) -> Result<Vec<PositivityReport>> {
    scenario.validate()?;
    let grid = scenario.grid()?;
    let steps = snap(&grid, &scenario.probes);
    let batch = scenario.simulation(grid, Record::Steps(steps.clone())).run()?;
    targets
        .iter()
        .map(|target| {
            let probes = probe_hits(&batch, target, &scenario.probes, &steps)?;
            report(scenario, target, probes)
        })
        .collect()
}

/// Accumulates the drift part of the solution: `h sum F(X)` for
/// Euler–Maruyama, `D <- e^{-a h} D + phi_1 F(X)` for the mild scheme, and
/// tracks the largest Q-norm it reaches up to `until` steps.
#[derive(Debug, Clone)]
pub struct DriftIntegral<'a, T> {
    q: &'a [T],
    until: usize,
    acc: Vec<T>,
    max_q_norm: T,
}

impl<'a, T: Real> DriftIntegral<'a, T> {
    pub fn new(q: &'a [T], until: usize) -> Self {
        Self {
            q,
            until,
            acc: vec![T::zero(); q.len()],
            max_q_norm: T::zero(),
        }
    }

    pub fn max_q_norm(&self) -> T {
        self.max_q_norm
    }
}

impl<T: Real> StepObserver<T> for DriftIntegral<'_, T> {
    fn observe(&mut self, ctx: &StepContext<'_, T>) {
        if ctx.step >= self.until {
            return;
        }
        for j in 0..self.acc.len() {
            let decayed = match ctx.decay {
                Some(e) => e[j] * self.acc[j],
                None => self.acc[j],
            };
            self.acc[j] = decayed + ctx.drift_weight[j] * ctx.drift[j];
        }
        let n = self
            .q
            .iter()
            .zip(&self.acc)
            .fold(T::zero(), |s, (&q, &v)| s + q * v * v)
            .sqrt();
        self.max_q_norm = self.max_q_norm.max(n);
    }
}

/// Draws used to check that an initial law sits inside `K_{R/2}(a)`.
const SUPPORT_DRAWS: usize = 10_000;

fn check_support<T: Real>(
    law: &InitialLaw<T>,
    spectrum: &CovarianceSpectrum<T>,
    inner: &Ellipsoid<T>,
    seed: u64,
) -> Result<()> {
    let draws = match law {
        InitialLaw::Dirac(_) => 1,
        InitialLaw::Empirical(s) => s.len(),
        _ => SUPPORT_DRAWS,
    };
    let mut x = vec![T::zero(); spectrum.dim()];
    for i in 0..draws {
        let mut rng = stream_rng(seed, Purpose::Initial, i as u64);
        law.sample_into(spectrum, i, draws, &mut rng, &mut x)?;
        if !inner.contains_coords(&x) {
            return Err(Error::Precondition(format!(
                "initial law is not supported in K_R/2(a): draw {i} lies outside"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaProbe {
    pub requested_time: f64,
    pub time: f64,
    /// `||X_t - X_0||_Q > R/2`.
    pub escape: Proportion,
    pub escape_upper_below_one: bool,
    pub hit: Proportion,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub radius: f64,
    pub variant: TauVariant,
    pub tau: f64,
    pub tau_q: f64,
    pub tau_h: f64,
    pub step: f64,
    pub paths: usize,
    pub drift_integral_max: f64,
    pub drift_integral_bound: f64,
    pub drift_slack: f64,
    pub drift_ok: bool,
    pub probes: Vec<LemmaProbe>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.drift_ok
            && self
                .probes
                .iter()
                .all(|p| p.escape_upper_below_one && p.verdict == Verdict::Positive)
    }

    pub fn inconclusive(&self) -> bool {
        self.probes.iter().any(|p| p.verdict == Verdict::Inconclusive)
    }
}

/// Checks the staying-time bound on `(0, tau(R)]` for an initial law
/// supported in `K_{R/2}(a)`: the drift integral stays within `R/6 + 10h`,
/// the escape probability is below one and the hit estimate is positive.
pub fn lemma_stay_check<T: Real>(scenario: &Scenario<T>, variant: TauVariant) -> Result<LemmaReport> {
    scenario.validate()?;
    let radius = scenario.target.radius();
    let tau = scenario.tau(variant)?;
    let last = scenario.probes.iter().copied().fold(T::zero(), T::max);
    precondition(last <= tau * T::of(1.0 + 1e-9), || {
        format!("probe time {last} exceeds tau(R) = {tau}")
    })?;
    let half = radius / T::of(2.0);
    let inner = Ellipsoid::new(scenario.target.center().clone(), half, scenario.spectrum.clone())?;
    check_support(&scenario.initial, &scenario.spectrum, &inner, scenario.seed)?;

    let grid = TimeGrid::covering(last, scenario.step)?;
    let steps = snap(&grid, &scenario.probes);
    let until = *steps.iter().max().expect("probes validated");
    let q = scenario.spectrum.q();
    let (batch, obs) = scenario
        .simulation(grid, Record::Steps(steps.clone()))
        .run_observed(|_| DriftIntegral::new(q, until))?;
    let drift_max = obs.iter().map(|o| o.max_q_norm()).fold(T::zero(), T::max);
    let bound = radius / T::of(6.0);
    let slack = T::of(10.0) * grid.step();

    let mut probes = Vec::with_capacity(steps.len());
    for (&t, &k) in scenario.probes.iter().zip(&steps) {
        let slot = batch.slot_of_step(k).expect("probe recorded");
        let mut escapes = 0;
        let mut hits = 0;
        for p in 0..batch.paths() {
            let x = batch.state(p, slot);
            let x0 = batch.state(p, 0);
            let d: Vec<T> = x.iter().zip(x0).map(|(&a, &b)| a - b).collect();
            if scenario.spectrum.q_norm_sq_unchecked(&d).sqrt() > half {
                escapes += 1;
            }
            if scenario.target.contains_coords(x) {
                hits += 1;
            }
        }
        let escape = Proportion::new(escapes, batch.paths());
        let hit = Proportion::new(hits, batch.paths());
        probes.push(LemmaProbe {
            requested_time: t.as_f64(),
            time: grid.time(k).as_f64(),
            escape_upper_below_one: escape.ci.upper < 1.0,
            escape,
            verdict: Verdict::of(&hit),
            hit,
        });
    }
    Ok(LemmaReport {
        radius: radius.as_f64(),
        variant,
        tau: tau.as_f64(),
        tau_q: scenario.tau(TauVariant::QNorm)?.as_f64(),
        tau_h: scenario.tau(TauVariant::HNorm)?.as_f64(),
        step: grid.step().as_f64(),
        paths: scenario.paths,
        drift_integral_max: drift_max.as_f64(),
        drift_integral_bound: bound.as_f64(),
        drift_slack: slack.as_f64(),
        drift_ok: drift_max <= bound + slack,
        probes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub tau: f64,
    pub variant: TauVariant,
    /// Number of parts `n = [M / tau]`.
    pub parts: usize,
    pub partition: Vec<f64>,
    pub positivity: PositivityReport,
    /// One verdict per sub-interval `(s_j, s_{j+1}]`.
    pub subintervals: Vec<Verdict>,
    /// Direct run against restart at `s_1`, on `||X_M||_Q`.
    pub restart_time: f64,
    pub ks: KsResult,
    pub restart_agrees: bool,
}

/// Partition `s_j = j tau` of `[0, M]` into `n = [M / tau]` parts, the last
/// one ending at `M`.
pub fn chain_partition<T: Real>(tau: T, horizon: T) -> Result<Vec<T>> {
    precondition(tau > T::zero() && horizon > tau, || {
        format!("chaining needs M > tau(R), got M = {horizon}, tau = {tau}")
    })?;
    let n = ((horizon / tau).as_f64() + 1e-9).floor() as usize;
    let mut s: Vec<T> = (0..=n).map(|j| tau * T::of(j as f64)).collect();
    s[n] = horizon;
    Ok(s)
}

/// Probes every half of each chaining sub-interval of `[0, M]` on one long
/// run, then restarts the empirical law at `s_1` on fresh streams and
/// compares the laws of `||X_M||_Q` by a two-sample KS test at level 1%.
pub fn chain_experiment<T: Real>(scenario: &Scenario<T>, horizon: T, variant: TauVariant) -> Result<ChainReport> {
    let tau = scenario.tau(variant)?;
    let partition = chain_partition(tau, horizon)?;
    let mut probes = Vec::new();
    for w in partition.windows(2) {
        let mid = (w[0] + w[1]) / T::of(2.0);
        probes.push(mid);
        probes.push(w[1]);
    }
    let mut s = scenario.clone();
    s.horizon = horizon;
    s.probes = probes.clone();
    s.validate()?;

    let grid = s.grid()?;
    let steps = snap(&grid, &probes);
    let restart_step = grid.nearest_index(partition[1]).max(1);
    let mut record = steps.clone();
    record.push(restart_step);
    record.push(grid.steps());
    let direct = s.simulation(grid, Record::Steps(record)).run()?;
    let results = probe_hits(&direct, &s.target, &probes, &steps)?;
    let subintervals = results
        .chunks(2)
        .map(|c| {
            if c.iter().all(|r| r.verdict == Verdict::Positive) {
                Verdict::Positive
            } else {
                Verdict::Inconclusive
            }
        })
        .collect();

    let restart_time = grid.time(restart_step);
    let law = restart_from(&direct, restart_time)?;
    let rest = TimeGrid::uniform(grid.step(), grid.steps() - restart_step)?;
    let restarted = Simulation::new(s.model.clone(), s.spectrum.clone(), law, rest, s.paths, s.seed)
        .with_stream_base(s.paths as u64)
        .with_record(Record::Steps(vec![rest.steps()]))
        .run()?;
    let norms = |b: &TrajectoryBatch<T>| -> Vec<f64> {
        let slot = b.recorded_steps().len() - 1;
        b.marginal(slot)
            .map(|x| s.spectrum.q_norm_sq_unchecked(x).sqrt().as_f64())
            .collect()
    };
    let ks = ks_two_sample(&norms(&direct), &norms(&restarted));
    Ok(ChainReport {
        tau: tau.as_f64(),
        variant,
        parts: partition.len() - 1,
        partition: partition.iter().map(|v| v.as_f64()).collect(),
        positivity: report(&s, &s.target, results)?,
        subintervals,
        restart_time: restart_time.as_f64(),
        restart_agrees: ks.p_value >= 0.01,
        ks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub shift: Vec<f64>,
    /// `max |Y_t - (X_t + a)|` over paths, grid times and coordinates.
    pub max_deviation: f64,
    pub original: Vec<ProbeResult>,
    pub shifted: Vec<ProbeResult>,
    pub counts_equal: bool,
}

/// Runs the bounded model and its translate by `a` (drift `F(. - a)`,
/// initial law `eta + a`) on shared noise.
pub fn shift_experiment<T: Real>(scenario: &Scenario<T>, shift: &SpectralVector<T>) -> Result<ShiftReport> {
    scenario.validate()?;
    let Model::Bounded(drift) = &scenario.model else {
        return Err(Error::Precondition(
            "the shift experiment is only defined for the bounded model".into(),
        ));
    };
    scenario.spectrum.check_dim(shift.dim())?;
    let grid = scenario.grid()?;
    let original = scenario.simulation(grid, Record::All).run()?;
    let mut moved = scenario.clone();
    moved.model = Model::Bounded(drift.shifted(shift)?);
    moved.initial = scenario.initial.shifted(shift)?;
    let shifted = moved.simulation(grid, Record::All).run()?;

    let n = original.recorded_steps().len();
    let mut dev = T::zero();
    for p in 0..original.paths() {
        for slot in 0..n {
            for ((&x, &y), &a) in original.state(p, slot).iter().zip(shifted.state(p, slot)).zip(shift.coords()) {
                dev = dev.max((y - (x + a)).abs());
            }
        }
    }
    let steps = snap(&grid, &scenario.probes);
    let moved_target = Ellipsoid::new(
        scenario.target.center() + shift,
        scenario.target.radius(),
        scenario.spectrum.clone(),
    )?;
    let a = probe_hits(&original, &scenario.target, &scenario.probes, &steps)?;
    let b = probe_hits(&shifted, &moved_target, &scenario.probes, &steps)?;
    let counts_equal = a.iter().zip(&b).all(|(x, y)| x.hit.hits == y.hit.hits);
    Ok(ShiftReport {
        shift: shift.coords().iter().map(|v| v.as_f64()).collect(),
        max_deviation: dev.as_f64(),
        original: a,
        shifted: b,
        counts_equal,
    })
}

/// `P(X_t in K_R(c))` for zero drift, where `X_t` given `X_0` is Gaussian
/// with independent modes (Brownian or Ornstein–Uhlenbeck). Coordinate 1
/// is integrated exactly given the others; the remaining randomness
/// (`X_0` and modes `2..d`) is averaged over `samples` draws.
pub fn gaussian_control<T: Real>(
    model: &Model<T>,
    spectrum: &CovarianceSpectrum<T>,
    initial: &InitialLaw<T>,
    target: &Ellipsoid<T>,
    t: T,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    precondition(model.drift().is_zero(), || {
        "the Gaussian control needs zero drift".into()
    })?;
    precondition(t > T::zero() && samples > 0, || "need t > 0 and samples > 0".into())?;
    let d = spectrum.dim();
    spectrum.check_dim(initial.dim())?;
    spectrum.check_dim(target.center().dim())?;
    let q = spectrum.q();
    let (decay, sd): (Vec<f64>, Vec<f64>) = (0..d)
        .map(|j| match model.operator() {
            None => (1.0, (q[j] * t).sqrt().as_f64()),
            Some(op) => (
                op.decay(j, t).as_f64(),
                (q[j] * op.convolution_factor(j, t)).sqrt().as_f64(),
            ),
        })
        .unzip();
    let c: Vec<f64> = target.center().coords().iter().map(|v| v.as_f64()).collect();
    let r2 = (target.radius() * target.radius()).as_f64();
    let mut x0 = vec![T::zero(); d];
    let mut z = vec![0.0f64; d];
    let values = (0..samples).map(|i| {
        let mut rng = stream_rng(seed, Purpose::Initial, i as u64);
        initial
            .sample_into(spectrum, i, samples, &mut rng, &mut x0)
            .expect("initial law validated");
        NormalStream::new(seed, Purpose::Auxiliary, i as u64).fill(&mut z[1..]);
        let mut rest = 0.0;
        for j in 1..d {
            let y = decay[j] * x0[j].as_f64() + sd[j] * z[j] - c[j];
            rest += q[j].as_f64() * y * y;
        }
        if rest >= r2 {
            return 0.0;
        }
        // q_1 = 1
        let r = (r2 - rest).sqrt();
        let m = decay[0] * x0[0].as_f64();
        normal_interval((c[0] - m - r) / sd[0], (c[0] - m + r) / sd[0])
    });
    Ok(mean_se(values.collect::<Vec<_>>()))
}
