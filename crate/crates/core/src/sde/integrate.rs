//! Euler–Maruyama and exponential (mild) integrators.
//!
//! Both schemes consume the same standard normals `Z_j` per step (see
//! [`crate::noise`]), so runs that share a seed are pathwise coupled:
//! the Euler–Maruyama increment is `sqrt(q_j h) Z_j` and the mild scheme's
//! stochastic-convolution increment is `sqrt(q_j (1 - e^{-2 a_j h}) / (2 a_j)) Z_j`.

use rayon::prelude::*;

use crate::batch::{NoiseRef, Record, Scheme, TimeGrid, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::noise::{stream_rng, Purpose};
use crate::q_wiener::IncrementStream;
use crate::scalar::Real;
use crate::spectral_space::{CovarianceSpectrum, SpectralVector};

use super::{DriftModel, InitialLaw, LinearOperator};

/// Drift structure of the simulated equation.
#[derive(Debug, Clone, PartialEq)]
pub enum Model<T> {
    /// `dX = dW + F(X) dt`.
    Bounded(DriftModel<T>),
    /// `dX = dW + (AX + F(X)) dt` with diagonal negative `A`.
    Linear {
        operator: LinearOperator<T>,
        drift: DriftModel<T>,
    },
}

impl<T: Real> Model<T> {
    pub fn drift(&self) -> &DriftModel<T> {
        match self {
            Model::Bounded(f) => f,
            Model::Linear { drift, .. } => drift,
        }
    }

    pub fn operator(&self) -> Option<&LinearOperator<T>> {
        match self {
            Model::Bounded(_) => None,
            Model::Linear { operator, .. } => Some(operator),
        }
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            Model::Bounded(_) => Scheme::EulerMaruyama,
            Model::Linear { .. } => Scheme::ExponentialMild,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Bounded(_) => "bounded",
            Model::Linear { .. } => "linear",
        }
    }

    pub fn with_drift(&self, drift: DriftModel<T>) -> Self {
        match self {
            Model::Bounded(_) => Model::Bounded(drift),
            Model::Linear { operator, .. } => Model::Linear {
                operator: operator.clone(),
                drift,
            },
        }
    }

    /// Coordinates of `B(x) = Ax + F(x)`.
    pub fn full_drift_into(&self, x: &[T], out: &mut [T]) {
        self.drift().evaluate_into(x, out);
        if let Some(op) = self.operator() {
            for ((o, &a), &v) in out.iter_mut().zip(op.rates()).zip(x) {
                *o -= a * v;
            }
        }
    }
}

/// Everything an observer can see about one step `t_k -> t_{k+1}`.
#[derive(Debug)]
pub struct StepContext<'a, T> {
    pub path: usize,
    /// Index of the left grid point.
    pub step: usize,
    pub time: T,
    pub h: T,
    pub state: &'a [T],
    /// Wiener increment `W_{t_{k+1}} - W_{t_k}`.
    pub dw: &'a [T],
    /// `F(X_{t_k})`.
    pub drift: &'a [T],
    /// Per-mode weight of the frozen drift: `h` (Euler–Maruyama) or
    /// `(1 - e^{-a_j h}) / a_j` (mild).
    pub drift_weight: &'a [T],
    /// Semigroup factors `e^{-a_j h}` for the mild scheme.
    pub decay: Option<&'a [T]>,
    pub next: &'a [T],
}

/// Per-path streaming consumer of integrator steps.
pub trait StepObserver<T>: Send {
    fn observe(&mut self, ctx: &StepContext<'_, T>);
}

impl<T> StepObserver<T> for () {
    fn observe(&mut self, _: &StepContext<'_, T>) {}
}

/// Full description of a batch integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation<T> {
    pub model: Model<T>,
    pub spectrum: CovarianceSpectrum<T>,
    pub initial: InitialLaw<T>,
    pub grid: TimeGrid<T>,
    pub paths: usize,
    pub seed: u64,
    /// Path `i` uses noise stream `stream_base + i`.
    pub stream_base: u64,
    pub record: Record,
}

impl<T: Real> Simulation<T> {
    pub fn new(
        model: Model<T>,
        spectrum: CovarianceSpectrum<T>,
        initial: InitialLaw<T>,
        grid: TimeGrid<T>,
        paths: usize,
        seed: u64,
    ) -> Self {
        Self {
            model,
            spectrum,
            initial,
            grid,
            paths,
            seed,
            stream_base: 0,
            record: Record::All,
        }
    }

    pub fn with_record(mut self, record: Record) -> Self {
        self.record = record;
        self
    }

    pub fn with_stream_base(mut self, base: u64) -> Self {
        self.stream_base = base;
        self
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        let mismatch = |got| Err(Error::Dimension { expected: d, got });
        if self.model.drift().dim() != d {
            return mismatch(self.model.drift().dim());
        }
        if let Some(op) = self.model.operator() {
            if op.dim() != d {
                return mismatch(op.dim());
            }
        }
        if self.initial.dim() != d {
            return mismatch(self.initial.dim());
        }
        if self.paths == 0 {
            return Err(Error::Precondition("need at least one path".into()));
        }
        Ok(())
    }

    pub fn run(&self) -> Result<TrajectoryBatch<T>> {
        Ok(self.run_observed(|_| ())?.0)
    }

    /// Integrates every path, feeding each step to the observer built by
    /// `make(path)`. Results are ordered by path index regardless of how
    /// rayon schedules the work.
    pub fn run_observed<O, M>(&self, make: M) -> Result<(TrajectoryBatch<T>, Vec<O>)>
    where
        O: StepObserver<T>,
        M: Fn(usize) -> O + Sync,
    {
        self.validate()?;
        let slots = self.record.resolve(self.grid.steps());
        let coeffs = StepCoefficients::new(&self.model, &self.spectrum, self.grid.step());
        let results: Vec<(Vec<T>, O)> = (0..self.paths)
            .into_par_iter()
            .map(|p| {
                let mut obs = make(p);
                let states = self.integrate_path(p, &slots, &coeffs, &mut obs)?;
                Ok((states, obs))
            })
            .collect::<Result<_>>()?;
        let mut states = Vec::with_capacity(self.paths * slots.len() * self.dim());
        let mut observers = Vec::with_capacity(self.paths);
        for (s, o) in results {
            states.extend_from_slice(&s);
            observers.push(o);
        }
        let batch = TrajectoryBatch::from_parts(
            self.grid,
            slots,
            self.dim(),
            states,
            NoiseRef {
                seed: self.seed,
                first_stream: self.stream_base,
                paths: self.paths,
            },
            self.model.scheme(),
        );
        Ok((batch, observers))
    }

    fn integrate_path<O: StepObserver<T>>(
        &self,
        path: usize,
        slots: &[usize],
        c: &StepCoefficients<T>,
        obs: &mut O,
    ) -> Result<Vec<T>> {
        let d = self.dim();
        let stream = self.stream_base + path as u64;
        let mut init_rng = stream_rng(self.seed, Purpose::Initial, stream);
        let mut noise = IncrementStream::new(&self.spectrum, self.seed, stream);
        let drift = self.model.drift();
        let h = self.grid.step();

        let mut x = vec![T::zero(); d];
        self.initial
            .sample_into(&self.spectrum, path, self.paths, &mut init_rng, &mut x)?;
        let mut next = vec![T::zero(); d];
        let mut z = vec![T::zero(); d];
        let mut dw = vec![T::zero(); d];
        let mut f = vec![T::zero(); d];

        let mut out = Vec::with_capacity(slots.len() * d);
        let mut slot = 0;
        if slots.first() == Some(&0) {
            out.extend_from_slice(&x);
            slot = 1;
        }
        for k in 0..self.grid.steps() {
            noise.next_standard(&mut z);
            noise.scale_into(h, &z, &mut dw);
            drift.evaluate_into(&x, &mut f);
            match &c.decay {
                None => {
                    for j in 0..d {
                        next[j] = x[j] + dw[j] + h * f[j];
                    }
                }
                Some(decay) => {
                    for j in 0..d {
                        next[j] = decay[j] * x[j] + c.noise_scale[j] * z[j] + c.drift_weight[j] * f[j];
                    }
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    scheme: match c.decay {
                        None => "euler_maruyama",
                        Some(_) => "exponential_mild",
                    },
                    path,
                    step: k + 1,
                });
            }
            obs.observe(&StepContext {
                path,
                step: k,
                time: self.grid.time(k),
                h,
                state: &x,
                dw: &dw,
                drift: &f,
                drift_weight: &c.drift_weight,
                decay: c.decay.as_deref(),
                next: &next,
            });
            std::mem::swap(&mut x, &mut next);
            if slot < slots.len() && slots[slot] == k + 1 {
                out.extend_from_slice(&x);
                slot += 1;
            }
        }
        Ok(out)
    }
}

/// Per-mode constants of one step of either scheme.
struct StepCoefficients<T> {
    drift_weight: Vec<T>,
    decay: Option<Vec<T>>,
    noise_scale: Vec<T>,
}

impl<T: Real> StepCoefficients<T> {
    fn new(model: &Model<T>, spectrum: &CovarianceSpectrum<T>, h: T) -> Self {
        let d = spectrum.dim();
        match model.operator() {
            None => Self {
                drift_weight: vec![h; d],
                decay: None,
                noise_scale: spectrum.q().iter().map(|&q| (q * h).sqrt()).collect(),
            },
            Some(op) => Self {
                drift_weight: (0..d).map(|j| op.phi1(j, h)).collect(),
                decay: Some((0..d).map(|j| op.decay(j, h)).collect()),
                noise_scale: spectrum
                    .q()
                    .iter()
                    .enumerate()
                    .map(|(j, &q)| (q * op.convolution_factor(j, h)).sqrt())
                    .collect(),
            },
        }
    }
}

/// Euler–Maruyama for `dX = dW + F(X) dt` over `[0, T]`, recording every step.
pub fn integrate_bounded<T: Real>(
    law: &InitialLaw<T>,
    drift: &DriftModel<T>,
    spectrum: &CovarianceSpectrum<T>,
    horizon: T,
    h: T,
    paths: usize,
    seed: u64,
) -> Result<TrajectoryBatch<T>> {
    Simulation::new(
        Model::Bounded(drift.clone()),
        spectrum.clone(),
        law.clone(),
        TimeGrid::covering(horizon, h)?,
        paths,
        seed,
    )
    .run()
}

/// Exponential Euler for `dX = dW + (AX + F(X)) dt`, recording every step.
#[allow(clippy::too_many_arguments)]
pub fn integrate_mild<T: Real>(
    law: &InitialLaw<T>,
    operator: &LinearOperator<T>,
    drift: &DriftModel<T>,
    spectrum: &CovarianceSpectrum<T>,
    horizon: T,
    h: T,
    paths: usize,
    seed: u64,
) -> Result<TrajectoryBatch<T>> {
    Simulation::new(
        Model::Linear {
            operator: operator.clone(),
            drift: drift.clone(),
        },
        spectrum.clone(),
        law.clone(),
        TimeGrid::covering(horizon, h)?,
        paths,
        seed,
    )
    .run()
}

/// Exact increment of the stochastic convolution over `h` driven by the
/// standard normals `noise`.
pub fn stochastic_convolution_increment<T: Real>(
    operator: &LinearOperator<T>,
    spectrum: &CovarianceSpectrum<T>,
    h: T,
    noise: &[T],
) -> Result<SpectralVector<T>> {
    spectrum.check_dim(noise.len())?;
    spectrum.check_dim(operator.dim())?;
    crate::error::precondition(h >= T::zero(), || format!("h must be nonnegative, got {h}"))?;
    SpectralVector::new(
        spectrum
            .q()
            .iter()
            .zip(noise)
            .enumerate()
            .map(|(j, (&q, &z))| (q * operator.convolution_factor(j, h)).sqrt() * z)
            .collect(),
    )
}

/// Per-mode variance of the stochastic convolution at time `t`.
pub fn convolution_variance<T: Real>(operator: &LinearOperator<T>, spectrum: &CovarianceSpectrum<T>, j: usize, t: T) -> T {
    spectrum.q()[j] * operator.convolution_factor(j, t)
}

/// Empirical law of the batch at grid time `t0`, for restarting on fresh
/// noise streams.
pub fn restart_from<T: Real>(batch: &TrajectoryBatch<T>, t0: T) -> Result<InitialLaw<T>> {
    let slot = batch.slot_of_time(t0)?;
    InitialLaw::empirical(batch.marginal_vectors(slot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_se;

    fn poly(d: usize) -> CovarianceSpectrum<f64> {
        CovarianceSpectrum::poly2(d).unwrap()
    }

    #[test]
    fn zero_drift_reproduces_the_wiener_path() {
        let s = poly(4);
        let x0 = SpectralVector::new(vec![0.5, -1.0, 0.0, 2.0]).unwrap();
        let batch = integrate_bounded(&InitialLaw::dirac(x0.clone()), &DriftModel::zero(&s), &s, 0.5, 0.01, 8, 3).unwrap();
        let grid = *batch.grid();
        let w = crate::q_wiener::sample_paths(&s, grid, 8, 3, &Record::All);
        for p in 0..8 {
            for slot in 0..=grid.steps() {
                for (j, (&x, &wv)) in batch.state(p, slot).iter().zip(w.state(p, slot)).enumerate() {
                    assert!((x - (x0[j] + wv)).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn constant_drift_mean() {
        let s = poly(3);
        let f = DriftModel::constant(&s, 0.7);
        let law = InitialLaw::gaussian(SpectralVector::new(vec![1.0, 0.0, 0.0]).unwrap(), vec![0.5; 3]).unwrap();
        let sim = Simulation::new(Model::Bounded(f), s, law, TimeGrid::covering(2.0, 0.01).unwrap(), 10_000, 8)
            .with_record(Record::Steps(vec![200]));
        let b = sim.run().unwrap();
        let e = mean_se(b.marginal(1).map(|x| x[0]));
        assert!(e.agrees_with(1.0 + 0.7 * 2.0, 3.0), "{e:?}");
    }

    #[test]
    fn determinism_is_bitwise() {
        let s = poly(4);
        let law = InitialLaw::shell(SpectralVector::zeros(4), 2.0, 0.5).unwrap();
        let sim = Simulation::new(
            Model::Bounded(DriftModel::non_lipschitz(&s)),
            s,
            law,
            TimeGrid::covering(0.2, 0.01).unwrap(),
            50,
            99,
        );
        assert_eq!(sim.run().unwrap(), sim.run().unwrap());
    }

    #[test]
    fn convolution_increment_examples() {
        let s = CovarianceSpectrum::custom(vec![1.0, 0.5]).unwrap();
        let op = LinearOperator::heat(2);
        let zero = stochastic_convolution_increment(&op, &s, 0.0, &[1.3, -0.2]).unwrap();
        assert_eq!(zero.coords(), &[0.0, 0.0]);
        let v = convolution_variance(&op, &s, 0, 1.0);
        assert!((v - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-15);
        assert!((v - 0.432332).abs() < 1e-6);
        let small = convolution_variance(&op, &s, 1, 1e-6);
        assert!((small - 0.5e-6).abs() / 0.5e-6 < 1e-5);
        assert!(stochastic_convolution_increment(&op, &s, 1.0, &[1.0]).is_err());
    }

    #[test]
    fn restart_requires_grid_time() {
        let s = poly(2);
        let b = integrate_bounded(&InitialLaw::dirac(SpectralVector::zeros(2)), &DriftModel::tanh(&s), &s, 1.0, 0.1, 5, 0).unwrap();
        let law = restart_from(&b, 0.0).unwrap();
        assert_eq!(law, InitialLaw::Empirical(vec![SpectralVector::zeros(2); 5]));
        assert!(matches!(restart_from(&b, 0.55), Err(Error::OffGrid { .. })));
        assert!(restart_from(&b, 0.5).is_ok());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = poly(3);
        let r = integrate_bounded(&InitialLaw::dirac(SpectralVector::zeros(2)), &DriftModel::zero(&s), &s, 1.0, 0.1, 5, 0);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}
