//! Q-Wiener process through its eigen-expansion: coordinate `j` of an
//! increment over `dt` is `sqrt(q_j dt) Z_j` with independent standard
//! normals `Z_j`.

use rayon::prelude::*;

use crate::batch::{NoiseRef, Record, Scheme, TimeGrid, TrajectoryBatch};
use crate::error::{precondition, Result};
use crate::noise::{NormalStream, Purpose};
use crate::scalar::Real;
use crate::spectral_space::{dot, CovarianceSpectrum, SpectralVector};
use crate::stats::{mean_se, Estimate, Proportion};

#[derive(Debug, Clone, PartialEq)]
pub struct WienerConfig<T> {
    pub spectrum: CovarianceSpectrum<T>,
    pub seed: u64,
    pub stream_id: u64,
}

impl<T: Real> WienerConfig<T> {
    pub fn new(spectrum: CovarianceSpectrum<T>, seed: u64, stream_id: u64) -> Self {
        Self {
            spectrum,
            seed,
            stream_id,
        }
    }

    pub fn increments(&self) -> IncrementStream<T> {
        IncrementStream::new(&self.spectrum, self.seed, self.stream_id)
    }
}

/// Successive increments of one trajectory's noise.
#[derive(Debug, Clone)]
pub struct IncrementStream<T> {
    sqrt_q: Vec<T>,
    normals: NormalStream,
}

impl<T: Real> IncrementStream<T> {
    pub fn new(spectrum: &CovarianceSpectrum<T>, seed: u64, stream: u64) -> Self {
        Self {
            sqrt_q: spectrum.q().iter().map(|q| q.sqrt()).collect(),
            normals: NormalStream::new(seed, Purpose::Increments, stream),
        }
    }

    pub fn dim(&self) -> usize {
        self.sqrt_q.len()
    }

    /// Next block of `d` standard normals.
    #[inline]
    pub fn next_standard(&mut self, z: &mut [T]) {
        self.normals.fill(z);
    }

    /// Scales standard normals into a Wiener increment over `dt`.
    #[inline]
    pub fn scale_into(&self, dt: T, z: &[T], dw: &mut [T]) {
        let s = dt.sqrt();
        for ((w, &z), &sq) in dw.iter_mut().zip(z).zip(&self.sqrt_q) {
            *w = sq * s * z;
        }
    }

    pub fn next_increment(&mut self, dt: T, dw: &mut [T]) {
        self.normals.fill(dw);
        let s = dt.sqrt();
        for (w, &sq) in dw.iter_mut().zip(&self.sqrt_q) {
            *w *= sq * s;
        }
    }
}

/// First increment over `dt` of the stream addressed by `cfg`.
pub fn sample_increment<T: Real>(cfg: &WienerConfig<T>, dt: T) -> Result<SpectralVector<T>> {
    precondition(dt > T::zero(), || format!("dt must be positive, got {dt}"))?;
    let mut dw = vec![T::zero(); cfg.spectrum.dim()];
    cfg.increments().next_increment(dt, &mut dw);
    SpectralVector::new(dw)
}

/// `paths` Q-Wiener trajectories started at 0; path `i` uses stream `i`.
pub fn sample_paths<T: Real>(
    spectrum: &CovarianceSpectrum<T>,
    grid: TimeGrid<T>,
    paths: usize,
    seed: u64,
    record: &Record,
) -> TrajectoryBatch<T> {
    let dim = spectrum.dim();
    let slots = record.resolve(grid.steps());
    let per_path: Vec<Vec<T>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut inc = IncrementStream::new(spectrum, seed, p as u64);
            let mut w = vec![T::zero(); dim];
            let mut dw = vec![T::zero(); dim];
            let mut out = Vec::with_capacity(slots.len() * dim);
            let mut next_slot = 0;
            for k in 0..=grid.steps() {
                if k > 0 {
                    inc.next_increment(grid.step(), &mut dw);
                    for (a, b) in w.iter_mut().zip(&dw) {
                        *a += *b;
                    }
                }
                if next_slot < slots.len() && slots[next_slot] == k {
                    out.extend_from_slice(&w);
                    next_slot += 1;
                }
            }
            out
        })
        .collect();
    TrajectoryBatch::from_parts(
        grid,
        slots,
        dim,
        per_path.concat(),
        NoiseRef {
            seed,
            first_stream: 0,
            paths,
        },
        Scheme::Exact,
    )
}

/// Monte Carlo estimate of `E <W_t,u><W_s,v>`; `t` and `s` must be recorded
/// grid times.
pub fn empirical_covariance<T: Real>(
    paths: &TrajectoryBatch<T>,
    t: T,
    s: T,
    u: &SpectralVector<T>,
    v: &SpectralVector<T>,
) -> Result<Estimate> {
    let dim = paths.dim();
    for x in [u, v] {
        if x.dim() != dim {
            return Err(crate::Error::Dimension {
                expected: dim,
                got: x.dim(),
            });
        }
    }
    let st = paths.slot_of_time(t)?;
    let ss = paths.slot_of_time(s)?;
    Ok(mean_se((0..paths.paths()).map(|p| {
        let a = dot(paths.state(p, st), u.coords());
        let b = dot(paths.state(p, ss), v.coords());
        (a * b).as_f64()
    })))
}

/// `min(t,s) <Qu, v>`, the covariance the estimator targets.
pub fn wiener_covariance<T: Real>(
    spectrum: &CovarianceSpectrum<T>,
    t: T,
    s: T,
    u: &SpectralVector<T>,
    v: &SpectralVector<T>,
) -> T {
    let quv = spectrum
        .q()
        .iter()
        .zip(u.coords())
        .zip(v.coords())
        .fold(T::zero(), |acc, ((&q, &a), &b)| acc + q * a * b);
    t.min(s) * quv
}

/// Estimate of `P(||W_t|| <= R)` from `n_samples` exact draws of `W_t`.
pub fn gaussian_ball_hit<T: Real>(
    cfg: &WienerConfig<T>,
    t: T,
    radius: T,
    n_samples: usize,
) -> Result<Proportion> {
    precondition(n_samples >= 1000, || {
        format!("need at least 1000 samples, got {n_samples}")
    })?;
    precondition(t > T::zero() && radius > T::zero(), || {
        "t and R must be positive".into()
    })?;
    let mut inc = cfg.increments();
    let mut w = vec![T::zero(); cfg.spectrum.dim()];
    let r2 = radius * radius;
    let mut hits = 0;
    for _ in 0..n_samples {
        inc.next_increment(t, &mut w);
        if dot(&w, &w) <= r2 {
            hits += 1;
        }
    }
    Ok(Proportion::new(hits, n_samples))
}
