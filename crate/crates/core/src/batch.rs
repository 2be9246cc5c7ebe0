//! Time grids and batches of sampled trajectories.

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{precondition, Error, Result};
use crate::scalar::Real;
use crate::spectral_space::{CovarianceSpectrum, SpectralVector};

/// Uniform grid `{0, h, 2h, ..., steps * h}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    step: T,
    steps: usize,
}

impl<T: Real> TimeGrid<T> {
    /// Grid ending exactly at `horizon` whose spacing is the largest value
    /// `<= max_step` that divides the horizon.
    pub fn covering(horizon: T, max_step: T) -> Result<Self> {
        precondition(max_step > T::zero() && max_step.is_finite(), || {
            format!("step must be positive, got {max_step}")
        })?;
        precondition(horizon >= max_step, || {
            format!("horizon {horizon} must be at least one step {max_step}")
        })?;
        let ratio = (horizon / max_step).as_f64();
        let steps = (ratio - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            step: horizon / T::of(steps as f64),
            steps,
        })
    }

    pub fn uniform(step: T, steps: usize) -> Result<Self> {
        precondition(step > T::zero() && step.is_finite(), || {
            format!("step must be positive, got {step}")
        })?;
        Ok(Self { step, steps })
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> T {
        self.time(self.steps)
    }

    #[inline]
    pub fn time(&self, k: usize) -> T {
        self.step * T::of(k as f64)
    }

    /// Index of a grid time; times further than `1e-6 h` from the grid are
    /// refused.
    pub fn index_of(&self, t: T) -> Result<usize> {
        let k = (t / self.step).round();
        let off_grid = || Error::OffGrid {
            time: t.as_f64(),
            spacing: self.step.as_f64(),
        };
        if k < T::zero() || !k.is_finite() {
            return Err(off_grid());
        }
        let k_us = k.as_f64() as usize;
        if k_us > self.steps || (self.time(k_us) - t).abs() > T::of(1e-6) * self.step {
            return Err(off_grid());
        }
        Ok(k_us)
    }

    /// Nearest grid index, clamped to the grid.
    pub fn nearest_index(&self, t: T) -> usize {
        let k = (t / self.step).round().max(T::zero()).as_f64() as usize;
        k.min(self.steps)
    }
}

/// Which steps of an integration are stored in the batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    All,
    /// Every `k`-th step plus the final one.
    Every(usize),
    /// Explicit step indices (step 0 is always added).
    Steps(Vec<usize>),
}

impl Record {
    pub fn resolve(&self, steps: usize) -> Vec<usize> {
        let mut out: Vec<usize> = match self {
            Record::All => (0..=steps).collect(),
            Record::Every(k) => {
                let k = (*k).max(1);
                let mut v: Vec<usize> = (0..=steps).step_by(k).collect();
                v.push(steps);
                v
            }
            Record::Steps(s) => {
                let mut v = s.clone();
                v.push(0);
                v
            }
        };
        out.retain(|&s| s <= steps);
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    ExponentialMild,
    /// Direct sampling of a Q-Wiener process.
    Exact,
}

/// Provenance of the noise that drove a batch: path `i` used stream
/// `first_stream + i` under `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NoiseRef {
    pub seed: u64,
    pub first_stream: u64,
    pub paths: usize,
}

/// `N` sample paths recorded on (a subset of) a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch<T> {
    grid: TimeGrid<T>,
    recorded: Vec<usize>,
    dim: usize,
    paths: usize,
    states: Vec<T>,
    noise: NoiseRef,
    scheme: Scheme,
}

impl<T: Real> TrajectoryBatch<T> {
    pub(crate) fn from_parts(
        grid: TimeGrid<T>,
        recorded: Vec<usize>,
        dim: usize,
        states: Vec<T>,
        noise: NoiseRef,
        scheme: Scheme,
    ) -> Self {
        let paths = noise.paths;
        debug_assert_eq!(states.len(), paths * recorded.len() * dim);
        Self {
            grid,
            recorded,
            dim,
            paths,
            states,
            noise,
            scheme,
        }
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn noise(&self) -> NoiseRef {
        self.noise
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Step indices that were stored, increasing.
    pub fn recorded_steps(&self) -> &[usize] {
        &self.recorded
    }

    pub fn recorded_times(&self) -> Vec<T> {
        self.recorded.iter().map(|&k| self.grid.time(k)).collect()
    }

    pub fn is_fully_recorded(&self) -> bool {
        self.recorded.len() == self.grid.steps() + 1
    }

    /// Position of grid time `t` among the recorded slots.
    pub fn slot_of_time(&self, t: T) -> Result<usize> {
        let k = self.grid.index_of(t)?;
        self.slot_of_step(k).ok_or(Error::OffGrid {
            time: t.as_f64(),
            spacing: self.grid.step().as_f64(),
        })
    }

    pub fn slot_of_step(&self, step: usize) -> Option<usize> {
        self.recorded.binary_search(&step).ok()
    }

    #[inline]
    pub fn state(&self, path: usize, slot: usize) -> &[T] {
        let n = self.recorded.len();
        let start = (path * n + slot) * self.dim;
        &self.states[start..start + self.dim]
    }

    /// States of one path in slot order.
    pub fn path(&self, path: usize) -> impl Iterator<Item = &[T]> + '_ {
        let n = self.recorded.len();
        let start = path * n * self.dim;
        self.states[start..start + n * self.dim].chunks_exact(self.dim)
    }

    /// States of all paths at one slot.
    pub fn marginal(&self, slot: usize) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.paths).map(move |p| self.state(p, slot))
    }

    pub fn marginal_vectors(&self, slot: usize) -> Vec<SpectralVector<T>> {
        self.marginal(slot)
            .map(|s| SpectralVector::new(s.to_vec()).expect("finite states"))
            .collect()
    }

    /// One row per (path, recorded time): `path,time,x1,...,xd`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "path,time")?;
        for j in 1..=self.dim {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        for p in 0..self.paths {
            for (slot, &k) in self.recorded.iter().enumerate() {
                write!(w, "{p},{}", self.grid.time(k))?;
                for v in self.state(p, slot) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Per-time marginal statistics: coordinate means and variances, mean
    /// squared H-norm and mean Q-norm.
    pub fn summary_json(&self, spectrum: &CovarianceSpectrum<T>) -> Value {
        let n = self.paths.max(1) as f64;
        let per_time: Vec<Value> = self
            .recorded
            .iter()
            .enumerate()
            .map(|(slot, &k)| {
                let mut mean = vec![0.0; self.dim];
                let mut sq = vec![0.0; self.dim];
                let mut h2 = 0.0;
                let mut qn = 0.0;
                for x in self.marginal(slot) {
                    for (j, v) in x.iter().enumerate() {
                        let v = v.as_f64();
                        mean[j] += v;
                        sq[j] += v * v;
                        h2 += v * v;
                    }
                    qn += spectrum.q_norm_sq_unchecked(x).sqrt().as_f64();
                }
                let var: Vec<f64> = mean
                    .iter()
                    .zip(&sq)
                    .map(|(m, s)| {
                        let m = m / n;
                        (s / n - m * m) * n / (n - 1.0).max(1.0)
                    })
                    .collect();
                let mean: Vec<f64> = mean.iter().map(|m| m / n).collect();
                json!({
                    "time": self.grid.time(k).as_f64(),
                    "mean": mean,
                    "variance": var,
                    "mean_h_norm_sq": h2 / n,
                    "mean_q_norm": qn / n,
                })
            })
            .collect();
        json!({
            "scheme": self.scheme,
            "dim": self.dim,
            "paths": self.paths,
            "step": self.grid.step().as_f64(),
            "steps": self.grid.steps(),
            "noise": self.noise,
            "marginals": per_time,
        })
    }
}
