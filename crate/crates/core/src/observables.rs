//! Stochastic objects built along each path from the squared norm
//! `zeta_t = ||X_t||^2`:
//!
//! * the projected martingale `dw = <X, dW> / ||X||_Q`, whose quadratic
//!   variation should be `t`;
//! * `v = 2 ||X||_Q` and the discounted integral `int e^{-s} v dw`, which is
//!   bounded below by `-C(N, T)`;
//! * the clock `z_t = int e^{-2s} v^2 ds` and its first-passage times.
//!
//! All stochastic integrals are left-point sums on the integrator's own grid
//! and noise. They can be computed while integrating (through
//! [`PathDiagnostics`], a [`StepObserver`]) or afterwards from a fully
//! recorded batch by replaying its noise streams.

use rayon::prelude::*;
use serde::Serialize;

use crate::batch::{TimeGrid, TrajectoryBatch};
use crate::error::{precondition, Error, Result};
use crate::noise::{NormalStream, Purpose};
use crate::q_wiener::IncrementStream;
use crate::scalar::Real;
use crate::sde::{DriftModel, StepContext, StepObserver};
use crate::spectral_space::{dot, CovarianceSpectrum, SpectralVector};

/// `zeta_t = ||X_t||^2` at every recorded slot, per path.
pub fn zeta_path<T: Real>(batch: &TrajectoryBatch<T>) -> Vec<Vec<T>> {
    (0..batch.paths())
        .map(|p| batch.path(p).map(|x| dot(x, x)).collect())
        .collect()
}

/// `|| (x / ||x||_Q) Q^{1/2} ||^2`, identically one for nonzero `x`.
pub fn normalized_projection_norm<T: Real>(
    x: &SpectralVector<T>,
    spectrum: &CovarianceSpectrum<T>,
) -> Result<T> {
    spectrum.check_dim(x.dim())?;
    let qn = spectrum.q_norm_sq_unchecked(x.coords()).sqrt();
    precondition(qn > T::zero(), || "x must have nonzero Q-norm".into())?;
    Ok(x
        .coords()
        .iter()
        .zip(spectrum.q())
        .map(|(&v, &q)| {
            let y = q.sqrt() * v / qn;
            y * y
        })
        .sum())
}

/// Increments of the projected martingale `w` for every path.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedMartingale<T> {
    /// Per path, one increment per step (zero on degenerate steps).
    pub increments: Vec<Vec<T>>,
    /// Per path, the number of steps with `||X||_Q = 0`.
    pub degenerate: Vec<usize>,
}

impl<T: Real> ProjectedMartingale<T> {
    pub fn degenerate_total(&self) -> usize {
        self.degenerate.iter().sum()
    }
}

/// `sum (dw)^2` over a series of increments.
pub fn quadratic_variation<T: Real>(increments: &[T]) -> T {
    increments.iter().map(|&d| d * d).sum()
}

/// The constants `lambda = tr Q + sup||F||^2` and
/// `C(N, T) = (N^2 + T lambda)(1 + T e^T)`; `tr Q` is the truncated trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallConstants {
    pub lambda: f64,
    pub c: f64,
}

pub fn c_constant<T: Real>(
    n_radius: T,
    horizon: T,
    spectrum: &CovarianceSpectrum<T>,
    drift: &DriftModel<T>,
) -> Result<GronwallConstants> {
    precondition(n_radius > T::zero() && horizon > T::zero(), || {
        "N and T must be positive".into()
    })?;
    let lambda = spectrum.trace() + drift.sup_h() * drift.sup_h();
    let c = (n_radius * n_radius + horizon * lambda) * (T::one() + horizon * horizon.exp());
    Ok(GronwallConstants {
        lambda: lambda.as_f64(),
        c: c.as_f64(),
    })
}

/// Streaming per-path diagnostics fed by the integrator (or by a replay).
#[derive(Debug, Clone)]
pub struct PathDiagnostics<'a, T> {
    q: &'a [T],
    keep_series: bool,
    psi0: T,
    w: T,
    qv: T,
    stat: T,
    min_stat: T,
    z: T,
    zeta_integral: T,
    martingale_part: T,
    max_gronwall_gap: T,
    degenerate: usize,
    increments: Vec<T>,
    v_series: Vec<T>,
    zeta_series: Vec<T>,
    z_series: Vec<T>,
}

impl<'a, T: Real> PathDiagnostics<'a, T> {
    /// `psi0 = N^2 + T lambda` is the constant in the Gronwall chain
    /// `zeta_t <= Psi_t + int zeta ds`.
    pub fn new(q: &'a [T], psi0: T, keep_series: bool) -> Self {
        Self {
            q,
            keep_series,
            psi0,
            w: T::zero(),
            qv: T::zero(),
            stat: T::zero(),
            min_stat: T::zero(),
            z: T::zero(),
            zeta_integral: T::zero(),
            martingale_part: T::zero(),
            max_gronwall_gap: T::neg_infinity(),
            degenerate: 0,
            increments: Vec::new(),
            v_series: Vec::new(),
            zeta_series: Vec::new(),
            z_series: Vec::new(),
        }
    }

    pub fn quadratic_variation(&self) -> T {
        self.qv
    }

    pub fn w(&self) -> T {
        self.w
    }

    /// `min_t int_0^t e^{-s} v dw` over the grid (including `t = 0`).
    pub fn min_discounted_integral(&self) -> T {
        self.min_stat
    }

    pub fn discounted_integral(&self) -> T {
        self.stat
    }

    /// `z_T` of the time change.
    pub fn clock(&self) -> T {
        self.z
    }

    pub fn degenerate_steps(&self) -> usize {
        self.degenerate
    }

    /// `max_t (zeta_t - Psi_t - int_0^t zeta ds)`; nonpositive when the
    /// discrete Gronwall chain holds exactly.
    pub fn max_gronwall_gap(&self) -> T {
        self.max_gronwall_gap
    }

    pub fn increments(&self) -> &[T] {
        &self.increments
    }

    pub fn v_series(&self) -> &[T] {
        &self.v_series
    }

    pub fn zeta_series(&self) -> &[T] {
        &self.zeta_series
    }

    pub fn z_series(&self) -> &[T] {
        &self.z_series
    }
}

impl<T: Real> StepObserver<T> for PathDiagnostics<'_, T> {
    fn observe(&mut self, ctx: &StepContext<'_, T>) {
        let x = ctx.state;
        let zeta = dot(x, x);
        if ctx.step == 0 {
            self.max_gronwall_gap = zeta - self.psi0;
            if self.keep_series {
                self.zeta_series.push(zeta);
            }
        }
        let qn = self
            .q
            .iter()
            .zip(x)
            .fold(T::zero(), |acc, (&q, &v)| acc + q * v * v)
            .sqrt();
        let v = qn + qn;
        let dw = if qn > T::zero() {
            dot(x, ctx.dw) / qn
        } else {
            self.degenerate += 1;
            T::zero()
        };
        let t = ctx.time;
        self.w += dw;
        self.qv += dw * dw;
        self.stat += (-t).exp() * v * dw;
        self.min_stat = self.min_stat.min(self.stat);
        self.z += (-(t + t)).exp() * v * v * ctx.h;
        self.martingale_part += v * dw;
        self.zeta_integral += zeta * ctx.h;

        let zeta_next = dot(ctx.next, ctx.next);
        let gap = zeta_next - (self.psi0 + self.martingale_part) - self.zeta_integral;
        self.max_gronwall_gap = self.max_gronwall_gap.max(gap);

        if self.keep_series {
            self.increments.push(dw);
            self.v_series.push(v);
            self.zeta_series.push(zeta_next);
            self.z_series.push(self.z);
        }
    }
}

/// Replays the noise of a fully recorded batch through one observer per
/// path. Replayed steps carry empty drift slices.
pub fn replay<T, O, M>(
    batch: &TrajectoryBatch<T>,
    spectrum: &CovarianceSpectrum<T>,
    make: M,
) -> Result<Vec<O>>
where
    T: Real,
    O: StepObserver<T>,
    M: Fn(usize) -> O + Sync,
{
    spectrum.check_dim(batch.dim())?;
    precondition(batch.is_fully_recorded(), || {
        "noise replay needs every grid step recorded".into()
    })?;
    let noise = batch.noise();
    let grid = *batch.grid();
    let h = grid.step();
    Ok((0..batch.paths())
        .into_par_iter()
        .map(|p| {
            let mut obs = make(p);
            let mut inc = IncrementStream::new(spectrum, noise.seed, noise.first_stream + p as u64);
            let d = batch.dim();
            let mut z = vec![T::zero(); d];
            let mut dw = vec![T::zero(); d];
            for k in 0..grid.steps() {
                inc.next_standard(&mut z);
                inc.scale_into(h, &z, &mut dw);
                obs.observe(&StepContext {
                    path: p,
                    step: k,
                    time: grid.time(k),
                    h,
                    state: batch.state(p, k),
                    dw: &dw,
                    drift: &[],
                    drift_weight: &[],
                    decay: None,
                    next: batch.state(p, k + 1),
                });
            }
            obs
        })
        .collect())
}

/// `dw = <X, dW> / ||X||_Q` per step, from the batch's own noise.
pub fn projected_martingale<T: Real>(
    batch: &TrajectoryBatch<T>,
    spectrum: &CovarianceSpectrum<T>,
) -> Result<ProjectedMartingale<T>> {
    let diags = replay(batch, spectrum, |_| PathDiagnostics::new(spectrum.q(), T::zero(), true))?;
    Ok(ProjectedMartingale {
        degenerate: diags.iter().map(|d| d.degenerate).collect(),
        increments: diags.into_iter().map(|d| d.increments).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundStatistic<T> {
    /// Per path, `min_t int_0^t e^{-s} v dw`.
    pub per_path_min: Vec<T>,
    pub degenerate: usize,
}

impl<T: Real> LowerBoundStatistic<T> {
    pub fn overall_min(&self) -> T {
        self.per_path_min
            .iter()
            .copied()
            .fold(T::infinity(), T::min)
    }
}

/// Per-path minimum of the discounted integral `int e^{-s} v dw`.
pub fn lower_bound_statistic<T: Real>(
    batch: &TrajectoryBatch<T>,
    spectrum: &CovarianceSpectrum<T>,
) -> Result<LowerBoundStatistic<T>> {
    let diags = replay(batch, spectrum, |_| PathDiagnostics::new(spectrum.q(), T::zero(), false))?;
    Ok(LowerBoundStatistic {
        degenerate: diags.iter().map(|d| d.degenerate).sum(),
        per_path_min: diags.iter().map(|d| d.min_stat).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeChange<T> {
    /// `z` at every grid point, starting with `z_0 = 0`.
    pub z: Vec<T>,
    /// For each requested level, the first grid index with `z >= gamma`
    /// (`None` when the level is not reached).
    pub passage: Vec<Option<usize>>,
}

/// Random clock `z_t = int_0^t e^{-2s} v_s^2 ds` (left-point) from a series
/// of `v` values on `grid`, and first-passage indices for `levels`.
pub fn time_change<T: Real>(v: &[T], grid: &TimeGrid<T>, levels: &[T]) -> Result<TimeChange<T>> {
    precondition(v.len() <= grid.steps(), || {
        format!("{} values exceed the grid's {} steps", v.len(), grid.steps())
    })?;
    precondition(v.iter().all(|&x| x >= T::zero()), || "v must be nonnegative".into())?;
    let h = grid.step();
    let mut z = Vec::with_capacity(v.len() + 1);
    z.push(T::zero());
    let mut acc = T::zero();
    for (k, &vk) in v.iter().enumerate() {
        let t = grid.time(k);
        acc += (-(t + t)).exp() * vk * vk * h;
        z.push(acc);
    }
    let passage = levels
        .iter()
        .map(|&g| z.iter().position(|&zk| zk >= g))
        .collect();
    Ok(TimeChange { z, passage })
}

/// Deterministic floor `t (2R)^2 e^{-2T}` of the clock when `v >= 2R`.
pub fn time_change_floor<T: Real>(radius: T, t: T, horizon: T) -> T {
    let two_r = radius + radius;
    t * two_r * two_r * (-(horizon + horizon)).exp()
}

/// Exponential martingale `u_t = exp(w_t - t/2)` against `u = 1 + int u dw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NovikovReport {
    pub paths: usize,
    pub steps: usize,
    /// `max |int u dw - (u_t - 1)|` with plain left-point sums.
    pub residual_euler: f64,
    /// Same with the Milstein correction `u (dw^2 - h) / 2`.
    pub residual_milstein: f64,
    /// Minimum over paths and grid times of the (Milstein) integral.
    pub min_integral: f64,
    pub min_integral_euler: f64,
    /// Minimum of `u` over paths and grid times; no positive floor exists.
    pub min_u: f64,
}

pub fn novikov_demo(horizon: f64, h: f64, paths: usize, seed: u64) -> Result<NovikovReport> {
    let grid = TimeGrid::covering(horizon, h)?;
    let h = grid.step();
    let sqrt_h = h.sqrt();
    let per_path: Vec<[f64; 5]> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut normals = NormalStream::new(seed, Purpose::Auxiliary, p as u64);
            let (mut w, mut ie, mut im) = (0.0f64, 0.0f64, 0.0f64);
            let mut u = 1.0f64;
            let (mut re, mut rm) = (0.0f64, 0.0f64);
            let (mut min_i, mut min_ie, mut min_u) = (0.0f64, 0.0f64, 1.0f64);
            for k in 0..grid.steps() {
                let dw = sqrt_h * normals.next::<f64>();
                ie += u * dw;
                im += u * (dw + 0.5 * (dw * dw - h));
                w += dw;
                u = (w - 0.5 * grid.time(k + 1)).exp();
                re = re.max((ie - (u - 1.0)).abs());
                rm = rm.max((im - (u - 1.0)).abs());
                min_i = min_i.min(im);
                min_ie = min_ie.min(ie);
                min_u = min_u.min(u);
            }
            [re, rm, min_i, min_ie, min_u]
        })
        .collect();
    let fold = |i: usize, init: f64, f: fn(f64, f64) -> f64| per_path.iter().map(|r| r[i]).fold(init, f);
    Ok(NovikovReport {
        paths,
        steps: grid.steps(),
        residual_euler: fold(0, 0.0, f64::max),
        residual_milstein: fold(1, 0.0, f64::max),
        min_integral: fold(2, 0.0, f64::min),
        min_integral_euler: fold(3, 0.0, f64::min),
        min_u: fold(4, 1.0, f64::min),
    })
}

/// One-dimensional walk reflected at `R` from above, standing in for a
/// process that never enters `K_R`; returns per-path minima of
/// `int e^{-s} v dw` with `v = 2|x|`.
pub fn reflected_surrogate(
    radius: f64,
    start: f64,
    horizon: f64,
    h: f64,
    paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    precondition(radius > 0.0 && start >= radius, || {
        "surrogate needs 0 < R <= x0".into()
    })?;
    let grid = TimeGrid::covering(horizon, h)?;
    let h = grid.step();
    Ok((0..paths)
        .into_par_iter()
        .map(|p| {
            let mut normals = NormalStream::new(seed, Purpose::Auxiliary, p as u64);
            let mut x = start;
            let (mut stat, mut min_stat) = (0.0f64, 0.0f64);
            for k in 0..grid.steps() {
                let dw = h.sqrt() * normals.next::<f64>();
                // x > 0, so the projected increment is dW itself
                stat += (-grid.time(k)).exp() * 2.0 * x * dw;
                min_stat = min_stat.min(stat);
                x = radius + (x + dw - radius).abs();
            }
            min_stat
        })
        .collect())
}

/// Aggregated diagnostics over a batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub paths: usize,
    pub horizon: f64,
    pub constants: GronwallConstants,
    pub mean_quadratic_variation: f64,
    pub quadratic_variation_se: f64,
    pub degenerate_steps: usize,
    pub min_discounted_integral: f64,
    pub mean_clock: f64,
    pub max_gronwall_gap: f64,
}

impl DiagnosticsReport {
    pub fn from_paths<T: Real>(
        diags: &[PathDiagnostics<'_, T>],
        horizon: T,
        constants: GronwallConstants,
    ) -> Result<Self> {
        if diags.is_empty() {
            return Err(Error::Precondition("no paths to summarize".into()));
        }
        let qv = crate::stats::mean_se(diags.iter().map(|d| d.qv.as_f64()));
        Ok(Self {
            paths: diags.len(),
            horizon: horizon.as_f64(),
            constants,
            mean_quadratic_variation: qv.value,
            quadratic_variation_se: qv.std_error,
            degenerate_steps: diags.iter().map(|d| d.degenerate).sum(),
            min_discounted_integral: diags
                .iter()
                .map(|d| d.min_stat.as_f64())
                .fold(f64::INFINITY, f64::min),
            mean_clock: diags.iter().map(|d| d.z.as_f64()).sum::<f64>() / diags.len() as f64,
            max_gronwall_gap: diags
                .iter()
                .map(|d| d.max_gronwall_gap.as_f64())
                .fold(f64::NEG_INFINITY, f64::max),
        })
    }
}
