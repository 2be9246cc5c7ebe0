//! Finite-volume solver of the forward Kolmogorov (Fokker–Planck) equation
//! in one or two coordinates, and the weak test-function identity.
//!
//! The density evolves by `d_t rho = sum_i (q_i / 2) d_ii rho - d_i (b_i rho)`
//! with an explicit conservative scheme: upwind advective fluxes and central
//! diffusive fluxes at cell interfaces, zero flux through the box boundary.
//! Mass is therefore conserved up to rounding.

use std::io::{BufRead, Write};

use serde_json::{json, Value};

use crate::batch::TrajectoryBatch;
use crate::error::{precondition, Error, Result};
use crate::scalar::Real;
use crate::sde::{InitialLaw, Model};
use crate::spectral_space::CovarianceSpectrum;
use crate::stats::mean_se;

/// Boundary-layer mass above which a solution is flagged.
pub const BOUNDARY_MASS_WARNING: f64 = 1e-8;

/// Cell-centered density on `[-L, L]^dim`, `dim` in `{1, 2}`. Values are
/// stored with axis 0 varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity<T> {
    dim: usize,
    half_width: T,
    cells: usize,
    values: Vec<T>,
}

impl<T: Real> GridDensity<T> {
    pub fn new(dim: usize, half_width: T, cells: usize, values: Vec<T>) -> Result<Self> {
        precondition(dim == 1 || dim == 2, || format!("grid dimension must be 1 or 2, got {dim}"))?;
        precondition(half_width > T::zero() && cells >= 2, || {
            "grid needs a positive half-width and at least 2 cells".into()
        })?;
        precondition(values.len() == cells.pow(dim as u32), || {
            format!("expected {} values, got {}", cells.pow(dim as u32), values.len())
        })?;
        precondition(values.iter().all(|v| v.is_finite()), || "density values must be finite".into())?;
        Ok(Self {
            dim,
            half_width,
            cells,
            values,
        })
    }

    /// Product of per-axis Gaussians sampled at cell centers and normalized
    /// to unit discrete mass.
    pub fn gaussian(dim: usize, half_width: T, cells: usize, mean: &[T], std: &[T]) -> Result<Self> {
        precondition(mean.len() == dim && std.len() == dim, || {
            "mean and std must have one entry per axis".into()
        })?;
        precondition(std.iter().all(|&s| s > T::zero()), || "std must be positive".into())?;
        let mut g = Self::new(dim, half_width, cells, vec![T::zero(); cells.pow(dim as u32)])?;
        let dx = g.cell_width();
        let axis: Vec<Vec<T>> = (0..dim)
            .map(|a| {
                let raw: Vec<T> = (0..cells)
                    .map(|i| {
                        let u = (g.center(i) - mean[a]) / std[a];
                        (-(u * u) / T::of(2.0)).exp()
                    })
                    .collect();
                let total: T = raw.iter().copied().sum::<T>() * dx;
                raw.into_iter().map(|v| v / total).collect()
            })
            .collect();
        for (c, v) in g.values.iter_mut().enumerate() {
            *v = match dim {
                1 => axis[0][c],
                _ => axis[0][c / cells] * axis[1][c % cells],
            };
        }
        Ok(g)
    }

    /// Grid version of an initial law: Gaussians are sampled directly and a
    /// Dirac mass becomes a Gaussian two cells wide.
    pub fn from_initial(law: &InitialLaw<T>, half_width: T, cells: usize) -> Result<Self> {
        let dim = law.dim();
        let dx = (half_width + half_width) / T::of(cells as f64);
        let floor = dx + dx;
        match law {
            InitialLaw::Dirac(p) => Self::gaussian(dim, half_width, cells, p.coords(), &vec![floor; dim]),
            InitialLaw::Gaussian { mean, variance } => {
                let std: Vec<T> = variance.iter().map(|&v| v.sqrt().max(floor)).collect();
                Self::gaussian(dim, half_width, cells, mean.coords(), &std)
            }
            other => Err(Error::Config(format!(
                "the grid oracle supports dirac and gaussian initial laws, not {}",
                other.kind_name()
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> T {
        self.half_width
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn cell_width(&self) -> T {
        (self.half_width + self.half_width) / T::of(self.cells as f64)
    }

    pub fn cell_volume(&self) -> T {
        self.cell_width().powi(self.dim as i32)
    }

    /// Center of cell `i` along any axis.
    pub fn center(&self, i: usize) -> T {
        -self.half_width + (T::of(i as f64) + T::of(0.5)) * self.cell_width()
    }

    /// Per-axis cell indices of flat index `c`.
    fn split(&self, c: usize) -> [usize; 2] {
        match self.dim {
            1 => [c, 0],
            _ => [c / self.cells, c % self.cells],
        }
    }

    pub fn mass(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.cell_volume()
    }

    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        let vol = self.cell_volume();
        for (c, &v) in self.values.iter().enumerate() {
            let idx = self.split(c);
            for (a, mi) in m.iter_mut().enumerate() {
                *mi += self.center(idx[a]) * v * vol;
            }
        }
        let mass = self.mass();
        m.into_iter().map(|v| v / mass).collect()
    }

    /// Mass in the outermost layer of cells.
    pub fn boundary_mass(&self) -> T {
        let last = self.cells - 1;
        self.values
            .iter()
            .enumerate()
            .filter(|(c, _)| self.split(*c)[..self.dim].iter().any(|&i| i == 0 || i == last))
            .map(|(_, &v)| v)
            .sum::<T>()
            * self.cell_volume()
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        precondition(
            self.dim == other.dim && self.cells == other.cells && self.half_width == other.half_width,
            || "densities live on different grids".into(),
        )
    }

    /// `int |rho - sigma|` on a shared grid.
    pub fn l1_distance(&self, other: &Self) -> Result<T> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .sum::<T>()
            * self.cell_volume())
    }

    /// Block average onto a coarser grid with `cells` per axis.
    pub fn coarsen(&self, cells: usize) -> Result<Self> {
        precondition(cells > 0 && self.cells % cells == 0, || {
            format!("{cells} cells do not divide {}", self.cells)
        })?;
        let f = self.cells / cells;
        let mut out = vec![T::zero(); cells.pow(self.dim as u32)];
        let w = T::of(f.pow(self.dim as u32) as f64);
        for (c, &v) in self.values.iter().enumerate() {
            let [i, j] = self.split(c);
            let k = match self.dim {
                1 => i / f,
                _ => (i / f) * cells + j / f,
            };
            out[k] += v / w;
        }
        Self::new(self.dim, self.half_width, cells, out)
    }

    /// CSV with a header row: `x1[,x2],density`, one row per cell.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        match self.dim {
            1 => writeln!(w, "x1,density")?,
            _ => writeln!(w, "x1,x2,density")?,
        }
        for (c, v) in self.values.iter().enumerate() {
            let [i, j] = self.split(c);
            match self.dim {
                1 => writeln!(w, "{},{v}", self.center(i))?,
                _ => writeln!(w, "{},{},{v}", self.center(i), self.center(j))?,
            }
        }
        Ok(())
    }

    /// Box and cell metadata for the CSV sidecar.
    pub fn metadata_json(&self) -> Value {
        json!({
            "dim": self.dim,
            "half_width": self.half_width.as_f64(),
            "cells": self.cells,
            "cell_width": self.cell_width().as_f64(),
            "mass": self.mass().as_f64(),
        })
    }

    /// Reads a CSV written by [`GridDensity::write_csv`] given its metadata.
    pub fn read_csv<R: BufRead>(r: R, metadata: &Value) -> Result<Self> {
        let field = |k: &str| {
            metadata
                .get(k)
                .ok_or_else(|| Error::Config(format!("density metadata lacks '{k}'")))
        };
        let bad = |k: &str| Error::Config(format!("density metadata field '{k}' has the wrong type"));
        let dim = field("dim")?.as_u64().ok_or_else(|| bad("dim"))? as usize;
        let cells = field("cells")?.as_u64().ok_or_else(|| bad("cells"))? as usize;
        let half_width = field("half_width")?.as_f64().ok_or_else(|| bad("half_width"))?;
        let mut values = Vec::with_capacity(cells.pow(dim as u32));
        for (n, line) in r.lines().enumerate().skip(1) {
            let line = line?;
            let last = line.rsplit(',').next().unwrap_or("");
            let v: f64 = last
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("line {}: bad density value '{last}'", n + 1)))?;
            values.push(T::of(v));
        }
        Self::new(dim, T::of(half_width), cells, values)
    }
}

/// `max(6 sqrt(q T) + |m| + sup|b| T, 8)`.
pub fn default_half_width<T: Real>(q_max: T, horizon: T, mean_norm: T, sup_b: T) -> T {
    (T::of(6.0) * (q_max * horizon).sqrt() + mean_norm + sup_b * horizon).max(T::of(8.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpSolution<T> {
    pub density: GridDensity<T>,
    pub steps: usize,
    /// Step actually used (`T / steps`).
    pub dt: T,
    /// `max_t |mass(t) - mass(0)|`.
    pub mass_drift: T,
    /// Smallest value seen before clamping.
    pub min_value: T,
    /// Number of tiny negative values set to zero.
    pub clamped: usize,
    pub boundary_mass: T,
    pub boundary_warning: bool,
}

/// Largest stable step: diffusion `dt <= dx^2 / (2 sum q)`, advection
/// `dt sum_axes max|b| / dx <= 1/2`, and the combined condition that keeps
/// every update a convex combination.
pub fn stable_step<T: Real>(rho: &GridDensity<T>, model: &Model<T>, q: &[T]) -> Result<T> {
    let vel = interface_velocities(rho, model, q)?;
    Ok(stable_step_from(rho, q, &vel))
}

fn stable_step_from<T: Real>(rho: &GridDensity<T>, q: &[T], vel: &[Vec<T>]) -> T {
    let dx = rho.cell_width();
    let sum_q: T = q.iter().copied().sum();
    let max_b: T = vel
        .iter()
        .map(|v| v.iter().map(|b| b.abs()).fold(T::zero(), T::max))
        .sum();
    let diffusion = dx * dx / (T::of(2.0) * sum_q);
    let advection = if max_b > T::zero() {
        dx / (T::of(2.0) * max_b)
    } else {
        T::infinity()
    };
    let combined = T::one() / (sum_q / (dx * dx) + T::of(2.0) * max_b / dx);
    diffusion.min(advection).min(combined)
}

/// Drift component `b_a` at the interface between cell `c` and its upper
/// neighbour along axis `a` (zero where no neighbour exists).
fn interface_velocities<T: Real>(rho: &GridDensity<T>, model: &Model<T>, q: &[T]) -> Result<Vec<Vec<T>>> {
    let dim = rho.dim();
    for got in [model.drift().dim(), q.len()] {
        if got != dim {
            return Err(Error::Dimension { expected: dim, got });
        }
    }
    if let Some(op) = model.operator() {
        if op.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: op.dim(),
            });
        }
    }
    let n = rho.cells();
    let half = rho.cell_width() / T::of(2.0);
    let mut point = vec![T::zero(); dim];
    let mut b = vec![T::zero(); dim];
    Ok((0..dim)
        .map(|a| {
            (0..rho.values.len())
                .map(|c| {
                    let idx = rho.split(c);
                    if idx[a] + 1 >= n {
                        return T::zero();
                    }
                    for (k, p) in point.iter_mut().enumerate() {
                        *p = rho.center(idx[k]);
                    }
                    point[a] += half;
                    model.full_drift_into(&point, &mut b);
                    b[a]
                })
                .collect()
        })
        .collect())
}

/// Evolves `rho0` to time `horizon` with steps no larger than `dt`.
/// A zero horizon returns the input unchanged.
pub fn evolve_fp<T: Real>(rho0: &GridDensity<T>, model: &Model<T>, q: &[T], horizon: T, dt: T) -> Result<FpSolution<T>> {
    precondition(horizon >= T::zero() && dt >= T::zero(), || {
        "time and step must be nonnegative".into()
    })?;
    let vel = interface_velocities(rho0, model, q)?;
    let finish = |density: GridDensity<T>, steps, dt, mass_drift, min_value, clamped| {
        let boundary_mass = density.boundary_mass();
        FpSolution {
            density,
            steps,
            dt,
            mass_drift,
            min_value,
            clamped,
            boundary_mass,
            boundary_warning: boundary_mass.as_f64() > BOUNDARY_MASS_WARNING,
        }
    };
    if horizon == T::zero() {
        let min = rho0.min_value();
        return Ok(finish(rho0.clone(), 0, T::zero(), T::zero(), min, 0));
    }
    let limit = stable_step_from(rho0, q, &vel);
    if !(dt > T::zero()) || dt > limit * T::of(1.0 + 1e-12) {
        return Err(Error::Unstable {
            dt: dt.as_f64(),
            suggested: limit.as_f64(),
        });
    }
    let steps = ((horizon / dt).as_f64() - 1e-9).ceil().max(1.0) as usize;
    let dt = horizon / T::of(steps as f64);

    let dim = rho0.dim();
    let n = rho0.cells();
    let dx = rho0.cell_width();
    let strides = [if dim == 1 { 1 } else { n }, 1];
    let ratio = dt / dx;
    let diff: Vec<T> = q.iter().map(|&qa| qa / (T::of(2.0) * dx)).collect();

    let mut rho = rho0.values.clone();
    let mut next = rho.clone();
    let mass0 = rho0.mass();
    let vol = rho0.cell_volume();
    let mut mass_drift = T::zero();
    let mut min_value = rho0.min_value();
    let mut clamped = 0;
    for _ in 0..steps {
        next.copy_from_slice(&rho);
        for (a, va) in vel.iter().enumerate() {
            let s = strides[a];
            for c in 0..rho.len() {
                if rho0.split(c)[a] + 1 >= n {
                    continue;
                }
                let b = va[c];
                let (l, r) = (rho[c], rho[c + s]);
                let flux = b.max(T::zero()) * l + b.min(T::zero()) * r - diff[a] * (r - l);
                next[c] -= ratio * flux;
                next[c + s] += ratio * flux;
            }
        }
        for v in next.iter_mut() {
            if *v < T::zero() {
                min_value = min_value.min(*v);
                clamped += 1;
                *v = T::zero();
            }
        }
        std::mem::swap(&mut rho, &mut next);
        let mass = rho.iter().copied().sum::<T>() * vol;
        mass_drift = mass_drift.max((mass - mass0).abs());
    }
    let density = GridDensity::new(dim, rho0.half_width(), n, rho)?;
    min_value = min_value.min(density.min_value());
    Ok(finish(density, steps, dt, mass_drift, min_value, clamped))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TvReport {
    pub total_variation: f64,
    /// Fraction of Monte Carlo samples outside the box.
    pub outside_fraction: f64,
    pub grid_mass: f64,
    pub samples: usize,
}

fn same_model<T: Real>(a: &Model<T>, b: &Model<T>) -> bool {
    use crate::sde::DriftKind;
    let kinds_match = match (a.drift().kind(), b.drift().kind()) {
        (DriftKind::Constant(x), DriftKind::Constant(y)) => x == y,
        (x, y) => std::mem::discriminant(x) == std::mem::discriminant(y),
    };
    let ops_match = match (a.operator(), b.operator()) {
        (None, None) => true,
        (Some(x), Some(y)) => {
            let n = x.dim().min(y.dim());
            x.rates()[..n] == y.rates()[..n]
        }
        _ => false,
    };
    kinds_match && ops_match
}

/// Total variation between the histogram of coordinates `coords` of the
/// batch at time `t` and the grid density, counting mass outside the box.
pub fn compare_mc_fp<T: Real>(
    batch: &TrajectoryBatch<T>,
    batch_model: &Model<T>,
    rho: &GridDensity<T>,
    oracle_model: &Model<T>,
    t: T,
    coords: &[usize],
) -> Result<TvReport> {
    if !same_model(batch_model, oracle_model) {
        return Err(Error::Config(format!(
            "batch model ({} drift, {}) differs from the oracle's ({} drift, {})",
            batch_model.drift().name(),
            batch_model.kind_name(),
            oracle_model.drift().name(),
            oracle_model.kind_name()
        )));
    }
    precondition(coords.len() == rho.dim(), || {
        format!("need {} projection axes, got {}", rho.dim(), coords.len())
    })?;
    precondition(coords.iter().all(|&c| c < batch.dim()), || {
        format!("projection axes must be below the batch dimension {}", batch.dim())
    })?;
    let slot = batch.slot_of_time(t)?;
    let n = rho.cells();
    let dx = rho.cell_width();
    let mut counts = vec![0usize; rho.values().len()];
    let mut outside = 0usize;
    for x in batch.marginal(slot) {
        let mut flat = 0usize;
        let mut inside = true;
        for &c in coords {
            let k = ((x[c] + rho.half_width()) / dx).floor();
            if !(k >= T::zero() && k < T::of(n as f64)) {
                inside = false;
                break;
            }
            flat = flat * n + k.as_f64() as usize;
        }
        if inside {
            counts[flat] += 1;
        } else {
            outside += 1;
        }
    }
    let samples = batch.paths() as f64;
    let vol = rho.cell_volume().as_f64();
    let grid_mass = rho.mass().as_f64();
    let mut l1: f64 = counts
        .iter()
        .zip(rho.values())
        .map(|(&k, &v)| (k as f64 / samples - v.as_f64() * vol).abs())
        .sum();
    l1 += outside as f64 / samples + (1.0 - grid_mass).abs();
    Ok(TvReport {
        total_variation: 0.5 * l1,
        outside_fraction: outside as f64 / samples,
        grid_mass,
        samples: batch.paths(),
    })
}

/// Number of entries in the test-function catalog.
pub const CATALOG_SIZE: usize = 3;

/// `phi(x) = prod_k beta((x_{i_k} - c_k) / w_k)` with the bump
/// `beta(u) = exp(1 - 1 / (1 - u^2))` on `|u| < 1`, or the zero function.
#[derive(Debug, Clone, PartialEq)]
pub enum CylindricalTestFunction<T> {
    Zero,
    Bump {
        coords: Vec<usize>,
        centers: Vec<T>,
        widths: Vec<T>,
    },
}

/// `(beta, beta', beta'')` at `u`.
fn bump<T: Real>(u: T) -> (T, T, T) {
    let s = T::one() - u * u;
    if s <= T::zero() {
        return (T::zero(), T::zero(), T::zero());
    }
    let g = (T::one() - T::one() / s).exp();
    let s2 = s * s;
    let d1 = -(u + u) / s2;
    let four = T::of(4.0);
    let d2 = four * u * u / (s2 * s2) - (T::of(2.0) * s + T::of(8.0) * u * u) / (s2 * s);
    (g, g * d1, g * d2)
}

impl<T: Real> CylindricalTestFunction<T> {
    pub fn bump(coords: Vec<usize>, centers: Vec<T>, widths: Vec<T>) -> Result<Self> {
        precondition(!coords.is_empty(), || "a bump needs at least one coordinate".into())?;
        precondition(coords.len() == centers.len() && coords.len() == widths.len(), || {
            "coords, centers and widths must have equal length".into()
        })?;
        precondition(widths.iter().all(|&w| w > T::zero() && w.is_finite()), || {
            "widths must be positive".into()
        })?;
        let mut sorted = coords.clone();
        sorted.sort_unstable();
        sorted.dedup();
        precondition(sorted.len() == coords.len(), || "coordinates must be distinct".into())?;
        Ok(CylindricalTestFunction::Bump {
            coords,
            centers,
            widths,
        })
    }

    /// Catalog entries: a centered bump and an off-center bump on `x_1`,
    /// and a product bump on `(x_1, x_2)`.
    pub fn catalog(index: usize) -> Result<Self> {
        let h = T::of(1.5);
        match index {
            0 => Self::bump(vec![0], vec![T::zero()], vec![h]),
            1 => Self::bump(vec![0], vec![T::of(0.75)], vec![T::one()]),
            2 => Self::bump(vec![0, 1], vec![T::zero(); 2], vec![h; 2]),
            _ => Err(Error::Config(format!(
                "test function index {index} is outside the catalog (0..{CATALOG_SIZE})"
            ))),
        }
    }

    /// Active coordinates (empty for the zero function).
    pub fn coords(&self) -> &[usize] {
        match self {
            CylindricalTestFunction::Zero => &[],
            CylindricalTestFunction::Bump { coords, .. } => coords,
        }
    }

    /// Per active coordinate, the open interval outside which `phi = 0`.
    pub fn support(&self) -> Vec<(usize, T, T)> {
        match self {
            CylindricalTestFunction::Zero => Vec::new(),
            CylindricalTestFunction::Bump {
                coords,
                centers,
                widths,
            } => coords
                .iter()
                .zip(centers)
                .zip(widths)
                .map(|((&i, &c), &w)| (i, c - w, c + w))
                .collect(),
        }
    }

    fn factors(&self, x: &[T]) -> Vec<(T, T, T)> {
        match self {
            CylindricalTestFunction::Zero => Vec::new(),
            CylindricalTestFunction::Bump {
                coords,
                centers,
                widths,
            } => coords
                .iter()
                .zip(centers)
                .zip(widths)
                .map(|((&i, &c), &w)| {
                    let (g, d1, d2) = bump((x[i] - c) / w);
                    (g, d1 / w, d2 / (w * w))
                })
                .collect(),
        }
    }

    pub fn value(&self, x: &[T]) -> T {
        match self {
            CylindricalTestFunction::Zero => T::zero(),
            _ => self.factors(x).iter().map(|f| f.0).fold(T::one(), |a, b| a * b),
        }
    }

    /// `L phi(x) = sum_i (q_i / 2) d_ii phi + sum_i b_i d_i phi`.
    pub fn generator(&self, x: &[T], q: &[T], b: &[T]) -> T {
        let f = self.factors(x);
        let coords = self.coords();
        let mut out = T::zero();
        for (k, &i) in coords.iter().enumerate() {
            let others = f
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != k)
                .fold(T::one(), |a, (_, v)| a * v.0);
            out += (q[i] / T::of(2.0) * f[k].2 + b[i] * f[k].1) * others;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct WeakResidual {
    /// `|E phi(X_t) - E phi(X_0) - int_0^t E L phi(X_s) ds|`.
    pub residual: f64,
    /// Standard error of the per-path estimate behind `residual`.
    pub std_error: f64,
    pub mean_phi_t: f64,
    pub mean_phi_0: f64,
    pub mean_integral: f64,
    /// The support of `phi` reaches beyond the sampled range.
    pub support_warning: bool,
}

/// Monte Carlo residual of the weak identity for `phi`, with the time
/// integral by the trapezoid rule over the recorded times up to `t`.
pub fn weak_identity_residual<T: Real>(
    batch: &TrajectoryBatch<T>,
    phi: &CylindricalTestFunction<T>,
    model: &Model<T>,
    spectrum: &CovarianceSpectrum<T>,
    t: T,
) -> Result<WeakResidual> {
    let d = batch.dim();
    spectrum.check_dim(d)?;
    if model.drift().dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: model.drift().dim(),
        });
    }
    precondition(phi.coords().iter().all(|&i| i < d), || {
        format!("test function uses coordinates beyond the simulated {d}")
    })?;
    let last = batch.slot_of_time(t)?;
    let times = batch.recorded_times();
    let q = spectrum.q();

    let mut lo = vec![T::infinity(); d];
    let mut hi = vec![T::neg_infinity(); d];
    let mut b = vec![T::zero(); d];
    let mut per_path = Vec::with_capacity(batch.paths());
    let (mut sum_t, mut sum_0, mut sum_i) = (0.0, 0.0, 0.0);
    for p in 0..batch.paths() {
        let mut integral = T::zero();
        let mut prev = T::zero();
        for slot in 0..=last {
            let x = batch.state(p, slot);
            for j in 0..d {
                lo[j] = lo[j].min(x[j]);
                hi[j] = hi[j].max(x[j]);
            }
            model.full_drift_into(x, &mut b);
            let g = phi.generator(x, q, &b);
            if slot > 0 {
                integral += (times[slot] - times[slot - 1]) * (g + prev) / T::of(2.0);
            }
            prev = g;
        }
        let f_t = phi.value(batch.state(p, last)).as_f64();
        let f_0 = phi.value(batch.state(p, 0)).as_f64();
        sum_t += f_t;
        sum_0 += f_0;
        sum_i += integral.as_f64();
        per_path.push(f_t - f_0 - integral.as_f64());
    }
    let est = mean_se(per_path);
    let n = batch.paths() as f64;
    let support_warning = phi
        .support()
        .iter()
        .any(|&(i, a, c)| a < lo[i] || c > hi[i]);
    Ok(WeakResidual {
        residual: est.value.abs(),
        std_error: est.std_error,
        mean_phi_t: sum_t / n,
        mean_phi_0: sum_0 / n,
        mean_integral: sum_i / n,
        support_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::{Record, TimeGrid};
    use crate::sde::{DriftModel, LinearOperator, Simulation};
    use crate::spectral_space::SpectralVector;
    use crate::stats::normal_cdf;

    fn one_d(drift: &str, c: f64) -> (CovarianceSpectrum<f64>, Model<f64>) {
        let s = CovarianceSpectrum::poly2(1).unwrap();
        let f = DriftModel::from_name(drift, &s, c).unwrap();
        (s, Model::Bounded(f))
    }

    /// Exact cell mass of `N(m, v)`.
    fn gaussian_cells(rho: &GridDensity<f64>, m: f64, v: f64) -> Vec<f64> {
        let dx = rho.cell_width();
        (0..rho.cells())
            .map(|i| {
                let a = (rho.center(i) - dx / 2.0 - m) / v.sqrt();
                let b = (rho.center(i) + dx / 2.0 - m) / v.sqrt();
                normal_cdf(b) - normal_cdf(a)
            })
            .collect()
    }

    #[test]
    fn heat_kernel_oracle() {
        let (_, model) = one_d("zero", 0.0);
        let s0: f64 = 0.2;
        let rho0 = GridDensity::gaussian(1, 8.0, 400, &[0.0], &[s0]).unwrap();
        let dt = stable_step(&rho0, &model, &[1.0]).unwrap();
        let out = evolve_fp(&rho0, &model, &[1.0], 1.0, dt).unwrap();
        let exact = gaussian_cells(&out.density, 0.0, s0 * s0 + 1.0);
        let vol = out.density.cell_volume();
        let l1: f64 = out.density.values().iter().zip(&exact).map(|(v, e)| (v * vol - e).abs()).sum();
        assert!(l1 < 1e-2, "{l1}");
        assert!(out.mass_drift < 1e-12);
        assert!(out.min_value >= -1e-12);
        assert!(!out.boundary_warning);
    }

    #[test]
    fn constant_drift_translates() {
        let (_, model) = one_d("constant", 0.8);
        let rho0 = GridDensity::gaussian(1, 8.0, 200, &[-1.0], &[0.3]).unwrap();
        let dt = stable_step(&rho0, &model, &[1.0]).unwrap();
        let out = evolve_fp(&rho0, &model, &[1.0], 1.5, dt).unwrap();
        let m = out.density.mean()[0];
        assert!((m - (-1.0 + 0.8 * 1.5)).abs() < out.density.cell_width(), "{m}");
    }

    #[test]
    fn zero_time_is_identity() {
        let (_, model) = one_d("tanh", 0.0);
        let rho0 = GridDensity::gaussian(1, 8.0, 50, &[0.5], &[0.7]).unwrap();
        let out = evolve_fp(&rho0, &model, &[1.0], 0.0, 0.0).unwrap();
        assert_eq!(out.density, rho0);
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn unstable_step_is_refused() {
        let (_, model) = one_d("zero", 0.0);
        let rho0 = GridDensity::gaussian(1, 8.0, 200, &[0.0], &[0.5]).unwrap();
        match evolve_fp(&rho0, &model, &[1.0], 1.0, 0.1) {
            Err(Error::Unstable { suggested, .. }) => assert!(suggested <= 0.08 * 0.08 / 2.0 + 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_dimensional_mass_and_positivity() {
        let s = CovarianceSpectrum::<f64>::custom(vec![1.0, 0.5]).unwrap();
        let model = Model::Linear {
            operator: LinearOperator::heat(2),
            drift: DriftModel::tanh(&s),
        };
        let rho0 = GridDensity::gaussian(2, 8.0, 80, &[1.0, -0.5], &[0.4, 0.4]).unwrap();
        let dt = stable_step(&rho0, &model, s.q()).unwrap();
        let out = evolve_fp(&rho0, &model, s.q(), 0.5, dt).unwrap();
        assert!(out.mass_drift < 1e-6);
        assert!(out.min_value >= -1e-12);
        let m = out.density.mean();
        // the operator pulls both coordinates toward the origin
        assert!(m[0].abs() < 1.0 && m[1].abs() < 0.5);
    }

    #[test]
    fn self_convergence() {
        let (_, model) = one_d("tanh", 0.0);
        let solve = |cells: usize, dt: f64| {
            let rho0 = GridDensity::gaussian(1, 8.0, cells, &[0.5], &[0.3]).unwrap();
            evolve_fp(&rho0, &model, &[1.0], 1.0, dt).unwrap().density
        };
        let a = solve(100, 0.0032);
        let b = solve(200, 0.0016).coarsen(100).unwrap();
        let c = solve(400, 0.0008).coarsen(100).unwrap();
        let e1 = a.l1_distance(&b).unwrap();
        let e2 = b.l1_distance(&c).unwrap();
        assert!(e1 / e2 >= 1.5, "{e1} {e2}");
    }

    #[test]
    fn csv_round_trip() {
        let rho = GridDensity::gaussian(2, 4.0, 10, &[0.0, 1.0], &[1.0, 0.5]).unwrap();
        let mut buf = Vec::new();
        rho.write_csv(&mut buf).unwrap();
        let back = GridDensity::<f64>::read_csv(&buf[..], &rho.metadata_json()).unwrap();
        assert!(rho.l1_distance(&back).unwrap() < 1e-12);
    }

    #[test]
    fn identical_histogram_has_zero_distance() {
        // a batch whose samples sit at cell centers with the grid's weights
        let (s, model) = one_d("zero", 0.0);
        let rho = GridDensity::new(1, 1.0, 4, vec![0.5, 0.0, 1.0, 0.5]).unwrap();
        let law = InitialLaw::empirical(
            [rho.center(0), rho.center(2), rho.center(2), rho.center(3)]
                .iter()
                .map(|&v| SpectralVector::new(vec![v]).unwrap())
                .collect(),
        )
        .unwrap();
        let grid = TimeGrid::covering(0.1, 0.1).unwrap();
        let batch = Simulation::new(model.clone(), s, law, grid, 4, 0).run().unwrap();
        let tv = compare_mc_fp(&batch, &model, &rho, &model, 0.0, &[0]).unwrap();
        assert!(tv.total_variation.abs() < 1e-15);
        let (_, tanh) = one_d("tanh", 0.0);
        assert!(matches!(compare_mc_fp(&batch, &model, &rho, &tanh, 0.0, &[0]), Err(Error::Config(_))));
    }

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let x0: f64 = 0.37;
        for phi in (0..CATALOG_SIZE).map(|i| CylindricalTestFunction::<f64>::catalog(i).unwrap()) {
            let x = [x0, -0.21];
            let eps: f64 = 1e-4;
            for i in phi.coords().to_vec() {
                let mut b = [0.0; 2];
                b[i] = 1.0;
                let up = {
                    let mut y = x;
                    y[i] += eps;
                    phi.value(&y)
                };
                let dn = {
                    let mut y = x;
                    y[i] -= eps;
                    phi.value(&y)
                };
                let fd1 = (up - dn) / (2.0 * eps);
                let fd2 = (up - 2.0 * phi.value(&x) + dn) / (eps * eps);
                let d1 = phi.generator(&x, &[0.0, 0.0], &b);
                let mut qi = [0.0; 2];
                qi[i] = 2.0;
                let d2 = phi.generator(&x, &qi, &[0.0, 0.0]);
                assert!((d1 - fd1).abs() < 1e-6, "{d1} {fd1}");
                assert!((d2 - fd2).abs() < 1e-4, "{d2} {fd2}");
            }
        }
        let phi = CylindricalTestFunction::<f64>::catalog(0).unwrap();
        assert_eq!(phi.value(&[1.5]), 0.0);
        assert_eq!(phi.value(&[2.0]), 0.0);
        assert!(CylindricalTestFunction::<f64>::catalog(3).is_err());
    }

    #[test]
    fn zero_profile_residual_is_zero() {
        let s = CovarianceSpectrum::poly2(2).unwrap();
        let model = Model::Bounded(DriftModel::tanh(&s));
        let law = InitialLaw::dirac(SpectralVector::zeros(2));
        let batch = Simulation::new(model.clone(), s.clone(), law, TimeGrid::covering(1.0, 0.01).unwrap(), 100, 0)
            .run()
            .unwrap();
        let r = weak_identity_residual(&batch, &CylindricalTestFunction::Zero, &model, &s, 1.0).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn brownian_weak_identity() {
        let s = CovarianceSpectrum::poly2(2).unwrap();
        let model = Model::Bounded(DriftModel::zero(&s));
        let law = InitialLaw::gaussian(SpectralVector::zeros(2), vec![0.25; 2]).unwrap();
        let batch = Simulation::new(model.clone(), s.clone(), law, TimeGrid::covering(1.0, 1e-3).unwrap(), 10_000, 2)
            .with_record(Record::Every(10))
            .run()
            .unwrap();
        let phi = CylindricalTestFunction::catalog(0).unwrap();
        let r = weak_identity_residual(&batch, &phi, &model, &s, 1.0).unwrap();
        assert!(r.residual <= 3.0 * r.std_error + 1e-2, "{r:?}");
        let bad = CylindricalTestFunction::bump(vec![5], vec![0.0], vec![1.0]).unwrap();
        assert!(weak_identity_residual(&batch, &bad, &model, &s, 1.0).is_err());
    }
}
