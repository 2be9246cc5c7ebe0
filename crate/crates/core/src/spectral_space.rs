//! Geometry of the truncated Hilbert space.
//!
//! Coordinates are always expressed in the eigenbasis of the covariance
//! operator `Q`, so `Q` acts diagonally and the weighted norm is a plain
//! weighted sum of squares.

use std::ops::{Add, Index, Sub};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::scalar::Real;

/// Named spectrum families with a closed-form full trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumPreset {
    /// `q_j = j^-2`, full trace `pi^2 / 6`.
    Poly2,
    /// `q_j = 2^(1-j)`, full trace `2`.
    Geom2,
    Custom,
}

impl SpectrumPreset {
    pub fn name(self) -> &'static str {
        match self {
            SpectrumPreset::Poly2 => "poly2",
            SpectrumPreset::Geom2 => "geom2",
            SpectrumPreset::Custom => "custom",
        }
    }
}

/// First `dim` eigenvalues of the covariance operator.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpectrum<T> {
    q: Vec<T>,
    trace_full: Option<T>,
    preset: SpectrumPreset,
}

impl<T: Real> CovarianceSpectrum<T> {
    pub fn poly2(dim: usize) -> Result<Self> {
        let q = (1..=dim).map(|j| T::one() / T::of((j * j) as f64)).collect();
        Self::build(q, Some(T::PI() * T::PI() / T::of(6.0)), SpectrumPreset::Poly2)
    }

    pub fn geom2(dim: usize) -> Result<Self> {
        let q = (0..dim).map(|k| T::of(0.5).powi(k as i32)).collect();
        Self::build(q, Some(T::of(2.0)), SpectrumPreset::Geom2)
    }

    pub fn custom(q: Vec<T>) -> Result<Self> {
        Self::build(q, None, SpectrumPreset::Custom)
    }

    pub fn from_preset(preset: SpectrumPreset, dim: usize) -> Result<Self> {
        match preset {
            SpectrumPreset::Poly2 => Self::poly2(dim),
            SpectrumPreset::Geom2 => Self::geom2(dim),
            SpectrumPreset::Custom => Err(Error::Config(
                "custom spectrum needs an explicit eigenvalue list".into(),
            )),
        }
    }

    fn build(q: Vec<T>, trace_full: Option<T>, preset: SpectrumPreset) -> Result<Self> {
        let problems = validate_eigenvalues(&q);
        if let Some(first) = problems.into_iter().next() {
            return Err(Error::Config(first));
        }
        Ok(Self {
            q,
            trace_full,
            preset,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[T] {
        &self.q
    }

    pub fn preset(&self) -> SpectrumPreset {
        self.preset
    }

    /// Trace of the truncated operator, `sum_{j<=d} q_j`.
    pub fn trace(&self) -> T {
        self.q.iter().copied().sum()
    }

    pub fn trace_full(&self) -> Option<T> {
        self.trace_full
    }

    /// Mass of the spectrum discarded by truncation, when known.
    pub fn truncation_tail(&self) -> Option<T> {
        self.trace_full.map(|t| t - self.trace())
    }

    pub fn check_dim(&self, got: usize) -> Result<()> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.dim(),
                got,
            })
        }
    }

    /// `sum_j q_j x_j^2` without dimension checks.
    #[inline]
    pub fn q_norm_sq_unchecked(&self, x: &[T]) -> T {
        self.q
            .iter()
            .zip(x)
            .fold(T::zero(), |acc, (&q, &v)| acc + q * v * v)
    }
}

/// All diagnostics for a candidate eigenvalue list; empty means admissible.
pub fn validate_eigenvalues<T: Real>(q: &[T]) -> Vec<String> {
    let mut out = Vec::new();
    if q.is_empty() {
        out.push("spectrum must have at least one eigenvalue".to_string());
        return out;
    }
    if q[0] != T::one() {
        out.push("q_1 must equal 1".to_string());
    }
    if q.iter().any(|v| !v.is_finite() || *v <= T::zero()) {
        out.push("eigenvalues must be finite and strictly positive".to_string());
    }
    if q.windows(2).any(|w| w[1] > w[0]) {
        out.push("eigenvalues must be non-increasing".to_string());
    }
    out
}

/// Coordinates `x_j = <x, e_j>` of a point of the truncated space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpectralVector<T>(Vec<T>);

impl<T: Real> SpectralVector<T> {
    pub fn new(coords: Vec<T>) -> Result<Self> {
        precondition(coords.iter().all(|v| v.is_finite()), || {
            "vector entries must be finite".into()
        })?;
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    /// Unit vector `e_{index+1}` (zero-based index).
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = vec![T::zero(); dim];
        v[index] = T::one();
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[T] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<T> {
        self.0
    }

    pub fn scale(&self, s: T) -> Self {
        Self(self.0.iter().map(|&v| v * s).collect())
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        check_same(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    /// Pads with zeros (or truncates) to `dim` coordinates.
    pub fn resized(&self, dim: usize) -> Self {
        let mut v = self.0.clone();
        v.resize(dim, T::zero());
        Self(v)
    }
}

impl<T> Index<usize> for SpectralVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T: Real> Add for &SpectralVector<T> {
    type Output = SpectralVector<T>;
    fn add(self, rhs: Self) -> SpectralVector<T> {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in vector add");
        SpectralVector(self.0.iter().zip(&rhs.0).map(|(&a, &b)| a + b).collect())
    }
}

impl<T: Real> Sub for &SpectralVector<T> {
    type Output = SpectralVector<T>;
    fn sub(self, rhs: Self) -> SpectralVector<T> {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in vector sub");
        SpectralVector(self.0.iter().zip(&rhs.0).map(|(&a, &b)| a - b).collect())
    }
}

fn check_same(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Weighted norm `(sum_j q_j x_j^2)^(1/2)`.
pub fn q_norm<T: Real>(x: &SpectralVector<T>, spectrum: &CovarianceSpectrum<T>) -> Result<T> {
    spectrum.check_dim(x.dim())?;
    Ok(spectrum.q_norm_sq_unchecked(x.coords()).sqrt())
}

/// Euclidean norm of the coordinates.
pub fn h_norm<T: Real>(x: &SpectralVector<T>) -> T {
    dot(x.coords(), x.coords()).sqrt()
}

/// Closed set `{x : ||x - a||_Q <= R}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid<T> {
    center: SpectralVector<T>,
    radius: T,
    spectrum: CovarianceSpectrum<T>,
}

impl<T: Real> Ellipsoid<T> {
    pub fn new(center: SpectralVector<T>, radius: T, spectrum: CovarianceSpectrum<T>) -> Result<Self> {
        spectrum.check_dim(center.dim())?;
        precondition(radius > T::zero() && radius.is_finite(), || {
            format!("ellipsoid radius must be positive, got {radius}")
        })?;
        Ok(Self {
            center,
            radius,
            spectrum,
        })
    }

    pub fn center(&self) -> &SpectralVector<T> {
        &self.center
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn spectrum(&self) -> &CovarianceSpectrum<T> {
        &self.spectrum
    }

    pub fn contains(&self, x: &SpectralVector<T>) -> Result<bool> {
        self.spectrum.check_dim(x.dim())?;
        Ok(self.contains_coords(x.coords()))
    }

    /// Squared Q-distance from the center; slice length is not checked.
    #[inline]
    pub fn q_dist_sq(&self, x: &[T]) -> T {
        self.spectrum
            .q()
            .iter()
            .zip(x)
            .zip(self.center.coords())
            .fold(T::zero(), |acc, ((&q, &v), &c)| {
                let d = v - c;
                acc + q * d * d
            })
    }

    #[inline]
    pub fn contains_coords(&self, x: &[T]) -> bool {
        // compare norms, not squares, so that boundary points built as
        // `a + R * u` with `||u||_Q = 1` stay inside
        self.q_dist_sq(x).sqrt() <= self.radius
    }

    /// `K_{R/2}(a + eps e_1)`, which lies inside `K_R(a)` whenever `eps <= R/2`.
    pub fn inner_shifted(&self, eps: T) -> Result<Self> {
        let half = self.radius / T::of(2.0);
        precondition(eps >= T::zero() && eps <= half, || {
            format!("shift {eps} must lie in [0, R/2 = {half}]")
        })?;
        let mut c = self.center.coords().to_vec();
        c[0] += eps;
        Self::new(SpectralVector(c), half, self.spectrum.clone())
    }

    /// Uniform sample: a uniform point of the unit ball in the rescaled
    /// coordinates `y_j = sqrt(q_j) (x_j - a_j) / R`.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> SpectralVector<T> {
        let y = unit_ball_point::<T, R>(self.center.dim(), rng);
        SpectralVector(
            y.iter()
                .zip(self.spectrum.q())
                .zip(self.center.coords())
                .map(|((&y, &q), &c)| c + self.radius * y / q.sqrt())
                .collect(),
        )
    }
}

/// Closed Euclidean ball `{x : ||x - a|| <= R}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball<T> {
    center: SpectralVector<T>,
    radius: T,
}

impl<T: Real> Ball<T> {
    pub fn new(center: SpectralVector<T>, radius: T) -> Result<Self> {
        precondition(radius > T::zero() && radius.is_finite(), || {
            format!("ball radius must be positive, got {radius}")
        })?;
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &SpectralVector<T> {
        &self.center
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn contains(&self, x: &SpectralVector<T>) -> Result<bool> {
        check_same(self.center.dim(), x.dim())?;
        Ok(h_norm(&(x - &self.center)) <= self.radius)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> SpectralVector<T> {
        let y = unit_ball_point::<T, R>(self.center.dim(), rng);
        SpectralVector(
            y.iter()
                .zip(self.center.coords())
                .map(|(&y, &c)| c + self.radius * y)
                .collect(),
        )
    }
}

/// Uniform point of the closed unit ball in `R^dim`.
pub(crate) fn unit_ball_point<T: Real, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<T> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let r = u.powf(1.0 / dim as f64);
        return g.iter().map(|v| T::of(v / n * r)).collect();
    }
}
