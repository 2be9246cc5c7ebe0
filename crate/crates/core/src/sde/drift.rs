//! Bounded drift registry.

use crate::error::{precondition, Error, Result};
use crate::scalar::Real;
use crate::spectral_space::{CovarianceSpectrum, SpectralVector};

#[derive(Debug, Clone, PartialEq)]
pub enum DriftKind<T> {
    Zero,
    /// `F(x) = c e_1`.
    Constant(T),
    /// `F_j(x) = kappa_j tanh(x_j)`.
    Tanh,
    /// `F_j(x) = kappa_j min(1, sqrt|sin x_1|)`; bounded but not Lipschitz.
    NonLipschitz,
}

/// A bounded perturbation `F` with its exact supremum norms.
///
/// The weights are `kappa_j = q_j`, so `sup ||F|| = (sum q_j^2)^(1/2)` and
/// `sup ||F||_Q = (sum q_j^3)^(1/2)` for the tanh and non-Lipschitz presets.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftModel<T> {
    kind: DriftKind<T>,
    kappa: Vec<T>,
    shift: Option<Vec<T>>,
    sup_h: T,
    sup_q: T,
}

impl<T: Real> DriftModel<T> {
    pub fn zero(spectrum: &CovarianceSpectrum<T>) -> Self {
        Self::build(DriftKind::Zero, spectrum)
    }

    pub fn constant(spectrum: &CovarianceSpectrum<T>, c: T) -> Self {
        Self::build(DriftKind::Constant(c), spectrum)
    }

    pub fn tanh(spectrum: &CovarianceSpectrum<T>) -> Self {
        Self::build(DriftKind::Tanh, spectrum)
    }

    pub fn non_lipschitz(spectrum: &CovarianceSpectrum<T>) -> Self {
        Self::build(DriftKind::NonLipschitz, spectrum)
    }

    /// Registry lookup by preset name; `c` is only used by `constant`.
    pub fn from_name(name: &str, spectrum: &CovarianceSpectrum<T>, c: T) -> Result<Self> {
        match name {
            "zero" => Ok(Self::zero(spectrum)),
            "constant" => Ok(Self::constant(spectrum, c)),
            "tanh" => Ok(Self::tanh(spectrum)),
            "nonlipschitz" => Ok(Self::non_lipschitz(spectrum)),
            other => Err(Error::Config(format!(
                "unknown drift preset '{other}' (expected zero, constant, tanh or nonlipschitz)"
            ))),
        }
    }

    fn build(kind: DriftKind<T>, spectrum: &CovarianceSpectrum<T>) -> Self {
        let kappa = spectrum.q().to_vec();
        let (sup_h, sup_q) = match &kind {
            DriftKind::Zero => (T::zero(), T::zero()),
            // q_1 = 1, so both norms of c e_1 equal |c|
            DriftKind::Constant(c) => (c.abs(), c.abs()),
            DriftKind::Tanh | DriftKind::NonLipschitz => {
                let h: T = kappa.iter().map(|&k| k * k).sum();
                let q: T = kappa
                    .iter()
                    .zip(spectrum.q())
                    .map(|(&k, &q)| q * k * k)
                    .sum();
                (h.sqrt(), q.sqrt())
            }
        };
        Self {
            kind,
            kappa,
            shift: None,
            sup_h,
            sup_q,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            DriftKind::Zero => "zero",
            DriftKind::Constant(_) => "constant",
            DriftKind::Tanh => "tanh",
            DriftKind::NonLipschitz => "nonlipschitz",
        }
    }

    pub fn kind(&self) -> &DriftKind<T> {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.kappa.len()
    }

    /// `sup_x ||F(x)||`.
    pub fn sup_h(&self) -> T {
        self.sup_h
    }

    /// `sup_x ||F(x)||_Q`.
    pub fn sup_q(&self) -> T {
        self.sup_q
    }

    pub fn is_lipschitz(&self) -> bool {
        !matches!(self.kind, DriftKind::NonLipschitz)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, DriftKind::Zero)
    }

    pub fn shift(&self) -> Option<&[T]> {
        self.shift.as_deref()
    }

    /// The drift `x -> F(x - a)`. Shifts compose additively.
    pub fn shifted(&self, a: &SpectralVector<T>) -> Result<Self> {
        precondition(a.dim() == self.dim(), || {
            format!("shift has dimension {}, drift has {}", a.dim(), self.dim())
        })?;
        let mut out = self.clone();
        let total = match &self.shift {
            Some(s) => s.iter().zip(a.coords()).map(|(&x, &y)| x + y).collect(),
            None => a.coords().to_vec(),
        };
        out.shift = Some(total);
        Ok(out)
    }

    #[inline]
    fn arg(&self, x: &[T], j: usize) -> T {
        match &self.shift {
            Some(s) => x[j] - s[j],
            None => x[j],
        }
    }

    /// Writes `F(x)` into `out`; lengths are not checked.
    #[inline]
    pub fn evaluate_into(&self, x: &[T], out: &mut [T]) {
        match self.kind {
            DriftKind::Zero => out.iter_mut().for_each(|v| *v = T::zero()),
            DriftKind::Constant(c) => {
                out.iter_mut().for_each(|v| *v = T::zero());
                out[0] = c;
            }
            DriftKind::Tanh => {
                for (j, v) in out.iter_mut().enumerate() {
                    *v = self.kappa[j] * self.arg(x, j).tanh();
                }
            }
            DriftKind::NonLipschitz => {
                let g = self.arg(x, 0).sin().abs().sqrt().min(T::one());
                for (v, &k) in out.iter_mut().zip(&self.kappa) {
                    *v = k * g;
                }
            }
        }
    }

    pub fn evaluate(&self, x: &SpectralVector<T>) -> Result<SpectralVector<T>> {
        if x.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        let mut out = vec![T::zero(); self.dim()];
        self.evaluate_into(x.coords(), &mut out);
        SpectralVector::new(out)
    }
}
