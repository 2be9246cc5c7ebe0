use crate::error::{precondition, Result};
use crate::scalar::Real;

/// Diagonal negative operator: `A` acts as `-a_j` on coordinate `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator<T> {
    a: Vec<T>,
    epsilon: T,
}

impl<T: Real> LinearOperator<T> {
    pub fn new(a: Vec<T>, epsilon: T) -> Result<Self> {
        precondition(epsilon > T::zero(), || {
            format!("spectral gap must be positive, got {epsilon}")
        })?;
        precondition(a.iter().all(|&v| v.is_finite() && v >= epsilon), || {
            format!("all rates must be finite and >= {epsilon}")
        })?;
        Ok(Self { a, epsilon })
    }

    /// Heat-equation modes `a_j = j^2`.
    pub fn heat(dim: usize) -> Self {
        let a = (1..=dim).map(|j| T::of((j * j) as f64)).collect();
        Self {
            a,
            epsilon: T::one(),
        }
    }

    /// `a_j = epsilon + (j - 1)`.
    pub fn shifted(dim: usize, epsilon: T) -> Result<Self> {
        let a = (0..dim).map(|k| epsilon + T::of(k as f64)).collect();
        Self::new(a, epsilon)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn rates(&self) -> &[T] {
        &self.a
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Semigroup factor `e^{-a_j t}`.
    #[inline]
    pub fn decay(&self, j: usize, t: T) -> T {
        (-self.a[j] * t).exp()
    }

    /// `(1 - e^{-a_j h}) / a_j`, the exact weight of a frozen drift.
    #[inline]
    pub fn phi1(&self, j: usize, h: T) -> T {
        -(-self.a[j] * h).exp_m1() / self.a[j]
    }

    /// Variance of the per-mode stochastic convolution over `h`, divided by
    /// `q_j`: `(1 - e^{-2 a_j h}) / (2 a_j)`.
    #[inline]
    pub fn convolution_factor(&self, j: usize, h: T) -> T {
        let two_a = self.a[j] + self.a[j];
        -(-two_a * h).exp_m1() / two_a
    }
}
