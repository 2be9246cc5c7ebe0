use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{precondition, Error, Result};
use crate::scalar::Real;
use crate::spectral_space::{dot, unit_ball_point, CovarianceSpectrum, SpectralVector};

/// Attempts per draw before the shell sampler gives up.
const SHELL_MAX_ATTEMPTS: usize = 100_000;

/// Law of the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw<T> {
    Dirac(SpectralVector<T>),
    /// Independent coordinates with the given means and variances.
    Gaussian {
        mean: SpectralVector<T>,
        variance: Vec<T>,
    },
    /// Uniform on `U_N(c) \ K_delta(c)`.
    Shell {
        center: SpectralVector<T>,
        outer: T,
        inner: T,
    },
    /// Path `i` starts at sample `i` when the counts agree; otherwise each
    /// path draws a sample uniformly with replacement.
    Empirical(Vec<SpectralVector<T>>),
}

impl<T: Real> InitialLaw<T> {
    pub fn dirac(point: SpectralVector<T>) -> Self {
        InitialLaw::Dirac(point)
    }

    pub fn gaussian(mean: SpectralVector<T>, variance: Vec<T>) -> Result<Self> {
        precondition(variance.len() == mean.dim(), || {
            "variance list must match the mean's dimension".into()
        })?;
        precondition(variance.iter().all(|v| *v >= T::zero() && v.is_finite()), || {
            "variances must be finite and nonnegative".into()
        })?;
        Ok(InitialLaw::Gaussian { mean, variance })
    }

    pub fn shell(center: SpectralVector<T>, outer: T, inner: T) -> Result<Self> {
        precondition(outer > inner && inner > T::zero(), || {
            format!("shell requires N > delta > 0, got N = {outer}, delta = {inner}")
        })?;
        Ok(InitialLaw::Shell {
            center,
            outer,
            inner,
        })
    }

    pub fn empirical(samples: Vec<SpectralVector<T>>) -> Result<Self> {
        precondition(!samples.is_empty(), || "empirical law needs samples".into())?;
        let d = samples[0].dim();
        precondition(samples.iter().all(|s| s.dim() == d), || {
            "empirical samples must share one dimension".into()
        })?;
        Ok(InitialLaw::Empirical(samples))
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Dirac(p) => p.dim(),
            InitialLaw::Gaussian { mean, .. } => mean.dim(),
            InitialLaw::Shell { center, .. } => center.dim(),
            InitialLaw::Empirical(s) => s[0].dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            InitialLaw::Dirac(_) => "dirac",
            InitialLaw::Gaussian { .. } => "gaussian",
            InitialLaw::Shell { .. } => "shell",
            InitialLaw::Empirical(_) => "empirical",
        }
    }

    /// Mean of the law (the center for shells, which are symmetric).
    pub fn mean(&self) -> SpectralVector<T> {
        match self {
            InitialLaw::Dirac(p) => p.clone(),
            InitialLaw::Gaussian { mean, .. } => mean.clone(),
            InitialLaw::Shell { center, .. } => center.clone(),
            InitialLaw::Empirical(s) => {
                let n = T::of(s.len() as f64);
                let mut m = vec![T::zero(); s[0].dim()];
                for x in s {
                    for (a, &b) in m.iter_mut().zip(x.coords()) {
                        *a += b / n;
                    }
                }
                SpectralVector::new(m).expect("finite samples")
            }
        }
    }

    /// Translated law `Law(eta + a)`.
    pub fn shifted(&self, a: &SpectralVector<T>) -> Result<Self> {
        if a.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: a.dim(),
            });
        }
        Ok(match self {
            InitialLaw::Dirac(p) => InitialLaw::Dirac(p + a),
            InitialLaw::Gaussian { mean, variance } => InitialLaw::Gaussian {
                mean: mean + a,
                variance: variance.clone(),
            },
            InitialLaw::Shell {
                center,
                outer,
                inner,
            } => InitialLaw::Shell {
                center: center + a,
                outer: *outer,
                inner: *inner,
            },
            InitialLaw::Empirical(s) => InitialLaw::Empirical(s.iter().map(|x| x + a).collect()),
        })
    }

    /// Draws the initial state of path `path` out of `paths` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        spectrum: &CovarianceSpectrum<T>,
        path: usize,
        paths: usize,
        rng: &mut R,
        out: &mut [T],
    ) -> Result<()> {
        match self {
            InitialLaw::Dirac(p) => out.copy_from_slice(p.coords()),
            InitialLaw::Gaussian { mean, variance } => {
                for ((o, &m), &v) in out.iter_mut().zip(mean.coords()).zip(variance) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = m + v.sqrt() * T::of(z);
                }
            }
            InitialLaw::Shell {
                center,
                outer,
                inner,
            } => {
                let d = center.dim();
                let mut accepted = false;
                for _ in 0..SHELL_MAX_ATTEMPTS {
                    let y: Vec<T> = unit_ball_point(d, rng);
                    let y: Vec<T> = y.into_iter().map(|v| v * *outer).collect();
                    // U_N \ K_delta: keep ||y|| <= N and ||y||_Q > delta
                    if dot(&y, &y).sqrt() <= *outer
                        && spectrum.q_norm_sq_unchecked(&y).sqrt() > *inner
                    {
                        for ((o, &c), &v) in out.iter_mut().zip(center.coords()).zip(&y) {
                            *o = c + v;
                        }
                        accepted = true;
                        break;
                    }
                }
                precondition(accepted, || {
                    format!("shell sampler found no point of U_N \\ K_delta in {SHELL_MAX_ATTEMPTS} tries")
                })?;
            }
            InitialLaw::Empirical(samples) => {
                let idx = if samples.len() == paths {
                    path
                } else {
                    rng.random_range(0..samples.len())
                };
                out.copy_from_slice(samples[idx].coords());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_space::{h_norm, q_norm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shell_requires_ordered_radii() {
        let c = SpectralVector::<f64>::zeros(3);
        assert!(InitialLaw::shell(c.clone(), 1.0, 1.0).is_err());
        assert!(InitialLaw::shell(c.clone(), 1.0, 0.0).is_err());
        assert!(InitialLaw::shell(c, 2.0, 0.5).is_ok());
    }

    #[test]
    fn shell_samples_lie_in_the_shell() {
        let s = CovarianceSpectrum::poly2(8).unwrap();
        let law = InitialLaw::shell(SpectralVector::zeros(8), 2.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = vec![0.0; 8];
        for i in 0..5000 {
            law.sample_into(&s, i, 5000, &mut rng, &mut x).unwrap();
            let v = SpectralVector::new(x.clone()).unwrap();
            assert!(h_norm(&v) <= 2.0);
            assert!(q_norm(&v, &s).unwrap() > 0.5);
        }
    }

    #[test]
    fn empirical_assignment() {
        let s = CovarianceSpectrum::poly2(1).unwrap();
        let samples: Vec<_> = (0..4)
            .map(|i| SpectralVector::new(vec![i as f64]).unwrap())
            .collect();
        let law = InitialLaw::empirical(samples).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = [0.0];
        for i in 0..4 {
            law.sample_into(&s, i, 4, &mut rng, &mut x).unwrap();
            assert_eq!(x[0], i as f64);
        }
        law.sample_into(&s, 0, 10, &mut rng, &mut x).unwrap();
        assert!((0.0..4.0).contains(&x[0]));
    }

    #[test]
    fn shifting_moves_the_mean() {
        let a = SpectralVector::new(vec![2.0, 0.0]).unwrap();
        let law = InitialLaw::gaussian(SpectralVector::zeros(2), vec![1.0, 1.0]).unwrap();
        assert_eq!(law.shifted(&a).unwrap().mean(), a);
        assert!(law.shifted(&SpectralVector::zeros(3)).is_err());
    }
}
