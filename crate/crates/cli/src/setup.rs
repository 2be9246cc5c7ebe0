//! Turning a scenario file into simulation objects.

use hilbert_diffuse::kolmogorov::{CylindricalTestFunction, CATALOG_SIZE};
use hilbert_diffuse::positivity::{geometric_probes, TauVariant};
use hilbert_diffuse::sde::{DriftModel, InitialLaw, LinearOperator, Model};
use hilbert_diffuse::spectral_space::{
    h_norm, validate_eigenvalues, CovarianceSpectrum, Ellipsoid, SpectralVector, SpectrumPreset,
};

use crate::config::{ConfigError, ScenarioFile};

pub const SEED_ENV: &str = "HD_SEED";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSource {
    Flag,
    Scenario,
    Env,
    Default,
}

impl SeedSource {
    pub fn name(self) -> &'static str {
        match self {
            SeedSource::Flag => "flag",
            SeedSource::Scenario => "scenario",
            SeedSource::Env => "env",
            SeedSource::Default => "default",
        }
    }
}

/// Requested probe times before the horizon or `tau` is known.
#[derive(Debug, Clone, PartialEq)]
pub enum Probes {
    Unset,
    List(Vec<f64>),
    Geometric(usize),
}

impl Probes {
    pub fn resolve(&self, horizon: f64, default: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
        match self {
            Probes::Unset => default(),
            Probes::List(v) => v.clone(),
            Probes::Geometric(k) => geometric_probes(horizon, *k),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub spectrum: CovarianceSpectrum<f64>,
    pub model: Model<f64>,
    pub initial: InitialLaw<f64>,
    /// Bound on `||X_0||` when the initial law is bounded.
    pub initial_radius: Option<f64>,
    pub target: Ellipsoid<f64>,
    pub horizon: f64,
    pub step: f64,
    pub paths: usize,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub probes: Probes,
    pub variant: TauVariant,
    pub chain_horizon: Option<f64>,
    pub oracle_cells: usize,
    pub oracle_dt: Option<f64>,
    pub stride: usize,
    pub test_functions: Vec<(String, CylindricalTestFunction<f64>)>,
}

fn padded(f: &ScenarioFile, key: &str, dim: usize, errs: &mut Vec<ConfigError>) -> SpectralVector<f64> {
    match f.list(key) {
        Ok(None) => SpectralVector::zeros(dim),
        Ok(Some(v)) if v.len() > dim => {
            errs.push(f.error(key, format!("has {} entries but the dimension is {dim}", v.len())));
            SpectralVector::zeros(dim)
        }
        Ok(Some(mut v)) => {
            v.resize(dim, 0.0);
            SpectralVector::new(v).expect("parsed values are finite")
        }
        Err(e) => {
            errs.push(e);
            SpectralVector::zeros(dim)
        }
    }
}

fn take<T>(r: Result<T, ConfigError>, fallback: T, errs: &mut Vec<ConfigError>) -> T {
    r.unwrap_or_else(|e| {
        errs.push(e);
        fallback
    })
}

/// Resolves the seed: `--seed`, then the scenario's `seed`, then `HD_SEED`,
/// then [`DEFAULT_SEED`].
pub fn resolve_seed(
    f: &ScenarioFile,
    flag: Option<u64>,
    env: Option<String>,
) -> Result<(u64, SeedSource), ConfigError> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Some(s) = f.opt_u64("seed")? {
        return Ok((s, SeedSource::Scenario));
    }
    if let Some(v) = env {
        let s = v.trim().parse::<u64>().map_err(|_| {
            ConfigError::general(format!("{SEED_ENV} must be an unsigned 64-bit integer, got '{v}'"))
        })?;
        return Ok((s, SeedSource::Env));
    }
    Ok((DEFAULT_SEED, SeedSource::Default))
}

pub fn build(f: &ScenarioFile, seed_flag: Option<u64>) -> Result<Setup, Vec<ConfigError>> {
    let mut errs = Vec::new();

    let spectrum = build_spectrum(f, &mut errs);
    let Some(spectrum) = spectrum else {
        return Err(errs);
    };
    let d = spectrum.dim();

    let c = take(f.real("drift.c", 1.0), 1.0, &mut errs);
    let drift_name = f.string("drift", "zero");
    let drift = match DriftModel::from_name(&drift_name, &spectrum, c) {
        Ok(m) => m,
        Err(e) => {
            errs.push(f.error("drift", e.to_string()));
            DriftModel::zero(&spectrum)
        }
    };
    let model = match f.string("model", "bounded").as_str() {
        "bounded" => Model::Bounded(drift),
        "linear" => {
            let eps = take(f.real("operator.epsilon", 1.0), 1.0, &mut errs);
            let op = match f.string("operator", "heat").as_str() {
                "heat" => Ok(LinearOperator::heat(d)),
                "shifted" => LinearOperator::shifted(d, eps).map_err(|e| f.error("operator.epsilon", e.to_string())),
                other => Err(f.error("operator", format!("unknown operator '{other}' (expected heat or shifted)"))),
            };
            match op {
                Ok(operator) => Model::Linear { operator, drift },
                Err(e) => {
                    errs.push(e);
                    Model::Bounded(drift)
                }
            }
        }
        other => {
            errs.push(f.error("model", format!("unknown model '{other}' (expected bounded or linear)")));
            Model::Bounded(drift)
        }
    };

    let target_center = padded(f, "target.center", d, &mut errs);
    let radius = take(f.real("target.radius", 1.0), 1.0, &mut errs);
    let target = match Ellipsoid::new(target_center.clone(), radius, spectrum.clone()) {
        Ok(t) => Some(t),
        Err(e) => {
            errs.push(f.error("target.radius", e.to_string()));
            None
        }
    };

    let (initial, initial_radius) = build_initial(f, d, &target_center, &mut errs);

    let horizon = take(f.real("T", 1.0), 1.0, &mut errs);
    let step = take(f.real("h", 1e-3), 1e-3, &mut errs);
    if !(step > 0.0) {
        errs.push(f.error("h", "step must be positive"));
    } else if horizon < step {
        errs.push(f.error("T", format!("horizon {horizon} is shorter than one step {step}")));
    }
    let paths = take(f.count("N", 1000), 1000, &mut errs);
    if paths == 0 {
        errs.push(f.error("N", "need at least one path"));
    }
    let probes = match f.raw("probes") {
        None => Probes::Unset,
        Some(v) => match v.strip_prefix("geometric:") {
            Some(k) => match k.trim().parse::<usize>() {
                Ok(k) if k > 0 => Probes::Geometric(k),
                _ => {
                    errs.push(f.error("probes", format!("bad geometric count '{k}'")));
                    Probes::Unset
                }
            },
            None => match f.list("probes") {
                Ok(Some(v)) => Probes::List(v),
                Ok(None) => Probes::Unset,
                Err(e) => {
                    errs.push(e);
                    Probes::Unset
                }
            },
        },
    };
    let variant = match TauVariant::from_name(&f.string("tau.variant", "h_norm")) {
        Ok(v) => v,
        Err(e) => {
            errs.push(f.error("tau.variant", e.to_string()));
            TauVariant::HNorm
        }
    };
    let chain_horizon = take(f.opt_real("M"), None, &mut errs);
    let oracle_cells = take(f.count("oracle.cells", 200), 200, &mut errs);
    let oracle_dt = take(f.opt_real("oracle.dt"), None, &mut errs);
    let stride = take(f.count("record.stride", 10), 10, &mut errs).max(1);
    let test_functions = build_test_functions(f, &mut errs);

    let (seed, seed_source) = take(
        resolve_seed(f, seed_flag, std::env::var(SEED_ENV).ok()),
        (DEFAULT_SEED, SeedSource::Default),
        &mut errs,
    );

    match (errs.is_empty(), initial, target) {
        (true, Some(initial), Some(target)) => Ok(Setup {
            spectrum,
            model,
            initial,
            initial_radius,
            target,
            horizon,
            step,
            paths,
            seed,
            seed_source,
            probes,
            variant,
            chain_horizon,
            oracle_cells,
            oracle_dt,
            stride,
            test_functions,
        }),
        _ => Err(errs),
    }
}

fn build_spectrum(f: &ScenarioFile, errs: &mut Vec<ConfigError>) -> Option<CovarianceSpectrum<f64>> {
    let preset = match f.string("spectrum", "poly2").as_str() {
        "poly2" => SpectrumPreset::Poly2,
        "geom2" => SpectrumPreset::Geom2,
        "custom" => SpectrumPreset::Custom,
        other => {
            errs.push(f.error("spectrum", format!("unknown spectrum '{other}' (expected poly2, geom2 or custom)")));
            return None;
        }
    };
    if preset == SpectrumPreset::Custom {
        let q = match f.list("spectrum.q") {
            Ok(Some(q)) => q,
            Ok(None) => {
                errs.push(f.error("spectrum", "custom spectrum needs spectrum.q"));
                return None;
            }
            Err(e) => {
                errs.push(e);
                return None;
            }
        };
        let problems = validate_eigenvalues(&q);
        if !problems.is_empty() {
            errs.extend(problems.into_iter().map(|p| f.error("spectrum.q", p)));
            return None;
        }
        if let Some(dim) = take(f.count("spectrum.dim", q.len()).map(Some), None, errs) {
            if dim != q.len() {
                errs.push(f.error("spectrum.dim", format!("is {dim} but spectrum.q has {} entries", q.len())));
                return None;
            }
        }
        return CovarianceSpectrum::custom(q).map_err(|e| errs.push(f.error("spectrum.q", e.to_string()))).ok();
    }
    if f.contains("spectrum.q") {
        errs.push(f.error("spectrum.q", "only allowed with spectrum = custom"));
    }
    let dim = take(f.count("spectrum.dim", 8), 8, errs);
    CovarianceSpectrum::from_preset(preset, dim)
        .map_err(|e| errs.push(f.error("spectrum.dim", e.to_string())))
        .ok()
}

fn build_initial(
    f: &ScenarioFile,
    d: usize,
    target_center: &SpectralVector<f64>,
    errs: &mut Vec<ConfigError>,
) -> (Option<InitialLaw<f64>>, Option<f64>) {
    match f.string("initial", "dirac").as_str() {
        "dirac" => {
            let point = if f.contains("initial.point") {
                padded(f, "initial.point", d, errs)
            } else {
                target_center.clone()
            };
            let r = h_norm(&point);
            (Some(InitialLaw::dirac(point)), Some(r))
        }
        "gaussian" => {
            let mean = padded(f, "initial.mean", d, errs);
            let var = match f.list("initial.var") {
                Ok(None) => vec![1.0; d],
                Ok(Some(v)) if v.len() == 1 => vec![v[0]; d],
                Ok(Some(v)) if v.len() == d => v,
                Ok(Some(v)) => {
                    errs.push(f.error("initial.var", format!("needs 1 or {d} entries, got {}", v.len())));
                    vec![1.0; d]
                }
                Err(e) => {
                    errs.push(e);
                    vec![1.0; d]
                }
            };
            match InitialLaw::gaussian(mean, var) {
                Ok(l) => (Some(l), None),
                Err(e) => {
                    errs.push(f.error("initial.var", e.to_string()));
                    (None, None)
                }
            }
        }
        "shell" => {
            let center = padded(f, "initial.center", d, errs);
            let outer = take(f.real("initial.radius", 2.0), 2.0, errs);
            let inner = take(f.real("initial.delta", 0.5), 0.5, errs);
            let r = outer + h_norm(&center);
            match InitialLaw::shell(center, outer, inner) {
                Ok(l) => (Some(l), Some(r)),
                Err(_) => {
                    errs.push(f.error(
                        "initial.delta",
                        format!("shell requires N > delta > 0, got N = {outer}, delta = {inner}"),
                    ));
                    (None, None)
                }
            }
        }
        other => {
            errs.push(f.error("initial", format!("unknown initial law '{other}' (expected dirac, gaussian or shell)")));
            (None, None)
        }
    }
}

fn build_test_functions(
    f: &ScenarioFile,
    errs: &mut Vec<ConfigError>,
) -> Vec<(String, CylindricalTestFunction<f64>)> {
    let spec = f.string("test_function", "all");
    let indices: Vec<usize> = match spec.as_str() {
        "all" => (0..CATALOG_SIZE).collect(),
        "zero" => return vec![("zero".into(), CylindricalTestFunction::Zero)],
        s => match s.parse::<usize>() {
            Ok(i) => vec![i],
            Err(_) => {
                errs.push(f.error("test_function", format!("expected all, zero or a catalog index, got '{s}'")));
                return Vec::new();
            }
        },
    };
    indices
        .into_iter()
        .filter_map(|i| match CylindricalTestFunction::catalog(i) {
            Ok(phi) => Some((format!("bump{i}"), phi)),
            Err(e) => {
                errs.push(f.error("test_function", e.to_string()));
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ScenarioFile {
        ScenarioFile::parse(text).unwrap()
    }

    #[test]
    fn defaults() {
        let s = build(&parse(""), Some(3)).unwrap();
        assert_eq!(s.spectrum.dim(), 8);
        assert_eq!(s.model.drift().name(), "zero");
        assert_eq!(s.initial, InitialLaw::dirac(SpectralVector::zeros(8)));
        assert_eq!((s.seed, s.seed_source), (3, SeedSource::Flag));
    }

    #[test]
    fn seed_precedence() {
        let with = parse("seed = 5");
        let without = parse("");
        assert_eq!(resolve_seed(&with, Some(1), Some("9".into())).unwrap(), (1, SeedSource::Flag));
        assert_eq!(resolve_seed(&with, None, Some("9".into())).unwrap(), (5, SeedSource::Scenario));
        assert_eq!(resolve_seed(&without, None, Some("9".into())).unwrap(), (9, SeedSource::Env));
        assert_eq!(resolve_seed(&without, None, None).unwrap(), (DEFAULT_SEED, SeedSource::Default));
        assert!(resolve_seed(&without, None, Some("x".into())).is_err());
    }

    #[test]
    fn spectrum_checks() {
        assert!(build(&parse("spectrum = custom\nspectrum.q = 1, 0.5, 0.25"), None).is_ok());
        let errs = build(&parse("spectrum = custom\nspectrum.q = 0.9, 0.5"), None).unwrap_err();
        assert!(errs.iter().any(|e| e.message == "q_1 must equal 1"));
    }

    #[test]
    fn shell_radii() {
        let errs = build(&parse("initial = shell\ninitial.radius = 1\ninitial.delta = 1"), None).unwrap_err();
        assert!(errs[0].to_string().contains("N > delta > 0"));
    }

    #[test]
    fn vectors_are_zero_padded() {
        let s = build(&parse("spectrum.dim = 4\ntarget.center = 3"), None).unwrap();
        assert_eq!(s.target.center().coords(), &[3.0, 0.0, 0.0, 0.0]);
        assert!(build(&parse("spectrum.dim = 2\ntarget.center = 1, 2, 3"), None).is_err());
    }
}
