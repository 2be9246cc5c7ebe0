use hilbert_diffuse::batch::{Record, TimeGrid};
use hilbert_diffuse::observables::{c_constant, normalized_projection_norm, time_change, PathDiagnostics};
use hilbert_diffuse::positivity::{probe_hits, tau_of_r, TauVariant};
use hilbert_diffuse::sde::{DriftModel, InitialLaw, Model, Simulation};
use hilbert_diffuse::spectral_space::{h_norm, q_norm, Ball, CovarianceSpectrum, Ellipsoid, SpectralVector};
use hilbert_diffuse::stats::wilson;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spectra(d: usize) -> Vec<CovarianceSpectrum<f64>> {
    vec![
        CovarianceSpectrum::poly2(d).unwrap(),
        CovarianceSpectrum::geom2(d).unwrap(),
        CovarianceSpectrum::custom((0..d).map(|j| if j < 2 { 1.0 } else { 0.3 }).collect()).unwrap(),
    ]
}

fn drifts(s: &CovarianceSpectrum<f64>, c: f64) -> Vec<DriftModel<f64>> {
    vec![
        DriftModel::zero(s),
        DriftModel::constant(s, c),
        DriftModel::tanh(s),
        DriftModel::non_lipschitz(s),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_domination(coords in prop::collection::vec(-10.0f64..10.0, 6)) {
        let x = SpectralVector::new(coords.clone()).unwrap();
        for s in spectra(6) {
            let h = h_norm(&x);
            let q = q_norm(&x, &s).unwrap();
            prop_assert!(h >= q);
            let off_unit = coords.iter().zip(s.q()).any(|(&v, &qj)| qj < 1.0 && v != 0.0);
            if off_unit {
                prop_assert!(h > q);
            }
        }
    }

    #[test]
    fn projection_identity(coords in prop::collection::vec(-10.0f64..10.0, 8)) {
        prop_assume!(coords.iter().any(|v| v.abs() > 1e-6));
        let x = SpectralVector::new(coords).unwrap();
        for s in spectra(8) {
            let phi = normalized_projection_norm(&x, &s).unwrap();
            prop_assert!((phi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shifted_inner_ellipsoid_is_contained(
        radius in 0.1f64..5.0,
        center in prop::collection::vec(-3.0f64..3.0, 4),
        frac in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let s = CovarianceSpectrum::poly2(4).unwrap();
        let k = Ellipsoid::new(SpectralVector::new(center).unwrap(), radius, s).unwrap();
        let inner = k.inner_shifted(frac * radius / 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10_000 {
            let x = inner.sample_uniform(&mut rng);
            prop_assert!(k.contains(&x).unwrap());
        }
    }

    #[test]
    fn ball_lies_in_ellipsoid(radius in 0.1f64..5.0, seed in any::<u64>()) {
        let s = CovarianceSpectrum::geom2(5).unwrap();
        let a = SpectralVector::new(vec![1.0, -1.0, 0.0, 2.0, 0.5]).unwrap();
        let ball = Ball::new(a.clone(), radius).unwrap();
        let k = Ellipsoid::new(a, radius, s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..2000 {
            prop_assert!(k.contains(&ball.sample_uniform(&mut rng)).unwrap());
        }
    }

    #[test]
    fn tau_variants_are_ordered(radius in 1e-3f64..10.0, c in -3.0f64..3.0) {
        for s in spectra(6) {
            for f in drifts(&s, c) {
                let h = tau_of_r(radius, &f, TauVariant::HNorm).unwrap();
                let q = tau_of_r(radius, &f, TauVariant::QNorm).unwrap();
                prop_assert!(h <= q);
                prop_assert!(h > 0.0);
            }
        }
    }

    #[test]
    fn clock_is_nondecreasing(v in prop::collection::vec(0.0f64..5.0, 1..200)) {
        let grid = TimeGrid::uniform(1e-2, 200).unwrap();
        let tc = time_change(&v, &grid, &[]).unwrap();
        prop_assert!(tc.z.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(tc.z[0], 0.0);
    }

    #[test]
    fn wilson_lower_bound_positive_iff_hits(hits in 0usize..=2000, extra in 0usize..2000) {
        let n = hits + extra;
        prop_assume!(n > 0);
        let ci = wilson(hits, n);
        prop_assert_eq!(ci.lower > 0.0, hits > 0);
        prop_assert!(ci.lower <= hits as f64 / n as f64 && hits as f64 / n as f64 <= ci.upper);
    }

    #[test]
    fn c_constant_grows_with_its_arguments(n in 0.1f64..3.0, t in 0.1f64..3.0, c in 0.0f64..2.0) {
        let s = CovarianceSpectrum::poly2(4).unwrap();
        let base = c_constant(n, t, &s, &DriftModel::constant(&s, c)).unwrap();
        prop_assert!(c_constant(n * 1.1, t, &s, &DriftModel::constant(&s, c)).unwrap().c > base.c);
        prop_assert!(c_constant(n, t * 1.1, &s, &DriftModel::constant(&s, c)).unwrap().c > base.c);
        prop_assert!(c_constant(n, t, &s, &DriftModel::constant(&s, c + 0.1)).unwrap().c > base.c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn nested_targets_have_monotone_hits(
        r1 in 0.05f64..2.0,
        grow in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let d = 3;
        let s = CovarianceSpectrum::poly2(d).unwrap();
        let law = InitialLaw::shell(SpectralVector::zeros(d), 2.0, 0.5).unwrap();
        let grid = TimeGrid::covering(0.5, 0.05).unwrap();
        let batch = Simulation::new(Model::Bounded(DriftModel::tanh(&s)), s.clone(), law, grid, 300, seed)
            .with_record(Record::Steps(vec![5, 10]))
            .run()
            .unwrap();
        let a = SpectralVector::basis(d, 0);
        let small = Ellipsoid::new(a.clone(), r1, s.clone()).unwrap();
        let large = Ellipsoid::new(a, r1 + grow, s).unwrap();
        let times = [0.25, 0.5];
        let steps = [5, 10];
        let hs = probe_hits(&batch, &small, &times, &steps).unwrap();
        let hl = probe_hits(&batch, &large, &times, &steps).unwrap();
        for (x, y) in hs.iter().zip(&hl) {
            prop_assert!(x.hit.hits <= y.hit.hits);
        }
    }
}

#[test]
fn gronwall_chain_holds_up_to_noise_slack() {
    // discrete Ito: zeta_{k+1} - zeta_k = v dw + 2h <X, F> + |dW + hF|^2, and
    // |dW|^2 fluctuates around h tr Q with standard deviation h sqrt(2 sum q^2)
    let d = 8;
    let s = CovarianceSpectrum::poly2(d).unwrap();
    let f = DriftModel::tanh(&s);
    let consts = c_constant(1.0, 1.0, &s, &f).unwrap();
    let psi0 = 1.0 + consts.lambda;
    let h = 1e-3;
    let sim = Simulation::new(
        Model::Bounded(f),
        s.clone(),
        InitialLaw::shell(SpectralVector::zeros(d), 1.0, 0.25).unwrap(),
        TimeGrid::covering(1.0, h).unwrap(),
        2000,
        11,
    )
    .with_record(Record::Steps(vec![]));
    let (_, diags) = sim.run_observed(|_| PathDiagnostics::new(s.q(), psi0, false)).unwrap();
    let sum_q2: f64 = s.q().iter().map(|q| q * q).sum();
    let slack = 10.0 * h + 6.0 * (2.0 * h * sum_q2).sqrt();
    let worst = diags.iter().map(|d| d.max_gronwall_gap()).fold(f64::NEG_INFINITY, f64::max);
    assert!(worst <= slack, "{worst} > {slack}");
}

#[test]
fn single_precision_pipeline() {
    let s = CovarianceSpectrum::<f32>::poly2(4).unwrap();
    let law = InitialLaw::dirac(SpectralVector::<f32>::basis(4, 0));
    let batch = Simulation::new(
        Model::Bounded(DriftModel::tanh(&s)),
        s.clone(),
        law,
        TimeGrid::covering(1.0f32, 0.01).unwrap(),
        500,
        3,
    )
    .with_record(Record::Steps(vec![100]))
    .run()
    .unwrap();
    let target = Ellipsoid::new(SpectralVector::zeros(4), 2.0f32, s).unwrap();
    let hits = probe_hits(&batch, &target, &[1.0f32], &[100]).unwrap();
    assert!(hits[0].hit.hits > 0);
}
