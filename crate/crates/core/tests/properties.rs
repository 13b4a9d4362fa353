//! Randomized invariants.

use proptest::prelude::*;

use smoothdiv::bounds::{concentration_bound, lemma3_check};
use smoothdiv::divergence::DivergencePlan;
use smoothdiv::experiments::{ks_statistic, wasserstein1_1d};
use smoothdiv::integrate::Rule;
use smoothdiv::measure::{covariance_kernel, sample, variance_function, MeasureSpec, Smoothing};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 32, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn tv_in_unit_interval_and_below_chi2(
        mean in -2.0f64..2.0,
        var in 0.05f64..2.0,
        sigma in 0.3f64..2.0,
        n in 1usize..60,
        seed in any::<u64>(),
    ) {
        let spec = MeasureSpec::isotropic_gaussian(vec![mean], var).unwrap();
        let s = Smoothing::new(sigma).unwrap();
        let plan = DivergencePlan::new(&spec, s, &Rule::grid(&spec, s, 800, 1e-10).unwrap()).unwrap();
        let r = plan.evaluate(&sample(&spec, n, seed).unwrap()).unwrap();
        prop_assert!(r.tv.value >= 0.0 && r.tv.value <= 1.0 + 1e-9);
        // χ² ≥ 4 TV² by Cauchy–Schwarz
        prop_assert!(r.chi2.value + 1e-9 >= 4.0 * r.tv.value * r.tv.value);
    }

    #[test]
    fn divergences_are_translation_invariant(
        shift in -5.0f64..5.0,
        n in 1usize..30,
        seed in any::<u64>(),
    ) {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 0.5).unwrap();
        let moved = spec.translated(&[shift]).unwrap();
        let s = Smoothing::new(1.0).unwrap();
        let smp = sample(&spec, n, seed).unwrap();
        let a = DivergencePlan::new(&spec, s, &Rule::grid(&spec, s, 1000, 1e-10).unwrap())
            .unwrap().evaluate(&smp).unwrap();
        let b = DivergencePlan::new(&moved, s, &Rule::grid(&moved, s, 1000, 1e-10).unwrap())
            .unwrap().evaluate(&smp.translated(&[shift])).unwrap();
        prop_assert!((a.tv.value - b.tv.value).abs() < 1e-8);
        prop_assert!((a.chi2.value - b.chi2.value).abs() < 1e-8 * (1.0 + a.chi2.value));
    }

    #[test]
    fn variance_nonnegative_and_covariance_symmetric(
        x in -6.0f64..6.0,
        y in -6.0f64..6.0,
        w in 0.05f64..0.95,
        sigma in 0.2f64..2.0,
    ) {
        let spec = MeasureSpec::point_cloud(vec![vec![-1.0], vec![0.5], vec![2.0]], vec![w / 2.0, (1.0 - w) / 2.0, 0.5]).unwrap();
        let s = Smoothing::new(sigma).unwrap();
        prop_assert!(variance_function(&spec, s, &[x]).unwrap() >= 0.0);
        let kxy = covariance_kernel(&spec, s, &[x], &[y]).unwrap();
        let kyx = covariance_kernel(&spec, s, &[y], &[x]).unwrap();
        prop_assert!((kxy - kyx).abs() <= 1e-15 * (1.0 + kxy.abs()));
        // Cauchy–Schwarz on the kernel
        let vx = variance_function(&spec, s, &[x]).unwrap();
        let vy = variance_function(&spec, s, &[y]).unwrap();
        prop_assert!(kxy * kxy <= vx * vy * (1.0 + 1e-9) + 1e-300);
    }

    #[test]
    fn ks_is_a_symmetric_distance(
        a in prop::collection::vec(-10.0f64..10.0, 1..40),
        b in prop::collection::vec(-10.0f64..10.0, 1..40),
    ) {
        let ab = ks_statistic(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, ks_statistic(&b, &a).unwrap());
        prop_assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_of_a_shift_is_the_shift(
        a in prop::collection::vec(-10.0f64..10.0, 1..40),
        shift in -3.0f64..3.0,
    ) {
        let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
        prop_assert!((wasserstein1_1d(&a, &b).unwrap() - shift.abs()).abs() < 1e-9);
    }

    #[test]
    fn concentration_bound_decreases(n in 1usize..10_000, t in 0.001f64..1.0, dt in 0.001f64..0.5) {
        let lo = concentration_bound(n, t).unwrap();
        let hi = concentration_bound(n, t + dt).unwrap();
        prop_assert!(hi <= lo && lo <= 1.0);
        prop_assert!(concentration_bound(n + 1, t).unwrap() <= lo);
    }

    #[test]
    fn non_positive_smoothing_is_rejected(sigma in -5.0f64..=0.0) {
        prop_assert!(Smoothing::new(sigma).is_err());
    }

    #[test]
    fn isotropic_covariance_always_passes_eigen_gap(var in 0.01f64..10.0, sigma in 0.1f64..3.0, d in 1usize..5) {
        let cov = nalgebra::DMatrix::from_diagonal_element(d, d, var);
        prop_assert!(lemma3_check(&cov, Smoothing::new(sigma).unwrap()).unwrap().holds);
    }

    #[test]
    fn sampling_is_reproducible(seed in any::<u64>(), n in 1usize..50) {
        let spec = MeasureSpec::uniform_box(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let a = sample(&spec, n, seed).unwrap();
        let b = sample(&spec, n, seed).unwrap();
        for i in 0..n {
            prop_assert_eq!(a.point(i), b.point(i));
        }
    }
}
