use proptest::prelude::*;
use wdiff::field::ScalarField;
use wdiff::geometry::{Ball, BoxRegion};
use wdiff::quadrature::QuadConfig;
use wdiff::weights::*;
use wdiff::Error;

fn cfg() -> QuadConfig {
    QuadConfig::default()
}

#[test]
fn a2_ratio_of_linear_power_on_unit_ball() {
    // avg ‖x‖ over B₁(0) in ℝ³ is 3/4, avg ‖x‖⁻¹ is 3/2.
    let w = Weight::power(1.0, 3).unwrap();
    let b = Ball::centered(3, 1.0).unwrap();
    let e = a2_ratio(&w, &b, &cfg()).unwrap();
    assert!((e.value - 9.0 / 8.0).abs() < 1e-6, "{e:?}");
}

#[test]
fn a2_ratio_of_constant_weight_is_one() {
    let w = Weight::power(0.0, 3).unwrap();
    let b = Ball::new(vec![0.3, -1.0, 2.0], 0.7).unwrap();
    assert!((a2_ratio(&w, &b, &cfg()).unwrap().value - 1.0).abs() < 1e-9);
}

#[test]
fn a2_ratio_flags_non_integrable_custom_weight() {
    let w = Weight::custom(ScalarField::PowerNorm { exponent: -3.5 }, 3).unwrap();
    let b = Ball::new(vec![0.2, 0.0, 0.0], 1.0).unwrap();
    assert!(matches!(a2_ratio(&w, &b, &cfg()), Err(Error::DivergentIntegral { .. })));
}

#[test]
fn doubling_examples() {
    let flat = Weight::power(0.0, 3).unwrap();
    let b = Ball::new(vec![1.0, 2.0, 0.0], 0.4).unwrap();
    assert!((doubling_ratio(&flat, &b, &cfg()).unwrap().value - 8.0).abs() < 1e-8);

    let w = Weight::power(1.0, 3).unwrap();
    let at_origin = doubling_ratio(&w, &Ball::centered(3, 0.3).unwrap(), &cfg()).unwrap();
    assert!((at_origin.value - 16.0).abs() < 1e-6);

    let far = doubling_ratio(&w, &Ball::new(vec![10.0, 0.0, 0.0], 0.01).unwrap(), &cfg()).unwrap();
    assert!((far.value / 8.0 - 1.0).abs() < 0.01, "{far:?}");
}

#[test]
fn doubling_agrees_between_radial_and_sampled_paths() {
    // A custom density without a radial profile forces the Monte Carlo path.
    let w = Weight::power(1.0, 3).unwrap();
    let sampled = Weight::custom(ScalarField::custom("norm", wdiff::geometry::norm), 3).unwrap();
    let b = Ball::new(vec![0.5, 0.0, 0.0], 0.8).unwrap();
    let exact = doubling_ratio(&w, &b, &cfg()).unwrap().value;
    let mc = doubling_ratio(&sampled, &b, &cfg()).unwrap().value;
    assert!((mc / exact - 1.0).abs() < 0.02, "{mc} vs {exact}");
}

#[test]
fn exponential_weight_with_log_exponent_matches_power() {
    let w = Weight::exponential(ScalarField::LogNorm { scale: 1.5 }, 3).unwrap();
    let p = Weight::power(1.5, 3).unwrap();
    let b = Ball::new(vec![0.1, 0.2, 0.0], 0.5).unwrap();
    let a = a2_ratio(&w, &b, &cfg()).unwrap().value;
    let e = a2_ratio(&p, &b, &cfg()).unwrap().value;
    assert!((a - e).abs() < 1e-9);
}

#[test]
fn check_a2_verdicts_follow_the_exponent_window() {
    let region = BoxRegion::symmetric(3, 2.0).unwrap();
    let opts = ClassCheckOptions::default();
    for alpha in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        let r = check_a2(&Weight::power(alpha, 3).unwrap(), &region, 64, 7, &opts).unwrap();
        assert!(r.pass, "alpha={alpha}: {r:?}");
        assert!(r.worst_ratio >= 1.0 - 1e-6);
    }
    let r = check_a2(&Weight::power(3.5, 3).unwrap(), &region, 64, 7, &opts).unwrap();
    assert!(!r.pass && r.n_divergent > 0, "{r:?}");
    let w = Weight::custom(ScalarField::PowerNorm { exponent: -3.5 }, 3).unwrap();
    let r = check_a2(&w, &region, 64, 7, &opts).unwrap();
    assert!(!r.pass);
}

#[test]
fn check_a2_of_constant_weight_is_exactly_one() {
    let region = BoxRegion::symmetric(3, 2.0).unwrap();
    let r = check_a2(
        &Weight::power(0.0, 3).unwrap(),
        &region,
        16,
        1,
        &ClassCheckOptions::default(),
    )
    .unwrap();
    assert!((r.worst_ratio - 1.0).abs() < 1e-9 && r.pass);
}

#[test]
fn check_a2_report_serializes_expected_fields() {
    let region = BoxRegion::symmetric(3, 1.0).unwrap();
    let r = check_a2(
        &Weight::power(1.0, 3).unwrap(),
        &region,
        4,
        1,
        &ClassCheckOptions::default(),
    )
    .unwrap();
    let v = serde_json::to_value(&r).unwrap();
    for key in ["condition", "worst_ratio", "n_samples", "pass", "rtol"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn check_a2_is_deterministic() {
    let region = BoxRegion::symmetric(3, 2.0).unwrap();
    let w = Weight::power(1.0, 3).unwrap();
    let a = check_a2(&w, &region, 16, 3, &ClassCheckOptions::default()).unwrap();
    let b = check_a2(&w, &region, 16, 3, &ClassCheckOptions::default()).unwrap();
    assert_eq!(a.worst_ratio, b.worst_ratio);
}

#[test]
fn bmo_average_of_linear_exponent() {
    // Exact value 2(e^{1/2} − 1) on the unit cube for φ = x₁.
    let q = BoxRegion::cube(vec![0.0; 3], 1.0).unwrap();
    let phi = ScalarField::Coordinate { index: 0 };
    let e = bmo_exp_avg(&phi, &q, &cfg()).unwrap();
    assert!(e.value > 1.0 && e.value <= 0.5f64.exp());
    assert!((e.value - 2.0 * (0.5f64.exp() - 1.0)).abs() < 2e-3, "{e:?}");
    let c = bmo_exp_avg(&ScalarField::Constant { value: 3.0 }, &q, &cfg()).unwrap();
    assert!((c.value - 1.0).abs() < 1e-12);
}

#[test]
fn bmo_average_of_log_norm_stays_bounded_on_shrinking_cubes() {
    let phi = ScalarField::LogNorm { scale: 1.0 };
    let values: Vec<f64> = (0..6)
        .map(|k| {
            let h = 10f64.powi(-k);
            let q = BoxRegion::symmetric(3, h).unwrap();
            bmo_exp_avg(&phi, &q, &cfg()).unwrap().value
        })
        .collect();
    let spread = values.iter().cloned().fold(0.0, f64::max) / values.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 1.05, "{values:?}");
}

#[test]
fn poincare_ratio_of_coordinate_on_lebesgue_ball() {
    let w = Weight::power(0.0, 3).unwrap();
    let u = ScalarField::Coordinate { index: 0 };
    for r in [0.1, 1.0, 5.0] {
        let e = poincare_ratio(&w, &Ball::centered(3, r).unwrap(), &u, &cfg()).unwrap();
        assert!((e.value - 0.2).abs() < 0.005, "r={r}: {e:?}");
    }
}

#[test]
fn poincare_ratio_rejects_constant_test_function() {
    let w = Weight::power(1.0, 3).unwrap();
    let b = Ball::centered(3, 1.0).unwrap();
    let u = ScalarField::Constant { value: 2.0 };
    assert!(matches!(
        poincare_ratio(&w, &b, &u, &cfg()),
        Err(Error::DegenerateTestFunction)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn doubling_at_origin_is_two_to_the_homogeneity(alpha in -1.9f64..4.0, d in 2usize..=4, r in 0.01f64..5.0) {
        let alpha = alpha.max(-(d as f64) + 0.1);
        let w = Weight::power(alpha, d).unwrap();
        let e = doubling_ratio(&w, &Ball::centered(d, r).unwrap(), &cfg()).unwrap();
        let expected = 2f64.powf(d as f64 + alpha);
        prop_assert!((e.value / expected - 1.0).abs() < 1e-3, "{} vs {}", e.value, expected);
    }

    #[test]
    fn a2_ratio_is_at_least_one(alpha in -2.5f64..2.5, cx in -2.0f64..2.0, r in 0.01f64..3.0) {
        let w = Weight::power(alpha, 3).unwrap();
        let b = Ball::new(vec![cx, 0.3, 0.0], r).unwrap();
        let e = a2_ratio(&w, &b, &cfg()).unwrap();
        prop_assert!(e.value >= 1.0 - 1e-3);
    }

    #[test]
    fn mean_deviation_is_minimised_by_own_mean(
        values in prop::collection::vec(-5.0f64..5.0, 1..20),
        c in -5.0f64..5.0,
    ) {
        let w = Weight::power(1.0, 2).unwrap();
        let samples: Vec<(Vec<f64>, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, v)| (vec![1.0 + i as f64 * 0.1, 0.5], *v))
            .collect();
        let own = mean_deviation(&samples, &w, Reference::OwnMean).unwrap();
        let other = mean_deviation(&samples, &w, Reference::Value(c)).unwrap();
        let total: f64 = samples.iter().map(|(x, _)| w.eval(x).unwrap()).sum();
        let mean: f64 = samples.iter().map(|(x, u)| w.eval(x).unwrap() * u).sum::<f64>() / total;
        prop_assert!(own <= other + 1e-12);
        prop_assert!((other - own - (mean - c).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn poincare_ratio_is_affine_invariant(a in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0], b in -5.0f64..5.0) {
        let w = Weight::power(1.0, 3).unwrap();
        let ball = Ball::new(vec![0.2, 0.1, 0.0], 1.0).unwrap();
        let u = ScalarField::Oscillation { base: 0.0, amplitude: 1.0, frequency: vec![1.0, 0.5, 0.0] };
        let v = ScalarField::Oscillation { base: b, amplitude: a, frequency: vec![1.0, 0.5, 0.0] };
        let ru = poincare_ratio(&w, &ball, &u, &cfg()).unwrap().value;
        let rv = poincare_ratio(&w, &ball, &v, &cfg()).unwrap().value;
        prop_assert!((ru - rv).abs() <= 1e-9 * ru);
    }
}
