mod common;

use common::first_passage_probability;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use wdiff::oracle::*;
use wdiff::quadrature::GaussLegendre;
use wdiff::stats::{ks_one_sample, ks_two_sample, mean_se};

fn mass(delta: f64, r0: f64, t: f64, conv: BoundaryConvention) -> f64 {
    let rule = GaussLegendre::new(24);
    let top = r0 + 12.0 * t.sqrt() + 1.0;
    let panels = 400;
    let h = top / panels as f64;
    (0..panels)
        .map(|i| {
            rule.integrate(i as f64 * h, (i + 1) as f64 * h, |r| {
                besq_radial_density(r, t, r0, delta, conv).unwrap_or(0.0)
            })
        })
        .sum()
}

#[test]
fn bessel_dimension_examples() {
    assert_eq!(bessel_dimension(3, 0.0).unwrap(), 3.0);
    assert_eq!(bessel_dimension(3, 1.0).unwrap(), 4.0);
    assert_eq!(bessel_dimension(2, -1.0).unwrap(), 1.0);
    assert!(bessel_dimension(2, -2.0).is_err());
}

#[test]
fn besq_mean_examples() {
    let o = BesselOracle::new(3, 1.0).unwrap();
    assert_eq!(o.besq_mean(&[1.0, 0.0, 0.0], 0.0), 1.0);
    assert_eq!(o.besq_mean(&[1.0, 0.0, 0.0], 1.0), 5.0);
    let x0 = [0.3, -0.2, 0.7];
    let t = 0.37;
    assert!((o.besq_mean(&x0, 2.0 * t) - o.besq_mean(&x0, t) - o.delta * t).abs() < 1e-15);
}

#[test]
fn hits_origin_examples() {
    assert!(!hits_origin(4.0));
    assert!(!hits_origin(2.0));
    assert!(hits_origin(1.0));
}

#[test]
fn origin_start_density_is_maxwell_in_three_dimensions() {
    for t in [0.5, 1.0, 2.0] {
        for r in [0.1, 0.7, 1.5, 3.0] {
            let maxwell = (2.0 / std::f64::consts::PI).sqrt() * r * r * (-r * r / (2.0 * t)).exp() / t.powf(1.5);
            let p = besq_radial_density(r, t, 0.0, 3.0, BoundaryConvention::Reflecting).unwrap();
            assert!((p / maxwell - 1.0).abs() < 1e-12, "t={t} r={r}");
        }
    }
}

#[test]
fn three_dimensional_density_from_a_point_matches_gaussian_shell_average() {
    // For δ = 3 the law of ‖r0·e₁ + W_t‖ has density (r/r0)·(φ_t(r−r0) − φ_t(r+r0)).
    let (r0, t) = (1.0, 0.8);
    let phi = |u: f64| (-u * u / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt();
    for r in [0.2, 0.9, 1.7, 3.2] {
        let exact = r / r0 * (phi(r - r0) - phi(r + r0));
        let p = besq_radial_density(r, t, r0, 3.0, BoundaryConvention::Reflecting).unwrap();
        assert!((p / exact - 1.0).abs() < 1e-10, "r={r}: {p} vs {exact}");
    }
}

#[test]
fn density_has_unit_mass() {
    for delta in [1.0, 2.0, 2.5, 3.0, 4.0] {
        for r0 in [0.0, 0.5, 1.0, 3.0] {
            let m = mass(delta, r0, 1.0, BoundaryConvention::Reflecting);
            assert!((m - 1.0).abs() < 1e-6, "delta={delta} r0={r0}: {m}");
        }
    }
}

#[test]
fn absorbing_convention_loses_the_mass_that_reached_zero() {
    // δ = 1 absorbed: P(T₀ > t) = erf(r0/√(2t)).
    for r0 in [0.3, 1.0] {
        let m = mass(1.0, r0, 1.0, BoundaryConvention::Absorbing);
        let survive = 1.0 - erfc(r0 / 2f64.sqrt());
        assert!((m - survive).abs() < 1e-6, "r0={r0}: {m} vs {survive}");
    }
}

#[test]
fn extreme_arguments_report_underflow() {
    let e = besq_radial_density(50.0, 0.01, 1.0, 3.0, BoundaryConvention::Reflecting);
    assert!(matches!(e, Err(wdiff::Error::NumericUnderflow { .. })));
}

#[test]
fn reference_sim_second_moment_from_origin() {
    let s = radial_reference_sim(3.0, 0.0, 1.0, 10_000, 1e-2, 1, &RadialSimOptions::default()).unwrap();
    let sq: Vec<f64> = s.values.iter().map(|r| r * r).collect();
    let m = mean_se(&sq);
    assert!(m.covers(3.0, 3.0), "{m:?}");
}

#[test]
fn reference_sim_matches_density_for_four_dimensions() {
    let s = radial_reference_sim(4.0, 1.0, 1.0, 10_000, 1e-3, 2, &RadialSimOptions::default()).unwrap();
    let ks = ks_one_sample(&s.values, |r| {
        besq_radial_cdf(r, 1.0, 1.0, 4.0, BoundaryConvention::Reflecting).unwrap()
    });
    assert!(ks.p_value > 0.01, "{ks:?}");
    // Histogram bins against integrated density, within 3 standard errors.
    let n = s.values.len() as f64;
    for (a, b) in [(0.5, 1.0), (1.0, 1.5), (1.5, 2.0), (2.0, 2.5), (2.5, 3.5)] {
        let count = s.values.iter().filter(|r| **r >= a && **r < b).count() as f64;
        let p = besq_radial_cdf(b, 1.0, 1.0, 4.0, BoundaryConvention::Reflecting).unwrap()
            - besq_radial_cdf(a, 1.0, 1.0, 4.0, BoundaryConvention::Reflecting).unwrap();
        let se = (p * (1.0 - p) / n).sqrt();
        assert!((count / n - p).abs() < 3.0 * se, "bin [{a},{b}): {} vs {p}", count / n);
    }
}

#[test]
fn reference_sim_seeds_differ_but_agree_in_law() {
    let o = RadialSimOptions::default();
    let a = radial_reference_sim(2.5, 1.0, 1.0, 10_000, 1e-2, 3, &o).unwrap();
    let b = radial_reference_sim(2.5, 1.0, 1.0, 10_000, 1e-2, 4, &o).unwrap();
    assert_ne!(a.values, b.values);
    assert!(ks_two_sample(&a.values, &b.values).p_value > 0.01);
}

#[test]
fn reference_sim_means_match_besq_mean() {
    for delta in [1.0, 2.0, 2.5, 4.0] {
        let s = radial_reference_sim(delta, 1.0, 1.0, 10_000, 1e-2, 5, &RadialSimOptions::default()).unwrap();
        let sq: Vec<f64> = s.values.iter().map(|r| r * r).collect();
        let m = mean_se(&sq);
        assert!(m.covers(1.0 + delta, 3.0), "delta={delta}: {m:?}");
    }
}

#[test]
fn reflected_brownian_hitting_fraction() {
    // δ = 1 is reflected Brownian motion: P(hit ε by T) = 2Φ(−(r0 − ε)/√T).
    let eps = 1e-3;
    let o = RadialSimOptions {
        hit_radius: Some(eps),
        ..Default::default()
    };
    let s = radial_reference_sim(1.0, 1.0, 5.0, 10_000, 1e-3, 6, &o).unwrap();
    let p = 2.0 * Normal::standard().cdf(-(1.0 - eps) / 5f64.sqrt());
    let f = s.hit_count() as f64 / 1e4;
    let se = (p * (1.0 - p) / 1e4).sqrt();
    assert!((f - p).abs() < 3.0 * se, "{f} vs {p}");
}

#[test]
fn first_passage_solver_agrees_with_closed_forms() {
    // δ = 1: reflected Brownian motion.
    for (eps, t) in [(1e-3, 5.0), (0.2, 0.5)] {
        let p = first_passage_probability(1.0, eps, 1.0, t);
        let exact = erfc((1.0 - eps) / (2.0 * t).sqrt());
        assert!((p / exact - 1.0).abs() < 2e-3, "{p} vs {exact}");
    }
    // δ = 3 over a long horizon approaches the ever-hit probability ε/r0.
    let p = first_passage_probability(3.0, 0.1, 1.0, 1e4);
    assert!((p / 0.1 - 1.0).abs() < 0.02, "{p}");
}

#[test]
fn transient_reference_hitting_fraction() {
    let (eps, t) = (1e-3, 5.0);
    let o = RadialSimOptions {
        hit_radius: Some(eps),
        ..Default::default()
    };
    for (delta, seed) in [(2.5, 8), (1.5, 9)] {
        let s = radial_reference_sim(delta, 1.0, t, 20_000, 1e-3, seed, &o).unwrap();
        let p = first_passage_probability(delta, eps, 1.0, t);
        let f = s.hit_count() as f64 / 2e4;
        let se = (p * (1.0 - p) / 2e4).sqrt();
        assert!((f - p).abs() < 3.0 * se, "delta={delta}: {f} vs {p}");
    }
}

#[test]
fn absorbing_reference_sim_stops_at_zero() {
    let o = RadialSimOptions {
        convention: BoundaryConvention::Absorbing,
        ..Default::default()
    };
    let s = radial_reference_sim(1.0, 0.5, 1.0, 4000, 1e-3, 7, &o).unwrap();
    let absorbed = s.values.iter().filter(|r| **r == 0.0).count() as f64 / 4000.0;
    let exact = erfc(0.5 / 2f64.sqrt());
    assert!((absorbed - exact).abs() < 0.03, "{absorbed} vs {exact}");
    assert!(s.touches > 0);
}

proptest! {
    #[test]
    fn hits_origin_matches_capacity_threshold(d in 2usize..6, alpha in -5.9f64..4.0) {
        prop_assume!(alpha > -(d as f64));
        let delta = bessel_dimension(d, alpha).unwrap();
        prop_assert_eq!(hits_origin(delta), alpha < 2.0 - d as f64);
    }

    #[test]
    fn besq_mean_is_affine_in_time(alpha in -1.9f64..3.0, t in 0.0f64..10.0, x in -3.0f64..3.0) {
        let o = BesselOracle::new(2, alpha).unwrap();
        let x0 = [x, 1.0];
        prop_assert!((o.besq_mean(&x0, t) - (x * x + 1.0) - o.delta * t).abs() < 1e-12);
    }
}
