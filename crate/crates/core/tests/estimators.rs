use std::f64::consts::PI;

use proptest::prelude::*;
use wdiff::estimators::*;
use wdiff::field::ScalarField;
use wdiff::forms::{DiffusionField, SdeCoefficients};
use wdiff::geometry::{norm, unit_ball_volume};
use wdiff::oracle::{besq_radial_density, BoundaryConvention};
use wdiff::quadrature::{GaussLegendre, QuadConfig};
use wdiff::sde::{simulate_batch, PathBatch, SimConfig};
use wdiff::weights::Weight;
use wdiff::Error;

fn batch(alpha: f64, x0: &[f64], n: usize, horizon: f64, dt: f64, snaps: &[f64], seed: u64) -> PathBatch {
    let c = SdeCoefficients::new(DiffusionField::isotropic_power(alpha, x0.len()).unwrap());
    let cfg = SimConfig::new(horizon, dt).unwrap().with_snapshots(snaps);
    simulate_batch(&c, x0, n, &cfg, seed, None).unwrap()
}

/// E[K_h(y − X)] in ℝ³ for an isotropic X with radial density `p`, at ‖y‖ = a.
fn smoothed_isotropic_density<P: Fn(f64) -> f64>(p: P, a: f64, h: f64) -> f64 {
    let rule = GaussLegendre::new(24);
    let c = (2.0 * PI * h * h).powf(-1.5);
    let shell = |r: f64| {
        let z = a * r / (h * h);
        // e^{−(a²+r²)/2h²}·sinh(z)/z, written to avoid overflow
        let e = if z < 1e-8 {
            (-(a * a + r * r) / (2.0 * h * h)).exp()
        } else {
            ((-(a - r).powi(2) / (2.0 * h * h)).exp() - (-(a + r).powi(2) / (2.0 * h * h)).exp()) / (2.0 * z)
        };
        c * e * p(r)
    };
    (0..200)
        .map(|i| rule.integrate(i as f64 * 0.04, (i + 1) as f64 * 0.04, shell))
        .sum()
}

#[test]
fn kde_of_brownian_motion_at_the_origin() {
    // One exact Gaussian step per path.
    let b = batch(0.0, &[0.0; 3], 40_000, 1.0, 1.0, &[], 1);
    let w = Weight::power(0.0, 3).unwrap();
    let est = kde_transition_density(&b, 1.0, &[vec![0.0; 3]], &w, &Bandwidth::Fixed { h: 0.1 }).unwrap();
    let exact = (2.0 * PI).powf(-1.5);
    assert!(
        (est.density[0] - exact).abs() < 3.0 * est.se[0],
        "{} ± {} vs {exact}",
        est.density[0],
        est.se[0]
    );
    assert_eq!(est.sensitivity.len(), 2);

    let h = 0.3;
    let est = kde_transition_density(&b, 1.0, &[vec![0.0; 3]], &w, &Bandwidth::Fixed { h }).unwrap();
    let smoothed = (2.0 * PI * (1.0 + h * h)).powf(-1.5);
    assert!((est.density[0] - smoothed).abs() < 3.0 * est.se[0]);
}

#[test]
fn kde_matches_the_four_dimensional_bessel_radial_law() {
    let b = batch(1.0, &[0.0; 3], 20_000, 1.0, 1e-3, &[], 2);
    let w = Weight::power(1.0, 3).unwrap();
    let h = 0.25;
    let radii = [0.5, 1.0, 1.5, 2.0, 2.5];
    let ys: Vec<Vec<f64>> = radii.iter().map(|r| vec![0.0, *r, 0.0]).collect();
    let est = kde_transition_density(&b, 1.0, &ys, &w, &Bandwidth::Fixed { h }).unwrap();
    for (i, a) in radii.iter().enumerate() {
        let radial = |r: f64| besq_radial_density(r, 1.0, 0.0, 4.0, BoundaryConvention::Reflecting).unwrap_or(0.0);
        let expected = smoothed_isotropic_density(radial, *a, h) / a;
        assert!(
            (est.density[i] - expected).abs() < 3.0 * est.se[i],
            "r={a}: {} ± {} vs {expected}",
            est.density[i],
            est.se[i]
        );
    }
}

#[test]
fn kde_standard_error_follows_the_monte_carlo_rate() {
    let w = Weight::power(0.0, 3).unwrap();
    let y = vec![vec![0.5, 0.0, 0.0]];
    let bw = Bandwidth::Fixed { h: 0.3 };
    let small = kde_transition_density(&batch(0.0, &[0.0; 3], 5000, 1.0, 1.0, &[], 3), 1.0, &y, &w, &bw).unwrap();
    let large = kde_transition_density(&batch(0.0, &[0.0; 3], 20_000, 1.0, 1.0, &[], 3), 1.0, &y, &w, &bw).unwrap();
    let ratio = large.se[0] / small.se[0];
    assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
}

#[test]
fn kde_integrates_to_one_against_the_weight() {
    let b = batch(1.0, &[1.0, 0.0, 0.0], 4000, 1.0, 1e-2, &[], 4);
    let w = Weight::power(1.0, 3).unwrap();
    let step = 0.5;
    let mut ys = Vec::new();
    for i in 0..28 {
        for j in 0..28 {
            for k in 0..28 {
                let p = [i, j, k].map(|v| -6.75 + step * v as f64);
                if norm(&p) > 1e-9 {
                    ys.push(p.to_vec());
                }
            }
        }
    }
    let est = kde_transition_density(&b, 1.0, &ys, &w, &Bandwidth::Fixed { h: 0.5 }).unwrap();
    let mass: f64 = ys
        .iter()
        .zip(&est.density)
        .map(|(y, p)| p * norm(y) * step.powi(3))
        .sum();
    assert!((mass - 1.0).abs() < 0.02, "{mass}");
}

#[test]
fn kde_rejects_singular_points_and_missing_times() {
    let b = batch(1.0, &[1.0, 0.0, 0.0], 10, 1.0, 0.1, &[], 5);
    let w = Weight::power(1.0, 3).unwrap();
    let e = kde_transition_density(&b, 1.0, &[vec![0.0; 3]], &w, &Bandwidth::Silverman);
    assert!(matches!(e, Err(Error::SingularPoint { .. })));
    let e = kde_transition_density(&b, 0.5, &[vec![1.0; 3]], &w, &Bandwidth::Silverman);
    assert!(matches!(e, Err(Error::NotRecorded { .. })));
}

#[test]
fn envelope_for_lebesgue_measure() {
    let w = Weight::power(0.0, 3).unwrap();
    let (x, y) = ([0.0, 0.0, 0.0], [1.0, 0.5, 0.0]);
    for t in [0.25, 1.0, 2.0] {
        let e = heat_kernel_envelope(&w, 1.0, &x, &y, t, 1.0).unwrap();
        let exact = (-1.25 / (5.0 * t)).exp() / (unit_ball_volume(3) * t.powf(1.5));
        assert!((e / exact - 1.0).abs() < 1e-6, "t={t}");
        let diag = heat_kernel_envelope(&w, 1.0, &y, &y, t, 1.0).unwrap();
        assert!((diag * unit_ball_volume(3) * t.powf(1.5) - 1.0).abs() < 1e-6);
    }
    let tiny = heat_kernel_envelope(&w, 1.0, &x, &y, 1e-4, 1.0).unwrap();
    assert!(tiny < 1e-100);
}

#[test]
fn envelope_on_the_diagonal_is_the_inverse_ball_mass() {
    let w = Weight::power(1.0, 3).unwrap();
    let env = HeatKernelEnvelope::new(w, 1.0, 1.0).unwrap();
    let x = [0.3, 0.0, 0.4];
    let m = env.ball_mass(&x, 0.5).unwrap();
    assert!((env.eval(&x, &x, 0.25).unwrap() * m - 1.0).abs() < 1e-12);
}

fn gaussian_estimate(t: f64, points: &[Vec<f64>]) -> DensityEstimate {
    let density = points
        .iter()
        .map(|y| (2.0 * PI * t).powf(-1.5) * (-y.iter().map(|v| v * v).sum::<f64>() / (2.0 * t)).exp())
        .collect::<Vec<_>>();
    DensityEstimate {
        t,
        points: points.to_vec(),
        se: vec![0.0; points.len()],
        density,
        bandwidth: vec![0.0; 3],
        n: 0,
        alive: 0,
        sensitivity: Vec::new(),
    }
}

#[test]
fn fitted_constant_of_the_exact_gaussian_is_stable() {
    let w = Weight::power(0.0, 3).unwrap();
    let x0 = [0.0; 3];
    let mut reports = Vec::new();
    for t in [0.25f64, 0.5, 1.0, 2.0] {
        let ys = axis_grid(&x0, &[0.5 * t.sqrt(), t.sqrt(), 2.0 * t.sqrt()]);
        let est = gaussian_estimate(t, &ys);
        let env: Vec<f64> = ys
            .iter()
            .map(|y| heat_kernel_envelope(&w, 1.0, &x0, y, t, 1.0).unwrap())
            .collect();
        let r = fit_heat_kernel_constant(&est, &env, 1.0).unwrap();
        assert_eq!(r.exceedances, 0);
        // Maximum of the ratio sits at y = x: vol(B₁)/(2π)^{3/2}.
        assert!((r.c_hat - unit_ball_volume(3) * (2.0 * PI).powf(-1.5)).abs() < 1e-6);
        reports.push(r);
    }
    let sweep = envelope_sweep(&reports, 10.0);
    assert!(sweep.stable && sweep.spread < 1.0 + 1e-6, "{sweep:?}");
}

#[test]
fn vanishing_density_is_flagged() {
    let ys = vec![vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]];
    let est = DensityEstimate {
        t: 1.0,
        points: ys.clone(),
        density: vec![0.0, 0.0],
        se: vec![1e-3, 2e-3],
        bandwidth: vec![0.1; 3],
        n: 10,
        alive: 0,
        sensitivity: Vec::new(),
    };
    let r = fit_heat_kernel_constant(&est, &[0.5, 0.0], 1.0).unwrap();
    assert!(r.degenerate && r.excluded == 1);
    assert!((r.c_hat - 3e-3 / 0.5).abs() < 1e-15);
}

#[test]
fn riesz_potential_examples() {
    let cfg = QuadConfig::default();
    let ball = ScalarField::BallIndicator {
        center: vec![0.0; 3],
        radius: 1.0,
    };
    let v = riesz_potential(&ball, 3, 2.0, &[0.0; 3], &cfg).unwrap();
    assert!((v.value - 2.0 * PI).abs() < 1e-6 * 2.0 * PI);
    let zero = riesz_potential(&ScalarField::Constant { value: 0.0 }, 3, 2.0, &[0.0; 3], &cfg).unwrap();
    assert_eq!(zero.value, 0.0);
    // Newton potential of the unit ball outside it: vol(B₁)/‖x‖.
    let far = riesz_potential(&ball, 3, 2.0, &[0.0, 3.0, 0.0], &cfg).unwrap();
    assert!((far.value - unit_ball_volume(3) / 3.0).abs() < 1e-6);
}

#[test]
fn riesz_potential_far_field() {
    let cfg = QuadConfig::default();
    let g = ScalarField::Bump {
        center: vec![0.0; 3],
        radius: 0.5,
        amplitude: 1.0,
    };
    let mass = riesz_potential(&g, 3, 3.0 - 1e-9, &[0.0; 3], &cfg).unwrap().value;
    let support = g.support().unwrap();
    let x = [10.0 * support.diameter() + 1.0, 0.0, 0.0];
    let v = riesz_potential(&g, 3, 2.0, &x, &cfg).unwrap().value;
    let approx = norm(&x).powf(-1.0) * mass;
    assert!((v / approx - 1.0).abs() < 0.01, "{v} vs {approx}");
}

#[test]
fn riesz_potential_near_a_smooth_bump_matches_its_mean_value() {
    // For η = 2, d = 3, V g(x) = ∫ g/‖x−y‖; outside a radial bump it equals (∫g)/‖x − c‖.
    let cfg = QuadConfig::default();
    let g = ScalarField::Bump {
        center: vec![0.5, 0.0, 0.0],
        radius: 0.5,
        amplitude: 1.0,
    };
    let mass = riesz_potential(&g, 3, 3.0 - 1e-9, &[0.0; 3], &cfg).unwrap().value;
    let v = riesz_potential(&g, 3, 2.0, &[0.5, 1.5, 0.0], &cfg).unwrap().value;
    assert!((v - mass / 1.5).abs() < 2e-3 * v, "{v} vs {}", mass / 1.5);
}

#[test]
fn riesz_potential_rejects_bad_orders() {
    let g = ScalarField::BallIndicator {
        center: vec![0.0; 3],
        radius: 1.0,
    };
    assert!(riesz_potential(&g, 3, 3.0, &[0.0; 3], &QuadConfig::default()).is_err());
    assert!(riesz_potential(&ScalarField::SquaredNorm, 3, 1.0, &[0.0; 3], &QuadConfig::default()).is_err());
}

#[test]
fn resolvent_envelope_examples() {
    assert!((resolvent_envelope(0.0, 3, &[0.0; 3], &[0.5, 0.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
    let v = resolvent_envelope(-1.0, 3, &[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]).unwrap();
    assert!((v - 3.0).abs() < 1e-15);
    assert!(matches!(
        resolvent_envelope(1.0, 3, &[1.0; 3], &[1.0; 3]),
        Err(Error::CoincidentPoints)
    ));
    assert!(matches!(
        resolvent_envelope(-1.0, 3, &[1.0; 3], &[0.0; 3]),
        Err(Error::SingularPoint { .. })
    ));
}

#[test]
fn hoelder_hypotheses_examples() {
    let cfg = QuadConfig::default();
    let g = ScalarField::BallIndicator {
        center: vec![0.0; 3],
        radius: 1.0,
    };
    let ok = check_hoelder_hypotheses(&g, 2.0, 2.0, 3, &cfg);
    assert!(ok.pass && (ok.order - 0.5).abs() < 1e-15 && ok.tail_ok);
    let bad = check_hoelder_hypotheses(&g, 1.4, 2.0, 3, &cfg);
    assert!(!bad.pass && !bad.order_ok && bad.order < 0.0);
    let unbounded = check_hoelder_hypotheses(&ScalarField::SquaredNorm, 2.0, 2.0, 3, &cfg);
    assert!(!unbounded.tail_ok && !unbounded.pass);
}

#[test]
fn moment_summary_examples() {
    let b0 = batch(0.0, &[1.0, 0.0, 0.0], 20_000, 1.0, 0.05, &[], 6);
    let m = moment_summary(&b0, 1.0).unwrap();
    assert!(m.mean_sq_norm.covers(4.0, 3.0), "{m:?}");
    assert!((m.covariance[0] - 1.0).abs() < 0.05 && m.covariance[1].abs() < 0.05);

    let b1 = batch(1.0, &[1.0, 0.0, 0.0], 20_000, 1.0, 1e-2, &[0.25, 0.5], 7);
    let m = moment_summary(&b1, 1.0).unwrap();
    assert!(m.mean_sq_norm.covers(5.0, 3.0), "{m:?}");
    let zero = moment_summary(&b1, 0.0).unwrap();
    assert_eq!((zero.mean_sq_norm.mean, zero.mean_sq_norm.se), (1.0, 0.0));

    // Affine in t with slope d + α.
    let ts = [0.25, 0.5, 1.0];
    let means: Vec<f64> = ts
        .iter()
        .map(|t| moment_summary(&b1, *t).unwrap().mean_sq_norm.mean)
        .collect();
    let tbar = ts.iter().sum::<f64>() / 3.0;
    let mbar = means.iter().sum::<f64>() / 3.0;
    let slope = ts.iter().zip(&means).map(|(t, m)| (t - tbar) * (m - mbar)).sum::<f64>()
        / ts.iter().map(|t| (t - tbar).powi(2)).sum::<f64>();
    let se = moment_summary(&b1, 1.0).unwrap().mean_sq_norm.se;
    assert!((slope - 4.0).abs() < 3.0 * 2.0 * se, "{slope}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fitted_constant_decreases_with_eps(e1 in 0.1f64..10.0, e2 in 0.1f64..10.0, t in 0.25f64..2.0) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let w = Weight::power(0.0, 3).unwrap();
        let x0 = [0.0; 3];
        let ys = axis_grid(&x0, &[1.0, 2.0]);
        let est = gaussian_estimate(t, &ys);
        let fit = |eps: f64| {
            let env: Vec<f64> = ys.iter().map(|y| heat_kernel_envelope(&w, 1.0, &x0, y, t, eps).unwrap()).collect();
            fit_heat_kernel_constant(&est, &env, eps).unwrap().c_hat
        };
        prop_assert!(fit(hi) <= fit(lo) * (1.0 + 1e-12));
    }

    #[test]
    fn resolvent_envelope_is_symmetric_without_the_second_term(
        alpha in 0.0f64..3.0,
        x in prop::collection::vec(-2.0f64..2.0, 3),
        y in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        prop_assume!(wdiff::geometry::distance(&x, &y) > 1e-3);
        let a = resolvent_envelope(alpha, 3, &x, &y).unwrap();
        let b = resolvent_envelope(alpha, 3, &y, &x).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn riesz_potential_is_linear_and_translation_equivariant(
        amp in 0.1f64..5.0,
        v in prop::collection::vec(-3.0f64..3.0, 3),
        x in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let cfg = QuadConfig::default();
        let g = ScalarField::Bump { center: vec![0.0; 3], radius: 0.6, amplitude: 1.0 };
        let scaled = ScalarField::Bump { center: vec![0.0; 3], radius: 0.6, amplitude: amp };
        let shifted = ScalarField::Bump { center: v.clone(), radius: 0.6, amplitude: 1.0 };
        let base = riesz_potential(&g, 3, 2.0, &x, &cfg).unwrap().value;
        let lin = riesz_potential(&scaled, 3, 2.0, &x, &cfg).unwrap().value;
        let xv: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
        let moved = riesz_potential(&shifted, 3, 2.0, &xv, &cfg).unwrap().value;
        prop_assert!((lin - amp * base).abs() <= 2e-3 * lin.abs());
        prop_assert!((moved - base).abs() <= 2e-3 * base.abs());
    }
}
