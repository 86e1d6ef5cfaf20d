use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;
use wdiff::estimators::{
    axis_grid, check_hoelder_hypotheses, envelope_sweep, fit_heat_kernel_constant, kde_transition_density,
    riesz_potential, Bandwidth, EnvelopeReport, EnvelopeSweep, HeatKernelEnvelope, HoelderReport,
};
use wdiff::field::ScalarField;
use wdiff::forms::{
    check_local_norms, exponent_window, CoefficientField, Condition, DiffusionField, EllipticityReport, ExponentSet,
    ExponentWindow, FieldSpec, LocalNormReport, SdeCoefficients,
};
use wdiff::geometry::{norm, BoxRegion, Region};
use wdiff::oracle::{
    besq_radial_cdf, besq_radial_density, bessel_dimension, hits_origin, radial_reference_sim,
    reflected_hit_probability, BesselOracle, BoundaryConvention, RadialSimOptions,
};
use wdiff::quadrature::QuadConfig;
use wdiff::sde::{
    hitting_stats, mean_sq_norm, simulate_batch, BatchSummary, Domain, HittingStats, PathBatch, SimConfig, StepPolicy,
};
use wdiff::stats::{wilson, z_for_confidence, MeanSe, Proportion};
use wdiff::weights::{check_a2, check_doubling, ClassCheckOptions, Weight, WeightClassReport};

use crate::args::*;
use crate::artifacts::{decode, parse_point, read_json_arg, Run, TidyRow};
use crate::error::{CliError, CliResult};

/// What a command reports back to `main`.
pub struct Outcome {
    pub pass: bool,
    /// Printed on stdout.
    pub summary: serde_json::Value,
}

fn lib(label: &str) -> impl Fn(wdiff::Error) -> CliError + '_ {
    move |e| CliError::from_lib(label, e)
}

fn arg_err(flag: &str) -> impl Fn(wdiff::Error) -> CliError + '_ {
    move |e| CliError::from_lib(&format!("--{flag}"), e)
}

fn unit_start(d: usize) -> Vec<f64> {
    let mut x = vec![0.0; d];
    x[0] = 1.0;
    x
}

fn load_field(arg: &str) -> CliResult<(serde_json::Value, DiffusionField)> {
    let (label, value) = read_json_arg(arg, "field")?;
    let spec: FieldSpec = decode(&label, &value)?;
    let field = spec.build().map_err(lib(&label))?;
    Ok((value, field))
}

pub fn check_weight(a: &CheckWeightArgs, out: PathBuf) -> CliResult<Outcome> {
    let (label, value) = read_json_arg(&a.weight, "weight")?;
    let w: Weight = decode(&label, &value)?;
    let region = BoxRegion::symmetric(w.dim(), a.half).map_err(arg_err("half"))?;
    let opts = ClassCheckOptions {
        radius_range: (a.r_min, a.r_max),
        threshold: a.threshold,
        quad: QuadConfig::default(),
    };
    let report: WeightClassReport = match a.condition {
        WeightCondition::A2 => check_a2(&w, &region, a.n_balls, a.seed, &opts),
        WeightCondition::Doubling => check_doubling(&w, &region, a.n_balls, a.seed, &opts),
    }
    .map_err(lib(&label))?;
    let spec = json!({
        "weight": value,
        "condition": format!("{:?}", a.condition).to_lowercase(),
        "n_balls": a.n_balls,
        "half": a.half,
        "radius_range": [a.r_min, a.r_max],
        "threshold": a.threshold,
    });
    let mut run = Run::new(out, "check-weight", spec, Some(a.seed))?;
    run.write_json("report.json", &report)?;
    let pass = report.pass;
    run.finish(pass)?;
    Ok(Outcome {
        pass,
        summary: json!({
            "condition": report.condition,
            "worst_ratio": report.worst_ratio,
            "threshold": report.threshold,
            "n_divergent": report.n_divergent,
            "pass": pass,
        }),
    })
}

#[derive(Debug, Serialize)]
struct NormCheck {
    quantity: &'static str,
    region_name: &'static str,
    report: LocalNormReport,
}

#[derive(Debug, Serialize)]
struct ConditionsReport {
    condition: Condition,
    field: String,
    window: Option<ExponentWindow>,
    exponent: Option<f64>,
    exponent_in_window: Option<bool>,
    norms: Vec<NormCheck>,
    ellipticity: EllipticityReport,
    notes: Vec<String>,
    pass: bool,
}

/// A finite exponent inside the window, used when none is given.
fn representative(set: &ExponentSet) -> Option<f64> {
    match *set {
        ExponentSet::Open { lo, hi: Some(hi) } => Some(0.5 * (lo + hi)),
        ExponentSet::Open { lo, hi: None } => Some(lo + 1.0),
        ExponentSet::Point { value } => Some(value),
        ExponentSet::Infinity => None,
    }
}

pub fn check_conditions(a: &CheckConditionsArgs, out: PathBuf) -> CliResult<Outcome> {
    let (value, field) = load_field(&a.field)?;
    let condition: Condition = a
        .condition
        .parse()
        .map_err(|e: wdiff::Error| CliError::input("--condition", "", e.to_string()))?;
    let d = field.dim();
    let mut notes = Vec::new();
    let alpha = field.isotropic_alpha().or_else(|| field.weight().power_alpha());
    let window = match alpha {
        Some(alpha) => Some(exponent_window(alpha, d, condition).map_err(lib("--field"))?),
        None => {
            notes.push("field has no power exponent; exponent window not computed".into());
            None
        }
    };
    // ∂ⱼa_ij for the p-conditions, Σⱼ∂ⱼa_ij/ρ otherwise.
    let use_drift = matches!(condition, Condition::Hp3I | Condition::Hp6);
    let quantity = if use_drift {
        "divergence_over_weight"
    } else {
        "divergence"
    };
    let window_set = window
        .as_ref()
        .and_then(|w| if use_drift && w.q.is_some() { w.q } else { w.p.or(w.q) });
    let exponent = a.p.or_else(|| window_set.as_ref().and_then(representative));
    let exponent_in_window = match (exponent, window_set) {
        (Some(p), Some(set)) => Some(set.contains(p)),
        _ => None,
    };
    if window.as_ref().is_some_and(|w| !w.applies) {
        notes.push("the condition is not stated for this exponent".into());
    }
    let magnitude = |x: &[f64]| -> f64 {
        let v = if use_drift {
            field.drift(x).map(|b| 2.0 * norm(&b))
        } else {
            field.divergence(x).map(|v| norm(&v))
        };
        v.unwrap_or(f64::INFINITY)
    };
    let mut regions = Vec::new();
    if matches!(a.region, RegionChoice::Ball | RegionChoice::Both) {
        regions.push((
            "ball",
            Region::Ball {
                center: vec![0.0; d],
                radius: 1.0,
            },
        ));
    }
    if matches!(a.region, RegionChoice::Annulus | RegionChoice::Both) {
        regions.push((
            "annulus",
            Region::Annulus {
                dim: d,
                inner: 0.5,
                outer: 2.0,
            },
        ));
    }
    let mut norms = Vec::new();
    match exponent {
        Some(p) => {
            for (name, region) in regions {
                let report =
                    check_local_norms(magnitude, p, &region, None, &QuadConfig::default()).map_err(lib("--field"))?;
                norms.push(NormCheck {
                    quantity,
                    region_name: name,
                    report,
                });
            }
        }
        None => notes.push("no finite exponent to check; local norms skipped".into()),
    }
    let ellipticity = field
        .check_ellipticity(
            a.ellipticity_points,
            8,
            &Region::Ball {
                center: vec![0.0; d],
                radius: 2.0,
            },
            a.seed,
        )
        .map_err(lib("--field"))?;
    let pass = norms.iter().all(|n| n.report.pass)
        && exponent_in_window.unwrap_or(true)
        && window.as_ref().is_none_or(|w| w.applies)
        && ellipticity.consistent;
    let report = ConditionsReport {
        condition,
        field: field.name().to_string(),
        window,
        exponent,
        exponent_in_window,
        norms,
        ellipticity,
        notes,
        pass,
    };
    let spec = json!({
        "field": value,
        "condition": condition.as_str(),
        "p": a.p,
        "region": format!("{:?}", a.region).to_lowercase(),
        "ellipticity_points": a.ellipticity_points,
    });
    let mut run = Run::new(out, "check-conditions", spec, Some(a.seed))?;
    run.write_json("report.json", &report)?;
    run.finish(pass)?;
    Ok(Outcome {
        pass,
        summary: json!({
            "condition": condition.as_str(),
            "exponent": exponent,
            "norms": report.norms.iter().map(|n| json!({
                "region": n.region_name,
                "converged": n.report.converged,
                "value": n.report.value,
                "pass": n.report.pass,
            })).collect::<Vec<_>>(),
            "lambda_hat": report.ellipticity.lambda_hat,
            "pass": pass,
        }),
    })
}

fn moment_rows(run_id: &str, summary: &BatchSummary) -> Vec<TidyRow> {
    let mut rows = Vec::new();
    for m in &summary.moments {
        rows.push(TidyRow {
            run_id: run_id.to_string(),
            t: m.t,
            statistic: "mean_sq_norm".into(),
            value: m.mean_sq_norm,
            se: m.se,
        });
        rows.push(TidyRow {
            run_id: run_id.to_string(),
            t: m.t,
            statistic: "alive".into(),
            value: m.alive as f64,
            se: 0.0,
        });
    }
    rows
}

pub fn simulate(a: &SimulateArgs, out: PathBuf) -> CliResult<Outcome> {
    let (value, field) = load_field(&a.field)?;
    let c = SdeCoefficients::new(field);
    let x0 = parse_point(&a.x0, "x0")?;
    let domain = match a.domain {
        DomainChoice::Full => Domain::Full,
        DomainChoice::Annulus => {
            if a.domain_size.fract() != 0.0 || a.domain_size < 2.0 {
                return Err(CliError::input(
                    "--domain-size",
                    "",
                    "annulus size must be an integer >= 2",
                ));
            }
            Domain::Annulus {
                k: a.domain_size as u32,
            }
        }
        DomainChoice::Ball => Domain::Ball { radius: a.domain_size },
    };
    let snapshots = match &a.snapshots {
        Some(s) => parse_point(s, "snapshots")?,
        None => Vec::new(),
    };
    let mut cfg = SimConfig::new(a.t, a.dt)
        .map_err(arg_err("dt"))?
        .with_domain(domain)
        .with_taming(a.taming)
        .with_r_max(a.r_max)
        .with_record_stride(a.record_stride)
        .with_snapshots(&snapshots);
    if a.fixed_step {
        cfg = cfg.with_policy(StepPolicy::Fixed);
    }
    cfg.validate().map_err(arg_err("t"))?;
    let batch = simulate_batch(&c, &x0, a.n, &cfg, a.seed, None).map_err(arg_err("x0"))?;
    let summary = batch.summary();
    let spec = json!({
        "field": value,
        "x0": x0,
        "n": a.n,
        "config": cfg,
    });
    let mut run = Run::new(out, "simulate", spec, Some(a.seed))?;
    let batch_bytes = serde_json::to_vec(&batch).expect("batches serialize");
    let batch_name = a.out.clone().unwrap_or_else(|| PathBuf::from("batch.json"));
    run.write_bytes(&batch_name.to_string_lossy(), &batch_bytes)?;
    run.write_json("summary.json", &summary)?;
    let rows = moment_rows(run.run_id(), &summary);
    run.write_tidy_csv("moments.csv", &rows)?;
    if a.paths_csv {
        let d = batch.dim();
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        let records: Vec<Vec<String>> = batch
            .paths
            .iter()
            .flat_map(|p| {
                p.times.iter().zip(&p.states).map(move |(t, x)| {
                    let mut r = vec![p.stream.to_string(), t.to_string()];
                    r.extend(x.iter().map(|v| v.to_string()));
                    r
                })
            })
            .collect();
        run.write_csv_records("paths.csv", &header, &records)?;
    }
    run.finish(true)?;
    Ok(Outcome {
        pass: true,
        summary: serde_json::to_value(&summary).expect("summaries serialize"),
    })
}

#[derive(Debug, Serialize)]
struct MomentCheck {
    t: f64,
    expected: f64,
    estimate: MeanSe,
    z: f64,
}

#[derive(Debug, Serialize)]
struct MomentsReport {
    d: usize,
    alpha: f64,
    delta: f64,
    x0: Vec<f64>,
    n: usize,
    dt: f64,
    k: f64,
    checks: Vec<MomentCheck>,
    digest: String,
    notes: Vec<String>,
    pass: bool,
}

pub fn verify_moments(a: &VerifyMomentsArgs, out: PathBuf) -> CliResult<Outcome> {
    let oracle = BesselOracle::new(a.d, a.alpha).map_err(arg_err("alpha"))?;
    let field = DiffusionField::isotropic_power(a.alpha, a.d).map_err(arg_err("alpha"))?;
    let x0 = match &a.x0 {
        Some(s) => parse_point(s, "x0")?,
        None => unit_start(a.d),
    };
    let cfg = SimConfig::new(a.t, a.dt)
        .map_err(arg_err("dt"))?
        .with_snapshots(&[0.25 * a.t, 0.5 * a.t]);
    let batch = simulate_batch(&SdeCoefficients::new(field), &x0, a.n, &cfg, a.seed, None).map_err(arg_err("x0"))?;
    let mut checks = Vec::new();
    for t in cfg.marks() {
        let estimate = mean_sq_norm(&batch, t).map_err(lib("batch"))?;
        let expected = oracle.besq_mean(&x0, t);
        let z = if estimate.se > 0.0 {
            (estimate.mean - expected) / estimate.se
        } else {
            0.0
        };
        checks.push(MomentCheck {
            t,
            expected,
            estimate,
            z,
        });
    }
    let pass = checks.iter().all(|c| c.estimate.covers(c.expected, a.k));
    let summary = batch.summary();
    let report = MomentsReport {
        d: a.d,
        alpha: a.alpha,
        delta: oracle.delta,
        x0: x0.clone(),
        n: a.n,
        dt: a.dt,
        k: a.k,
        checks,
        digest: summary.digest.clone(),
        notes: batch.notes.clone(),
        pass,
    };
    let spec = json!({
        "d": a.d, "alpha": a.alpha, "x0": x0, "n": a.n, "t": a.t, "dt": a.dt, "k": a.k,
    });
    let mut run = Run::new(out, "verify-moments", spec, Some(a.seed))?;
    run.write_json("report.json", &report)?;
    let id = run.run_id().to_string();
    let mut rows = Vec::new();
    for c in &report.checks {
        rows.push(TidyRow {
            run_id: id.clone(),
            t: c.t,
            statistic: "mean_sq_norm".into(),
            value: c.estimate.mean,
            se: c.estimate.se,
        });
        rows.push(TidyRow {
            run_id: id.clone(),
            t: c.t,
            statistic: "oracle_mean_sq_norm".into(),
            value: c.expected,
            se: 0.0,
        });
    }
    run.write_tidy_csv("moments.csv", &rows)?;
    run.finish(pass)?;
    let last = report.checks.last().expect("the horizon is always checked");
    Ok(Outcome {
        pass,
        summary: json!({
            "delta": report.delta,
            "t": last.t,
            "expected": last.expected,
            "mean": last.estimate.mean,
            "se": last.estimate.se,
            "pass": pass,
        }),
    })
}

/// Evaluation grid for the heat-kernel check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    /// Distances along each coordinate axis from x0.
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    /// Times to check; the batch's recorded times when omitted.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct HeatKernelReport {
    batch_digest: String,
    master_seed: u64,
    n: usize,
    x0: Vec<f64>,
    lambda: f64,
    eps: f64,
    bandwidths: Vec<Vec<f64>>,
    fits: Vec<EnvelopeReport>,
    sweep: EnvelopeSweep,
    pass: bool,
}

pub fn verify_heatkernel(a: &VerifyHeatkernelArgs, out: PathBuf) -> CliResult<Outcome> {
    let label = a.batch.display().to_string();
    let file = File::open(&a.batch).map_err(|source| CliError::Read {
        path: a.batch.clone(),
        source,
    })?;
    let mut de = serde_json::Deserializer::from_reader(BufReader::new(file));
    let batch: PathBatch = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let pointer = if path == "." {
            String::new()
        } else {
            format!("/{}", path.replace('.', "/"))
        };
        CliError::input(&label, pointer, e.inner().to_string())
    })?;
    let weight: Weight = decode(
        &label,
        batch.coefficients.get("weight").unwrap_or(&serde_json::Value::Null),
    )
    .map_err(|e| match e {
        CliError::Input {
            source_name,
            pointer,
            reason,
        } => CliError::Input {
            source_name,
            pointer: format!("/coefficients/weight{pointer}"),
            reason,
        },
        other => other,
    })?;
    let lambda = batch
        .coefficients
        .get("lambda")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| CliError::input(&label, "/coefficients/lambda", "missing ellipticity constant"))?;
    let (grid_label, grid_value) = read_json_arg(&a.grid, "grid")?;
    let grid: GridSpec = decode(&grid_label, &grid_value)?;
    let points = match (&grid.points, &grid.radii) {
        (Some(p), None) => p.clone(),
        (None, Some(r)) => axis_grid(&batch.x0, r),
        _ => {
            return Err(CliError::input(
                &grid_label,
                "",
                "give exactly one of `points` and `radii`",
            ))
        }
    };
    let times = grid
        .times
        .clone()
        .unwrap_or_else(|| batch.config.marks().into_iter().filter(|t| *t > 0.0).collect());
    let bandwidth = match a.bandwidth {
        Some(h) => Bandwidth::Fixed { h },
        None => Bandwidth::Silverman,
    };
    let envelope = HeatKernelEnvelope::new(weight.clone(), lambda, a.eps).map_err(arg_err("eps"))?;
    let mut fits = Vec::new();
    let mut bandwidths = Vec::new();
    for (i, t) in times.iter().enumerate() {
        let est = kde_transition_density(&batch, *t, &points, &weight, &bandwidth).map_err(|e| match e {
            wdiff::Error::NotRecorded { .. } => CliError::input(&grid_label, format!("/times/{i}"), e.to_string()),
            other => CliError::from_lib(&grid_label, other),
        })?;
        let env = points
            .iter()
            .map(|y| envelope.eval(&batch.x0, y, *t))
            .collect::<wdiff::Result<Vec<f64>>>()
            .map_err(lib(&grid_label))?;
        bandwidths.push(est.bandwidth.clone());
        fits.push(fit_heat_kernel_constant(&est, &env, a.eps).map_err(lib(&grid_label))?);
    }
    let sweep = envelope_sweep(&fits, a.max_spread);
    let pass = sweep.stable;
    let report = HeatKernelReport {
        batch_digest: batch.summary().digest,
        master_seed: batch.master_seed,
        n: batch.len(),
        x0: batch.x0.clone(),
        lambda,
        eps: a.eps,
        bandwidths,
        fits,
        sweep,
        pass,
    };
    let spec = json!({
        "batch_digest": report.batch_digest,
        "grid": grid_value,
        "eps": a.eps,
        "bandwidth": a.bandwidth,
        "max_spread": a.max_spread,
    });
    let mut run = Run::new(out, "verify-heatkernel", spec, Some(batch.master_seed))?;
    let name = a.out.clone().unwrap_or_else(|| PathBuf::from("report.json"));
    run.write_json(&name.to_string_lossy(), &report)?;
    let id = run.run_id().to_string();
    let rows: Vec<TidyRow> = report
        .fits
        .iter()
        .map(|f| TidyRow {
            run_id: id.clone(),
            t: f.t,
            statistic: "c_hat".into(),
            value: f.c_hat,
            se: 0.0,
        })
        .collect();
    run.write_tidy_csv("envelope.csv", &rows)?;
    run.finish(pass)?;
    Ok(Outcome {
        pass,
        summary: json!({
            "times": report.sweep.times,
            "c_hats": report.sweep.c_hats,
            "spread": report.sweep.spread,
            "pass": pass,
        }),
    })
}

#[derive(Debug, Serialize)]
struct ReferenceHits {
    hits: Proportion,
    /// Closed form for reflected Brownian motion (δ = 1).
    exact: Option<f64>,
}

#[derive(Debug, Serialize)]
struct HittingReport {
    d: usize,
    alpha: f64,
    delta: f64,
    origin_hit: bool,
    eps: f64,
    horizon: f64,
    n: usize,
    dt: f64,
    stats: HittingStats,
    /// P(ever entering B_ε) = ε^{δ−2} from ‖x0‖ = 1 when δ > 2.
    ever_hit_probability: Option<f64>,
    reference: Option<ReferenceHits>,
    criterion: String,
    pass: bool,
}

pub fn hitting(a: &HittingArgs, out: PathBuf) -> CliResult<Outcome> {
    let delta = bessel_dimension(a.d, a.alpha).map_err(arg_err("alpha"))?;
    let field = DiffusionField::isotropic_power(a.alpha, a.d).map_err(arg_err("alpha"))?;
    let cfg = SimConfig::new(a.t, a.dt)
        .map_err(arg_err("dt"))?
        .with_target(a.eps, true);
    let x0 = unit_start(a.d);
    let batch = simulate_batch(&SdeCoefficients::new(field), &x0, a.n, &cfg, a.seed, None).map_err(arg_err("eps"))?;
    let stats = hitting_stats(&batch, a.eps, a.confidence).map_err(arg_err("confidence"))?;
    let origin_hit = hits_origin(delta);
    let (reference, criterion, pass) = if origin_hit {
        let opts = RadialSimOptions {
            hit_radius: Some(a.eps),
            ..Default::default()
        };
        let sample =
            radial_reference_sim(delta, 1.0, a.t, a.n, a.dt, a.seed ^ 0x5eed_0001, &opts).map_err(arg_err("dt"))?;
        let reference = wilson(sample.hit_count(), a.n, a.confidence);
        let z = z_for_confidence(a.confidence);
        let band = z * (stats.hits.se().powi(2) + reference.se().powi(2)).sqrt();
        let pass = (stats.hits.fraction - reference.fraction).abs() <= band;
        let exact = (delta == 1.0).then(|| reflected_hit_probability(1.0, a.eps, a.t));
        (
            Some(ReferenceHits { hits: reference, exact }),
            format!("|fraction - reference| <= {:.3} combined standard errors", z),
            pass,
        )
    } else {
        let pass = stats.hits.lo <= a.max_fraction;
        (None, format!("lower confidence bound <= {}", a.max_fraction), pass)
    };
    let report = HittingReport {
        d: a.d,
        alpha: a.alpha,
        delta,
        origin_hit,
        eps: a.eps,
        horizon: a.t,
        n: a.n,
        dt: a.dt,
        ever_hit_probability: (delta > 2.0).then(|| a.eps.powf(delta - 2.0)),
        stats,
        reference,
        criterion,
        pass,
    };
    let spec = json!({
        "d": a.d, "alpha": a.alpha, "eps": a.eps, "t": a.t, "n": a.n, "dt": a.dt,
        "max_fraction": a.max_fraction, "confidence": a.confidence,
    });
    let mut run = Run::new(out, "hitting", spec, Some(a.seed))?;
    run.write_json("report.json", &report)?;
    let id = run.run_id().to_string();
    let h = &report.stats.hits;
    let mut rows = vec![TidyRow {
        run_id: id.clone(),
        t: a.t,
        statistic: "hit_fraction".into(),
        value: h.fraction,
        se: h.se(),
    }];
    if let Some(r) = &report.reference {
        rows.push(TidyRow {
            run_id: id,
            t: a.t,
            statistic: "reference_hit_fraction".into(),
            value: r.hits.fraction,
            se: r.hits.se(),
        });
    }
    run.write_tidy_csv("hitting.csv", &rows)?;
    run.finish(pass)?;
    Ok(Outcome {
        pass,
        summary: json!({
            "delta": delta,
            "fraction": report.stats.hits.fraction,
            "ci": [report.stats.hits.lo, report.stats.hits.hi],
            "reference": report.reference.as_ref().map(|r| r.hits.fraction),
            "pass": pass,
        }),
    })
}

#[derive(Debug, Serialize)]
struct PotentialReport {
    eta: f64,
    x: Vec<f64>,
    value: f64,
    error: f64,
    hoelder: Option<HoelderReport>,
    pass: bool,
}

pub fn potentials(a: &PotentialsArgs, out: PathBuf) -> CliResult<Outcome> {
    let (label, value) = read_json_arg(&a.g, "g")?;
    let g: ScalarField = decode(&label, &value)?;
    let x = parse_point(&a.x, "x")?;
    let cfg = QuadConfig::default();
    let est = riesz_potential(&g, x.len(), a.eta, &x, &cfg).map_err(|e| match e {
        wdiff::Error::InvalidParameter { name: "eta", reason } => CliError::input("--eta", "", reason),
        other => CliError::from_lib(&label, other),
    })?;
    let hoelder = a.p.map(|p| check_hoelder_hypotheses(&g, p, a.eta, x.len(), &cfg));
    let pass = hoelder.as_ref().is_none_or(|h| h.pass);
    let report = PotentialReport {
        eta: a.eta,
        x: x.clone(),
        value: est.value,
        error: est.error,
        hoelder,
        pass,
    };
    let spec = json!({ "g": value, "eta": a.eta, "x": x, "p": a.p });
    let mut run = Run::new(out, "potentials", spec, None)?;
    run.write_json("report.json", &report)?;
    run.finish(pass)?;
    Ok(Outcome {
        pass,
        summary: serde_json::to_value(&report).expect("reports serialize"),
    })
}

pub fn oracle(cmd: &OracleCommand, out: PathBuf) -> CliResult<Outcome> {
    let (spec, report) = match cmd {
        OracleCommand::BesqMean { d, alpha, x0, t } => {
            let o = BesselOracle::new(*d, *alpha).map_err(arg_err("alpha"))?;
            let x0 = parse_point(x0, "x0")?;
            if x0.len() != *d {
                return Err(CliError::input(
                    "--x0",
                    "",
                    format!("expected {d} coordinates, got {}", x0.len()),
                ));
            }
            if t.is_nan() || *t < 0.0 {
                return Err(CliError::input("--t", "", "must be non-negative"));
            }
            let spec = json!({ "op": "besq-mean", "d": d, "alpha": alpha, "x0": x0, "t": t });
            let report = json!({
                "d": d, "alpha": alpha, "delta": o.delta, "x0": x0, "t": t,
                "mean_sq_norm": o.besq_mean(&x0, *t),
            });
            (spec, report)
        }
        OracleCommand::Dimension { d, alpha } => {
            let delta = bessel_dimension(*d, *alpha).map_err(arg_err("alpha"))?;
            let spec = json!({ "op": "dimension", "d": d, "alpha": alpha });
            (
                spec,
                json!({ "d": d, "alpha": alpha, "delta": delta, "hits_origin": hits_origin(delta) }),
            )
        }
        OracleCommand::Density {
            delta,
            r0,
            t,
            r,
            convention,
        } => {
            let radii = parse_point(r, "r")?;
            let conv = match convention {
                ConventionChoice::Reflecting => BoundaryConvention::Reflecting,
                ConventionChoice::Absorbing => BoundaryConvention::Absorbing,
            };
            let classify = |i: usize, e: wdiff::Error| match e {
                wdiff::Error::InvalidParameter { name, reason } => {
                    CliError::input(format!("--{name}"), format!("/{i}"), reason)
                }
                other => CliError::Numeric(other),
            };
            let mut rows = Vec::new();
            for (i, rv) in radii.iter().enumerate() {
                let density = match besq_radial_density(*rv, *t, *r0, *delta, conv) {
                    Ok(p) => p,
                    Err(wdiff::Error::NumericUnderflow { .. }) => 0.0,
                    Err(e) => return Err(classify(i, e)),
                };
                let cdf = besq_radial_cdf(*rv, *t, *r0, *delta, conv).map_err(|e| classify(i, e))?;
                rows.push(json!({ "r": rv, "density": density, "cdf": cdf }));
            }
            let spec = json!({
                "op": "density", "delta": delta, "r0": r0, "t": t, "r": radii,
                "convention": format!("{convention:?}").to_lowercase(),
            });
            let report = json!({ "delta": delta, "r0": r0, "t": t, "convention": conv, "values": rows });
            (spec, report)
        }
    };
    let mut run = Run::new(out, "oracle", spec, None)?;
    run.write_json("report.json", &report)?;
    run.finish(true)?;
    Ok(Outcome {
        pass: true,
        summary: report,
    })
}
