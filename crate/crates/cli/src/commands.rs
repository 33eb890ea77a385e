use std::f64::consts::LN_2;
use std::path::Path;

use envelope_core::analysis::{
    capacity_bounds, threshold_vs_waterfilling_with, uniform_sphere_mi, waterfilling, ThresholdRow,
};
use envelope_core::optimizer::{solve_capacity, sweep_radius, verify_conditions};
use envelope_core::{Atom, CapacityResult, Channel, DistributionFile, Error};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Format, RunConfig};
use crate::output::{to_value, write_csv, write_envelope};
use crate::CliError;

const DEFAULT_THRESHOLD_GRID: [f64; 9] = [1.05, 1.1, 1.2, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0];

fn info(cfg: &RunConfig, nats: f64) -> String {
    if cfg.bits {
        format!("{:.6} bits", nats / LN_2)
    } else {
        format!("{nats:.6} nats")
    }
}

fn report(path: &Path) {
    println!("wrote {}", path.display());
}

/// Persists the best iterate of a failed solve, then passes the error on.
fn failure_payload(e: &Error) -> Option<Value> {
    let best = e.best_iterate()?;
    Some(json!({
        "error": e.to_string(),
        "best_iterate": {
            "atoms": best.distribution.atoms(),
            "capacity_nats": best.entropy.capacity,
            "entropy_nats": best.entropy.h_output,
            "err_hint": best.entropy.err_hint,
            "kkt": best.kkt,
        }
    }))
}

fn check_increasing(name: &str, values: &[f64]) -> Result<(), CliError> {
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(CliError::Validation(format!("`{name}` must be strictly increasing")));
    }
    Ok(())
}

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let ch = Channel::new(cfg.require_lambda()?, cfg.require_radius()?)?;
    if ch.is_identity() {
        return Err(Error::IdentityChannel.into());
    }
    match solve_capacity(&ch, &cfg.solver) {
        Ok(result) => {
            report(&write_envelope(cfg, to_value(&result)?)?);
            if cfg.format == Format::Csv {
                report(&write_csv(cfg, result.distribution.atoms())?);
            }
            println!(
                "lambda={} radius={} capacity={} atoms={} max_violation={:.3e}",
                ch.lambda(),
                ch.radius(),
                info(cfg, result.capacity()),
                result.distribution.atom_count(),
                result.kkt.max_violation
            );
            Ok(())
        }
        Err(e) => {
            if let Some(payload) = failure_payload(&e) {
                report(&write_envelope(cfg, payload)?);
            }
            Err(e.into())
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    radius: f64,
    capacity: f64,
    n_atoms: usize,
    max_violation: f64,
    satisfied: bool,
}

impl SweepRow {
    fn new(radius: f64, outcome: &Result<CapacityResult, Error>) -> Self {
        match outcome {
            Ok(r) => Self {
                radius,
                capacity: r.capacity(),
                n_atoms: r.distribution.atom_count(),
                max_violation: r.kkt.max_violation,
                satisfied: r.kkt.satisfied,
            },
            Err(e) => {
                let best = e.best_iterate();
                Self {
                    radius,
                    capacity: best.map_or(f64::NAN, |b| b.entropy.capacity),
                    n_atoms: best.map_or(0, |b| b.distribution.atom_count()),
                    max_violation: best.and_then(|b| b.kkt).map_or(f64::NAN, |k| k.max_violation),
                    satisfied: false,
                }
            }
        }
    }
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let lambda = cfg.require_lambda()?;
    let radii = cfg.radius_list()?;
    let outcomes = sweep_radius(lambda, &radii, &cfg.solver)?;
    let rows: Vec<SweepRow> = radii.iter().zip(&outcomes).map(|(&r, o)| SweepRow::new(r, o)).collect();
    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    for (row, outcome) in rows.iter().zip(&outcomes) {
        match outcome {
            Ok(r) => {
                println!("radius={} capacity={} atoms={}", row.radius, info(cfg, row.capacity), row.n_atoms);
                results.push(to_value(r)?);
            }
            Err(e) => {
                failures += 1;
                eprintln!("radius={}: {e}", row.radius);
                results.push(failure_payload(e).unwrap_or_else(|| json!({ "error": e.to_string() })));
            }
        }
    }
    report(&write_envelope(cfg, json!({ "lambda": lambda, "rows": &rows, "results": results }))?);
    if cfg.format == Format::Csv {
        report(&write_csv(cfg, &rows)?);
    }
    if failures > 0 {
        return Err(CliError::Computation(format!("{failures} of {} radii failed", rows.len())));
    }
    Ok(())
}

pub fn threshold(cfg: &RunConfig) -> Result<(), CliError> {
    let grid = if cfg.lambdas.is_empty() {
        cfg.lambda.map_or_else(|| DEFAULT_THRESHOLD_GRID.to_vec(), |l| vec![l])
    } else {
        cfg.lambdas.clone()
    };
    if let Some(&bad) = grid.iter().find(|l| !(l.is_finite() && **l > 1.0)) {
        return Err(CliError::Validation(format!("invalid value in `lambdas`: {bad} (must exceed 1)")));
    }
    let rows: Vec<ThresholdRow> = threshold_vs_waterfilling_with(&grid, &cfg.solver.quadrature)?;
    for row in &rows {
        match (row.r_threshold, &row.error) {
            (Some(r), _) => println!("lambda={} r_threshold={r:.6} wf_level={:.6}", row.lambda, row.wf_level),
            (None, err) => eprintln!("lambda={}: {}", row.lambda, err.as_deref().unwrap_or("failed")),
        }
    }
    report(&write_envelope(cfg, json!({ "rows": &rows }))?);
    if cfg.format == Format::Csv {
        report(&write_csv(cfg, &rows)?);
    }
    let failures = rows.iter().filter(|r| r.r_threshold.is_none()).count();
    if failures > 0 {
        return Err(CliError::Computation(format!("{failures} thresholds could not be bracketed")));
    }
    Ok(())
}

#[derive(Serialize)]
struct BoundsRow {
    n: usize,
    det_h: f64,
    radius: f64,
    lower: f64,
    upper: f64,
    /// `Δupper / Δln R` from the previous row
    upper_slope: Option<f64>,
}

pub fn bounds(cfg: &RunConfig) -> Result<(), CliError> {
    let det = cfg
        .det
        .ok_or_else(|| CliError::Validation("missing required parameter `det`".into()))?;
    let radii = cfg.radius_list()?;
    check_increasing("radii", &radii)?;
    let mut rows: Vec<BoundsRow> = Vec::with_capacity(radii.len());
    for &r in &radii {
        let b = capacity_bounds(cfg.n, det, r)?;
        let upper_slope = rows
            .last()
            .map(|prev| (b.upper_nats - prev.upper) / (r.ln() - prev.radius.ln()));
        println!("radius={r} lower={} upper={}", info(cfg, b.lower_nats), info(cfg, b.upper_nats));
        rows.push(BoundsRow {
            n: b.n,
            det_h: b.det_h,
            radius: r,
            lower: b.lower_nats,
            upper: b.upper_nats,
            upper_slope,
        });
    }
    report(&write_envelope(cfg, json!({ "rows": &rows }))?);
    if cfg.format == Format::Csv {
        report(&write_csv(cfg, &rows)?);
    }
    Ok(())
}

#[derive(Serialize)]
struct WaterfillRow {
    lambda: f64,
    radius: f64,
    p1: f64,
    p2: f64,
    capacity_nats: f64,
    activation_level: f64,
}

pub fn waterfill(cfg: &RunConfig) -> Result<(), CliError> {
    let lambda = cfg.require_lambda()?;
    let mut rows = Vec::new();
    for r in cfg.radius_list()? {
        let w = waterfilling(lambda, r)?;
        println!("radius={r} p1={:.6} p2={:.6} capacity={}", w.p1, w.p2, info(cfg, w.capacity_nats));
        rows.push(WaterfillRow {
            lambda,
            radius: r,
            p1: w.p1,
            p2: w.p2,
            capacity_nats: w.capacity_nats,
            activation_level: w.activation_level,
        });
    }
    report(&write_envelope(cfg, json!({ "rows": &rows }))?);
    if cfg.format == Format::Csv {
        report(&write_csv(cfg, &rows)?);
    }
    Ok(())
}

#[derive(Serialize)]
struct DofRow {
    radius: f64,
    mi_nats: f64,
    std_error: f64,
    lower: f64,
    upper: f64,
}

/// Least-squares slope of `y` against `ln x`.
fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn dof(cfg: &RunConfig) -> Result<(), CliError> {
    let lambda = cfg.require_lambda()?;
    let radii = cfg.radius_list()?;
    if radii.len() < 2 {
        return Err(CliError::Validation("`radii` needs at least two values to fit a slope".into()));
    }
    check_increasing("radii", &radii)?;
    let mut singular = vec![1.0; cfg.n];
    singular[0] = lambda;
    let mut rows = Vec::with_capacity(radii.len());
    for &r in &radii {
        // same seed at every radius: common random numbers steady the slope
        let est = uniform_sphere_mi(cfg.n, &singular, r, cfg.samples, cfg.seed)?;
        let b = capacity_bounds(cfg.n, lambda, r)?;
        println!("radius={r} mutual_information={} ± {:.2e}", info(cfg, est.value), est.std_error);
        rows.push(DofRow {
            radius: r,
            mi_nats: est.value,
            std_error: est.std_error,
            lower: b.lower_nats,
            upper: b.upper_nats,
        });
    }
    let mi: Vec<f64> = rows.iter().map(|r| r.mi_nats).collect();
    let slope = log_slope(&radii, &mi);
    println!("slope={slope:.4} (expected {})", cfg.n - 1);
    report(&write_envelope(
        cfg,
        json!({ "rows": &rows, "slope": slope, "expected_slope": cfg.n - 1 }),
    )?);
    if cfg.format == Format::Csv {
        report(&write_csv(cfg, &rows)?);
    }
    Ok(())
}

pub fn verify(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.distribution.as_deref().expect("verify is given a file");
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let file = DistributionFile::from_json(&text)
        .map_err(|e| CliError::Validation(format!("malformed distribution file {}: {e}", path.display())))?;
    let (ch, dist) = file.into_parts()?;
    let kkt = verify_conditions(&dist, &ch, &cfg.solver)?;
    let atoms: &[Atom] = dist.atoms();
    report(&write_envelope(cfg, json!({ "channel": ch, "atoms": atoms, "kkt": kkt }))?);
    println!(
        "h_output={} max_violation={:.3e} support_gap={:.3e}",
        info(cfg, kkt.h_output),
        kkt.max_violation,
        kkt.support_gap
    );
    if !kkt.satisfied {
        return Err(CliError::Validation(format!(
            "optimality conditions fail: max_violation {:.3e}, support_gap {:.3e} (tolerance {:.1e})",
            kkt.max_violation, kkt.support_gap, kkt.tolerance
        )));
    }
    println!("optimality conditions satisfied");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_fit() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 2.0 * v.ln() + 0.3).collect();
        assert!((log_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
