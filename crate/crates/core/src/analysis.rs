//! Closed-form and semi-analytic companions to the solver.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{StandardNormal, UnitCircle, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::distribution::DiscreteCircularDistribution;
use crate::entropy::{ln_cosh, OutputField, LN_2PI_E};
use crate::error::{Error, Result};
use crate::montecarlo::{sample_mean, McEstimate};
use crate::optimizer::{verify_on_grid, KktReport, SolverConfig};
use crate::quadrature::{build_polar_grid, integrate_line, legendre_rule, GridSpec, TAIL_SIGMAS};

/// Smallest radius probed when bracketing the threshold; `R = 0` is a trivial root.
pub const THRESHOLD_SCAN_START: f64 = 0.01;
const THRESHOLD_SCAN_FACTOR: f64 = 1.2;
const THRESHOLD_SCAN_LIMIT: f64 = 50.0;
pub const THRESHOLD_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub lambda: f64,
    pub r_threshold: f64,
    pub residual: f64,
    pub bracket: (f64, f64),
}

/// `h̃(π/2) - h̃(0)` for the antipodal pair on the strong axis: negative while
/// the pair is optimal, positive once the weak axis would gain.
pub fn two_point_residual(lambda: f64, radius: f64, spec: &GridSpec) -> Result<f64> {
    let ch = Channel::new(lambda, radius)?;
    let grid = build_polar_grid(&ch, spec)?;
    let field = OutputField::new(&DiscreteCircularDistribution::antipodal(), &ch, &grid);
    let value = field.marginal_entropy_density(FRAC_PI_2) - field.marginal_entropy_density(0.0);
    finite(value, "two-point residual")
}

/// The same residual in line form:
/// `(1/√2π) ∫ (e^{-(y-λR)²/2} - e^{-y²/2}) ln cosh(λRy) dy - (λ²-1)R²/2`.
pub fn line_threshold_residual(lambda: f64, radius: f64) -> Result<f64> {
    let ch = Channel::new(lambda, radius)?;
    let a = ch.lambda() * ch.radius();
    let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
    let integral = integrate_line(
        |y| inv_sqrt_2pi * ((-0.5 * (y - a) * (y - a)).exp() - (-0.5 * y * y).exp()) * ln_cosh(a * y),
        a + TAIL_SIGMAS + 2.0,
    )?;
    finite(integral.value - 0.5 * (lambda * lambda - 1.0) * radius * radius, "line residual")
}

/// Positive root `R^t(λ)` of the two-point residual, by bracketing from
/// [`THRESHOLD_SCAN_START`] upward and bisecting.
pub fn norm_threshold(lambda: f64) -> Result<ThresholdResult> {
    norm_threshold_with(lambda, &GridSpec::default())
}

pub fn norm_threshold_with(lambda: f64, spec: &GridSpec) -> Result<ThresholdResult> {
    if !(lambda.is_finite() && lambda > 1.0) {
        return Err(Error::arg("lambda", format!("must be finite and > 1, got {lambda}")));
    }
    spec.validate()?;
    let residual = |r: f64| two_point_residual(lambda, r, spec);

    let mut samples = Vec::new();
    let mut lo = THRESHOLD_SCAN_START;
    let mut f_lo = residual(lo)?;
    samples.push((lo, f_lo));
    if f_lo >= 0.0 {
        return Err(Error::Bracketing { samples });
    }
    let mut hi = lo;
    let mut f_hi = f_lo;
    while f_hi < 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi *= THRESHOLD_SCAN_FACTOR;
        if hi > THRESHOLD_SCAN_LIMIT {
            return Err(Error::Bracketing { samples });
        }
        f_hi = residual(hi)?;
        samples.push((hi, f_hi));
    }
    let bracket = (lo, hi);

    let (mut a, mut b) = bracket;
    let (mut root, mut f_root) = if f_lo.abs() < f_hi.abs() { (lo, f_lo) } else { (hi, f_hi) };
    for _ in 0..200 {
        if f_root.abs() <= THRESHOLD_RESIDUAL_TOL || b - a <= 4.0 * f64::EPSILON * b {
            break;
        }
        let mid = 0.5 * (a + b);
        let f_mid = residual(mid)?;
        if f_mid.abs() < f_root.abs() {
            root = mid;
            f_root = f_mid;
        }
        if f_mid < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(ThresholdResult {
        lambda,
        r_threshold: root,
        residual: f_root,
        bracket,
    })
}

/// Optimality report for the antipodal pair on the strong axis.
pub fn two_point_report(lambda: f64, radius: f64, cfg: &SolverConfig) -> Result<KktReport> {
    cfg.validate()?;
    let ch = Channel::new(lambda, radius)?;
    let grid = build_polar_grid(&ch, &cfg.quadrature)?;
    verify_on_grid(&DiscreteCircularDistribution::antipodal(), &ch, &grid, cfg)
}

/// Intervals of `λ` (within the scanned grid) where the antipodal pair passes
/// verification at the given radius, with each edge refined by bisection to `edge_tol`.
pub fn two_point_window(radius: f64, lambda_grid: &[f64], cfg: &SolverConfig, edge_tol: f64) -> Result<Vec<(f64, f64)>> {
    if lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::arg("lambda_grid", "must be strictly increasing"));
    }
    if !(edge_tol > 0.0) {
        return Err(Error::arg("edge_tol", "must be positive"));
    }
    let passes = |l: f64| two_point_report(l, radius, cfg).map(|k| k.satisfied);
    let flags = lambda_grid.iter().map(|&l| passes(l)).collect::<Result<Vec<_>>>()?;
    let refine = |mut inside: f64, mut outside: f64| -> Result<f64> {
        while (outside - inside).abs() > edge_tol {
            let mid = 0.5 * (inside + outside);
            if passes(mid)? {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        Ok(0.5 * (inside + outside))
    };
    let mut windows = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < flags.len() && flags[i + 1] {
            i += 1;
        }
        let lo = if start == 0 {
            lambda_grid[0]
        } else {
            refine(lambda_grid[start], lambda_grid[start - 1])?
        };
        let hi = if i + 1 == flags.len() {
            lambda_grid[i]
        } else {
            refine(lambda_grid[i], lambda_grid[i + 1])?
        };
        windows.push((lo, hi));
        i += 1;
    }
    Ok(windows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterfillingResult {
    pub p1: f64,
    pub p2: f64,
    pub capacity_nats: f64,
    /// `√(1 - 1/λ²)`: the radius at which the weak mode starts receiving power.
    pub activation_level: f64,
}

/// Optimal split of average power `R²` across gains `λ²` and `1`.
pub fn waterfilling(lambda: f64, radius: f64) -> Result<WaterfillingResult> {
    let ch = Channel::new(lambda, radius)?;
    let (l, r) = (ch.lambda(), ch.radius());
    let power = r * r;
    let level2 = 1.0 - 1.0 / (l * l);
    let (p1, p2) = if power <= level2 {
        (power, 0.0)
    } else {
        (0.5 * (power + level2), 0.5 * (power - level2))
    };
    Ok(WaterfillingResult {
        p1,
        p2,
        capacity_nats: 0.5 * (l * l * p1).ln_1p() + 0.5 * p2.ln_1p(),
        activation_level: level2.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub n: usize,
    pub det_h: f64,
    pub radius: f64,
    /// Entropy-power lower bound, nats
    pub lower_nats: f64,
    /// Sphere-entropy upper bound, nats
    pub upper_nats: f64,
}

/// `Γ(n/2)` for a positive integer `n`.
pub fn gamma_half(n: usize) -> f64 {
    let (mut value, mut x) = if n % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    while 2.0 * x < n as f64 {
        value *= x;
        x += 1.0;
    }
    value
}

/// Capacity bounds for an `n × n` channel with `|det H| = det_h` and `‖X‖ = R`.
///
/// With `S = 2π^{n/2} R^{n-1} / Γ(n/2)` the sphere area,
/// lower `= (n/2) ln((S|det H|)^{2/n} + 2πe) - (n/2) ln 2πe` and
/// upper `= ln S + ln |det H|`.
pub fn capacity_bounds(n: usize, det_h: f64, radius: f64) -> Result<BoundsResult> {
    if n < 2 {
        return Err(Error::arg("n", format!("must be at least 2, got {n}")));
    }
    if !(det_h.is_finite() && det_h > 0.0) {
        return Err(Error::arg("det_h", format!("must be positive and finite, got {det_h}")));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::arg("radius", format!("must be positive and finite, got {radius}")));
    }
    let half_n = 0.5 * n as f64;
    let ln_area = 2f64.ln() + half_n * PI.ln() + (n as f64 - 1.0) * radius.ln() - gamma_half(n).ln();
    let ln_volume_term = ln_area + det_h.ln();
    // (S|det|)^{2/n} + 2πe, computed as a log-sum for large R
    let a = ln_volume_term / half_n;
    let b = LN_2PI_E;
    let max = a.max(b);
    let ln_sum = max + ((a - max).exp() + (b - max).exp()).ln();
    Ok(BoundsResult {
        n,
        det_h,
        radius,
        lower_nats: half_n * (ln_sum - LN_2PI_E),
        upper_nats: ln_volume_term,
    })
}

/// `λ²R²/2`: capacity to leading order as `R → 0`.
pub fn asymptotic_capacity(lambda: f64, radius: f64) -> Result<f64> {
    let ch = Channel::new(lambda, radius)?;
    Ok(0.5 * (ch.lambda() * ch.radius()).powi(2))
}

/// Monte-Carlo `I(X; Y)` for `X` uniform on the radius-`R` sphere in `ℝⁿ`,
/// `n ∈ {2, 3}`, through `diag(singular_values)`.
///
/// `f_Y` at each sample is computed by quadrature over the sphere; the exact
/// noise entropy `(n/2) ln 2πe` is subtracted.
pub fn uniform_sphere_mi(n: usize, singular_values: &[f64], radius: f64, samples: usize, seed: u64) -> Result<McEstimate> {
    if n != 2 && n != 3 {
        return Err(Error::arg("n", format!("must be 2 or 3, got {n}")));
    }
    if singular_values.len() != n {
        return Err(Error::arg(
            "singular_values",
            format!("expected {n} values, got {}", singular_values.len()),
        ));
    }
    if singular_values.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::arg("singular_values", "must be positive and finite (full rank)"));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::arg("radius", format!("must be positive and finite, got {radius}")));
    }
    let s_max = singular_values.iter().cloned().fold(0.0, f64::max);
    let ring = (((8.0 * s_max * radius + 64.0) / 4.0).ceil() as usize) * 4;
    let half_n = 0.5 * n as f64;
    let ln_norm = -half_n * (2.0 * PI).ln();

    let estimate = if n == 2 {
        let (s1, s2) = (singular_values[0] * radius, singular_values[1] * radius);
        let nodes: Vec<(f64, f64)> = (0..ring)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / ring as f64;
                (s1 * t.cos(), s2 * t.sin())
            })
            .collect();
        let ln_weight = -(ring as f64).ln();
        sample_mean(samples, seed, |rng| {
            let [x1, x2]: [f64; 2] = rng.sample(UnitCircle);
            let y1 = s1 * x1 + rng.sample::<f64, _>(StandardNormal);
            let y2 = s2 * x2 + rng.sample::<f64, _>(StandardNormal);
            let ln_f = ln_norm + ln_weight + log_sum_exp(nodes.iter().map(|&(m1, m2)| -0.5 * ((y1 - m1).powi(2) + (y2 - m2).powi(2))));
            -ln_f
        })?
    } else {
        let s: Vec<f64> = singular_values.iter().map(|v| v * radius).collect();
        let (u_nodes, u_weights) = legendre_rule((ring / 2).max(8));
        let mut nodes = Vec::with_capacity(u_nodes.len() * ring);
        for (&u, &wu) in u_nodes.iter().zip(&u_weights) {
            let sin_a = (1.0 - u * u).max(0.0).sqrt();
            for k in 0..ring {
                let beta = 2.0 * PI * k as f64 / ring as f64;
                // uniform measure: (1/4π) du dβ
                let ln_w = (wu / (2.0 * ring as f64)).ln();
                nodes.push(([s[0] * sin_a * beta.cos(), s[1] * sin_a * beta.sin(), s[2] * u], ln_w));
            }
        }
        sample_mean(samples, seed, |rng| {
            let x: [f64; 3] = rng.sample(UnitSphere);
            let y: Vec<f64> = (0..3).map(|i| s[i] * x[i] + rng.sample::<f64, _>(StandardNormal)).collect();
            let ln_f = ln_norm
                + log_sum_exp(nodes.iter().map(|(m, ln_w)| {
                    ln_w - 0.5 * ((y[0] - m[0]).powi(2) + (y[1] - m[1]).powi(2) + (y[2] - m[2]).powi(2))
                }));
            -ln_f
        })?
    };
    Ok(McEstimate {
        value: estimate.value - half_n * LN_2PI_E,
        ..estimate
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// One row of the threshold/water-filling comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub lambda: f64,
    pub r_threshold: Option<f64>,
    /// `√(1 - 1/λ²)`
    pub wf_level: f64,
    /// `r_threshold - wf_level`
    pub gap: Option<f64>,
    pub error: Option<String>,
}

pub fn threshold_vs_waterfilling(lambda_grid: &[f64]) -> Result<Vec<ThresholdRow>> {
    threshold_vs_waterfilling_with(lambda_grid, &GridSpec::default())
}

pub fn threshold_vs_waterfilling_with(lambda_grid: &[f64], spec: &GridSpec) -> Result<Vec<ThresholdRow>> {
    if let Some(bad) = lambda_grid.iter().find(|l| !(l.is_finite() && **l > 1.0)) {
        return Err(Error::arg("lambda_grid", format!("values must be > 1, got {bad}")));
    }
    Ok(lambda_grid
        .iter()
        .map(|&lambda| {
            let wf_level = (1.0 - 1.0 / (lambda * lambda)).sqrt();
            match norm_threshold_with(lambda, spec) {
                Ok(t) => ThresholdRow {
                    lambda,
                    r_threshold: Some(t.r_threshold),
                    wf_level,
                    gap: Some(t.r_threshold - wf_level),
                    error: None,
                },
                Err(e) => ThresholdRow {
                    lambda,
                    r_threshold: None,
                    wf_level,
                    gap: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            node: what.into(),
            value,
        })
    }
}
