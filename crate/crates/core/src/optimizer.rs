//! Support search for the capacity-achieving input.
//!
//! The inner optimizer works on symmetry orbits: each orbit is an angle
//! `φ ∈ [0, π/2]` and a total weight spread evenly over its two (endpoint)
//! or four (interior) atoms. The outer loop verifies the optimality
//! conditions `h̃(θ) ≤ h` on a dense grid and inserts a new orbit at the worst
//! violation until they hold.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::distribution::{fold_angle, Atom, DiscreteCircularDistribution, SymmetryOrbit, MERGE_EPS};
use crate::entropy::{output_entropy, EntropyReport, OutputDensity, OutputField, LN_2PI_E};
use crate::error::{BestIterate, Error, Result};
use crate::quadrature::{build_polar_grid, GridSpec, QuadratureGrid};

/// Forward-difference step for the Hessian of the reduced gradient.
const FD_STEP: f64 = 1e-6;
/// Largest angle move per step (radians).
const ANGLE_STEP_CAP: f64 = 0.2;
/// Orbits lighter than this are dropped.
const PRUNE_WEIGHT: f64 = 1e-10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
/// Consecutive sub-tolerance improvements that count as convergence.
const STALL_LIMIT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// nats
    pub kkt_tol: f64,
    pub theta_grid_size: usize,
    pub max_atoms: usize,
    /// radians
    pub merge_eps: f64,
    pub max_iterations: usize,
    /// Sup-norm of the reduced gradient at which the inner optimizer stops.
    pub gradient_tol: f64,
    /// Entropy gain (nats) below which an iteration counts as stalled.
    pub improvement_tol: f64,
    /// Weight given to a newly inserted orbit.
    pub insertion_weight: f64,
    pub warm_start: bool,
    pub quadrature: GridSpec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            theta_grid_size: 2048,
            max_atoms: 64,
            merge_eps: MERGE_EPS,
            max_iterations: 500,
            gradient_tol: 1e-8,
            improvement_tol: 1e-12,
            insertion_weight: 1e-3,
            warm_start: true,
            quadrature: GridSpec::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kkt_tol", self.kkt_tol),
            ("merge_eps", self.merge_eps),
            ("gradient_tol", self.gradient_tol),
            ("improvement_tol", self.improvement_tol),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::arg(name, format!("must be positive and finite, got {value}")));
            }
        }
        if !(self.insertion_weight > 0.0 && self.insertion_weight < 0.5) {
            return Err(Error::arg(
                "insertion_weight",
                format!("must lie in (0, 0.5), got {}", self.insertion_weight),
            ));
        }
        if self.max_atoms < 2 {
            return Err(Error::arg("max_atoms", format!("must be at least 2, got {}", self.max_atoms)));
        }
        if self.theta_grid_size < 4 || self.theta_grid_size % 4 != 0 {
            return Err(Error::arg(
                "theta_grid_size",
                format!("must be a positive multiple of 4, got {}", self.theta_grid_size),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::arg("max_iterations", "must be positive"));
        }
        self.quadrature.validate()
    }
}

/// Grid-resolution certificate for `h̃(θ) ≤ h` everywhere with equality on the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `sup_θ h̃(θ) - h` over the grid and the atoms, nats
    pub max_violation: f64,
    /// `maxᵢ |h̃(θᵢ) - h|`, nats
    pub support_gap: f64,
    pub argmax_theta: f64,
    pub satisfied: bool,
    pub grid_size: usize,
    pub h_output: f64,
    pub tolerance: f64,
}

/// One round of support growth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportStep {
    pub n_atoms: usize,
    pub capacity_nats: f64,
    pub max_violation: f64,
    pub support_gap: f64,
}

#[derive(Debug, Clone)]
pub struct CapacityResult {
    pub channel: Channel,
    pub distribution: DiscreteCircularDistribution,
    pub entropy: EntropyReport,
    pub kkt: KktReport,
    pub trace: Vec<SupportStep>,
}

impl CapacityResult {
    /// nats per channel use
    pub fn capacity(&self) -> f64 {
        self.entropy.capacity
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl Serialize for CapacityResult {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            channel: &'a Channel,
            atoms: &'a [Atom],
            capacity_nats: f64,
            entropy_nats: f64,
            err_hint: f64,
            kkt: &'a KktReport,
            trace: &'a [SupportStep],
        }
        Wire {
            channel: &self.channel,
            atoms: self.distribution.atoms(),
            capacity_nats: self.entropy.capacity,
            entropy_nats: self.entropy.h_output,
            err_hint: self.entropy.err_hint,
            kkt: &self.kkt,
            trace: &self.trace,
        }
        .serialize(serializer)
    }
}

/// Per-atom first derivatives of `h(F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyGradient {
    /// `h̃(θᵢ) - h`: derivative toward a unit mass at `θᵢ`.
    pub d_prob: Vec<f64>,
    /// `∂h/∂θᵢ = pᵢ ∂h̃/∂θ(θᵢ)`.
    pub d_theta: Vec<f64>,
}

pub fn entropy_gradient(
    dist: &DiscreteCircularDistribution,
    ch: &Channel,
    grid: &QuadratureGrid,
) -> Result<EntropyGradient> {
    let field = OutputField::new(dist, ch, grid);
    let h = field.entropy();
    let pairs: Vec<(f64, f64)> = dist
        .atoms()
        .par_iter()
        .map(|a| {
            let (value, slope) = field.marginal_entropy_density_with_slope(a.theta);
            (value - h, a.prob * slope)
        })
        .collect();
    if let Some(bad) = pairs.iter().find(|(p, t)| !(p.is_finite() && t.is_finite())) {
        return Err(Error::NonFinite {
            node: "entropy gradient".into(),
            value: if bad.0.is_finite() { bad.1 } else { bad.0 },
        });
    }
    let (d_prob, d_theta) = pairs.into_iter().unzip();
    Ok(EntropyGradient { d_prob, d_theta })
}

/// Evaluates `h̃` on `theta_grid_size` equispaced angles plus the atoms.
pub fn verify_conditions(dist: &DiscreteCircularDistribution, ch: &Channel, cfg: &SolverConfig) -> Result<KktReport> {
    cfg.validate()?;
    let grid = build_polar_grid(ch, &cfg.quadrature)?;
    verify_on_grid(dist, ch, &grid, cfg)
}

/// [`verify_conditions`] on a prebuilt grid.
pub fn verify_on_grid(
    dist: &DiscreteCircularDistribution,
    ch: &Channel,
    grid: &QuadratureGrid,
    cfg: &SolverConfig,
) -> Result<KktReport> {
    let field = OutputField::new(dist, ch, grid);
    let report = verify_field(&field, dist, cfg);
    if report.max_violation.is_finite() && report.support_gap.is_finite() && report.h_output.is_finite() {
        Ok(report)
    } else {
        Err(Error::NonFinite {
            node: "optimality check".into(),
            value: report.max_violation,
        })
    }
}

fn verify_field(field: &OutputField<'_>, dist: &DiscreteCircularDistribution, cfg: &SolverConfig) -> KktReport {
    let h = field.entropy();
    let n = cfg.theta_grid_size;
    // For canonical inputs h̃ is invariant under θ ↦ -θ and θ ↦ π - θ, so the
    // first quadrant of the grid (which comes first in grid order) decides.
    let orbits = dist.orbits();
    let count = if orbits.is_some() { n / 4 + 1 } else { n };
    let values: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|i| field.marginal_entropy_density(TAU * i as f64 / n as f64))
        .collect();

    let atom_values: Vec<(f64, f64)> = match &orbits {
        Some(orbits) => orbits
            .par_iter()
            .map(|o| (o.angle, field.marginal_entropy_density(o.angle)))
            .collect(),
        None => dist
            .atoms()
            .par_iter()
            .map(|a| (a.theta, field.marginal_entropy_density(a.theta)))
            .collect(),
    };

    let mut max_violation = f64::NEG_INFINITY;
    let mut argmax_theta = 0.0;
    for (i, value) in values.iter().enumerate() {
        if value - h > max_violation {
            max_violation = value - h;
            argmax_theta = TAU * i as f64 / n as f64;
        }
    }
    let mut support_gap: f64 = 0.0;
    for &(theta, value) in &atom_values {
        support_gap = support_gap.max((value - h).abs());
        if value - h > max_violation {
            max_violation = value - h;
            argmax_theta = theta;
        }
    }
    KktReport {
        max_violation,
        support_gap,
        argmax_theta,
        satisfied: max_violation <= cfg.kkt_tol && support_gap <= cfg.kkt_tol,
        grid_size: n,
        h_output: h,
        tolerance: cfg.kkt_tol,
    }
}

/// Best canonical distribution with at most `n_atoms` atoms.
///
/// Without `init`, every orbit layout that fits `n_atoms` is tried from an
/// evenly spread start and the best local maximum is kept.
pub fn optimize_fixed_support(
    n_atoms: usize,
    ch: &Channel,
    cfg: &SolverConfig,
    init: Option<&DiscreteCircularDistribution>,
) -> Result<(DiscreteCircularDistribution, EntropyReport)> {
    cfg.validate()?;
    if n_atoms < 2 || n_atoms > cfg.max_atoms {
        return Err(Error::arg(
            "n_atoms",
            format!("must lie in [2, {}], got {n_atoms}", cfg.max_atoms),
        ));
    }
    let starts = match init {
        Some(dist) => {
            let orbits = canonical_orbits(dist)?;
            if dist.atom_count() > n_atoms {
                return Err(Error::arg(
                    "init",
                    format!("has {} atoms, more than n_atoms = {n_atoms}", dist.atom_count()),
                ));
            }
            vec![orbits]
        }
        None => cold_layouts(n_atoms),
    };
    let grid = build_polar_grid(ch, &cfg.quadrature)?;
    let ascent = Ascent { ch, grid: &grid, cfg };

    let mut best: Option<(Vec<SymmetryOrbit>, f64)> = None;
    let mut first_error = None;
    for start in starts {
        let mut iterations = 0;
        match ascent.run(start, &mut iterations) {
            Ok((orbits, h)) => {
                if best.as_ref().map_or(true, |(_, hb)| h > *hb) {
                    best = Some((orbits, h));
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some((orbits, _)) => {
            let dist = DiscreteCircularDistribution::from_orbits(&orbits, cfg.merge_eps)?;
            let report = output_entropy(&dist, ch, &grid)?;
            Ok((dist, report))
        }
        None => Err(first_error.expect("at least one start")),
    }
}

/// Grows the support from the antipodal pair until the optimality conditions hold.
pub fn solve_capacity(ch: &Channel, cfg: &SolverConfig) -> Result<CapacityResult> {
    solve_capacity_from(ch, cfg, None)
}

/// [`solve_capacity`] started from a given canonical distribution.
pub fn solve_capacity_from(
    ch: &Channel,
    cfg: &SolverConfig,
    init: Option<&DiscreteCircularDistribution>,
) -> Result<CapacityResult> {
    if ch.is_identity() {
        return Err(Error::IdentityChannel);
    }
    cfg.validate()?;
    let mut orbits = match init {
        Some(dist) => canonical_orbits(dist)?,
        None => vec![SymmetryOrbit::new(0.0, 1.0)],
    };
    let grid = build_polar_grid(ch, &cfg.quadrature)?;
    let ascent = Ascent { ch, grid: &grid, cfg };
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut stuck = 0;

    loop {
        let (current, _) = ascent.run(orbits, &mut iterations)?;
        let dist = DiscreteCircularDistribution::from_orbits(&current, cfg.merge_eps)?;
        let field = OutputField::from_density(&OutputDensity::from_orbits(&current, ch), ch, &grid);
        let kkt = verify_field(&field, &dist, cfg);
        trace.push(SupportStep {
            n_atoms: dist.atom_count(),
            capacity_nats: kkt.h_output - LN_2PI_E,
            max_violation: kkt.max_violation,
            support_gap: kkt.support_gap,
        });
        let best = |dist: DiscreteCircularDistribution| -> Result<Box<BestIterate>> {
            let entropy = output_entropy(&dist, ch, &grid)?;
            Ok(Box::new(BestIterate {
                distribution: dist,
                entropy,
                kkt: Some(kkt),
            }))
        };
        if kkt.satisfied {
            let entropy = output_entropy(&dist, ch, &grid)?;
            return Ok(CapacityResult {
                channel: *ch,
                distribution: dist,
                entropy,
                kkt,
                trace,
            });
        }

        let candidate = SymmetryOrbit::new(kkt.argmax_theta, cfg.insertion_weight).snapped(cfg.merge_eps);
        let occupied = current.iter().any(|o| (o.angle - candidate.angle).abs() < cfg.merge_eps);
        if occupied || kkt.max_violation <= cfg.kkt_tol {
            // The worst point is already in the support: only the inner optimizer can help.
            stuck += 1;
            if stuck > 2 {
                return Err(Error::NotConverged {
                    iterations,
                    best: best(dist)?,
                });
            }
            orbits = current;
            continue;
        }
        stuck = 0;
        if dist.atom_count() + candidate.atom_count() > cfg.max_atoms {
            return Err(Error::SupportExhausted {
                max_atoms: cfg.max_atoms,
                best: best(dist)?,
            });
        }
        orbits = current
            .into_iter()
            .map(|o| SymmetryOrbit {
                weight: o.weight * (1.0 - cfg.insertion_weight),
                ..o
            })
            .chain(std::iter::once(candidate))
            .collect();
    }
}

/// Solves at each radius in ascending order, warm-starting from the previous
/// success when `cfg.warm_start` is set. Individual failures are kept in place.
pub fn sweep_radius(lambda: f64, r_values: &[f64], cfg: &SolverConfig) -> Result<Vec<Result<CapacityResult>>> {
    cfg.validate()?;
    let channels = r_values
        .iter()
        .map(|&r| Channel::new(lambda, r))
        .collect::<Result<Vec<_>>>()?;
    if channels.first().is_some_and(Channel::is_identity) {
        return Err(Error::IdentityChannel);
    }
    if r_values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::arg("r_values", "must be strictly increasing"));
    }
    let mut previous: Option<DiscreteCircularDistribution> = None;
    let mut out = Vec::with_capacity(channels.len());
    for ch in &channels {
        let init = if cfg.warm_start { previous.as_ref() } else { None };
        let result = solve_capacity_from(ch, cfg, init);
        if let Ok(r) = &result {
            previous = Some(r.distribution.clone());
        }
        out.push(result);
    }
    Ok(out)
}

fn canonical_orbits(dist: &DiscreteCircularDistribution) -> Result<Vec<SymmetryOrbit>> {
    dist.orbits().ok_or_else(|| {
        Error::InvalidDistribution("initial distribution must be symmetric under theta -> -theta and theta -> pi - theta".into())
    })
}

/// Orbit layouts with exactly `n_atoms` atoms (rounded down to even).
fn cold_layouts(n_atoms: usize) -> Vec<Vec<SymmetryOrbit>> {
    let n = n_atoms - n_atoms % 2;
    let mut endpoint_sets: Vec<Vec<f64>> = Vec::new();
    if n % 4 == 2 {
        endpoint_sets.push(vec![0.0]);
        endpoint_sets.push(vec![FRAC_PI_2]);
    } else {
        endpoint_sets.push(vec![]);
        endpoint_sets.push(vec![0.0, FRAC_PI_2]);
    }
    endpoint_sets
        .into_iter()
        .filter_map(|ends| {
            let interior = (n - 2 * ends.len()) / 4;
            if 2 * ends.len() + 4 * interior != n || (ends.is_empty() && interior == 0) {
                return None;
            }
            let per_atom = 1.0 / n as f64;
            let mut orbits: Vec<SymmetryOrbit> = ends.iter().map(|&a| SymmetryOrbit::new(a, 2.0 * per_atom)).collect();
            orbits.extend(
                (1..=interior).map(|i| SymmetryOrbit::new(FRAC_PI_2 * i as f64 / (interior + 1) as f64, 4.0 * per_atom)),
            );
            Some(orbits)
        })
        .collect()
}

/// Folds, snaps to endpoints, merges near-coincident orbits, prunes and renormalizes.
fn tidy(orbits: Vec<SymmetryOrbit>, merge_eps: f64) -> Vec<SymmetryOrbit> {
    let mut sorted: Vec<SymmetryOrbit> = orbits
        .into_iter()
        .filter(|o| o.weight > PRUNE_WEIGHT)
        .map(|o| SymmetryOrbit::new(o.angle, o.weight).snapped(merge_eps))
        .collect();
    sorted.sort_by(|a, b| a.angle.total_cmp(&b.angle));
    let mut out: Vec<SymmetryOrbit> = Vec::with_capacity(sorted.len());
    for o in sorted {
        if let Some(last) = out.last_mut() {
            if o.angle - last.angle < merge_eps {
                let weight = last.weight + o.weight;
                let angle = if last.is_endpoint() {
                    last.angle
                } else if o.is_endpoint() {
                    o.angle
                } else {
                    (last.angle * last.weight + o.angle * o.weight) / weight
                };
                *last = SymmetryOrbit { angle, weight };
                continue;
            }
        }
        out.push(o);
    }
    let total: f64 = out.iter().map(|o| o.weight).sum();
    for o in &mut out {
        o.weight /= total;
    }
    out
}

/// Free coordinates: all orbit weights but the heaviest (which absorbs the
/// simplex constraint), then the interior angles.
struct Layout {
    dependent: usize,
    weights: Vec<usize>,
    angles: Vec<usize>,
}

impl Layout {
    fn new(orbits: &[SymmetryOrbit]) -> Self {
        let dependent = (0..orbits.len())
            .max_by(|&a, &b| orbits[a].weight.total_cmp(&orbits[b].weight))
            .unwrap_or(0);
        Self {
            dependent,
            weights: (0..orbits.len()).filter(|&j| j != dependent).collect(),
            angles: (0..orbits.len()).filter(|&j| !orbits[j].is_endpoint()).collect(),
        }
    }

    fn dim(&self) -> usize {
        self.weights.len() + self.angles.len()
    }

    fn gradient(&self, orbits: &[SymmetryOrbit], level: &[f64], slope: &[f64]) -> DVector<f64> {
        let d = self.dependent;
        DVector::from_iterator(
            self.dim(),
            self.weights
                .iter()
                .map(|&j| level[j] - level[d])
                .chain(self.angles.iter().map(|&j| orbits[j].weight * slope[j])),
        )
    }

    fn step(&self, orbits: &[SymmetryOrbit], delta: &DVector<f64>, alpha: f64) -> Vec<SymmetryOrbit> {
        let mut out = orbits.to_vec();
        let mut shift = 0.0;
        for (i, &j) in self.weights.iter().enumerate() {
            out[j].weight += alpha * delta[i];
            shift += alpha * delta[i];
        }
        out[self.dependent].weight -= shift;
        let nw = self.weights.len();
        for (i, &j) in self.angles.iter().enumerate() {
            out[j].angle += alpha * delta[nw + i];
        }
        for o in &mut out {
            o.weight = o.weight.max(0.0);
        }
        out
    }

    /// Largest `α` keeping every weight nonnegative.
    fn max_feasible(&self, orbits: &[SymmetryOrbit], delta: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        let mut shift = 0.0;
        for (i, &j) in self.weights.iter().enumerate() {
            if delta[i] < 0.0 {
                alpha = alpha.min(orbits[j].weight / -delta[i]);
            }
            shift += delta[i];
        }
        if shift > 0.0 {
            alpha = alpha.min(orbits[self.dependent].weight / shift);
        }
        alpha
    }
}

struct Ascent<'a> {
    ch: &'a Channel,
    grid: &'a QuadratureGrid,
    cfg: &'a SolverConfig,
}

impl Ascent<'_> {
    fn field(&self, orbits: &[SymmetryOrbit]) -> OutputField<'_> {
        OutputField::from_density(&OutputDensity::from_orbits(orbits, self.ch), self.ch, self.grid)
    }

    fn entropy(&self, orbits: &[SymmetryOrbit]) -> f64 {
        self.field(orbits).entropy()
    }

    /// `(h, h̃(φⱼ), ∂h̃/∂θ(φⱼ))`.
    fn evaluate(&self, orbits: &[SymmetryOrbit]) -> (f64, Vec<f64>, Vec<f64>) {
        let field = self.field(orbits);
        let (level, slope) = orbits
            .par_iter()
            .map(|o| {
                if o.is_endpoint() {
                    (field.marginal_entropy_density(o.angle), 0.0)
                } else {
                    field.marginal_entropy_density_with_slope(o.angle)
                }
            })
            .unzip();
        (field.entropy(), level, slope)
    }

    /// Regularized Newton ascent with an Armijo line search, falling back to
    /// the gradient direction.
    fn run(&self, start: Vec<SymmetryOrbit>, iterations: &mut usize) -> Result<(Vec<SymmetryOrbit>, f64)> {
        let mut orbits = tidy(start, self.cfg.merge_eps);
        let mut stalls = 0;
        loop {
            let layout = Layout::new(&orbits);
            let (h, level, slope) = self.evaluate(&orbits);
            if !h.is_finite() {
                return Err(Error::NonFinite {
                    node: "output entropy".into(),
                    value: h,
                });
            }
            if layout.dim() == 0 {
                return Ok((orbits, h));
            }
            let g = layout.gradient(&orbits, &level, &slope);
            if g.amax() < self.cfg.gradient_tol {
                return Ok((orbits, h));
            }
            if *iterations >= self.cfg.max_iterations {
                let dist = DiscreteCircularDistribution::from_orbits(&orbits, self.cfg.merge_eps)?;
                let entropy = output_entropy(&dist, self.ch, self.grid)?;
                return Err(Error::NotConverged {
                    iterations: *iterations,
                    best: Box::new(BestIterate {
                        distribution: dist,
                        entropy,
                        kkt: None,
                    }),
                });
            }
            *iterations += 1;

            let accepted = self
                .newton_direction(&orbits, &layout, &g)
                .and_then(|d| self.line_search(&orbits, &layout, &g, d, h))
                .or_else(|| {
                    let d = &g * (0.1 / g.amax());
                    self.line_search(&orbits, &layout, &g, d, h)
                });
            let Some((next, h_next)) = accepted else {
                // No ascent direction survives rounding: stationary at this resolution.
                return Ok((orbits, h));
            };
            orbits = tidy(next, self.cfg.merge_eps);
            if h_next - h < self.cfg.improvement_tol {
                stalls += 1;
                if stalls >= STALL_LIMIT {
                    let h = self.entropy(&orbits);
                    return Ok((orbits, h));
                }
            } else {
                stalls = 0;
            }
        }
    }

    fn newton_direction(&self, orbits: &[SymmetryOrbit], layout: &Layout, g: &DVector<f64>) -> Option<DVector<f64>> {
        let m = layout.dim();
        let mut hessian = DMatrix::zeros(m, m);
        for i in 0..m {
            let mut e = DVector::zeros(m);
            e[i] = FD_STEP;
            let probe = layout.step(orbits, &e, 1.0);
            let (_, level, slope) = self.evaluate(&probe);
            let gi = layout.gradient(&probe, &level, &slope);
            hessian.set_column(i, &((gi - g) / FD_STEP));
        }
        // Maximizing: factor the negated, symmetrized Hessian.
        let a = (&hessian + hessian.transpose()) * -0.5;
        let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut mu = 0.0;
        for _ in 0..30 {
            let shifted = &a + DMatrix::identity(m, m) * mu;
            if let Some(chol) = shifted.cholesky() {
                let d = chol.solve(g);
                if d.iter().all(|x| x.is_finite()) {
                    return Some(d);
                }
            }
            mu = if mu == 0.0 { 1e-10 * scale } else { mu * 10.0 };
        }
        None
    }

    fn line_search(
        &self,
        orbits: &[SymmetryOrbit],
        layout: &Layout,
        g: &DVector<f64>,
        mut d: DVector<f64>,
        h: f64,
    ) -> Option<(Vec<SymmetryOrbit>, f64)> {
        let nw = layout.weights.len();
        let angle_move = d.rows(nw, layout.angles.len()).amax();
        if angle_move > ANGLE_STEP_CAP {
            d *= ANGLE_STEP_CAP / angle_move;
        }
        let rate = g.dot(&d);
        if !(rate > 0.0) {
            return None;
        }
        let mut alpha = layout.max_feasible(orbits, &d).min(1.0);
        for _ in 0..MAX_BACKTRACKS {
            let trial = layout.step(orbits, &d, alpha);
            let h_trial = self.entropy(&trial);
            if h_trial >= h + ARMIJO * alpha * rate {
                return Some((trial, h_trial));
            }
            alpha *= 0.5;
        }
        None
    }
}

/// Representative `φ ∈ [0, π/2]` of the worst violation.
pub fn folded_argmax(report: &KktReport) -> f64 {
    fold_angle(report.argmax_theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(ch: &Channel) -> QuadratureGrid {
        build_polar_grid(ch, &GridSpec::default()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = [
            SolverConfig { kkt_tol: 0.0, ..Default::default() },
            SolverConfig { max_atoms: 1, ..Default::default() },
            SolverConfig { theta_grid_size: 1001, ..Default::default() },
            SolverConfig { insertion_weight: 0.7, ..Default::default() },
            SolverConfig { gradient_tol: f64::NAN, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().unwrap_err().is_validation());
        }
    }

    #[test]
    fn cold_layouts_have_requested_size() {
        for n in [2, 4, 6, 8, 10] {
            let layouts = cold_layouts(n);
            assert!(!layouts.is_empty());
            for layout in layouts {
                let dist = DiscreteCircularDistribution::from_orbits(&layout, MERGE_EPS).unwrap();
                assert_eq!(dist.atom_count(), n);
                assert!(dist.is_canonical());
            }
        }
    }

    #[test]
    fn tidy_merges_snaps_and_prunes() {
        let orbits = vec![
            SymmetryOrbit { angle: -0.3, weight: 0.2 },
            SymmetryOrbit { angle: 0.3 + 2e-5, weight: 0.2 },
            SymmetryOrbit { angle: 3e-5, weight: 0.3 },
            SymmetryOrbit { angle: 1.0, weight: 1e-12 },
            SymmetryOrbit { angle: FRAC_PI_2 + 0.1, weight: 0.3 },
        ];
        let out = tidy(orbits, MERGE_EPS);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].angle, 0.0);
        assert!((out[1].angle - 0.30001).abs() < 1e-12 && (out[1].weight - 0.4).abs() < 1e-12);
        assert!((out[2].angle - (FRAC_PI_2 - 0.1)).abs() < 1e-12);
        assert!((out.iter().map(|o| o.weight).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_identity_and_endpoint_stationarity() {
        let ch = Channel::new(2.0, 0.8).unwrap();
        let g = grid(&ch);
        let d = DiscreteCircularDistribution::from_orbits(
            &[SymmetryOrbit::new(0.0, 0.5), SymmetryOrbit::new(0.9, 0.5)],
            MERGE_EPS,
        )
        .unwrap();
        let grad = entropy_gradient(&d, &ch, &g).unwrap();
        let weighted: f64 = d.atoms().iter().zip(&grad.d_prob).map(|(a, dp)| a.prob * dp).sum();
        assert!(weighted.abs() < 1e-9, "{weighted}");

        let ch = Channel::new(2.0, 0.01).unwrap();
        let grad = entropy_gradient(&DiscreteCircularDistribution::antipodal(), &ch, &grid(&ch)).unwrap();
        assert!(grad.d_theta.iter().all(|t| t.abs() < 1e-5));
    }

    #[test]
    fn probability_derivative_matches_mixing_secant() {
        let ch = Channel::new(2.0, 0.7).unwrap();
        let g = grid(&ch);
        let base = DiscreteCircularDistribution::from_orbits(
            &[SymmetryOrbit::new(0.0, 0.7), SymmetryOrbit::new(FRAC_PI_2, 0.3)],
            MERGE_EPS,
        )
        .unwrap();
        let h0 = OutputField::new(&base, &ch, &g).entropy();
        let mix = |theta: f64, zeta: f64| {
            let mut atoms: Vec<Atom> = base.atoms().iter().map(|a| Atom { theta: a.theta, prob: a.prob * (1.0 - zeta) }).collect();
            atoms.push(Atom { theta, prob: zeta });
            let d = DiscreteCircularDistribution::new(atoms).unwrap();
            (OutputField::new(&d, &ch, &g).entropy() - h0) / zeta
        };
        let field = OutputField::new(&base, &ch, &g);
        for theta in [0.4, 1.1, 2.9, 4.0] {
            // Richardson-corrected secant with ζ = 1e-4
            let secant = 2.0 * mix(theta, 0.5e-4) - mix(theta, 1e-4);
            let expected = field.marginal_entropy_density(theta) - h0;
            assert!((secant - expected).abs() < 1e-5, "θ={theta}: {secant} vs {expected}");
        }
    }

    #[test]
    fn angle_derivative_matches_difference_of_entropy() {
        let ch = Channel::new(3.0, 0.9).unwrap();
        let g = grid(&ch);
        let orbits = [SymmetryOrbit::new(0.0, 0.6), SymmetryOrbit::new(0.8, 0.4)];
        let d = DiscreteCircularDistribution::from_orbits(&orbits, MERGE_EPS).unwrap();
        let grad = entropy_gradient(&d, &ch, &g).unwrap();
        let i = d.atoms().iter().position(|a| (a.theta - 0.8).abs() < 1e-12).unwrap();
        let shifted = |delta: f64| {
            let atoms: Vec<Atom> = d
                .atoms()
                .iter()
                .enumerate()
                .map(|(k, a)| Atom { theta: if k == i { a.theta + delta } else { a.theta }, prob: a.prob })
                .collect();
            OutputField::new(&DiscreteCircularDistribution::new(atoms).unwrap(), &ch, &g).entropy()
        };
        let fd = (shifted(1e-5) - shifted(-1e-5)) / 2e-5;
        assert!((grad.d_theta[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-6), "{} vs {fd}", grad.d_theta[i]);
    }

    #[test]
    fn small_radius_two_point_optimum() {
        let ch = Channel::new(2.0, 0.05).unwrap();
        let cfg = SolverConfig::default();
        let (dist, report) = optimize_fixed_support(2, &ch, &cfg, None).unwrap();
        assert_eq!(dist.atom_count(), 2);
        assert!(dist.atoms()[0].theta.abs() < 1e-3 && (dist.atoms()[1].theta - PI).abs() < 1e-3);
        assert!((report.capacity / 0.005 - 1.0).abs() < 0.05);

        let kkt = verify_conditions(&dist, &ch, &cfg).unwrap();
        assert!(kkt.satisfied, "{kkt:?}");
    }

    #[test]
    fn symmetric_start_stays_symmetric() {
        let ch = Channel::new(2.0, 1.0).unwrap();
        let init = DiscreteCircularDistribution::from_orbits(
            &[SymmetryOrbit::new(0.0, 0.5), SymmetryOrbit::new(0.7, 0.5)],
            MERGE_EPS,
        )
        .unwrap();
        let (dist, _) = optimize_fixed_support(6, &ch, &SolverConfig::default(), Some(&init)).unwrap();
        assert!(dist.is_canonical());
    }

    #[test]
    fn rejects_identity_and_oversized_requests() {
        let cfg = SolverConfig::default();
        let ch = Channel::new(1.0, 1.0).unwrap();
        assert!(matches!(solve_capacity(&ch, &cfg), Err(Error::IdentityChannel)));
        let ch = Channel::new(2.0, 1.0).unwrap();
        assert!(optimize_fixed_support(65, &ch, &cfg, None).is_err());
        let skew = DiscreteCircularDistribution::single(0.3);
        assert!(optimize_fixed_support(4, &ch, &cfg, Some(&skew)).is_err());
        assert!(sweep_radius(2.0, &[0.5, 0.4], &cfg).is_err());
    }

    #[test]
    fn violation_above_threshold_is_on_the_weak_axis() {
        let ch = Channel::new(10.0, 0.2).unwrap();
        let kkt = verify_conditions(&DiscreteCircularDistribution::antipodal(), &ch, &SolverConfig::default()).unwrap();
        assert!(!kkt.satisfied);
        assert!((folded_argmax(&kkt) - FRAC_PI_2).abs() < 0.02, "{kkt:?}");
        assert!(kkt.support_gap < 1e-12);
    }

    #[test]
    fn support_gap_is_definitional() {
        let ch = Channel::new(2.0, 0.9).unwrap();
        let d = DiscreteCircularDistribution::new(vec![
            Atom { theta: 0.2, prob: 0.3 },
            Atom { theta: 2.0, prob: 0.7 },
        ])
        .unwrap();
        let cfg = SolverConfig { theta_grid_size: 64, ..Default::default() };
        let kkt = verify_conditions(&d, &ch, &cfg).unwrap();
        let g = grid(&ch);
        let field = OutputField::new(&d, &ch, &g);
        let h = field.entropy();
        let gap = d.atoms().iter().map(|a| (field.marginal_entropy_density(a.theta) - h).abs()).fold(0.0, f64::max);
        assert_eq!(kkt.support_gap, gap);
        assert_eq!(kkt.satisfied, kkt.max_violation <= cfg.kkt_tol && kkt.support_gap <= cfg.kkt_tol);
    }

    #[test]
    fn solve_small_radius() {
        let ch = Channel::new(2.0, 0.05).unwrap();
        let result = solve_capacity(&ch, &SolverConfig::default()).unwrap();
        assert!(result.kkt.satisfied);
        assert_eq!(result.distribution.atom_count(), 2);
        assert_eq!(result.trace.len(), 1);
        let json: serde_json::Value = serde_json::from_str(&result.to_json().unwrap()).unwrap();
        for key in ["channel", "atoms", "capacity_nats", "entropy_nats", "kkt", "trace"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        for key in ["max_violation", "support_gap", "grid_size"] {
            assert!(json["kkt"].get(key).is_some(), "{key}");
        }
    }
}
