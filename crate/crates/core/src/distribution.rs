//! Finite-support input distributions on the radius-`R` circle.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::error::{Error, Result};

/// Default minimum angular separation between atoms (radians).
pub const MERGE_EPS: f64 = 1e-4;

/// Tolerance on `Σ p = 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Angle and probability tolerances used to recognize a symmetric support.
const SYMMETRY_ANGLE_TOL: f64 = 1e-9;
const SYMMETRY_PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub theta: f64,
    pub prob: f64,
}

/// Mass points `(θᵢ, pᵢ)` on the circle, sorted by `θ ∈ [0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCircularDistribution {
    atoms: Vec<Atom>,
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Distance on the circle.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Representative of `θ` in `[0, π/2]` under `θ ↦ -θ` and `θ ↦ π - θ`.
pub fn fold_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    let t = if t > FRAC_PI_2 { PI - t } else { t };
    t.clamp(0.0, FRAC_PI_2)
}

impl DiscreteCircularDistribution {
    /// Validates with the default [`MERGE_EPS`] separation.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        Self::with_merge_eps(atoms, MERGE_EPS)
    }

    pub fn with_merge_eps(atoms: Vec<Atom>, merge_eps: f64) -> Result<Self> {
        let atoms = normalize_atoms(atoms)?;
        for pair in atoms.windows(2) {
            check_separation(pair[0].theta, pair[1].theta, merge_eps)?;
        }
        if atoms.len() > 1 {
            check_separation(atoms[atoms.len() - 1].theta, atoms[0].theta, merge_eps)?;
        }
        Ok(Self { atoms })
    }

    /// Merges atoms closer than `merge_eps` (probability-weighted angle) instead
    /// of rejecting them.
    pub fn merged(atoms: Vec<Atom>, merge_eps: f64) -> Result<Self> {
        let atoms = normalize_atoms(atoms)?;
        let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            match out.last_mut() {
                Some(last) if angular_distance(last.theta, atom.theta) < merge_eps => {
                    let total = last.prob + atom.prob;
                    let delta = signed_delta(last.theta, atom.theta);
                    last.theta = wrap_angle(last.theta + delta * atom.prob / total);
                    last.prob = total;
                }
                _ => out.push(atom),
            }
        }
        if out.len() > 1 {
            let (first, last) = (out[0], out[out.len() - 1]);
            if angular_distance(first.theta, last.theta) < merge_eps {
                let total = first.prob + last.prob;
                let delta = signed_delta(last.theta, first.theta);
                let theta = wrap_angle(last.theta + delta * first.prob / total);
                out.pop();
                out[0] = Atom { theta, prob: total };
                out.sort_by(|a, b| a.theta.total_cmp(&b.theta));
            }
        }
        Ok(Self { atoms: out })
    }

    /// Two equiprobable atoms at `θ = 0` and `θ = π`.
    pub fn antipodal() -> Self {
        Self {
            atoms: vec![Atom { theta: 0.0, prob: 0.5 }, Atom { theta: PI, prob: 0.5 }],
        }
    }

    pub fn single(theta: f64) -> Self {
        Self {
            atoms: vec![Atom {
                theta: wrap_angle(theta),
                prob: 1.0,
            }],
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Closed under `θ ↦ -θ` (the reflection `x₂ ↦ -x₂`) with matched probabilities.
    pub fn is_reflection_symmetric(&self) -> bool {
        self.atoms.iter().all(|a| self.has_matching(-a.theta, a.prob))
    }

    /// Closed under `θ ↦ -θ` and `θ ↦ π - θ` with matched probabilities.
    pub fn is_canonical(&self) -> bool {
        self.atoms
            .iter()
            .all(|a| self.has_matching(-a.theta, a.prob) && self.has_matching(PI - a.theta, a.prob))
    }

    fn has_matching(&self, theta: f64, prob: f64) -> bool {
        self.atoms.iter().any(|b| {
            angular_distance(b.theta, theta) <= SYMMETRY_ANGLE_TOL
                && (b.prob - prob).abs() <= SYMMETRY_PROB_TOL
        })
    }

    /// Groups the atoms into symmetry orbits; `None` if the support is not canonical.
    pub fn orbits(&self) -> Option<Vec<SymmetryOrbit>> {
        if !self.is_canonical() {
            return None;
        }
        let mut orbits: Vec<SymmetryOrbit> = Vec::new();
        for atom in &self.atoms {
            let mut angle = fold_angle(atom.theta);
            if angle <= SYMMETRY_ANGLE_TOL {
                angle = 0.0;
            } else if FRAC_PI_2 - angle <= SYMMETRY_ANGLE_TOL {
                angle = FRAC_PI_2;
            }
            match orbits.iter_mut().find(|o| (o.angle - angle).abs() <= SYMMETRY_ANGLE_TOL) {
                Some(o) => o.weight += atom.prob,
                None => orbits.push(SymmetryOrbit::new(angle, atom.prob)),
            }
        }
        orbits.sort_by(|a, b| a.angle.total_cmp(&b.angle));
        Some(orbits)
    }

    /// Expands orbits to atoms. Orbit weights must be positive and sum to one.
    pub fn from_orbits(orbits: &[SymmetryOrbit], merge_eps: f64) -> Result<Self> {
        let mut atoms = Vec::with_capacity(4 * orbits.len());
        for orbit in orbits {
            atoms.extend(orbit.snapped(merge_eps).atoms());
        }
        Self::merged(atoms, merge_eps)
    }

    /// Distribution of `X₁ = R cos θ`, atoms with equal abscissa merged.
    pub fn x1_marginal(&self, ch: &Channel) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for atom in &self.atoms {
            let x = ch.radius() * atom.theta.cos();
            match out.iter_mut().find(|(xo, _)| (xo - x).abs() <= 1e-12 * ch.radius()) {
                Some(entry) => entry.1 += atom.prob,
                None => out.push((x, atom.prob)),
            }
        }
        out
    }

    /// Number of distinct atoms on the circle.
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }
}

fn normalize_atoms(atoms: Vec<Atom>) -> Result<Vec<Atom>> {
    if atoms.is_empty() {
        return Err(Error::InvalidDistribution("no atoms".into()));
    }
    let mut out = Vec::with_capacity(atoms.len());
    for (i, a) in atoms.into_iter().enumerate() {
        if !a.theta.is_finite() {
            return Err(Error::InvalidDistribution(format!("atom {i}: theta is not finite")));
        }
        if !(a.prob.is_finite() && a.prob > 0.0 && a.prob <= 1.0) {
            return Err(Error::InvalidDistribution(format!(
                "atom {i}: probability {} is not in (0, 1]",
                a.prob
            )));
        }
        out.push(Atom {
            theta: wrap_angle(a.theta),
            prob: a.prob,
        });
    }
    let total: f64 = out.iter().map(|a| a.prob).sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    out.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    Ok(out)
}

fn check_separation(a: f64, b: f64, merge_eps: f64) -> Result<()> {
    let d = angular_distance(a, b);
    if d < merge_eps {
        return Err(Error::InvalidDistribution(format!(
            "atoms at {a} and {b} are {d:.3e} rad apart, closer than {merge_eps:.1e}"
        )));
    }
    Ok(())
}

fn signed_delta(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Orbit of `φ ∈ [0, π/2]` under `θ ↦ -θ` and `θ ↦ π - θ`, carrying total
/// probability `weight` split evenly across its atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryOrbit {
    pub angle: f64,
    pub weight: f64,
}

impl SymmetryOrbit {
    pub fn new(angle: f64, weight: f64) -> Self {
        Self {
            angle: fold_angle(angle),
            weight,
        }
    }

    pub fn is_endpoint(&self) -> bool {
        self.angle == 0.0 || self.angle == FRAC_PI_2
    }

    /// 2 at the endpoints, 4 in the interior.
    pub fn atom_count(&self) -> usize {
        if self.is_endpoint() {
            2
        } else {
            4
        }
    }

    /// Pins the angle to an endpoint when its mirror images would sit closer
    /// than `merge_eps`.
    pub fn snapped(&self, merge_eps: f64) -> Self {
        let angle = if 2.0 * self.angle < merge_eps {
            0.0
        } else if 2.0 * (FRAC_PI_2 - self.angle) < merge_eps {
            FRAC_PI_2
        } else {
            self.angle
        };
        Self { angle, ..*self }
    }

    pub fn atoms(&self) -> Vec<Atom> {
        let phi = self.angle;
        if self.is_endpoint() {
            let p = 0.5 * self.weight;
            vec![Atom { theta: phi, prob: p }, Atom { theta: phi + PI, prob: p }]
        } else {
            let p = 0.25 * self.weight;
            [phi, PI - phi, PI + phi, TAU - phi]
                .into_iter()
                .map(|theta| Atom { theta, prob: p })
                .collect()
        }
    }
}

/// On-disk form: `{lambda, radius, atoms: [{theta, prob}]}`, angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionFile {
    pub lambda: f64,
    pub radius: f64,
    pub atoms: Vec<Atom>,
}

impl DistributionFile {
    pub fn new(ch: &Channel, dist: &DiscreteCircularDistribution) -> Self {
        Self {
            lambda: ch.lambda(),
            radius: ch.radius(),
            atoms: dist.atoms().to_vec(),
        }
    }

    /// Validates channel and distribution.
    pub fn into_parts(self) -> Result<(Channel, DiscreteCircularDistribution)> {
        let ch = Channel::new(self.lambda, self.radius)?;
        let dist = DiscreteCircularDistribution::new(self.atoms)?;
        Ok((ch, dist))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Floats are written in shortest round-trip form (at most 17 significant digits).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
