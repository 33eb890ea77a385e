#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use envelope_core::distribution::MERGE_EPS;
use envelope_core::{Atom, Channel, DiscreteCircularDistribution, SymmetryOrbit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Canonical distribution with 1–4 orbits, endpoints drawn with probability ½.
pub fn random_canonical(rng: &mut ChaCha8Rng) -> DiscreteCircularDistribution {
    let count = rng.random_range(1..=4);
    let mut angles: Vec<f64> = Vec::new();
    while angles.len() < count {
        let angle = match rng.random_range(0..4) {
            0 => 0.0,
            1 => FRAC_PI_2,
            _ => rng.random_range(0.05..FRAC_PI_2 - 0.05),
        };
        if angles.iter().all(|a: &f64| (a - angle).abs() > 0.02) {
            angles.push(angle);
        }
    }
    let weights: Vec<f64> = angles.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let orbits: Vec<SymmetryOrbit> = angles
        .iter()
        .zip(&weights)
        .map(|(&a, &w)| SymmetryOrbit::new(a, w / total))
        .collect();
    DiscreteCircularDistribution::from_orbits(&orbits, MERGE_EPS).unwrap()
}

/// Arbitrary distribution with 1–6 atoms anywhere on the circle.
pub fn random_general(rng: &mut ChaCha8Rng) -> DiscreteCircularDistribution {
    let count = rng.random_range(1..=6);
    let mut thetas: Vec<f64> = Vec::new();
    while thetas.len() < count {
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        if thetas.iter().all(|&s| envelope_core::distribution::angular_distance(s, t) > 0.02) {
            thetas.push(t);
        }
    }
    let weights: Vec<f64> = thetas.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut atoms: Vec<Atom> = thetas
        .iter()
        .zip(&weights)
        .map(|(&theta, &w)| Atom { theta, prob: w / total })
        .collect();
    // absorb rounding so the probabilities sum to one
    let sum: f64 = atoms.iter().map(|a| a.prob).sum();
    atoms[0].prob += 1.0 - sum;
    DiscreteCircularDistribution::new(atoms).unwrap()
}

pub fn random_channel(rng: &mut ChaCha8Rng) -> Channel {
    Channel::new(rng.random_range(1.1..10.0), rng.random_range(0.05..2.0)).unwrap()
}
