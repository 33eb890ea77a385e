//! Seeded Monte-Carlo estimators.
//!
//! Samples are drawn in fixed-size chunks; chunk `k` uses the ChaCha stream
//! `k` of the seed, and chunk statistics are merged in chunk order, so the
//! result does not depend on how many worker threads ran.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::distribution::DiscreteCircularDistribution;
use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 1000;
const CHUNK: usize = 4096;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Mean and standard error of `g` over `samples` draws.
pub fn sample_mean<G>(samples: usize, seed: u64, g: G) -> Result<McEstimate>
where
    G: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    if samples < MIN_SAMPLES {
        return Err(Error::arg("samples", format!("need at least {MIN_SAMPLES}, got {samples}")));
    }
    let chunks = samples.div_ceil(CHUNK);
    // (count, mean, sum of squared deviations) per chunk
    let stats: Vec<(f64, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let n = CHUNK.min(samples - k * CHUNK);
            let (mut mean, mut m2) = (0.0, 0.0);
            for i in 0..n {
                let x = g(&mut rng);
                let delta = x - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (x - mean);
            }
            (n as f64, mean, m2)
        })
        .collect();
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for (nb, mb, m2b) in stats {
        let total = n + nb;
        let delta = mb - mean;
        mean += delta * nb / total;
        m2 += m2b + delta * delta * n * nb / total;
        n = total;
    }
    if !mean.is_finite() {
        return Err(Error::NonFinite {
            node: "Monte-Carlo mean".into(),
            value: mean,
        });
    }
    Ok(McEstimate {
        value: mean,
        std_error: (m2 / (n - 1.0) / n).sqrt(),
        samples,
    })
}

/// `h(Y) ≈ -(1/N) Σ ln f(Yₖ)` with `f` evaluated as a plain Gaussian mixture.
pub fn monte_carlo_output_entropy(
    dist: &DiscreteCircularDistribution,
    ch: &Channel,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let (l, r) = (ch.lambda(), ch.radius());
    let means: Vec<(f64, f64)> = dist
        .atoms()
        .iter()
        .map(|a| (l * r * a.theta.cos(), r * a.theta.sin()))
        .collect();
    let ln_p: Vec<f64> = dist.atoms().iter().map(|a| a.prob.ln()).collect();
    let cumulative: Vec<f64> = dist
        .atoms()
        .iter()
        .scan(0.0, |acc, a| {
            *acc += a.prob;
            Some(*acc)
        })
        .collect();
    let last = means.len() - 1;

    sample_mean(samples, seed, |rng| {
        let u: f64 = rng.random::<f64>() * cumulative[last];
        let i = cumulative.partition_point(|&c| c <= u).min(last);
        let w1: f64 = rng.sample(StandardNormal);
        let w2: f64 = rng.sample(StandardNormal);
        let (y1, y2) = (means[i].0 + w1, means[i].1 + w2);
        let exps = means
            .iter()
            .zip(&ln_p)
            .map(|(&(m1, m2), lp)| lp - 0.5 * ((y1 - m1).powi(2) + (y2 - m2).powi(2)));
        let max = exps.clone().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + exps.map(|e| (e - max).exp()).sum::<f64>().ln();
        LN_2PI - lse
    })
}
