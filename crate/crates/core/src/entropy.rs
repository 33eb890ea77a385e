//! Output density, marginal entropy density and output entropy.
//!
//! All log-densities are computed in the log domain. For canonical inputs the
//! mixture is summed orbit by orbit as `w e^{offset} cosh(a y₁) cosh(b y₂)`,
//! which makes `ln f` exactly invariant under `y₂ ↦ -y₂` and `y₁ ↦ -y₁` in
//! floating point.

use std::f64::consts::{FRAC_PI_2, LN_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{Channel, KernelTerms};
use crate::distribution::{DiscreteCircularDistribution, SymmetryOrbit};
use crate::error::{Error, Result};
use crate::quadrature::{LineRule, QuadratureGrid};

/// `ln(2πe)`: entropy of the 2-D unit Gaussian noise.
pub const LN_2PI_E: f64 = 2.837_877_066_409_345_5;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `f` is clamped here before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;
const LN_DENSITY_FLOOR: f64 = -690.775_527_898_213_7;

/// Rows whose largest kernel exponent is below this contribute nothing in double precision.
const UNDERFLOW_EXPONENT: f64 = -720.0;

/// Output entropy `h(V, Ψ) = h(Y)` and the induced capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// nats
    pub h_output: f64,
    /// `h_output - ln(2πe)`, nats
    pub capacity: f64,
    pub err_hint: f64,
}

impl EntropyReport {
    pub fn new(h_output: f64, err_hint: f64) -> Self {
        Self {
            h_output,
            capacity: h_output - LN_2PI_E,
            err_hint,
        }
    }
}

#[inline]
pub(crate) fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    if a == 0.0 {
        0.0
    } else if a < 20.0 {
        a.cosh().ln()
    } else {
        a - LN_2 + (-2.0 * a).exp()
    }
}

/// `sin`/`cos` with exact values at multiples of `π/2`.
fn exact_sin_cos(theta: f64) -> (f64, f64) {
    if theta == 0.0 {
        (0.0, 1.0)
    } else if theta == FRAC_PI_2 {
        (1.0, 0.0)
    } else {
        theta.sin_cos()
    }
}

fn component(ch: &Channel, theta: f64, weight: f64) -> Component {
    let (l, r) = (ch.lambda(), ch.radius());
    let (s, c) = exact_sin_cos(theta);
    Component {
        log_scale: weight.ln() - 0.5 * (l * l - 1.0) * r * r * c * c - 0.5 * r * r,
        a: l * r * c,
        b: r * s,
    }
}

#[derive(Debug, Clone, Copy)]
struct Component {
    /// `ln w + offset`
    log_scale: f64,
    a: f64,
    b: f64,
}

/// Output density of a finite input mixture, evaluated pointwise.
#[derive(Debug, Clone)]
pub struct OutputDensity {
    symmetric: bool,
    components: Vec<Component>,
}

impl OutputDensity {
    pub fn new(dist: &DiscreteCircularDistribution, ch: &Channel) -> Self {
        match dist.orbits() {
            Some(orbits) => Self::from_orbits(&orbits, ch),
            None => Self {
                symmetric: false,
                components: dist.atoms().iter().map(|a| component(ch, a.theta, a.prob)).collect(),
            },
        }
    }

    /// Density of the canonical distribution with the given orbits; weights
    /// need not be normalized.
    pub fn from_orbits(orbits: &[SymmetryOrbit], ch: &Channel) -> Self {
        Self {
            symmetric: true,
            components: orbits.iter().map(|o| component(ch, o.angle, o.weight)).collect(),
        }
    }

    /// Whether the orbit (exactly symmetric) evaluation path is in use.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `ln f_Y(y)`, floored at `ln 1e-300`.
    #[inline]
    pub fn ln_pdf_cartesian(&self, y1: f64, y2: f64) -> f64 {
        let v = 0.5 * (y1 * y1 + y2 * y2);
        self.ln_pdf_at(y1, y2, v)
    }

    #[inline]
    fn ln_pdf_at(&self, y1: f64, y2: f64, v: f64) -> f64 {
        let lse = if self.symmetric {
            log_sum_exp(self.components.iter().map(|c| c.log_scale + ln_cosh(c.a * y1) + ln_cosh(c.b * y2)))
        } else {
            log_sum_exp(self.components.iter().map(|c| c.log_scale + c.a * y1 + c.b * y2))
        };
        (lse - v - LN_2PI).max(LN_DENSITY_FLOOR)
    }

    /// `f_{V,Ψ}(v, ψ)`; equal to `f_Y` at the mapped point since `dy = dv dψ`.
    pub fn pdf_polar(&self, v: f64, psi: f64) -> f64 {
        let rho = (2.0 * v).sqrt();
        let (s, c) = psi.sin_cos();
        self.ln_pdf_at(rho * c, rho * s, v).exp()
    }
}

#[inline]
fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `f_{V,Ψ}(v, ψ; F) = Σᵢ pᵢ K̃(v, ψ, θᵢ)`.
pub fn output_pdf(v: f64, psi: f64, dist: &DiscreteCircularDistribution, ch: &Channel) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::arg("v", format!("must be nonnegative, got {v}")));
    }
    Ok(OutputDensity::new(dist, ch).pdf_polar(v, psi))
}

/// `ln f` tabulated on a polar grid; the workhorse for entropy functionals.
#[derive(Debug, Clone)]
pub struct OutputField<'g> {
    ch: Channel,
    grid: &'g QuadratureGrid,
    /// Row-major `[radial][angular]`.
    ln_f: Vec<f64>,
}

impl<'g> OutputField<'g> {
    pub fn new(dist: &DiscreteCircularDistribution, ch: &Channel, grid: &'g QuadratureGrid) -> Self {
        Self::from_density(&OutputDensity::new(dist, ch), ch, grid)
    }

    pub fn from_density(density: &OutputDensity, ch: &Channel, grid: &'g QuadratureGrid) -> Self {
        let na = grid.angular_len();
        let mut ln_f = vec![0.0; grid.len()];
        ln_f.par_chunks_mut(na).enumerate().for_each(|(r, row)| {
            let rho = grid.rho_nodes()[r];
            let v = grid.v_nodes()[r];
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = density.ln_pdf_at(rho * grid.cos_psi()[k], rho * grid.sin_psi()[k], v);
            }
        });
        Self { ch: *ch, grid, ln_f }
    }

    pub fn channel(&self) -> &Channel {
        &self.ch
    }

    pub fn grid(&self) -> &QuadratureGrid {
        self.grid
    }

    pub fn ln_density(&self) -> &[f64] {
        &self.ln_f
    }

    /// `∫∫ f dv dψ`.
    pub fn total_mass(&self) -> f64 {
        self.row_sum(|lnf| lnf.exp())
    }

    /// `h = -∫∫ f ln f dv dψ`.
    pub fn entropy(&self) -> f64 {
        -self.row_sum(|lnf| lnf.exp() * lnf)
    }

    fn row_sum(&self, g: impl Fn(f64) -> f64) -> f64 {
        let na = self.grid.angular_len();
        let total: f64 = self
            .ln_f
            .chunks(na)
            .zip(self.grid.v_weights())
            .map(|(row, w)| w * row.iter().map(|&x| g(x)).sum::<f64>())
            .sum();
        total * self.grid.psi_weight()
    }

    /// `h̃(θ; F) = -∫∫ K̃(v, ψ, θ) ln f(v, ψ) dv dψ`.
    pub fn marginal_entropy_density(&self, theta: f64) -> f64 {
        self.marginal_with_slope_impl(theta, false).0
    }

    /// `h̃(θ; F)` and `∂h̃/∂θ` with `F` held fixed.
    pub fn marginal_entropy_density_with_slope(&self, theta: f64) -> (f64, f64) {
        self.marginal_with_slope_impl(theta, true)
    }

    fn marginal_with_slope_impl(&self, theta: f64, want_slope: bool) -> (f64, f64) {
        let terms = KernelTerms::new(&self.ch, theta);
        let (st, ct) = theta.sin_cos();
        let (l, r) = (self.ch.lambda(), self.ch.radius());
        let slope_offset = (l * l - 1.0) * r * r * ct * st;
        let amplitude = terms.a.hypot(terms.b);
        let cos = self.grid.cos_psi();
        let sin = self.grid.sin_psi();
        let na = self.grid.angular_len();

        let mut value = 0.0;
        let mut slope = 0.0;
        for (ri, row) in self.ln_f.chunks(na).enumerate() {
            let rho = self.grid.rho_nodes()[ri];
            let base = terms.offset - self.grid.v_nodes()[ri];
            if base + rho * amplitude < UNDERFLOW_EXPONENT {
                continue;
            }
            let (ra, rb) = (rho * terms.a, rho * terms.b);
            let mut acc = 0.0;
            let mut acc_slope = 0.0;
            if want_slope {
                let (sa, sb) = (rho * r * ct, -rho * r * l * st);
                for k in 0..na {
                    let weight = (base + ra * cos[k] + rb * sin[k]).exp() * row[k];
                    acc += weight;
                    acc_slope += weight * (slope_offset + sa * sin[k] + sb * cos[k]);
                }
            } else {
                for k in 0..na {
                    acc += (base + ra * cos[k] + rb * sin[k]).exp() * row[k];
                }
            }
            let w = self.grid.v_weights()[ri];
            value += w * acc;
            slope += w * acc_slope;
        }
        let scale = -self.grid.psi_weight() / (2.0 * PI);
        (scale * value, scale * slope)
    }

    /// The sine-weighted functional obtained by continuing `h̃` to `cos θ = t ≥ 1`:
    ///
    /// `-(1/2π) e^{-R²/2} ∫∫ e^{-(λ²-1)R²t²/2 + λRρt cos ψ - v} sin(R ρ √(t²-1) sin ψ) ln f dψ dv`.
    ///
    /// Mirror nodes `ψ` and `-ψ` are accumulated pairwise.
    pub fn odd_symmetry_residual(&self, t: f64) -> Result<f64> {
        if !(t >= 1.0) {
            return Err(Error::arg("t", format!("must be >= 1, got {t}")));
        }
        let (l, r) = (self.ch.lambda(), self.ch.radius());
        let stretch = r * (t * t - 1.0).sqrt();
        if stretch == 0.0 {
            return Ok(0.0);
        }
        let offset = -0.5 * (l * l - 1.0) * r * r * t * t - 0.5 * r * r;
        let na = self.grid.angular_len();
        let cos = self.grid.cos_psi();
        let sin = self.grid.sin_psi();
        let mut total = 0.0;
        for (ri, row) in self.ln_f.chunks(na).enumerate() {
            let rho = self.grid.rho_nodes()[ri];
            let base = offset - self.grid.v_nodes()[ri];
            let drift = l * r * t * rho;
            let term = |k: usize| (base + drift * cos[k]).exp() * (stretch * rho * sin[k]).sin() * row[k];
            let mut acc = 0.0;
            for k in 1..na / 2 {
                acc += term(k) + term(na - k);
            }
            // ψ = 0 and ψ = π have sin ψ = 0.
            total += self.grid.v_weights()[ri] * acc;
        }
        Ok(-total * self.grid.psi_weight() / (2.0 * PI))
    }
}

/// `h̃_{V,Ψ}(θ; F)` on the given grid.
pub fn marginal_entropy_density(
    theta: f64,
    dist: &DiscreteCircularDistribution,
    ch: &Channel,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let value = OutputField::new(dist, ch, grid).marginal_entropy_density(theta);
    finite(value, "marginal entropy density")
}

/// Output entropy by direct quadrature of `-f ln f`, with a half-resolution error hint.
pub fn output_entropy(
    dist: &DiscreteCircularDistribution,
    ch: &Channel,
    grid: &QuadratureGrid,
) -> Result<EntropyReport> {
    let fine = finite(OutputField::new(dist, ch, grid).entropy(), "output entropy")?;
    let coarse_grid = grid.halved()?;
    let coarse = OutputField::new(dist, ch, &coarse_grid).entropy();
    Ok(EntropyReport::new(fine, (fine - coarse).abs()))
}

pub fn odd_symmetry_residual(
    t: f64,
    dist: &DiscreteCircularDistribution,
    ch: &Channel,
    grid: &QuadratureGrid,
) -> Result<f64> {
    OutputField::new(dist, ch, grid).odd_symmetry_residual(t)
}

/// Output entropy through the Cartesian kernel on a `(y₁, y₂)` tensor grid.
///
/// Needs a distribution closed under `θ ↦ -θ`, which is what the
/// Cartesian kernel (averaged over `±x₂`) represents.
pub fn cartesian_output_entropy(dist: &DiscreteCircularDistribution, ch: &Channel, rule: &LineRule) -> Result<f64> {
    if !dist.is_reflection_symmetric() {
        return Err(Error::InvalidDistribution(
            "the Cartesian kernel needs a distribution symmetric under theta -> -theta".into(),
        ));
    }
    let marginal = dist.x1_marginal(ch);
    let h1 = ch.lambda() * ch.radius() + crate::quadrature::TAIL_SIGMAS;
    let h2 = ch.radius() + crate::quadrature::TAIL_SIGMAS;
    let y1_nodes = rule.nodes(-h1, h1)?;
    let y2_nodes = rule.nodes(-h2, h2)?;
    let mut total = 0.0;
    for &(y1, w1) in &y1_nodes {
        let mut row = 0.0;
        for &(y2, w2) in &y2_nodes {
            let mut f = 0.0;
            for &(x, p) in &marginal {
                f += p * ch.kernel_cartesian(y1, y2, x)?;
            }
            let f = f.max(DENSITY_FLOOR);
            row += w2 * f * f.ln();
        }
        total += w1 * row;
    }
    finite(-total, "Cartesian output entropy")
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            node: what.to_string(),
            value,
        })
    }
}
