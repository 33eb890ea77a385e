//! The `diag{λ, 1}` channel with a constant-envelope input of radius `R`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_TWO_PI: f64 = 1.0 / (2.0 * PI);

/// `Y = diag{λ, 1} X + W`, `‖X‖ = R`, `W ~ N(0, I₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    lambda: f64,
    radius: f64,
}

impl Channel {
    /// `λ ≥ 1` and `R > 0`, both finite. `λ = 1` is admitted here; the solver
    /// rejects it separately.
    pub fn new(lambda: f64, radius: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 1.0 {
            return Err(Error::InvalidChannel(format!(
                "lambda must be finite and >= 1, got {lambda}"
            )));
        }
        if !radius.is_finite() || radius <= 0.0 {
            return Err(Error::InvalidChannel(format!(
                "radius must be finite and > 0, got {radius}"
            )));
        }
        Ok(Self { lambda, radius })
    }

    /// Reduces an arbitrary full-rank 2×2 channel to `diag{λ, 1}`.
    ///
    /// With `H = U diag{s₁, s₂} Vᵀ`, rotating by `Uᵀ` keeps the noise white and
    /// `VᵀX` keeps norm `R`, so the channel is equivalent to `diag{s₁/s₂, 1}`
    /// with radius `s₂ R`.
    pub fn from_matrix(h: [[f64; 2]; 2], radius: f64) -> Result<Self> {
        if h.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidChannel("matrix has non-finite entries".into()));
        }
        let (s1, s2) = singular_values_2x2(h);
        if !(s2 > 0.0) || s2 <= s1 * 1e-14 {
            return Err(Error::InvalidChannel(format!(
                "matrix is rank deficient (singular values {s1}, {s2})"
            )));
        }
        Self::new((s1 / s2).max(1.0), s2 * radius)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Self::new(self.lambda, radius)
    }

    pub fn is_identity(&self) -> bool {
        self.lambda == 1.0
    }

    /// Kernel in Cartesian output coordinates for input abscissa `x = X₁`,
    /// averaged over the two inputs `(x, ±√(R² - x²))`.
    pub fn kernel_cartesian(&self, y1: f64, y2: f64, x: f64) -> Result<f64> {
        let r = self.radius;
        if !(x.abs() <= r * (1.0 + 1e-15)) {
            return Err(Error::arg("x", format!("|x| = {} exceeds the radius {r}", x.abs())));
        }
        let x2 = (r * r - x * x).max(0.0).sqrt();
        let d1 = y1 - self.lambda * x;
        let plus = y2 - x2;
        let minus = y2 + x2;
        Ok(INV_TWO_PI
            * (-0.5 * d1 * d1).exp()
            * 0.5
            * ((-0.5 * plus * plus).exp() + (-0.5 * minus * minus).exp()))
    }

    /// Output density in `(v, ψ)` for the single input `R(cos θ, sin θ)`.
    pub fn kernel_polar(&self, v: f64, psi: f64, theta: f64) -> Result<f64> {
        if !(v >= 0.0) {
            return Err(Error::arg("v", format!("must be nonnegative, got {v}")));
        }
        let terms = KernelTerms::new(self, theta);
        let (s, c) = psi.sin_cos();
        Ok(INV_TWO_PI * terms.exponent((2.0 * v).sqrt(), v, c, s).exp())
    }
}

/// Exponent pieces of the polar kernel for a fixed input angle:
/// `offset + ρ(a cos ψ + b sin ψ) - v`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct KernelTerms {
    pub offset: f64,
    pub a: f64,
    pub b: f64,
}

impl KernelTerms {
    pub fn new(ch: &Channel, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let (l, r) = (ch.lambda, ch.radius);
        Self {
            offset: -0.5 * (l * l - 1.0) * r * r * c * c - 0.5 * r * r,
            a: l * r * c,
            b: r * s,
        }
    }

    #[inline]
    pub fn exponent(&self, rho: f64, v: f64, cos_psi: f64, sin_psi: f64) -> f64 {
        self.offset + rho * (self.a * cos_psi + self.b * sin_psi) - v
    }

    /// `∂/∂θ` of the exponent; the entropy module evaluates it inline.
    #[cfg(test)]
    pub fn exponent_slope(ch: &Channel, theta: f64, rho: f64, cos_psi: f64, sin_psi: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let (l, r) = (ch.lambda, ch.radius);
        (l * l - 1.0) * r * r * c * s + rho * r * (c * sin_psi - l * s * cos_psi)
    }
}

fn singular_values_2x2(h: [[f64; 2]; 2]) -> (f64, f64) {
    let [[a, b], [c, d]] = h;
    let frob2 = a * a + b * b + c * c + d * d;
    let det = (a * d - b * c).abs();
    let disc = ((frob2 - 2.0 * det) * (frob2 + 2.0 * det)).max(0.0).sqrt();
    let s1 = (0.5 * (frob2 + disc)).sqrt();
    let s2 = if s1 > 0.0 { det / s1 } else { 0.0 };
    (s1, s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn validates_parameters() {
        assert!(Channel::new(0.5, 1.0).is_err());
        assert!(Channel::new(2.0, 0.0).is_err());
        assert!(Channel::new(f64::NAN, 1.0).is_err());
        assert!(Channel::new(2.0, f64::INFINITY).is_err());
        assert!(Channel::new(1.0, 1.0).unwrap().is_identity());
    }

    #[test]
    fn cartesian_kernel_values() {
        let ch = Channel::new(2.0, 1.0).unwrap();
        // every exponent vanishes at y = (λR, 0), x = R
        assert_relative_eq!(ch.kernel_cartesian(2.0, 0.0, 1.0).unwrap(), INV_TWO_PI, max_relative = 1e-15);
        assert_relative_eq!(
            ch.kernel_cartesian(0.0, 0.0, 0.0).unwrap(),
            INV_TWO_PI * (-0.5f64).exp(),
            max_relative = 1e-15
        );
        assert!(ch.kernel_cartesian(0.0, 0.0, 1.1).is_err());
    }

    #[test]
    fn polar_kernel_values() {
        let ch = Channel::new(2.0, 1.0).unwrap();
        for psi in [0.0, 1.0, 4.0] {
            assert_relative_eq!(
                ch.kernel_polar(0.0, psi, PI / 2.0).unwrap(),
                INV_TWO_PI * (-0.5f64).exp(),
                max_relative = 1e-15
            );
        }
        assert!(ch.kernel_polar(-1e-3, 0.0, 0.0).is_err());
    }

    #[test]
    fn polar_kernel_matches_mapped_gaussian() {
        // dy = ρ dρ dψ = dv dψ, so the polar kernel is the plane Gaussian at the
        // mapped point with unit Jacobian; averaging θ and -θ gives the Cartesian kernel.
        let ch = Channel::new(2.7, 0.8).unwrap();
        let mut seed = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let v = 6.0 * next();
            let psi = 2.0 * PI * next();
            let theta = 2.0 * PI * next();
            let rho = (2.0 * v).sqrt();
            let (y1, y2) = (rho * psi.cos(), rho * psi.sin());
            let (x1, x2) = (ch.radius() * theta.cos(), ch.radius() * theta.sin());
            let gauss = INV_TWO_PI
                * (-0.5 * ((y1 - ch.lambda() * x1).powi(2) + (y2 - x2).powi(2))).exp();
            let polar = ch.kernel_polar(v, psi, theta).unwrap();
            assert_relative_eq!(polar, gauss, max_relative = 1e-12);
            let sym = 0.5 * (polar + ch.kernel_polar(v, psi, -theta).unwrap());
            assert_relative_eq!(sym, ch.kernel_cartesian(y1, y2, x1).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn exponent_slope_matches_difference() {
        let ch = Channel::new(3.0, 0.6).unwrap();
        let (rho, c, s) = (1.7f64, 0.3f64, (1.0f64 - 0.09).sqrt());
        let v = 0.5 * rho * rho;
        for theta in [0.1, 0.9, 2.0, 4.5] {
            let h = 1e-6;
            let fd = (KernelTerms::new(&ch, theta + h).exponent(rho, v, c, s)
                - KernelTerms::new(&ch, theta - h).exponent(rho, v, c, s))
                / (2.0 * h);
            assert_relative_eq!(KernelTerms::exponent_slope(&ch, theta, rho, c, s), fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn general_matrix_reduces_by_singular_values() {
        let ch = Channel::from_matrix([[2.0, 0.0], [0.0, 1.0]], 0.5).unwrap();
        assert_relative_eq!(ch.lambda(), 2.0, max_relative = 1e-15);
        assert_relative_eq!(ch.radius(), 0.5, max_relative = 1e-15);

        // rotation · diag{3, 1.5}
        let (s, c) = 0.4f64.sin_cos();
        let h = [[3.0 * c, -1.5 * s], [3.0 * s, 1.5 * c]];
        let ch = Channel::from_matrix(h, 2.0).unwrap();
        assert_relative_eq!(ch.lambda(), 2.0, max_relative = 1e-12);
        assert_relative_eq!(ch.radius(), 3.0, max_relative = 1e-12);

        // column swap: diag{1, 4} has λ = 4 after reordering
        let ch = Channel::from_matrix([[1.0, 0.0], [0.0, 4.0]], 1.0).unwrap();
        assert_relative_eq!(ch.lambda(), 4.0, max_relative = 1e-12);

        assert!(Channel::from_matrix([[1.0, 2.0], [2.0, 4.0]], 1.0).is_err());
        assert!(Channel::from_matrix([[f64::NAN, 0.0], [0.0, 1.0]], 1.0).is_err());
    }
}
