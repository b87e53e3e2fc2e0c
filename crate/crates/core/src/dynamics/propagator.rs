//! Exact one-step propagation of a single damped-wave mode
//!
//! ```text
//! d(u, v) = A (u, v) dt + (0, f/ν) dt + (0, g) dw,   A = [[0, 1], [-λ/ν, -1/ν]]
//! ```
//!
//! with `g = ν^{α-1} √b`. The roots of `νρ² + ρ + λ = 0` are
//! `ρ± = (-1 ± √(1-4νλ)) / (2ν)`; they are real and distinct, complex, or
//! (nearly) coincide, and each regime gets its own evaluation path.

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Row-major 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];

// |q| s² below this uses the entire-function series for cosh/sinh.
const SERIES_LIMIT: f64 = 0.25;
const SERIES_TERMS: usize = 12;
// Closed-form covariance needs the roots well separated on the step scale.
const CLOSED_FORM_SEPARATION: f64 = 0.1;
const DOUBLE_ROOT_BAND: f64 = 1e-6;

/// Transition data for one mode over a fixed step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModePropagator {
    pub lambda: f64,
    pub nu: f64,
    pub h: f64,
    /// `exp(hA)`.
    pub transition: Mat2,
    /// `∫₀^h exp(sA) e₂ ds`: response to a unit constant v-forcing.
    pub forcing: [f64; 2],
    /// Lower Cholesky factor of the unit-amplitude (g = 1) noise covariance.
    pub unit_chol: Mat2,
    /// Unit-amplitude noise covariance `∫₀^h exp(sA) e₂e₂ᵀ exp(sAᵀ) ds`.
    pub unit_cov: Mat2,
    /// `g = ν^{α-1} √b`.
    pub noise_amp: f64,
}

impl ModePropagator {
    /// Noise covariance `g² Σ̂` of the exact stochastic convolution.
    pub fn covariance(&self) -> Mat2 {
        let g2 = self.noise_amp * self.noise_amp;
        [
            [g2 * self.unit_cov[0][0], g2 * self.unit_cov[0][1]],
            [g2 * self.unit_cov[1][0], g2 * self.unit_cov[1][1]],
        ]
    }

    /// Roots `(ρ₊, ρ₋)` of the characteristic polynomial.
    pub fn eigenvalues(&self) -> (Complex64, Complex64) {
        eigenvalues(self.lambda, self.nu)
    }

    /// Apply one step: `forcing_rate` is the v-equation forcing `f_k/ν`,
    /// `(z1, z2)` are independent standard normals.
    #[inline]
    pub fn apply(&self, u: f64, v: f64, forcing_rate: f64, z1: f64, z2: f64) -> (f64, f64) {
        let e = &self.transition;
        let l = &self.unit_chol;
        let g = self.noise_amp;
        let nu_ = e[0][0] * u + e[0][1] * v + self.forcing[0] * forcing_rate + g * l[0][0] * z1;
        let nv = e[1][0] * u
            + e[1][1] * v
            + self.forcing[1] * forcing_rate
            + g * (l[1][0] * z1 + l[1][1] * z2);
        (nu_, nv)
    }
}

pub fn eigenvalues(lambda: f64, nu: f64) -> (Complex64, Complex64) {
    let disc = Complex64::new(1.0 - 4.0 * nu * lambda, 0.0).sqrt();
    let two_nu = 2.0 * nu;
    ((-1.0 + disc) / two_nu, (-1.0 - disc) / two_nu)
}

/// Build the exact propagator of mode with eigenvalue `lambda` over `h`.
pub fn build_propagator(lambda: f64, nu: f64, alpha: f64, b: f64, h: f64) -> Result<ModePropagator> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(invalid("h", format!("timestep must be positive, got {h}")));
    }
    if !(nu > 0.0) {
        return Err(invalid("nu", format!("must be positive, got {nu}")));
    }
    if !(lambda > 0.0) {
        return Err(invalid("lambda", format!("must be positive, got {lambda}")));
    }
    if !(b >= 0.0) {
        return Err(invalid("b", format!("must be nonnegative, got {b}")));
    }
    let transition = exp_sa(lambda, nu, h);
    let (forcing, unit_cov) = if use_closed_form(lambda, nu, h) {
        closed_form_integrals(lambda, nu, h)
    } else {
        quadrature_integrals(lambda, nu, h)
    };
    let unit_chol = cholesky2(&unit_cov);
    let noise_amp = nu.powf(alpha - 1.0) * b.sqrt();
    Ok(ModePropagator {
        lambda,
        nu,
        h,
        transition,
        forcing,
        unit_chol,
        unit_cov,
        noise_amp,
    })
}

fn use_closed_form(lambda: f64, nu: f64, h: f64) -> bool {
    let delta = 1.0 - 4.0 * nu * lambda;
    let sep = delta.abs().sqrt() / nu; // |ρ₊ - ρ₋|
    delta.abs() >= DOUBLE_ROOT_BAND && sep * h >= CLOSED_FORM_SEPARATION
}

/// `exp(sA)` for the damped-wave mode matrix.
pub fn exp_sa(lambda: f64, nu: f64, s: f64) -> Mat2 {
    let half_tau = -0.5 / nu;
    // ω² = τ²/4 - det
    let q = (1.0 - 4.0 * nu * lambda) / (4.0 * nu * nu);
    // A - (τ/2) I
    let n11 = 0.5 / nu;
    let n12 = 1.0;
    let n21 = -lambda / nu;
    let n22 = -0.5 / nu;
    if q.abs() * s * s <= SERIES_LIMIT {
        let x = q * s * s;
        let (mut c, mut sh) = (0.0, 0.0);
        let mut term_c = 1.0; // x^n / (2n)!
        let mut term_s = 1.0; // x^n / (2n+1)!
        for n in 0..SERIES_TERMS {
            c += term_c;
            sh += term_s;
            let a = (2 * n + 1) as f64;
            let b = (2 * n + 2) as f64;
            let c3 = (2 * n + 3) as f64;
            term_c *= x / (a * b);
            term_s *= x / (b * c3);
        }
        let sh = sh * s;
        let pre = (half_tau * s).exp();
        [
            [pre * (c + sh * n11), pre * sh * n12],
            [pre * sh * n21, pre * (c + sh * n22)],
        ]
    } else if q > 0.0 {
        let w = q.sqrt();
        let rp = half_tau + w;
        let rm = half_tau - w;
        let ep = (rp * s).exp();
        let em = (rm * s).exp();
        let d = rp - rm;
        // Sylvester: [e^{ρ₊s}(A - ρ₋I) - e^{ρ₋s}(A - ρ₊I)] / (ρ₊ - ρ₋)
        [
            [(ep * (-rm) - em * (-rp)) / d, (ep - em) / d],
            [(ep - em) * (-lambda / nu) / d, (ep * (-1.0 / nu - rm) - em * (-1.0 / nu - rp)) / d],
        ]
    } else {
        let w = (-q).sqrt();
        let c = (w * s).cos();
        let sh = (w * s).sin() / w;
        let pre = (half_tau * s).exp();
        [
            [pre * (c + sh * n11), pre * sh * n12],
            [pre * sh * n21, pre * (c + sh * n22)],
        ]
    }
}

/// `(e^z - 1)/z` for complex `z`.
fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        Complex64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        (z.exp() - 1.0) / z
    }
}

fn closed_form_integrals(lambda: f64, nu: f64, h: f64) -> ([f64; 2], Mat2) {
    let (rp, rm) = eigenvalues(lambda, nu);
    let d = rp - rm;
    let int = |x: Complex64| phi1(x * h) * h; // ∫₀^h e^{xs} ds
    let ipp = int(rp + rp);
    let ipm = int(rp + rm);
    let imm = int(rm + rm);
    let d2 = d * d;
    let s11 = (ipp - ipm * 2.0 + imm) / d2;
    let s12 = (rp * ipp - (rp + rm) * ipm + rm * imm) / d2;
    let s22 = (rp * rp * ipp - rp * rm * ipm * 2.0 + rm * rm * imm) / d2;
    let w1 = (int(rp) - int(rm)) / d;
    let e = exp_sa(lambda, nu, h);
    (
        [w1.re, e[0][1]],
        [[s11.re, s12.re], [s12.re, s22.re]],
    )
}

// 8-point Gauss–Legendre on [-1, 1]
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

fn quadrature_integrals(lambda: f64, nu: f64, h: f64) -> ([f64; 2], Mat2) {
    let sep = (1.0 - 4.0 * nu * lambda).abs().sqrt() / nu;
    let rate = (1.0 / nu).max(sep).max(lambda).max(1.0);
    let panels = ((4.0 * h * rate).ceil() as usize).clamp(1, 200_000);
    let width = h / panels as f64;
    let (mut w1, mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0, 0.0);
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * width;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let s = mid + 0.5 * width * x;
            let e = exp_sa(lambda, nu, s);
            let (a, b) = (e[0][1], e[1][1]);
            let wt = 0.5 * width * w;
            w1 += wt * a;
            s11 += wt * a * a;
            s12 += wt * a * b;
            s22 += wt * b * b;
        }
    }
    let e = exp_sa(lambda, nu, h);
    ([w1, e[0][1]], [[s11, s12], [s12, s22]])
}

pub(crate) fn cholesky2(s: &Mat2) -> Mat2 {
    let l11 = s[0][0].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { s[1][0] / l11 } else { 0.0 };
    let l22 = (s[1][1] - l21 * l21).max(0.0).sqrt();
    [[l11, 0.0], [l21, l22]]
}

#[cfg(test)]
fn matmul2(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}
