//! Exact discretization of linear time-invariant SDEs
//! `dx = F x dt + e u dt + G dw` over a fixed step.
//!
//! Short substeps are done with the Van Loan block exponential, then
//! composed by doubling:
//!
//! ```text
//! Φ(2h) = Φ(h)²,  Σ(2h) = Σ(h) + Φ(h) Σ(h) Φ(h)ᵀ,  W(2h) = W(h) + Φ(h) W(h)
//! ```
//!
//! which avoids the growing `exp(-F h)` block of a single large Van Loan
//! exponential when `F` is stiff.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Bound on `h₀ ‖F‖∞` for the direct block exponential.
const SUBSTEP_NORM: f64 = 0.5;
const MAX_DOUBLINGS: usize = 400;

/// One-step transition of a linear SDE.
#[derive(Debug, Clone)]
pub struct Discretized {
    /// `exp(F h)`.
    pub transition: DMatrix<f64>,
    /// `∫₀^h exp(F s) G Gᵀ exp(Fᵀ s) ds`.
    pub covariance: DMatrix<f64>,
    /// `∫₀^h exp(F s) e ds` for each input column `e`.
    pub input: DMatrix<f64>,
}

fn check_shapes(f: &DMatrix<f64>, g: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<usize> {
    let n = f.nrows();
    if f.ncols() != n || g.nrows() != n || e.nrows() != n {
        return Err(Error::Sizing(format!(
            "inconsistent shapes: F {}x{}, G {}x{}, E {}x{}",
            f.nrows(),
            f.ncols(),
            g.nrows(),
            g.ncols(),
            e.nrows(),
            e.ncols()
        )));
    }
    Ok(n)
}

fn substep(
    f: &DMatrix<f64>,
    gg: &DMatrix<f64>,
    e: &DMatrix<f64>,
    h0: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = f.nrows();
    let m = e.ncols();
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    c.view_mut((0, 0), (n, n)).copy_from(&(-f * h0));
    c.view_mut((0, n), (n, n)).copy_from(&(gg * h0));
    c.view_mut((n, n), (n, n)).copy_from(&(f.transpose() * h0));
    let ec = c.exp();
    let phi = ec.view((n, n), (n, n)).transpose();
    let cov = &phi * ec.view((0, n), (n, n));
    let cov = (&cov + cov.transpose()) * 0.5;
    let mut a = DMatrix::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n)).copy_from(&(f * h0));
    a.view_mut((0, n), (n, m)).copy_from(&(e * h0));
    let ea = a.exp();
    let w = ea.view((0, n), (n, m)).into_owned();
    (phi, cov, w)
}

fn doubling_count(f: &DMatrix<f64>, h: f64) -> usize {
    let norm = f
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut k = 0;
    while norm * h / 2f64.powi(k as i32) > SUBSTEP_NORM {
        k += 1;
    }
    k
}

/// Discretize `dx = F x dt + E u dt + G dw` over `h`.
pub fn discretize(f: &DMatrix<f64>, g: &DMatrix<f64>, e: &DMatrix<f64>, h: f64) -> Result<Discretized> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(invalid("h", format!("timestep must be positive, got {h}")));
    }
    check_shapes(f, g, e)?;
    let gg = g * g.transpose();
    let k = doubling_count(f, h);
    let h0 = h / 2f64.powi(k as i32);
    let (mut phi, mut cov, mut w) = substep(f, &gg, e, h0);
    for _ in 0..k {
        cov = &cov + &phi * &cov * phi.transpose();
        w = &w + &phi * &w;
        phi = &phi * &phi;
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(Discretized {
        transition: phi,
        covariance: cov,
        input: w,
    })
}

/// Stationary covariance of `dx = F x dt + G dw` for stable `F`, as the
/// limit of the step covariance under repeated doubling.
pub fn stationary_covariance(f: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let e = DMatrix::zeros(n, 0);
    check_shapes(f, g, &e)?;
    let gg = g * g.transpose();
    let k = doubling_count(f, 1.0);
    let h0 = 1.0 / 2f64.powi(k as i32);
    let (mut phi, mut cov, _) = substep(f, &gg, &e, h0);
    for _ in 0..MAX_DOUBLINGS {
        if phi.amax() < 1e-18 {
            return Ok((&cov + cov.transpose()) * 0.5);
        }
        cov = &cov + &phi * &cov * phi.transpose();
        phi = &phi * &phi;
        if !phi.amax().is_finite() {
            break;
        }
    }
    Err(invalid("F", "drift matrix is not stable"))
}

/// Symmetric square root factor `S` with `S Sᵀ = Σ`; negative roundoff
/// eigenvalues are clamped to zero.
pub fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut s = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let r = lam.max(0.0).sqrt();
        s.column_mut(j).scale_mut(r);
    }
    s
}

/// Matrix-vector product into a preallocated output.
pub(crate) fn apply(m: &DMatrix<f64>, x: &DVector<f64>, out: &mut DVector<f64>) {
    out.gemv(1.0, m, x, 0.0);
}
