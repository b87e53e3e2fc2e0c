//! Sine-basis fields on `(0, π)` with homogeneous Dirichlet conditions.
//!
//! Mode `k` is `sin(kx)` (plain) or `e_k = √(2/π)·sin(kx)` (orthonormal in
//! `L²(0, π)`), with Laplacian eigenvalue `-k²`. The cubic reaction term is
//! evaluated by collocation on the interior nodes `x_j = jπ/(M+1)` followed by
//! a discrete sine transform; with `M ≥ 3K + 1` the projection onto the first
//! `K` modes is exact.

use std::f64::consts::{FRAC_2_PI, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scaling convention for the basis functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `e_k = √(2/π) sin(kx)`.
    Orthonormal,
    /// `sin(kx)`.
    Plain,
}

impl Normalization {
    /// Value of the prefactor multiplying `sin(kx)`.
    pub fn prefactor(self) -> f64 {
        match self {
            Normalization::Orthonormal => FRAC_2_PI.sqrt(),
            Normalization::Plain => 1.0,
        }
    }

    /// `‖basis function‖₀²`, identical for every mode.
    pub fn mode_mass(self) -> f64 {
        match self {
            Normalization::Orthonormal => 1.0,
            Normalization::Plain => PI / 2.0,
        }
    }
}

/// The first `K` Dirichlet eigenmodes of `-∂xx` on `(0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SineBasis {
    modes: usize,
    normalization: Normalization,
}

impl SineBasis {
    pub fn new(modes: usize, normalization: Normalization) -> Result<Self> {
        if modes == 0 {
            return Err(Error::Sizing("a sine basis needs at least one mode".into()));
        }
        Ok(Self {
            modes,
            normalization,
        })
    }

    pub fn orthonormal(modes: usize) -> Result<Self> {
        Self::new(modes, Normalization::Orthonormal)
    }

    pub fn plain(modes: usize) -> Result<Self> {
        Self::new(modes, Normalization::Plain)
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// `λ_k = k²` for the 1-based mode index `k`.
    pub fn eigenvalue(k: usize) -> f64 {
        (k * k) as f64
    }

    /// Evaluate basis function `k` (1-based) at `x`.
    pub fn eval(&self, k: usize, x: f64) -> f64 {
        self.normalization.prefactor() * (k as f64 * x).sin()
    }

    pub fn with_normalization(&self, normalization: Normalization) -> Self {
        Self {
            modes: self.modes,
            normalization,
        }
    }
}

/// Mode amplitudes of a band-limited field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    basis: SineBasis,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(basis: SineBasis, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.modes() {
            return Err(Error::Sizing(format!(
                "field has {} coefficients but the basis has {} modes",
                coeffs.len(),
                basis.modes()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "coeffs",
                reason: format!("coefficient of mode {} is not finite", i + 1),
            });
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: SineBasis) -> Self {
        Self {
            basis,
            coeffs: vec![0.0; basis.modes()],
        }
    }

    /// Single-mode field `amplitude · basis_k`.
    pub fn mode(basis: SineBasis, k: usize, amplitude: f64) -> Result<Self> {
        if k == 0 || k > basis.modes() {
            return Err(Error::Sizing(format!(
                "mode {k} outside 1..={}",
                basis.modes()
            )));
        }
        let mut coeffs = vec![0.0; basis.modes()];
        coeffs[k - 1] = amplitude;
        Self::new(basis, coeffs)
    }

    pub(crate) fn from_raw(basis: SineBasis, coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(coeffs.len(), basis.modes());
        Self { basis, coeffs }
    }

    pub fn basis(&self) -> SineBasis {
        self.basis
    }

    pub fn modes(&self) -> usize {
        self.basis.modes()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Amplitude of mode `k` (1-based).
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs[k - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Re-express the same function in another normalization.
    pub fn to_normalization(&self, normalization: Normalization) -> Self {
        let factor = self.basis.normalization().prefactor() / normalization.prefactor();
        Self {
            basis: self.basis.with_normalization(normalization),
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    /// `Δu`: mode `k` is multiplied by `-k²`.
    pub fn laplacian(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| -SineBasis::eigenvalue(i + 1) * c)
            .collect();
        Self {
            basis: self.basis,
            coeffs,
        }
    }

    /// `‖u‖_s = ‖A^{s/2} u‖₀` with `A = -Δ`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let mass = self.basis.normalization().mode_mass();
        let sum: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| SineBasis::eigenvalue(i + 1).powf(s) * c * c)
            .sum();
        (mass * sum).sqrt()
    }

    /// `⟨u, w⟩ = ∫ u w dx`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same_basis(other)?;
        let mass = self.basis.normalization().mode_mass();
        Ok(mass * dot(&self.coeffs, &other.coeffs))
    }

    /// `⟨∇u, ∇w⟩ = Σ λ_k a_k b_k` (times the mode mass).
    pub fn grad_inner(&self, other: &Self) -> Result<f64> {
        self.check_same_basis(other)?;
        let mass = self.basis.normalization().mode_mass();
        let sum: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(i, (a, b))| SineBasis::eigenvalue(i + 1) * a * b)
            .sum();
        Ok(mass * sum)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_basis(other)?;
        Ok(Self {
            basis: self.basis,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            basis: self.basis,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    fn check_same_basis(&self, other: &Self) -> Result<()> {
        if self.basis != other.basis {
            return Err(Error::BasisMismatch(format!(
                "{:?} vs {:?}",
                self.basis, other.basis
            )));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Interior collocation nodes `x_j = jπ/(M+1)`, `j = 1..=M`, with a cached
/// table of `sin(k x_j)` for `k = 1..=M`.
#[derive(Debug, Clone)]
pub struct Grid {
    nodes: Vec<f64>,
    // row-major: sin_table[(k-1) * M + (j-1)] = sin(k x_j)
    sin_table: Vec<f64>,
}

impl Grid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Sizing("grid needs at least one node".into()));
        }
        let h = PI / (m + 1) as f64;
        let nodes: Vec<f64> = (1..=m).map(|j| j as f64 * h).collect();
        let mut sin_table = Vec::with_capacity(m * m);
        for k in 1..=m {
            for j in 1..=m {
                // reduce k*j mod 2(M+1) so the argument stays small
                let r = (k * j) % (2 * (m + 1));
                sin_table.push((r as f64 * h).sin());
            }
        }
        Ok(Self { nodes, sin_table })
    }

    /// Smallest grid on which the cubic of a `K`-mode field projects exactly.
    pub fn for_cubic(modes: usize) -> Self {
        Self::new(dealiased_size(modes)).expect("nonzero grid size")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn row(&self, k: usize) -> &[f64] {
        let m = self.len();
        &self.sin_table[(k - 1) * m..k * m]
    }

    /// Point values of `Σ c_k sin(k x_j)` (plain amplitudes).
    pub(crate) fn synthesize_plain(&self, coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (v, s) in out.iter_mut().zip(self.row(i + 1)) {
                *v += c * s;
            }
        }
    }

    /// Plain sine amplitudes of the first `out.len()` modes.
    pub(crate) fn analyze_plain(&self, values: &[f64], out: &mut [f64]) {
        let w = 2.0 / (self.len() + 1) as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o = w * dot(values, self.row(i + 1));
        }
    }

    /// Writes the first `out.len()` coefficients of `β u - κ u³` for the
    /// field `u` with coefficients `coeffs` in `normalization`.
    /// `scratch` is resized to the grid length.
    pub(crate) fn reaction_into(
        &self,
        coeffs: &[f64],
        normalization: Normalization,
        beta: f64,
        kappa: f64,
        out: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        scratch.resize(self.len(), 0.0);
        if kappa == 0.0 {
            for (o, c) in out.iter_mut().zip(coeffs) {
                *o = beta * c;
            }
            return;
        }
        let p = normalization.prefactor();
        self.synthesize_plain(coeffs, scratch);
        // values of p·u, cubed and scaled back to coefficient units
        let k3 = kappa * p * p;
        for v in scratch.iter_mut() {
            *v = -k3 * *v * *v * *v;
        }
        self.analyze_plain(scratch, out);
        for (o, c) in out.iter_mut().zip(coeffs) {
            *o += beta * c;
        }
    }
}

/// `3K + 1`: nodes needed for exact projection of a cubic onto `K` modes.
pub fn dealiased_size(modes: usize) -> usize {
    3 * modes + 1
}

/// Point values of `field` at the grid nodes.
pub fn synthesize(field: &SpectralField, grid: &Grid) -> Result<Vec<f64>> {
    if grid.len() < field.modes() {
        return Err(Error::Sizing(format!(
            "grid with {} nodes cannot represent {} modes",
            grid.len(),
            field.modes()
        )));
    }
    let p = field.basis().normalization().prefactor();
    let mut out = vec![0.0; grid.len()];
    grid.synthesize_plain(field.coeffs(), &mut out);
    out.iter_mut().for_each(|v| *v *= p);
    Ok(out)
}

/// Discrete sine transform: left inverse of [`synthesize`] on band-limited data.
pub fn analyze(values: &[f64], grid: &Grid, basis: SineBasis) -> Result<SpectralField> {
    if values.len() != grid.len() {
        return Err(Error::Sizing(format!(
            "{} values supplied for a grid of {} nodes",
            values.len(),
            grid.len()
        )));
    }
    if basis.modes() > grid.len() {
        return Err(Error::Sizing(format!(
            "cannot resolve {} modes from {} nodes",
            basis.modes(),
            grid.len()
        )));
    }
    let mut coeffs = vec![0.0; basis.modes()];
    grid.analyze_plain(values, &mut coeffs);
    let p = basis.normalization().prefactor();
    coeffs.iter_mut().for_each(|c| *c /= p);
    SpectralField::new(basis, coeffs)
}

/// Galerkin projection of `f(u) = βu - u³` onto the modes of `field`.
pub fn cubic_f(field: &SpectralField, beta: f64, grid: &Grid) -> Result<SpectralField> {
    reaction(field, beta, 1.0, grid)
}

/// Projection of `βu - κu³`; `κ = 0` disables the cubic.
pub fn reaction(field: &SpectralField, beta: f64, kappa: f64, grid: &Grid) -> Result<SpectralField> {
    let needed = dealiased_size(field.modes());
    if kappa != 0.0 && grid.len() < needed {
        return Err(Error::Dealiasing {
            nodes: grid.len(),
            needed,
            modes: field.modes(),
        });
    }
    let mut out = vec![0.0; field.modes()];
    let mut scratch = Vec::new();
    grid.reaction_into(
        field.coeffs(),
        field.basis().normalization(),
        beta,
        kappa,
        &mut out,
        &mut scratch,
    );
    SpectralField::new(field.basis(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// `∫₀^π sin(ix) sin(jx) sin(kx) sin(lx) dx` via product-to-sum.
    fn quad_sine_integral(i: i64, j: i64, k: i64, l: i64) -> f64 {
        let cc = |p: i64, q: i64| -> f64 {
            let mut v = 0.0;
            if p == q {
                v += PI / 2.0;
            }
            if p == -q {
                v += PI / 2.0;
            }
            v
        };
        // sin i sin j = (cos(i-j) - cos(i+j))/2, same for k, l
        0.25 * (cc(i - j, k - l) - cc(i - j, k + l) - cc(i + j, k - l) + cc(i + j, k + l))
    }

    /// Direct O(K⁴) triple-sum projection of `-u³` in plain normalization.
    fn cubic_oracle_plain(c: &[f64]) -> Vec<f64> {
        let n = c.len();
        (1..=n)
            .map(|l| {
                let mut s = 0.0;
                for i in 1..=n {
                    for j in 1..=n {
                        for k in 1..=n {
                            s += c[i - 1]
                                * c[j - 1]
                                * c[k - 1]
                                * quad_sine_integral(i as i64, j as i64, k as i64, l as i64);
                        }
                    }
                }
                -s * FRAC_2_PI
            })
            .collect()
    }

    fn fine_quadrature_projection(f: impl Fn(f64) -> f64, k: usize, norm: Normalization) -> f64 {
        // composite Simpson on (0, π)
        let n = 20_000;
        let h = PI / n as f64;
        let basis = SineBasis::new(k, norm).unwrap();
        let g = |x: f64| f(x) * basis.eval(k, x);
        let mut s = g(0.0) + g(PI);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(i as f64 * h);
        }
        s * h / 3.0 / norm.mode_mass()
    }

    #[test]
    fn synthesize_first_orthonormal_mode() {
        let basis = SineBasis::orthonormal(3).unwrap();
        let field = SpectralField::mode(basis, 1, 1.0).unwrap();
        let grid = Grid::new(8).unwrap();
        let values = synthesize(&field, &grid).unwrap();
        for (v, x) in values.iter().zip(grid.nodes()) {
            assert_abs_diff_eq!(*v, FRAC_2_PI.sqrt() * x.sin(), epsilon = 1e-15);
        }
    }

    #[test]
    fn synthesize_zero_and_plain_mode_two() {
        let grid = Grid::new(3).unwrap(); // nodes π/4, π/2, 3π/4
        let zero = SpectralField::zeros(SineBasis::orthonormal(3).unwrap());
        assert!(synthesize(&zero, &grid).unwrap().iter().all(|v| *v == 0.0));
        let f = SpectralField::new(SineBasis::plain(3).unwrap(), vec![0.0, 1.0, 0.0]).unwrap();
        let values = synthesize(&f, &grid).unwrap();
        assert_abs_diff_eq!(values[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn synthesize_rejects_small_grid() {
        let f = SpectralField::zeros(SineBasis::orthonormal(5).unwrap());
        let grid = Grid::new(4).unwrap();
        assert!(matches!(synthesize(&f, &grid), Err(Error::Sizing(_))));
    }

    #[test]
    fn analyze_roundtrip_and_errors() {
        let basis = SineBasis::orthonormal(3).unwrap();
        let f = SpectralField::new(basis, vec![0.3, -0.2, 0.1]).unwrap();
        let grid = Grid::new(16).unwrap();
        let back = analyze(&synthesize(&f, &grid).unwrap(), &grid, basis).unwrap();
        for (a, b) in back.coeffs().iter().zip(f.coeffs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let zero = analyze(&[0.0; 16], &grid, basis).unwrap();
        assert!(zero.coeffs().iter().all(|c| *c == 0.0));
        assert!(matches!(
            analyze(&[0.0; 15], &grid, basis),
            Err(Error::Sizing(_))
        ));
    }

    #[test]
    fn laplacian_examples() {
        let basis = SineBasis::orthonormal(4).unwrap();
        let f = SpectralField::mode(basis, 3, 2.0).unwrap();
        assert_eq!(f.laplacian().coeff(3), -18.0);
        let e1 = SpectralField::mode(basis, 1, 1.0).unwrap();
        assert_eq!(e1.laplacian().coeffs(), e1.scale(-1.0).coeffs());
        assert_abs_diff_eq!(e1.sobolev_norm(2.0), 1.0, epsilon = 1e-15);
        assert!(SpectralField::zeros(basis)
            .laplacian()
            .coeffs()
            .iter()
            .all(|c| *c == 0.0));
    }

    #[test]
    fn sobolev_norm_examples() {
        let basis = SineBasis::orthonormal(2).unwrap();
        let e1 = SpectralField::mode(basis, 1, 1.0).unwrap();
        assert_abs_diff_eq!(e1.sobolev_norm(1.0), 1.0, epsilon = 1e-15);
        let e2 = SpectralField::mode(basis, 2, 1.0).unwrap();
        assert_abs_diff_eq!(e2.sobolev_norm(2.0), 4.0, epsilon = 1e-15);
        let both = SpectralField::new(basis, vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(both.sobolev_norm(0.0), 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn inner_products() {
        let basis = SineBasis::orthonormal(3).unwrap();
        let e1 = SpectralField::mode(basis, 1, 1.0).unwrap();
        let e2 = SpectralField::mode(basis, 2, 1.0).unwrap();
        assert_eq!(e1.inner(&e1).unwrap(), 1.0);
        assert_eq!(e1.inner(&e2).unwrap(), 0.0);
        assert_eq!(e2.grad_inner(&e2).unwrap(), 4.0);
        let u = SpectralField::new(basis, vec![0.4, -1.0, 2.5]).unwrap();
        assert_abs_diff_eq!(
            u.grad_inner(&u).unwrap(),
            u.sobolev_norm(1.0).powi(2),
            epsilon = 1e-12
        );
        let other = SpectralField::zeros(SineBasis::orthonormal(4).unwrap());
        assert!(matches!(e1.inner(&other), Err(Error::BasisMismatch(_))));
        let plain = SpectralField::zeros(SineBasis::plain(3).unwrap());
        assert!(matches!(e1.grad_inner(&plain), Err(Error::BasisMismatch(_))));
    }

    #[test]
    fn cubic_of_plain_sine_matches_identity_and_quadrature() {
        let a = 0.7;
        let basis = SineBasis::plain(4).unwrap();
        let u = SpectralField::mode(basis, 1, a).unwrap();
        let f = cubic_f(&u, 0.0, &Grid::for_cubic(4)).unwrap();
        let q1 = fine_quadrature_projection(|x| -(a * x.sin()).powi(3), 1, Normalization::Plain);
        let q3 = fine_quadrature_projection(|x| -(a * x.sin()).powi(3), 3, Normalization::Plain);
        assert_abs_diff_eq!(f.coeff(1), q1, epsilon = 1e-10);
        assert_abs_diff_eq!(f.coeff(3), q3, epsilon = 1e-10);
        assert_abs_diff_eq!(f.coeff(1), -0.75 * a * a * a, epsilon = 1e-13);
        assert_abs_diff_eq!(f.coeff(3), 0.25 * a * a * a, epsilon = 1e-13);
        assert_abs_diff_eq!(f.coeff(2), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn cubic_of_orthonormal_mode() {
        let c = 1.3;
        let basis = SineBasis::orthonormal(3).unwrap();
        let u = SpectralField::mode(basis, 1, c).unwrap();
        let f = cubic_f(&u, 0.0, &Grid::for_cubic(3)).unwrap();
        let p = FRAC_2_PI.sqrt();
        let q1 = fine_quadrature_projection(
            |x| -(c * p * x.sin()).powi(3),
            1,
            Normalization::Orthonormal,
        );
        assert_abs_diff_eq!(f.coeff(1), q1, epsilon = 1e-10);
        assert_abs_diff_eq!(f.coeff(1), -3.0 / (2.0 * PI) * c.powi(3), epsilon = 1e-13);
    }

    #[test]
    fn cubic_zero_field_and_dealiasing_guard() {
        let basis = SineBasis::orthonormal(4).unwrap();
        let zero = SpectralField::zeros(basis);
        let f = cubic_f(&zero, 3.0, &Grid::for_cubic(4)).unwrap();
        assert!(f.coeffs().iter().all(|c| *c == 0.0));
        let err = cubic_f(&zero, 0.0, &Grid::new(12).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Dealiasing { needed: 13, .. }));
    }

    #[test]
    fn normalization_conversion_preserves_function() {
        let basis = SineBasis::orthonormal(3).unwrap();
        let u = SpectralField::new(basis, vec![1.0, -0.5, 0.25]).unwrap();
        let plain = u.to_normalization(Normalization::Plain);
        let grid = Grid::new(9).unwrap();
        let a = synthesize(&u, &grid).unwrap();
        let b = synthesize(&plain, &grid).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(u.sobolev_norm(1.0), plain.sobolev_norm(1.0), epsilon = 1e-13);
    }

    fn coeffs_strategy(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-2.0f64..2.0, k)
    }

    proptest! {
        #[test]
        fn roundtrip_band_limited(c in coeffs_strategy(8)) {
            let basis = SineBasis::orthonormal(8).unwrap();
            let grid = Grid::new(32).unwrap();
            let u = SpectralField::new(basis, c).unwrap();
            let back = analyze(&synthesize(&u, &grid).unwrap(), &grid, basis).unwrap();
            for (a, b) in back.coeffs().iter().zip(u.coeffs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn parseval(c in coeffs_strategy(6)) {
            let u = SpectralField::new(SineBasis::orthonormal(6).unwrap(), c.clone()).unwrap();
            let direct: f64 = c.iter().map(|x| x * x).sum();
            prop_assert!((u.sobolev_norm(0.0).powi(2) - direct).abs() < 1e-12);
        }

        #[test]
        fn cubic_matches_triple_sum(c in coeffs_strategy(8), beta in -2.0f64..2.0) {
            let basis = SineBasis::plain(8).unwrap();
            let u = SpectralField::new(basis, c.clone()).unwrap();
            let f = cubic_f(&u, beta, &Grid::for_cubic(8)).unwrap();
            let oracle = cubic_oracle_plain(&c);
            for (i, (a, b)) in f.coeffs().iter().zip(&oracle).enumerate() {
                prop_assert!((a - (b + beta * c[i])).abs() < 1e-10);
            }
        }

        #[test]
        fn laplacian_symmetric(a in coeffs_strategy(5), b in coeffs_strategy(5)) {
            let basis = SineBasis::orthonormal(5).unwrap();
            let u = SpectralField::new(basis, a).unwrap();
            let w = SpectralField::new(basis, b).unwrap();
            let lhs = u.laplacian().inner(&w).unwrap();
            let rhs = u.inner(&w.laplacian()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
