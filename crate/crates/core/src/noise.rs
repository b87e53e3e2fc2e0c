//! Q-Wiener noise diagonal in the sine basis, exact Ornstein–Uhlenbeck
//! transitions and reproducible per-trajectory random streams.
//!
//! Streams are ChaCha8 keystreams: the master seed fixes the key and the
//! `(trajectory, purpose)` pair selects the 64-bit stream number, so every
//! trajectory owns an independent generator that does not depend on how the
//! ensemble is scheduled across threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spectral::{SineBasis, SpectralField};

/// How the covariance eigenvalues were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `b_k = k^{-exponent}`.
    PowerLaw { exponent: f64 },
    Custom,
}

/// Diagonal covariance `Q e_k = b_k e_k` together with the noise exponent α.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    b: Vec<f64>,
    alpha: f64,
    kind: NoiseKind,
}

impl NoiseModel {
    /// `b_k = k^{-r}` for `k = 1..=modes`; `r > 3` keeps `B_1` summable.
    pub fn power_law(modes: usize, exponent: f64, alpha: f64) -> Result<Self> {
        if !(exponent > 3.0) || !exponent.is_finite() {
            return Err(invalid(
                "exponent",
                format!("power-law exponent must exceed 3, got {exponent}"),
            ));
        }
        let b = (1..=modes).map(|k| (k as f64).powf(-exponent)).collect();
        Self::build(b, alpha, NoiseKind::PowerLaw { exponent })
    }

    pub fn custom(b: Vec<f64>, alpha: f64) -> Result<Self> {
        Self::build(b, alpha, NoiseKind::Custom)
    }

    /// The default spectrum `b_k = k^{-4}` truncated at `modes`.
    pub fn default_spectrum(modes: usize, alpha: f64) -> Result<Self> {
        Self::power_law(modes, 4.0, alpha)
    }

    fn build(b: Vec<f64>, alpha: f64, kind: NoiseKind) -> Result<Self> {
        if let Some((i, v)) = b.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid(
                "b",
                format!("eigenvalue b_{} = {v} must be finite and nonnegative", i + 1),
            ));
        }
        check_alpha(alpha)?;
        Ok(Self { b, alpha, kind })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.b
    }

    /// `b_k` for 1-based `k`; zero beyond the truncation.
    pub fn b(&self, k: usize) -> f64 {
        self.b.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha,
            ..self.clone()
        })
    }

    /// Same spectrum cut (or zero-padded) to `modes` entries.
    pub fn truncated(&self, modes: usize) -> Self {
        let b = (1..=modes).map(|k| self.b(k)).collect();
        Self {
            b,
            alpha: self.alpha,
            kind: self.kind.clone(),
        }
    }

    /// All-zero spectrum of the given length.
    pub fn silent(modes: usize, alpha: f64) -> Result<Self> {
        Self::custom(vec![0.0; modes], alpha)
    }

    /// `⟨Qφ, φ⟩ = Σ b_k φ_k²` for orthonormal coefficients `φ`.
    pub fn quadratic_form(&self, phi: &[f64]) -> f64 {
        phi.iter()
            .enumerate()
            .map(|(i, p)| self.b(i + 1) * p * p)
            .sum()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(invalid("alpha", format!("must lie in [0, 1/2], got {alpha}")));
    }
    Ok(())
}

/// `(B_0, B_1) = (Σ b_k, Σ k² b_k)` over the truncation.
pub fn b_sums(model: &NoiseModel) -> (f64, f64) {
    model
        .b
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(b0, b1), (i, b)| {
            (b0 + b, b1 + SineBasis::eigenvalue(i + 1) * b)
        })
}

/// What a random stream is used for. Distinct purposes of the same
/// trajectory never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Wiener = 1,
    Initial = 2,
    Fast = 3,
    Bank = 4,
    Reference = 5,
    Scratch = 6,
}

const PURPOSE_BITS: u32 = 8;

/// A deterministic Gaussian/uniform source identified by
/// `(master seed, trajectory, purpose)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    trajectory: u64,
    purpose: Purpose,
    rng: ChaCha8Rng,
}

/// Derive the stream for one trajectory and purpose. Trajectory ids must be
/// below `2^56`.
pub fn derive_stream(master_seed: u64, trajectory: u64, purpose: Purpose) -> RngStream {
    assert!(
        trajectory < (1u64 << (64 - PURPOSE_BITS)),
        "trajectory id {trajectory} too large"
    );
    let mut key = [0u8; 32];
    let mut sm = master_seed;
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut sm).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((trajectory << PURPOSE_BITS) | purpose as u64);
    RngStream {
        master_seed,
        trajectory,
        purpose,
        rng,
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn id(&self) -> (u64, u64, Purpose) {
        (self.master_seed, self.trajectory, self.purpose)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_normals(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.rng.sample(StandardNormal);
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// One increment `W(t+h) - W(t)` in orthonormal coordinates: mode `k` is
/// `N(0, b_k h)`.
pub fn sample_wiener_increment(
    model: &NoiseModel,
    h: f64,
    rng: &mut RngStream,
) -> Result<SpectralField> {
    if !(h > 0.0) {
        return Err(invalid("h", format!("timestep must be positive, got {h}")));
    }
    let basis = SineBasis::orthonormal(model.len().max(1))?;
    let mut coeffs = vec![0.0; basis.modes()];
    for (k, c) in coeffs.iter_mut().enumerate().take(model.len()) {
        let z = rng.normal();
        *c = (model.b(k + 1) * h).sqrt() * z;
    }
    SpectralField::new(basis, coeffs)
}

/// Precomputed exact transition of `dz = -μ(z - m) dt + σ dW` over `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuTransition {
    decay: f64,
    // standard deviation per unit diffusion
    unit_sd: f64,
}

impl OuTransition {
    pub fn new(mu: f64, h: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(invalid("mu", format!("decay rate must be positive, got {mu}")));
        }
        if !(h > 0.0) {
            return Err(invalid("h", format!("timestep must be positive, got {h}")));
        }
        let decay = (-mu * h).exp();
        let var = -(-2.0 * mu * h).exp_m1() / (2.0 * mu);
        Ok(Self {
            decay,
            unit_sd: var.sqrt(),
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Conditional variance of one step for unit diffusion.
    pub fn unit_variance(&self) -> f64 {
        self.unit_sd * self.unit_sd
    }

    #[inline]
    pub fn apply(&self, z: f64, mean: f64, diffusion: f64, normal: f64) -> f64 {
        mean + self.decay * (z - mean) + diffusion * self.unit_sd * normal
    }
}

/// Exact in-distribution step of `dz = -μ(z - m) dt + diffusion · dW`.
///
/// Panics if `mu` or `h` is not positive.
pub fn ou_exact_step(
    z: f64,
    mu: f64,
    m: f64,
    h: f64,
    diffusion: f64,
    rng: &mut RngStream,
) -> f64 {
    let tr = OuTransition::new(mu, h).expect("ou_exact_step requires mu > 0 and h > 0");
    tr.apply(z, m, diffusion, rng.normal())
}
