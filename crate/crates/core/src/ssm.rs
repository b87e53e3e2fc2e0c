//! Stochastic slow manifold of the homotopy system
//!
//! ```text
//! u_t = u_xx + u + v
//! ν v_t = -v - γν(∂xx + 1)u_t + β′u - u³ + σẆ
//! ```
//!
//! which at `γ = 1` is `ν u_tt + u_t = u_xx + (1+β′)u - u³ + σẆ`.
//!
//! Everything here uses plain `sin kx` amplitudes. The noise is
//! `W = Σ b_k w_k sin kx` with `b_k = σ · amps_k`: the amplitudes are taken
//! as configuration rather than derived from a covariance spectrum, and `σ`
//! multiplies all of them.
//!
//! The manifold is parametrized by convolutions `Z_μ ẇ = ∫ e^{-μ(t-s)} dw_s`
//! at the mode rates `μ_k = k² - 1`, iterated convolutions `Z_μ Z_μ′ ẇ`, and
//! fast convolutions at rate `1/ν`. [`OuBank`] samples all of them exactly
//! and jointly with the Brownian increments that drive them.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::diagnostics::{order_fit_points, OrderFit};
use crate::dynamics::{Mat2, Trajectory};
use crate::ensemble::parallel_map;
use crate::error::{invalid, Error, Result};
use crate::lti::{self, discretize, psd_factor, stationary_covariance};
use crate::noise::{derive_stream, Purpose, RngStream};
use crate::spectral::{Grid, Normalization, SineBasis, SpectralField};

/// Decay rate `k² - 1` of mode `k`.
pub fn mu(k: usize) -> f64 {
    assert!(k >= 1, "modes start at 1");
    (k * k) as f64 - 1.0
}

/// Parameters of the homotopy system and its slow manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    pub nu: f64,
    pub gamma: f64,
    pub beta_prime: f64,
    pub sigma: f64,
    /// Per-mode noise amplitudes for `k = 1..`; missing entries are zero.
    pub amps: Vec<f64>,
    pub modes: usize,
    /// Largest `|a|` accepted by the expansion.
    pub radius: f64,
    /// Whether the cubic `u³` is present. Without it every term of the
    /// expansion that originates from the cubic is dropped.
    pub cubic: bool,
}

pub const MIN_FIELD_MODES: usize = 5;
pub const DEFAULT_RADIUS: f64 = 0.5;

impl SsmParams {
    /// Amplitudes `k^{-2}`, radius 0.5, cubic on.
    pub fn new(nu: f64, gamma: f64, beta_prime: f64, sigma: f64, modes: usize) -> Result<Self> {
        let p = Self {
            nu,
            gamma,
            beta_prime,
            sigma,
            amps: (1..=modes).map(|k| 1.0 / (k * k) as f64).collect(),
            modes,
            radius: DEFAULT_RADIUS,
            cubic: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0 && self.nu < 1.0) {
            return Err(invalid("nu", format!("must lie in [0, 1), got {}", self.nu)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid("gamma", format!("must lie in [0, 1], got {}", self.gamma)));
        }
        if !self.beta_prime.is_finite() {
            return Err(invalid("beta_prime", "must be finite"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(invalid("sigma", format!("must be nonnegative, got {}", self.sigma)));
        }
        if let Some(a) = self.amps.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(invalid("amps", format!("amplitudes must be nonnegative, got {a}")));
        }
        if self.modes == 0 {
            return Err(invalid("modes", "need at least one mode"));
        }
        if !(self.radius > 0.0) {
            return Err(invalid("radius", "must be positive"));
        }
        Ok(())
    }

    /// Effective amplitude `b_k = σ · amps_k`, zero beyond the truncation.
    pub fn b(&self, k: usize) -> f64 {
        if k == 0 || k > self.modes {
            return 0.0;
        }
        self.sigma * self.amps.get(k - 1).copied().unwrap_or(0.0)
    }

    /// Expansion-domain error when `|a|` exceeds the radius.
    pub fn check_radius(&self, a: f64) -> Result<()> {
        if !a.is_finite() || a.abs() > self.radius {
            return Err(Error::ExpansionDomain {
                amplitude: a,
                radius: self.radius,
            });
        }
        Ok(())
    }

    fn basis(&self) -> SineBasis {
        SineBasis::plain(self.modes).expect("modes validated nonzero")
    }
}

/// Convolution channels driven by one Brownian motion `w_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    /// `w_j` itself.
    Wiener,
    /// `Z_{1/ν} ẇ_j`.
    Fast,
    /// `Z_{μ_j} ẇ_j`, `j ≥ 2`.
    First,
    /// `Z_{μ_j} Z_{μ_j} ẇ_j`, `j ≥ 2`.
    SecondSame,
    /// `Z_{μ_{j+2}} Z_{μ_j} ẇ_j`, `j ≥ 2`, `j + 2 ≤ K`.
    SecondUp,
    /// `Z_{μ_{j-2}} Z_{μ_j} ẇ_j`, `j ≥ 4`.
    SecondDown,
    /// `Z_8 ẇ_1`.
    Rate8,
}

#[derive(Debug, Clone)]
struct Block {
    channels: Vec<Channel>,
    integrals: bool,
    transition: DMatrix<f64>,
    factor: DMatrix<f64>,
    // stationary factor of the stable states (channels other than Wiener)
    stationary: DMatrix<f64>,
    stable: Vec<usize>,
    state: DVector<f64>,
    next: DVector<f64>,
    noise: DVector<f64>,
}

impl Block {
    fn base(&self) -> usize {
        self.channels.len()
    }

    fn dim(&self) -> usize {
        self.state.len()
    }

    fn index(&self, c: Channel) -> Option<usize> {
        self.channels.iter().position(|x| *x == c)
    }
}

fn block_channels(j: usize, modes: usize) -> Vec<Channel> {
    let mut ch = vec![Channel::Wiener, Channel::Fast];
    if j == 1 {
        ch.push(Channel::Rate8);
    }
    if j >= 2 {
        ch.push(Channel::First);
        ch.push(Channel::SecondSame);
        if j + 2 <= modes {
            ch.push(Channel::SecondUp);
        }
        if j >= 4 {
            ch.push(Channel::SecondDown);
        }
    }
    ch
}

/// Drift matrix and noise column of block `j`; with `integrals`, the state
/// is extended by `∫x` and `∫∫x` over the current step for every channel.
fn block_system(j: usize, channels: &[Channel], nu: f64, integrals: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = channels.len();
    let dim = if integrals { 3 * n } else { n };
    let mut f = DMatrix::zeros(dim, dim);
    let mut g = DMatrix::zeros(dim, 1);
    let first = channels.iter().position(|c| *c == Channel::First);
    for (i, c) in channels.iter().enumerate() {
        match c {
            Channel::Wiener => g[(i, 0)] = 1.0,
            Channel::Fast => {
                f[(i, i)] = -1.0 / nu;
                g[(i, 0)] = 1.0;
            }
            Channel::First => {
                f[(i, i)] = -mu(j);
                g[(i, 0)] = 1.0;
            }
            Channel::Rate8 => {
                f[(i, i)] = -8.0;
                g[(i, 0)] = 1.0;
            }
            Channel::SecondSame | Channel::SecondUp | Channel::SecondDown => {
                let outer = match c {
                    Channel::SecondSame => mu(j),
                    Channel::SecondUp => mu(j + 2),
                    _ => mu(j - 2),
                };
                f[(i, i)] = -outer;
                f[(i, first.expect("second-order channels need a first-order one"))] = 1.0;
            }
        }
        if integrals {
            f[(n + i, i)] = 1.0;
            f[(2 * n + i, n + i)] = 1.0;
        }
    }
    (f, g)
}

/// Exact joint sampler of all convolution states.
#[derive(Debug, Clone)]
pub struct OuBank {
    nu: f64,
    modes: usize,
    h: f64,
    time: f64,
    blocks: Vec<Block>,
    dw: Vec<f64>,
}

impl OuBank {
    /// Bank for `params.modes` driving noises at step `h`, started at zero.
    /// With `integrals`, each step also yields `∫x ds` and `∫∫x ds²` over
    /// the step for every channel.
    pub fn new(params: &SsmParams, h: f64, integrals: bool) -> Result<Self> {
        params.validate()?;
        if !(params.nu > 0.0) {
            return Err(invalid("nu", "the bank needs a positive fast rate 1/nu"));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid("h", format!("timestep must be positive, got {h}")));
        }
        let mut blocks = Vec::with_capacity(params.modes);
        for j in 1..=params.modes {
            let channels = block_channels(j, params.modes);
            let (f, g) = block_system(j, &channels, params.nu, integrals);
            let d = discretize(&f, &g, &DMatrix::zeros(f.nrows(), 0), h)?;
            let stable: Vec<usize> = (0..channels.len())
                .filter(|&i| channels[i] != Channel::Wiener)
                .collect();
            let fs = f.select_rows(&stable).select_columns(&stable);
            let gs = g.select_rows(&stable);
            let stationary = psd_factor(&stationary_covariance(&fs, &gs)?);
            let dim = f.nrows();
            blocks.push(Block {
                channels,
                integrals,
                transition: d.transition,
                factor: psd_factor(&d.covariance),
                stationary,
                stable,
                state: DVector::zeros(dim),
                next: DVector::zeros(dim),
                noise: DVector::zeros(dim),
            });
        }
        Ok(Self {
            nu: params.nu,
            modes: params.modes,
            h,
            time: 0.0,
            blocks,
            dw: vec![0.0; params.modes],
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Draw the convolution states from their stationary law; `w` and the
    /// step integrals are set to zero.
    pub fn stationary_init(&mut self, rng: &mut RngStream) {
        for b in &mut self.blocks {
            b.state.fill(0.0);
            let z = DVector::from_fn(b.stable.len(), |_, _| rng.normal());
            let x = &b.stationary * z;
            for (i, &s) in b.stable.iter().enumerate() {
                b.state[s] = x[i];
            }
        }
        self.dw.iter_mut().for_each(|d| *d = 0.0);
        self.time = 0.0;
    }

    /// Standard normals consumed by one step.
    pub fn normals_per_step(&self) -> usize {
        self.blocks.iter().map(Block::dim).sum()
    }

    pub fn step(&mut self, rng: &mut RngStream) {
        for b in &mut self.blocks {
            for z in b.noise.iter_mut() {
                *z = rng.normal();
            }
        }
        self.advance();
    }

    /// Step with caller-supplied standard normals (block by block, in block
    /// state order).
    pub fn step_with_normals(&mut self, normals: &[f64]) -> Result<()> {
        if normals.len() != self.normals_per_step() {
            return Err(Error::Sizing(format!(
                "bank step needs {} normals, got {}",
                self.normals_per_step(),
                normals.len()
            )));
        }
        let mut off = 0;
        for b in &mut self.blocks {
            let d = b.dim();
            b.noise.copy_from_slice(&normals[off..off + d]);
            off += d;
        }
        self.advance();
        Ok(())
    }

    fn advance(&mut self) {
        for (j, b) in self.blocks.iter_mut().enumerate() {
            if b.integrals {
                let n = b.base();
                for i in n..3 * n {
                    b.state[i] = 0.0;
                }
            }
            let w_old = b.state[0];
            lti::apply(&b.transition, &b.state, &mut b.next);
            b.next.gemv(1.0, &b.factor, &b.noise, 1.0);
            std::mem::swap(&mut b.state, &mut b.next);
            self.dw[j] = b.state[0] - w_old;
        }
        self.time += self.h;
    }

    /// Brownian increments `Δw_k` of the last step, `k = 1..=K`.
    pub fn increments(&self) -> &[f64] {
        &self.dw
    }

    /// Current value of `channel` for driving noise `k` (zero if absent).
    pub fn get(&self, k: usize, channel: Channel) -> f64 {
        self.block(k)
            .and_then(|b| b.index(channel).map(|i| b.state[i]))
            .unwrap_or(0.0)
    }

    /// `∫ x ds` over the last step for `channel` of noise `k`.
    pub fn step_integral(&self, k: usize, channel: Channel) -> f64 {
        self.integral_at(k, channel, 1)
    }

    /// `∫ (∫ x) ds` over the last step.
    pub fn step_double_integral(&self, k: usize, channel: Channel) -> f64 {
        self.integral_at(k, channel, 2)
    }

    fn integral_at(&self, k: usize, channel: Channel, level: usize) -> f64 {
        self.block(k)
            .filter(|b| b.integrals)
            .and_then(|b| b.index(channel).map(|i| b.state[level * b.base() + i]))
            .unwrap_or(0.0)
    }

    fn block(&self, k: usize) -> Option<&Block> {
        if k == 0 {
            None
        } else {
            self.blocks.get(k - 1)
        }
    }

    /// Channels present for noise `k`.
    pub fn channels(&self, k: usize) -> &[Channel] {
        self.block(k).map(|b| b.channels.as_slice()).unwrap_or(&[])
    }

    pub fn first(&self, k: usize) -> f64 {
        self.get(k, Channel::First)
    }

    pub fn fast(&self, k: usize) -> f64 {
        self.get(k, Channel::Fast)
    }
}

/// Advance the bank by its step.
pub fn ou_bank_step(bank: &mut OuBank, rng: &mut RngStream) {
    bank.step(rng);
}

// Shared by the full and averaged slow SDEs; the averaged one is this at ν = 0.
#[allow(clippy::too_many_arguments)]
fn slow_increment(a: f64, nu: f64, beta_prime: f64, cubic: bool, b: [f64; 3], dw: [f64; 3], h: f64) -> f64 {
    let a2 = a * a;
    let a4 = a2 * a2;
    if !cubic {
        return beta_prime * a * h + (1.0 - 2.0 * nu * beta_prime) * b[0] * dw[0];
    }
    let drift = beta_prime * a - 0.75 * a2 * a;
    let c1 = 1.0 - 2.0 * nu * beta_prime + 4.5 * nu * a2 - (9.0 / 1024.0) * a4;
    let c3 = (3.0 / 32.0 + (3.0 / 128.0) * beta_prime) * a2 - (21.0 / 1024.0) * a4;
    let c5 = (5.0 / 1024.0) * a4;
    drift * h + c1 * b[0] * dw[0] + c3 * b[1] * dw[1] + c5 * b[2] * dw[2]
}

fn slow_inputs(params: &SsmParams, dw: &[f64]) -> ([f64; 3], [f64; 3]) {
    let pick = |k: usize| dw.get(k - 1).copied().unwrap_or(0.0);
    (
        [params.b(1), params.b(3), params.b(5)],
        [pick(1), pick(3), pick(5)],
    )
}

/// Coefficients of the noise increments in the slow SDE:
/// `(c₁, c₃, c₅)` multiplying `b₁Δw₁, b₃Δw₃, b₅Δw₅`.
pub fn slow_noise_coefficients(a: f64, nu: f64, beta_prime: f64) -> [f64; 3] {
    let e = |i: usize| {
        let mut b = [0.0; 3];
        let mut dw = [0.0; 3];
        b[i] = 1.0;
        dw[i] = 1.0;
        slow_increment(a, nu, beta_prime, true, b, dw, 0.0)
    };
    [e(0), e(1), e(2)]
}

/// Increment `da` over a step of length `h` of the slow SDE on the
/// manifold, driven by the Brownian increments `dw[k-1] = Δw_k`. It reads
/// only `Δw₁, Δw₃, Δw₅` and never any convolution state, and does not
/// depend on `γ`.
pub fn ssm_drift_diffusion(a: f64, params: &SsmParams, dw: &[f64], h: f64) -> Result<f64> {
    params.check_radius(a)?;
    let (b, w) = slow_inputs(params, dw);
    Ok(slow_increment(a, params.nu, params.beta_prime, params.cubic, b, w, h))
}

/// The averaged model's slow SDE: the same expression with every
/// ν-dependent term removed.
pub fn averaged_ssm_drift_diffusion(a_bar: f64, params: &SsmParams, dw: &[f64], h: f64) -> Result<f64> {
    params.check_radius(a_bar)?;
    let (b, w) = slow_inputs(params, dw);
    Ok(slow_increment(a_bar, 0.0, params.beta_prime, params.cubic, b, w, h))
}

/// The manifold `u(a, Z)` as plain sine amplitudes on `params.modes` modes.
pub fn ssm_field(a: f64, params: &SsmParams, bank: &OuBank) -> Result<SpectralField> {
    if params.modes < MIN_FIELD_MODES {
        return Err(Error::Truncation(format!(
            "the manifold needs at least {MIN_FIELD_MODES} modes, got {}",
            params.modes
        )));
    }
    if bank.modes() != params.modes || (bank.nu() - params.nu).abs() > 0.0 {
        return Err(invalid("bank", "bank was built for different parameters"));
    }
    params.check_radius(a)?;
    let k_max = params.modes;
    let mut c = vec![0.0; k_max];
    let nu = params.nu;
    let gamma = params.gamma;
    let b = |k: usize| params.b(k);
    c[0] += a;
    if params.cubic {
        c[2] += a * a * a / 32.0;
        c[0] -= 3.0 / 32.0 * a * a * b(3) * bank.first(3);
        c[2] -= 3.0 / 32.0 * a * a * b(1) * bank.get(1, Channel::Rate8);
    }
    for k in 2..=k_max {
        let m = mu(k);
        let z1 = bank.first(k);
        let z2 = bank.get(k, Channel::SecondSame);
        c[k - 1] += b(k) * ((1.0 + m * nu + gamma * nu * m) * z1 - gamma * nu * m * m * z2);
        c[k - 1] += params.beta_prime * b(k) * z2;
    }
    for k in 1..=k_max {
        c[k - 1] -= b(k) * bank.fast(k);
    }
    if params.cubic {
        for k in 2..=k_max {
            let mut s = -2.0 * b(k) * bank.get(k, Channel::SecondSame);
            if k + 2 <= k_max {
                s += b(k + 2) * bank.get(k + 2, Channel::SecondDown);
            }
            c[k - 1] += 0.75 * s;
            if k + 2 <= k_max {
                c[k + 1] += 0.75 * b(k) * bank.get(k, Channel::SecondUp);
            }
        }
    }
    SpectralField::new(params.basis(), c)
}

/// Drift parts `(u_t, v_t)` of the homotopy system on plain amplitudes,
/// with `u_t` substituted into the `γ` term of the `v` equation.
pub fn homotopy_rhs(
    u: &SpectralField,
    v: &SpectralField,
    params: &SsmParams,
    grid: &Grid,
) -> Result<(SpectralField, SpectralField)> {
    check_plain(u, params.modes, "u")?;
    check_plain(v, params.modes, "v")?;
    if !(params.nu > 0.0) {
        return Err(invalid("nu", "homotopy system needs nu > 0"));
    }
    let kappa = if params.cubic { 1.0 } else { 0.0 };
    if kappa != 0.0 && grid.len() < crate::spectral::dealiased_size(params.modes) {
        return Err(Error::Dealiasing {
            nodes: grid.len(),
            needed: crate::spectral::dealiased_size(params.modes),
            modes: params.modes,
        });
    }
    let mut n = vec![0.0; params.modes];
    let mut scratch = Vec::new();
    grid.reaction_into(u.coeffs(), Normalization::Plain, params.beta_prime, kappa, &mut n, &mut scratch);
    let mut ut = vec![0.0; params.modes];
    let mut vt = vec![0.0; params.modes];
    for k in 1..=params.modes {
        let m = mu(k);
        let i = k - 1;
        ut[i] = -m * u.coeffs()[i] + v.coeffs()[i];
        vt[i] = (-v.coeffs()[i] + params.gamma * params.nu * m * ut[i] + n[i]) / params.nu;
    }
    Ok((
        SpectralField::from_raw(params.basis(), ut),
        SpectralField::from_raw(params.basis(), vt),
    ))
}

fn check_plain(f: &SpectralField, modes: usize, name: &str) -> Result<()> {
    if f.modes() != modes {
        return Err(Error::Sizing(format!("{name} has {} modes, expected {modes}", f.modes())));
    }
    if f.basis().normalization() != Normalization::Plain {
        return Err(Error::BasisMismatch(format!("{name} must use plain sine amplitudes")));
    }
    Ok(())
}

/// State of the homotopy system (plain amplitudes).
#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyState {
    pub u: SpectralField,
    pub v: SpectralField,
}

/// Per-mode exact linear propagation with exponential-Euler treatment of
/// `β′u - u³` and exact Gaussian noise.
#[derive(Debug, Clone)]
pub struct HomotopyIntegrator {
    params: SsmParams,
    h: f64,
    grid: Grid,
    transition: Vec<Mat2>,
    input: Vec<[f64; 2]>,
    factor: Vec<Mat2>,
}

fn to_mat2(m: &DMatrix<f64>) -> Mat2 {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

impl HomotopyIntegrator {
    pub fn new(params: &SsmParams, h: f64) -> Result<Self> {
        params.validate()?;
        if !(params.nu > 0.0) {
            return Err(invalid("nu", "homotopy system needs nu > 0"));
        }
        let nu = params.nu;
        let mut transition = Vec::new();
        let mut input = Vec::new();
        let mut factor = Vec::new();
        for k in 1..=params.modes {
            let m = mu(k);
            let f = DMatrix::from_row_slice(
                2,
                2,
                &[-m, 1.0, -params.gamma * m * m, -1.0 / nu + params.gamma * m],
            );
            let g = DMatrix::from_row_slice(2, 1, &[0.0, params.b(k) / nu]);
            let e = DMatrix::from_row_slice(2, 1, &[0.0, 1.0 / nu]);
            let d = discretize(&f, &g, &e, h)?;
            transition.push(to_mat2(&d.transition));
            input.push([d.input[(0, 0)], d.input[(1, 0)]]);
            factor.push(to_mat2(&psd_factor(&d.covariance)));
        }
        Ok(Self {
            params: params.clone(),
            h,
            grid: Grid::for_cubic(params.modes),
            transition,
            input,
            factor,
        })
    }

    /// One step on raw plain amplitudes; two normals per mode.
    pub fn step_raw(&self, u: &mut [f64], v: &mut [f64], rng: &mut RngStream, scratch: &mut (Vec<f64>, Vec<f64>)) {
        let kappa = if self.params.cubic { 1.0 } else { 0.0 };
        scratch.0.resize(u.len(), 0.0);
        self.grid.reaction_into(
            u,
            Normalization::Plain,
            self.params.beta_prime,
            kappa,
            &mut scratch.0,
            &mut scratch.1,
        );
        for i in 0..u.len() {
            let (z1, z2) = (rng.normal(), rng.normal());
            let e = &self.transition[i];
            let w = &self.input[i];
            let l = &self.factor[i];
            let n = scratch.0[i];
            let nu_ = e[0][0] * u[i] + e[0][1] * v[i] + w[0] * n + l[0][0] * z1 + l[0][1] * z2;
            let nv = e[1][0] * u[i] + e[1][1] * v[i] + w[1] * n + l[1][0] * z1 + l[1][1] * z2;
            u[i] = nu_;
            v[i] = nv;
        }
    }

    /// Integrate to `horizon`, recording every `record_every` steps and at
    /// the end.
    pub fn simulate(
        &self,
        initial: &HomotopyState,
        horizon: f64,
        rng: &mut RngStream,
        record_every: usize,
    ) -> Result<Trajectory<HomotopyState>> {
        check_plain(&initial.u, self.params.modes, "u")?;
        check_plain(&initial.v, self.params.modes, "v")?;
        if record_every == 0 {
            return Err(invalid("record_every", "must be at least 1"));
        }
        let n = steps_for(horizon, self.h)?;
        let basis = self.params.basis();
        let mut u = initial.u.coeffs().to_vec();
        let mut v = initial.v.coeffs().to_vec();
        let mut scratch = (Vec::new(), Vec::new());
        let mut out = Trajectory {
            times: vec![0.0],
            states: vec![initial.clone()],
        };
        for j in 1..=n {
            self.step_raw(&mut u, &mut v, rng, &mut scratch);
            let t = j as f64 * self.h;
            if u.iter().chain(&v).any(|x| !x.is_finite()) {
                return Err(Error::BlowUp { time: t });
            }
            if j % record_every == 0 || j == n {
                out.times.push(t);
                out.states.push(HomotopyState {
                    u: SpectralField::from_raw(basis, u.clone()),
                    v: SpectralField::from_raw(basis, v.clone()),
                });
            }
        }
        Ok(out)
    }
}

fn steps_for(horizon: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) {
        return Err(invalid("h", format!("timestep must be positive, got {h}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(invalid("horizon", format!("must be nonnegative, got {horizon}")));
    }
    let n = (horizon / h).round();
    if (n * h - horizon).abs() > 1e-9 * horizon.max(h) {
        return Err(invalid("horizon", format!("T = {horizon} is not a multiple of h = {h}")));
    }
    Ok(n as usize)
}

/// Deterministic manifold state `u = a sin x + (a³/32) sin 3x` with the
/// matching `v = u_t - u_xx - u`, slow amplitude obeying the cubic normal
/// form.
pub fn deterministic_manifold_state(a: f64, params: &SsmParams) -> Result<HomotopyState> {
    if params.modes < 3 {
        return Err(Error::Truncation("need at least 3 modes".into()));
    }
    let basis = params.basis();
    let adot = params.beta_prime * a - 0.75 * a.powi(3);
    let mut u = vec![0.0; params.modes];
    let mut v = vec![0.0; params.modes];
    u[0] = a;
    u[2] = a.powi(3) / 32.0;
    v[0] = adot;
    v[2] = adot * (3.0 / 32.0) * a * a + mu(3) * u[2];
    Ok(HomotopyState {
        u: SpectralField::new(basis, u)?,
        v: SpectralField::new(basis, v)?,
    })
}

/// One point of a slow-manifold sample path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SsmSample {
    pub t: f64,
    pub a: f64,
    pub a_avg: f64,
    pub field: Vec<f64>,
}

/// Sample path of the slow SDE and its averaged counterpart driven by the
/// same increments, with the manifold field. The bank starts stationary.
pub fn simulate_ssm(
    params: &SsmParams,
    a0: f64,
    h: f64,
    horizon: f64,
    rng: &mut RngStream,
    record_every: usize,
) -> Result<Vec<SsmSample>> {
    if record_every == 0 {
        return Err(invalid("record_every", "must be at least 1"));
    }
    let n = steps_for(horizon, h)?;
    let mut bank = OuBank::new(params, h, false)?;
    bank.stationary_init(rng);
    let (mut a, mut ab) = (a0, a0);
    let mut out = vec![SsmSample {
        t: 0.0,
        a,
        a_avg: ab,
        field: ssm_field(a, params, &bank)?.into_coeffs(),
    }];
    for j in 1..=n {
        bank.step(rng);
        let t = j as f64 * h;
        let da = ssm_drift_diffusion(a, params, bank.increments(), h)?;
        let dab = averaged_ssm_drift_diffusion(ab, params, bank.increments(), h)?;
        a += da;
        ab += dab;
        params.check_radius(a)?;
        params.check_radius(ab)?;
        if j % record_every == 0 || j == n {
            out.push(SsmSample {
                t,
                a,
                a_avg: ab,
                field: ssm_field(a, params, &bank)?.into_coeffs(),
            });
        }
    }
    Ok(out)
}

/// Residual of `ν u_tt + u_t = u_xx + (1+β′)u - u³` at `x` for the
/// deterministic manifold `u = a sin x + (a³/32) sin 3x`,
/// `ȧ = β′a - (3/4)a³`.
pub fn deterministic_residual_at(a: f64, x: f64, nu: f64, beta_prime: f64) -> f64 {
    let (s1, s3) = (x.sin(), (3.0 * x).sin());
    let adot = beta_prime * a - 0.75 * a.powi(3);
    let addot = (beta_prime - 2.25 * a * a) * adot;
    let u = a * s1 + a.powi(3) / 32.0 * s3;
    let u_a = s1 + 3.0 / 32.0 * a * a * s3;
    let u_aa = 3.0 / 16.0 * a * s3;
    let ut = adot * u_a;
    let utt = addot * u_a + adot * adot * u_aa;
    let minus_uxx = a * s1 + 9.0 / 32.0 * a.powi(3) * s3;
    nu * utt + ut + minus_uxx - (1.0 + beta_prime) * u + u * u * u
}

/// Residual experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ResidualRun {
    /// Sup-norm residual on `grid_points` nodes of `[0, π]` for each amplitude.
    Deterministic { amplitudes: Vec<f64>, grid_points: usize },
    /// Time-averaged RMS weak residual per ν along exact bank paths. The
    /// weak form tests against a hat of half-width `half_width` made of
    /// `substeps` bank steps.
    LinearNoise {
        nus: Vec<f64>,
        half_width: f64,
        substeps: usize,
        horizon: f64,
        paths: usize,
        seed: u64,
        threads: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub mode: String,
    /// Amplitudes (deterministic) or ν values (linear noise).
    pub inputs: Vec<f64>,
    /// Sup norm, or RMS residual divided by σ.
    pub residuals: Vec<f64>,
    pub fit: OrderFit,
}

/// Residual norms over a sequence of amplitudes or ν values, with a
/// log-log slope fit.
pub fn residual_check(params: &SsmParams, run: &ResidualRun) -> Result<ResidualReport> {
    params.validate()?;
    match run {
        ResidualRun::Deterministic { amplitudes, grid_points } => {
            if params.sigma != 0.0 {
                return Err(Error::Configuration("deterministic residual needs sigma = 0".into()));
            }
            if !params.cubic {
                return Err(Error::Configuration("deterministic residual needs the cubic".into()));
            }
            if *grid_points < 2 {
                return Err(invalid("grid_points", "need at least 2"));
            }
            let mut res = Vec::new();
            for &a in amplitudes {
                params.check_radius(a)?;
                let sup = (0..*grid_points)
                    .map(|i| std::f64::consts::PI * i as f64 / (*grid_points - 1) as f64)
                    .map(|x| deterministic_residual_at(a, x, params.nu, params.beta_prime).abs())
                    .fold(0.0, f64::max);
                res.push(sup);
            }
            let pts: Vec<(f64, f64)> = amplitudes.iter().copied().zip(res.iter().copied()).collect();
            Ok(ResidualReport {
                mode: "deterministic".into(),
                inputs: amplitudes.clone(),
                residuals: res,
                fit: order_fit_points(&pts)?,
            })
        }
        ResidualRun::LinearNoise {
            nus,
            half_width,
            substeps,
            horizon,
            paths,
            seed,
            threads,
        } => {
            if params.beta_prime != 0.0 || params.cubic {
                return Err(Error::Configuration(
                    "linear-noise residual needs beta_prime = 0 and the cubic disabled".into(),
                ));
            }
            if !(params.sigma > 0.0) {
                return Err(Error::Configuration("linear-noise residual needs sigma > 0".into()));
            }
            if *substeps == 0 || !(*half_width > 0.0) || *paths == 0 {
                return Err(invalid("linear-noise", "substeps, half_width and paths must be positive"));
            }
            let mut res = Vec::new();
            for &nu in nus {
                let mut p = params.clone();
                p.nu = nu;
                p.validate()?;
                let per_path = parallel_map(*paths, *threads, |i| {
                    let mut rng = derive_stream(*seed, i as u64, Purpose::Bank);
                    linear_noise_path(&p, *half_width, *substeps, *horizon, &mut rng)
                });
                let mut sum = 0.0;
                let mut count = 0usize;
                for r in per_path {
                    let (s, c) = r?;
                    sum += s;
                    count += c;
                }
                res.push((sum / count as f64).sqrt() / params.sigma);
            }
            let pts: Vec<(f64, f64)> = nus.iter().copied().zip(res.iter().copied()).collect();
            Ok(ResidualReport {
                mode: "linear-noise".into(),
                inputs: nus.clone(),
                residuals: res,
                fit: order_fit_points(&pts)?,
            })
        }
    }
}

/// Sum of squared L² residual norms over all hat centres of one path, and
/// the number of centres.
fn linear_noise_path(
    params: &SsmParams,
    half_width: f64,
    substeps: usize,
    horizon: f64,
    rng: &mut RngStream,
) -> Result<(f64, usize)> {
    let h = half_width / substeps as f64;
    let n = steps_for(horizon, h).or_else(|_| Ok::<usize, Error>((horizon / h).floor() as usize))?;
    if n < 2 * substeps + 1 {
        return Err(invalid("horizon", "too short for one hat test function"));
    }
    let mut bank = OuBank::new(params, h, true)?;
    bank.stationary_init(rng);
    let k_max = params.modes;
    let nu = params.nu;
    // u_k as a combination of bank channels: slow amplitude a = b₁ w₁ plus
    // the linear-noise terms of the manifold
    let combos: Vec<Vec<(Channel, f64)>> = (1..=k_max)
        .map(|k| {
            let b = params.b(k);
            let mut c = vec![(Channel::Fast, -b)];
            if k == 1 {
                c.push((Channel::Wiener, (1.0 - 2.0 * nu * params.beta_prime) * b));
            } else {
                let m = mu(k);
                c.push((Channel::First, b * (1.0 + m * nu + params.gamma * nu * m)));
                c.push((Channel::SecondSame, -b * params.gamma * nu * m * m));
            }
            c
        })
        .collect();
    let value = |bank: &OuBank, k: usize| -> f64 {
        combos[k - 1].iter().map(|(ch, w)| w * bank.get(k, *ch)).sum()
    };
    let first_int = |bank: &OuBank, k: usize| -> f64 {
        combos[k - 1].iter().map(|(ch, w)| w * bank.step_integral(k, *ch)).sum()
    };
    let second_int = |bank: &OuBank, k: usize| -> f64 {
        combos[k - 1]
            .iter()
            .map(|(ch, w)| w * bank.step_double_integral(k, *ch))
            .sum()
    };
    // per step and mode: u at step start, P = ∫u, M = ∫(s - t_j)u, Δw, N = ∫(s - t_j)dw
    let mut u_pts = vec![vec![0.0; n + 1]; k_max];
    let mut p = vec![vec![0.0; n]; k_max];
    let mut m = vec![vec![0.0; n]; k_max];
    let mut dw = vec![vec![0.0; n]; k_max];
    let mut nw = vec![vec![0.0; n]; k_max];
    for k in 1..=k_max {
        u_pts[k - 1][0] = value(&bank, k);
    }
    for j in 0..n {
        bank.step(rng);
        for k in 1..=k_max {
            let i = k - 1;
            u_pts[i][j + 1] = value(&bank, k);
            let int1 = first_int(&bank, k);
            p[i][j] = int1;
            m[i][j] = h * int1 - second_int(&bank, k);
            dw[i][j] = bank.increments()[i];
            nw[i][j] = h * bank.get(k, Channel::Wiener) - bank.step_integral(k, Channel::Wiener);
        }
    }
    let hw = half_width;
    let mut sum = 0.0;
    let mut count = 0;
    for c in substeps..=(n - substeps) {
        let mut norm2 = 0.0;
        for k in 1..=k_max {
            let i = k - 1;
            let mk = mu(k);
            let ck = 1.0 + (1.0 - params.gamma) * nu * mk;
            let d2 = (u_pts[i][c + substeps] - 2.0 * u_pts[i][c] + u_pts[i][c - substeps]) / hw;
            let (mut pl, mut pr, mut psi_u, mut psi_w) = (0.0, 0.0, 0.0, 0.0);
            for l in 0..substeps {
                let jl = c - substeps + l;
                let jr = c + l;
                let off = l as f64 * h;
                pl += p[i][jl];
                pr += p[i][jr];
                psi_u += (off * p[i][jl] + m[i][jl]) / hw + ((hw - off) * p[i][jr] - m[i][jr]) / hw;
                psi_w += (off * dw[i][jl] + nw[i][jl]) / hw + ((hw - off) * dw[i][jr] - nw[i][jr]) / hw;
            }
            let r = (nu * d2 + ck * (pr - pl) / hw + mk * psi_u - params.b(k) * psi_w) / hw;
            norm2 += r * r;
        }
        sum += Normalization::Plain.mode_mass() * norm2;
        count += 1;
    }
    Ok((sum, count))
}
