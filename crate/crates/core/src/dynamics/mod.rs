//! Time integration of the slow–fast wave system
//!
//! ```text
//! du = v dt
//! dv = -(1/ν)[v - Δu - f(u)] dt + ν^{α-1} dW
//! ```
//!
//! its averaged first-order model `dū = [Δū + f(ū)] dt + ν^α dW`, the fast
//! equation with `u` frozen, and the rescalings between noise exponents.
//!
//! All fields are orthonormal sine coefficients; `f(u) = βu - κu³` with `κ`
//! the cubic coefficient (`1` for the standard model, `0` to disable).

mod propagator;

pub use propagator::{build_propagator, eigenvalues, exp_sa, Mat2, ModePropagator};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{NoiseModel, OuTransition, RngStream};
use crate::spectral::{Grid, Normalization, SineBasis, SpectralField};

/// Time-stepping scheme for the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact linear propagation and stochastic convolution per mode,
    /// exponential-Euler treatment of `f`.
    #[default]
    StiffExact,
    /// Explicit reference scheme; needs `dt ≤ ν/20`.
    EulerMaruyama,
}

/// Controls for the full and averaged models.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveParams {
    pub nu: f64,
    pub beta: f64,
    /// Coefficient κ of the cubic term in `f(u) = βu - κu³`.
    pub cubic: f64,
    /// Covariance spectrum and noise exponent α.
    pub noise: NoiseModel,
    pub dt: f64,
    pub horizon: f64,
    pub modes: usize,
    pub scheme: Scheme,
}

const EM_STABILITY: f64 = 20.0;

impl WaveParams {
    /// Standard model: `b_k = k^{-4}`, cubic on, stiff-exact stepping.
    pub fn new(nu: f64, alpha: f64, beta: f64, modes: usize, dt: f64, horizon: f64) -> Result<Self> {
        let p = Self {
            nu,
            beta,
            cubic: 1.0,
            noise: NoiseModel::default_spectrum(modes, alpha)?,
            dt,
            horizon,
            modes,
            scheme: Scheme::StiffExact,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn alpha(&self) -> f64 {
        self.noise.alpha()
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Result<Self> {
        self.scheme = scheme;
        self.validate()?;
        Ok(self)
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Result<Self> {
        self.noise = noise;
        self.validate()?;
        Ok(self)
    }

    pub fn with_cubic(mut self, cubic: f64) -> Result<Self> {
        self.cubic = cubic;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(invalid("nu", format!("must lie in (0, 1], got {}", self.nu)));
        }
        if self.modes == 0 {
            return Err(invalid("modes", "need at least one mode"));
        }
        if !self.beta.is_finite() {
            return Err(invalid("beta", "must be finite"));
        }
        if !self.cubic.is_finite() {
            return Err(invalid("cubic", "must be finite"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(invalid("horizon", format!("must be nonnegative, got {}", self.horizon)));
        }
        if self.horizon > 0.0 && self.horizon < self.dt * (1.0 - 1e-12) {
            return Err(invalid(
                "horizon",
                format!("T = {} is shorter than dt = {}", self.horizon, self.dt),
            ));
        }
        let n = (self.horizon / self.dt).round();
        if (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(self.dt) {
            return Err(invalid(
                "horizon",
                format!("T = {} is not a multiple of dt = {}", self.horizon, self.dt),
            ));
        }
        if self.scheme == Scheme::EulerMaruyama
            && self.dt > self.nu / EM_STABILITY * (1.0 + 1e-12)
        {
            return Err(invalid(
                "dt",
                format!(
                    "euler-maruyama needs dt <= nu/{EM_STABILITY} = {}, got {}",
                    self.nu / EM_STABILITY,
                    self.dt
                ),
            ));
        }
        Ok(())
    }

    /// Number of steps to reach the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn basis(&self) -> SineBasis {
        SineBasis::orthonormal(self.modes).expect("modes validated nonzero")
    }
}

/// Displacement and velocity of the full model.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub u: SpectralField,
    pub v: SpectralField,
}

impl WaveState {
    pub fn new(u: SpectralField, v: SpectralField) -> Result<Self> {
        if u.basis() != v.basis() {
            return Err(Error::BasisMismatch(format!(
                "u has {:?}, v has {:?}",
                u.basis(),
                v.basis()
            )));
        }
        if u.basis().normalization() != Normalization::Orthonormal {
            return Err(Error::BasisMismatch(
                "wave states use the orthonormal basis".into(),
            ));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(modes: usize) -> Result<Self> {
        let basis = SineBasis::orthonormal(modes)?;
        Ok(Self {
            u: SpectralField::zeros(basis),
            v: SpectralField::zeros(basis),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Recorded time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&S> {
        self.states.last()
    }
}

/// Reusable buffers for the nonlinear forcing.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    forcing: Vec<f64>,
    scratch: Vec<f64>,
}

fn check_band(field: &SpectralField, modes: usize, name: &'static str) -> Result<()> {
    if field.modes() != modes {
        return Err(Error::Sizing(format!(
            "{name} has {} modes, expected {modes}",
            field.modes()
        )));
    }
    if field.basis().normalization() != Normalization::Orthonormal {
        return Err(Error::BasisMismatch(format!(
            "{name} must use the orthonormal basis"
        )));
    }
    Ok(())
}

/// Drives `step` `params.steps()` times, calling `observe(t, state)` at
/// `t = 0`, every `record_every` steps and at the horizon.
fn drive<S>(
    params: &WaveParams,
    state: &mut S,
    record_every: usize,
    is_finite: impl Fn(&S) -> bool,
    mut step: impl FnMut(&mut S) -> Result<()>,
    mut observe: impl FnMut(f64, &S),
) -> Result<()> {
    if record_every == 0 {
        return Err(invalid("record_every", "must be at least 1"));
    }
    observe(0.0, state);
    let n = params.steps();
    for j in 1..=n {
        step(state)?;
        let t = j as f64 * params.dt;
        if !is_finite(state) {
            return Err(Error::BlowUp { time: t });
        }
        if j % record_every == 0 || j == n {
            observe(t, state);
        }
    }
    Ok(())
}

/// Precomputed stepping data for the full model.
#[derive(Debug, Clone)]
pub struct WaveIntegrator {
    params: WaveParams,
    grid: Grid,
    props: Vec<ModePropagator>,
    // euler-maruyama: per-mode noise amplitude g √dt
    em_noise: Vec<f64>,
}

impl WaveIntegrator {
    pub fn new(params: &WaveParams) -> Result<Self> {
        params.validate()?;
        let k = params.modes;
        let alpha = params.alpha();
        let mut props = Vec::new();
        let mut em_noise = Vec::new();
        match params.scheme {
            Scheme::StiffExact => {
                for m in 1..=k {
                    props.push(build_propagator(
                        SineBasis::eigenvalue(m),
                        params.nu,
                        alpha,
                        params.noise.b(m),
                        params.dt,
                    )?);
                }
            }
            Scheme::EulerMaruyama => {
                for m in 1..=k {
                    let g = params.nu.powf(alpha - 1.0) * params.noise.b(m).sqrt();
                    em_noise.push(g * params.dt.sqrt());
                }
            }
        }
        Ok(Self {
            params: params.clone(),
            grid: Grid::for_cubic(k),
            props,
            em_noise,
        })
    }

    pub fn params(&self) -> &WaveParams {
        &self.params
    }

    /// Per-mode propagators (empty for euler-maruyama).
    pub fn propagators(&self) -> &[ModePropagator] {
        &self.props
    }

    fn forcing(&self, u: &[f64], ws: &mut Workspace) {
        ws.forcing.resize(u.len(), 0.0);
        self.grid.reaction_into(
            u,
            Normalization::Orthonormal,
            self.params.beta,
            self.params.cubic,
            &mut ws.forcing,
            &mut ws.scratch,
        );
    }

    /// Advance raw coefficient vectors by one step. Stiff-exact draws two
    /// normals per mode (in mode order); euler-maruyama draws one.
    pub fn step_raw(&self, u: &mut [f64], v: &mut [f64], rng: &mut RngStream, ws: &mut Workspace) {
        self.forcing(u, ws);
        let inv_nu = 1.0 / self.params.nu;
        match self.params.scheme {
            Scheme::StiffExact => {
                for (i, p) in self.props.iter().enumerate() {
                    let z1 = rng.normal();
                    let z2 = rng.normal();
                    let (nu_, nv) = p.apply(u[i], v[i], ws.forcing[i] * inv_nu, z1, z2);
                    u[i] = nu_;
                    v[i] = nv;
                }
            }
            Scheme::EulerMaruyama => {
                let h = self.params.dt;
                for (i, amp) in self.em_noise.iter().enumerate() {
                    let lambda = ((i + 1) * (i + 1)) as f64;
                    let z = rng.normal();
                    let (u0, v0) = (u[i], v[i]);
                    u[i] = u0 + h * v0;
                    v[i] = v0 + h * inv_nu * (-v0 - lambda * u0 + ws.forcing[i]) + amp * z;
                }
            }
        }
    }

    pub fn step(&self, state: &WaveState, rng: &mut RngStream) -> Result<WaveState> {
        check_band(&state.u, self.params.modes, "u")?;
        check_band(&state.v, self.params.modes, "v")?;
        let mut u = state.u.coeffs().to_vec();
        let mut v = state.v.coeffs().to_vec();
        self.step_raw(&mut u, &mut v, rng, &mut Workspace::default());
        let basis = state.u.basis();
        let next = WaveState {
            u: SpectralField::from_raw(basis, u),
            v: SpectralField::from_raw(basis, v),
        };
        if !next.is_finite() {
            return Err(Error::BlowUp { time: self.params.dt });
        }
        Ok(next)
    }

    /// Run from `(u0, u1)` to the horizon, streaming recorded states as raw
    /// `(t, u, v)` coefficient slices.
    pub fn run(
        &self,
        u0: &SpectralField,
        u1: &SpectralField,
        rng: &mut RngStream,
        record_every: usize,
        mut observe: impl FnMut(f64, &[f64], &[f64]),
    ) -> Result<()> {
        check_band(u0, self.params.modes, "u0")?;
        check_band(u1, self.params.modes, "u1")?;
        let mut state = (u0.coeffs().to_vec(), u1.coeffs().to_vec());
        let mut ws = Workspace::default();
        drive(
            &self.params,
            &mut state,
            record_every,
            |(u, v)| u.iter().chain(v.iter()).all(|c| c.is_finite()),
            |(u, v)| {
                self.step_raw(u, v, rng, &mut ws);
                Ok(())
            },
            |t, (u, v)| observe(t, u, v),
        )
    }
}

/// One step of the full model.
pub fn step_wave(state: &WaveState, params: &WaveParams, rng: &mut RngStream) -> Result<WaveState> {
    WaveIntegrator::new(params)?.step(state, rng)
}

/// Full-model trajectory from `u(0) = u0`, `u_t(0) = u1`.
pub fn simulate_wave(
    params: &WaveParams,
    u0: &SpectralField,
    u1: &SpectralField,
    rng: &mut RngStream,
    record_every: usize,
) -> Result<Trajectory<WaveState>> {
    let integrator = WaveIntegrator::new(params)?;
    let basis = params.basis();
    let mut out = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
    };
    integrator.run(u0, u1, rng, record_every, |t, u, v| {
        out.times.push(t);
        out.states.push(WaveState {
            u: SpectralField::from_raw(basis, u.to_vec()),
            v: SpectralField::from_raw(basis, v.to_vec()),
        });
    })?;
    Ok(out)
}

/// Exponential-Euler stepping of the averaged model.
#[derive(Debug, Clone)]
pub struct AveragedIntegrator {
    params: WaveParams,
    grid: Grid,
    decay: Vec<f64>,
    weight: Vec<f64>,
    noise_sd: Vec<f64>,
}

impl AveragedIntegrator {
    pub fn new(params: &WaveParams) -> Result<Self> {
        params.validate()?;
        let h = params.dt;
        let scale = params.nu.powf(params.alpha());
        let mut decay = Vec::with_capacity(params.modes);
        let mut weight = Vec::with_capacity(params.modes);
        let mut noise_sd = Vec::with_capacity(params.modes);
        for m in 1..=params.modes {
            let lambda = SineBasis::eigenvalue(m);
            decay.push((-lambda * h).exp());
            weight.push(-(-lambda * h).exp_m1() / lambda);
            let var = params.noise.b(m) * -(-2.0 * lambda * h).exp_m1() / (2.0 * lambda);
            noise_sd.push(scale * var.sqrt());
        }
        Ok(Self {
            params: params.clone(),
            grid: Grid::for_cubic(params.modes),
            decay,
            weight,
            noise_sd,
        })
    }

    /// Advance raw coefficients by one step. Draws two normals per mode and
    /// uses the first, matching the stiff-exact draw order so that the same
    /// stream drives both models with shared displacement noise.
    pub fn step_raw(&self, u: &mut [f64], rng: &mut RngStream, ws: &mut Workspace) {
        ws.forcing.resize(u.len(), 0.0);
        self.grid.reaction_into(
            u,
            Normalization::Orthonormal,
            self.params.beta,
            self.params.cubic,
            &mut ws.forcing,
            &mut ws.scratch,
        );
        for (i, ui) in u.iter_mut().enumerate() {
            let z1 = rng.normal();
            let _ = rng.normal();
            *ui = self.decay[i] * *ui + self.weight[i] * ws.forcing[i] + self.noise_sd[i] * z1;
        }
    }

    pub fn run(
        &self,
        u0: &SpectralField,
        rng: &mut RngStream,
        record_every: usize,
        mut observe: impl FnMut(f64, &[f64]),
    ) -> Result<()> {
        check_band(u0, self.params.modes, "u0")?;
        let mut u = u0.coeffs().to_vec();
        let mut ws = Workspace::default();
        drive(
            &self.params,
            &mut u,
            record_every,
            |u| u.iter().all(|c| c.is_finite()),
            |u| {
                self.step_raw(u, rng, &mut ws);
                Ok(())
            },
            |t, u| observe(t, u),
        )
    }
}

/// One exponential-Euler step of the averaged model.
pub fn step_averaged(u: &SpectralField, params: &WaveParams, rng: &mut RngStream) -> Result<SpectralField> {
    check_band(u, params.modes, "u")?;
    let integ = AveragedIntegrator::new(params)?;
    let mut c = u.coeffs().to_vec();
    integ.step_raw(&mut c, rng, &mut Workspace::default());
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::BlowUp { time: params.dt });
    }
    Ok(SpectralField::from_raw(u.basis(), c))
}

pub fn simulate_averaged(
    params: &WaveParams,
    u0: &SpectralField,
    rng: &mut RngStream,
    record_every: usize,
) -> Result<Trajectory<SpectralField>> {
    let integ = AveragedIntegrator::new(params)?;
    let basis = params.basis();
    let mut out = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
    };
    integ.run(u0, rng, record_every, |t, u| {
        out.times.push(t);
        out.states.push(SpectralField::from_raw(basis, u.to_vec()));
    })?;
    Ok(out)
}

/// Mean `Δu + f(u)` of the fast equation with `u` frozen.
pub fn fast_mean(u_frozen: &SpectralField, params: &WaveParams) -> Result<SpectralField> {
    check_band(u_frozen, params.modes, "u_frozen")?;
    let grid = Grid::for_cubic(params.modes);
    let mut f = vec![0.0; params.modes];
    let mut scratch = Vec::new();
    grid.reaction_into(
        u_frozen.coeffs(),
        Normalization::Orthonormal,
        params.beta,
        params.cubic,
        &mut f,
        &mut scratch,
    );
    for (i, fi) in f.iter_mut().enumerate() {
        *fi -= SineBasis::eigenvalue(i + 1) * u_frozen.coeffs()[i];
    }
    Ok(SpectralField::from_raw(u_frozen.basis(), f))
}

/// Fast equation `dv = -(1/ν)[v - Δu - f(u)] dt + ν^{α-1} dW` with `u`
/// frozen, sampled exactly per mode every `params.dt` up to
/// `params.horizon`. Starts from `v0`, or from zero if `None`. One normal
/// per mode per step.
pub fn simulate_fast_frozen(
    u_frozen: &SpectralField,
    v0: Option<&SpectralField>,
    params: &WaveParams,
    rng: &mut RngStream,
) -> Result<Trajectory<SpectralField>> {
    params.validate()?;
    let mean = fast_mean(u_frozen, params)?;
    let basis = params.basis();
    let mut v = match v0 {
        Some(v0) => {
            check_band(v0, params.modes, "v0")?;
            v0.coeffs().to_vec()
        }
        None => vec![0.0; params.modes],
    };
    let tr = OuTransition::new(1.0 / params.nu, params.dt)?;
    let g0 = params.nu.powf(params.alpha() - 1.0);
    let diffusion: Vec<f64> = (1..=params.modes).map(|m| g0 * params.noise.b(m).sqrt()).collect();
    let n = params.steps();
    let mut out = Trajectory {
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
    };
    out.times.push(0.0);
    out.states.push(SpectralField::from_raw(basis, v.clone()));
    for j in 1..=n {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = tr.apply(*vi, mean.coeffs()[i], diffusion[i], rng.normal());
        }
        out.times.push(j as f64 * params.dt);
        out.states.push(SpectralField::from_raw(basis, v.clone()));
    }
    Ok(out)
}

/// Direction of the noise-exponent rescaling `ũ = ν^{1/2-α} u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// `ν^{1/2-α}`.
pub fn scale_factor(nu: f64, alpha: f64) -> f64 {
    nu.powf(0.5 - alpha)
}

/// Multiply `(u, v)` by `ν^{1/2-α}` (forward) or its inverse (backward).
pub fn scale_transform(state: &WaveState, nu: f64, alpha: f64, direction: Direction) -> Result<WaveState> {
    if !(nu > 0.0) {
        return Err(invalid("nu", format!("must be positive, got {nu}")));
    }
    let s = scale_factor(nu, alpha);
    let s = match direction {
        Direction::Forward => s,
        Direction::Backward => 1.0 / s,
    };
    Ok(WaveState {
        u: state.u.scale(s),
        v: state.v.scale(s),
    })
}

/// Parameters of the rescaled system solved by `ν^{1/2-α} u`: noise
/// exponent 1/2 and cubic coefficient `κ / ν^{1-2α}`.
pub fn scaled_params(params: &WaveParams) -> Result<WaveParams> {
    let s = scale_factor(params.nu, params.alpha());
    let mut p = params.clone();
    p.noise = params.noise.with_alpha(0.5)?;
    p.cubic = params.cubic / (s * s);
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{derive_stream, ou_exact_step, Purpose};
    use approx::assert_relative_eq;

    fn linear_params(nu: f64, alpha: f64, modes: usize, dt: f64, horizon: f64) -> WaveParams {
        WaveParams::new(nu, alpha, 0.0, modes, dt, horizon)
            .unwrap()
            .with_cubic(0.0)
            .unwrap()
    }

    #[test]
    fn horizon_zero_returns_initial_state() {
        let p = WaveParams::new(0.01, 0.5, 1.0, 4, 0.01, 0.0).unwrap();
        let basis = p.basis();
        let u0 = SpectralField::mode(basis, 1, 0.3).unwrap();
        let u1 = SpectralField::zeros(basis);
        let mut rng = derive_stream(1, 0, Purpose::Wiener);
        let tr = simulate_wave(&p, &u0, &u1, &mut rng, 1).unwrap();
        assert_eq!(tr.times, vec![0.0]);
        assert_eq!(tr.states[0].u, u0);
    }

    #[test]
    fn equilibrium_is_preserved_without_noise() {
        let p = WaveParams::new(0.02, 0.5, 1.0, 6, 0.005, 0.5)
            .unwrap()
            .with_noise(NoiseModel::silent(6, 0.5).unwrap())
            .unwrap();
        let basis = p.basis();
        let z = SpectralField::zeros(basis);
        let mut rng = derive_stream(3, 0, Purpose::Wiener);
        let tr = simulate_wave(&p, &z, &z, &mut rng, 10).unwrap();
        assert!(tr.states.iter().all(|s| s.u.coeffs().iter().chain(s.v.coeffs()).all(|c| *c == 0.0)));
        assert_eq!(*tr.times.last().unwrap(), 0.5);
    }

    #[test]
    fn deterministic_linear_mode_matches_exact_oscillation() {
        let nu = 0.04;
        let p = linear_params(nu, 0.5, 3, 0.01, 0.4)
            .with_noise(NoiseModel::silent(3, 0.5).unwrap())
            .unwrap();
        let basis = p.basis();
        let u0 = SpectralField::new(basis, vec![1.0, 0.5, -0.2]).unwrap();
        let u1 = SpectralField::new(basis, vec![0.0, 1.0, 0.3]).unwrap();
        let mut rng = derive_stream(0, 0, Purpose::Wiener);
        let tr = simulate_wave(&p, &u0, &u1, &mut rng, 40).unwrap();
        let end = tr.last().unwrap();
        for k in 1..=3 {
            let e = exp_sa((k * k) as f64, nu, 0.4);
            let (a, b) = (u0.coeff(k), u1.coeff(k));
            assert_relative_eq!(end.u.coeff(k), e[0][0] * a + e[0][1] * b, epsilon = 1e-12);
            assert_relative_eq!(end.v.coeff(k), e[1][0] * a + e[1][1] * b, epsilon = 1e-11);
        }
        // one step of h equals two of h/2
        let half = linear_params(nu, 0.5, 3, 0.005, 0.4)
            .with_noise(NoiseModel::silent(3, 0.5).unwrap())
            .unwrap();
        let tr2 = simulate_wave(&half, &u0, &u1, &mut rng, 80).unwrap();
        for k in 1..=3 {
            assert_relative_eq!(end.u.coeff(k), tr2.last().unwrap().u.coeff(k), epsilon = 1e-12);
        }
    }

    #[test]
    fn velocity_with_frozen_zero_u_reduces_to_ou() {
        // with u ≡ 0 and β = 0, the v-equation is OU with rate 1/ν; compare
        // the conditional law of one stiff-exact step with ou_exact_step
        let nu = 0.01;
        let h = 0.002;
        let p = linear_params(nu, 0.5, 1, h, h);
        let integ = WaveIntegrator::new(&p).unwrap();
        let prop = &integ.propagators()[0];
        let n = 40_000;
        let mut a = derive_stream(5, 0, Purpose::Wiener);
        let mut b = derive_stream(5, 1, Purpose::Wiener);
        let v0 = 0.8;
        let (mut m1, mut m2, mut o1, mut o2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let mut u = [0.0];
            let mut v = [v0];
            integ.step_raw(&mut u, &mut v, &mut a, &mut Workspace::default());
            m1 += v[0];
            m2 += v[0] * v[0];
            let o = ou_exact_step(v0, 1.0 / nu, 0.0, h, 1.0 / nu.sqrt(), &mut b);
            o1 += o;
            o2 += o * o;
        }
        let nf = n as f64;
        let (mv, vv) = (m1 / nf, m2 / nf - (m1 / nf).powi(2));
        let (mo, vo) = (o1 / nf, o2 / nf - (o1 / nf).powi(2));
        // u is not frozen in the full step, so compare against the exact
        // v-marginal of the propagator too
        let e22 = prop.transition[1][1];
        assert_relative_eq!(mv, e22 * v0, epsilon = 4.0 * (vv / nf).sqrt());
        assert_relative_eq!(mo, (-h / nu).exp() * v0, epsilon = 4.0 * (vo / nf).sqrt());
        // λh ≪ 1: the u-feedback on v is second order in h
        assert_relative_eq!(vv, vo, max_relative = 0.05);
    }

    #[test]
    fn averaged_pure_heat_decay() {
        let p = linear_params(0.05, 0.5, 4, 0.01, 0.3)
            .with_noise(NoiseModel::silent(4, 0.5).unwrap())
            .unwrap();
        let basis = p.basis();
        let u0 = SpectralField::new(basis, vec![1.0, -1.0, 0.5, 0.25]).unwrap();
        let mut rng = derive_stream(0, 0, Purpose::Wiener);
        let tr = simulate_averaged(&p, &u0, &mut rng, 5).unwrap();
        let end = tr.last().unwrap();
        for k in 1..=4 {
            let lambda = (k * k) as f64;
            assert_relative_eq!(end.coeff(k), u0.coeff(k) * (-lambda * 0.3).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn averaged_stationary_variance() {
        let nu = 0.04;
        let p = linear_params(nu, 0.5, 2, 0.05, 0.05);
        let integ = AveragedIntegrator::new(&p).unwrap();
        let mut rng = derive_stream(9, 0, Purpose::Wiener);
        let mut u = vec![0.0, 0.0];
        let mut ws = Workspace::default();
        for _ in 0..200 {
            integ.step_raw(&mut u, &mut rng, &mut ws);
        }
        let n = 200_000;
        let mut s2 = [0.0; 2];
        for _ in 0..n {
            integ.step_raw(&mut u, &mut rng, &mut ws);
            s2[0] += u[0] * u[0];
            s2[1] += u[1] * u[1];
        }
        for k in 1..=2 {
            let lambda = (k * k) as f64;
            let b = p.noise.b(k);
            let target = nu * b / (2.0 * lambda);
            assert_relative_eq!(s2[k - 1] / n as f64, target, max_relative = 0.03);
        }
    }

    #[test]
    fn alpha_zero_noise_at_full_strength() {
        let p0 = linear_params(0.04, 0.0, 1, 0.01, 0.01);
        let ph = linear_params(0.04, 0.5, 1, 0.01, 0.01);
        let a0 = AveragedIntegrator::new(&p0).unwrap();
        let ah = AveragedIntegrator::new(&ph).unwrap();
        assert_relative_eq!(a0.noise_sd[0], ah.noise_sd[0] / 0.2, max_relative = 1e-12);
    }

    #[test]
    fn fast_frozen_deterministic_relaxation() {
        let nu = 0.02;
        let p = WaveParams::new(nu, 0.5, 1.0, 3, 0.001, 0.1)
            .unwrap()
            .with_noise(NoiseModel::silent(3, 0.5).unwrap())
            .unwrap();
        let basis = p.basis();
        let u = SpectralField::new(basis, vec![0.3, 0.0, 0.1]).unwrap();
        let mean = fast_mean(&u, &p).unwrap();
        let v0 = SpectralField::new(basis, vec![1.0, 2.0, -1.0]).unwrap();
        let mut rng = derive_stream(0, 0, Purpose::Fast);
        let tr = simulate_fast_frozen(&u, Some(&v0), &p, &mut rng).unwrap();
        for (t, v) in tr.times.iter().zip(&tr.states) {
            for k in 1..=3 {
                let m = mean.coeff(k);
                let want = m + (v0.coeff(k) - m) * (-t / nu).exp();
                assert_relative_eq!(v.coeff(k), want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn scale_transform_examples() {
        let basis = SineBasis::orthonormal(3).unwrap();
        let s = WaveState::new(
            SpectralField::new(basis, vec![1.0, 2.0, 3.0]).unwrap(),
            SpectralField::new(basis, vec![-1.0, 0.5, 0.0]).unwrap(),
        )
        .unwrap();
        let id = scale_transform(&s, 0.3, 0.5, Direction::Forward).unwrap();
        assert_eq!(id, s);
        let f = scale_transform(&s, 0.04, 0.0, Direction::Forward).unwrap();
        assert_relative_eq!(f.u.coeff(2), 0.4, max_relative = 1e-14);
        let back = scale_transform(&f, 0.04, 0.0, Direction::Backward).unwrap();
        for k in 1..=3 {
            assert_relative_eq!(back.u.coeff(k), s.u.coeff(k), max_relative = 1e-14);
            assert_relative_eq!(back.v.coeff(k), s.v.coeff(k), max_relative = 1e-14);
        }
    }

    #[test]
    fn simulate_then_scale_equals_scaled_simulation() {
        let nu = 0.04;
        let p = linear_params(nu, 0.0, 5, 0.01, 0.5);
        let q = scaled_params(&p).unwrap();
        assert_eq!(q.alpha(), 0.5);
        let basis = p.basis();
        let u0 = SpectralField::new(basis, vec![0.4, -0.2, 0.1, 0.0, 0.05]).unwrap();
        let u1 = SpectralField::new(basis, vec![0.0, 1.0, 0.0, -0.3, 0.0]).unwrap();
        let s0 = WaveState::new(u0.clone(), u1.clone()).unwrap();
        let s0t = scale_transform(&s0, nu, 0.0, Direction::Forward).unwrap();
        let mut r1 = derive_stream(11, 3, Purpose::Wiener);
        let mut r2 = derive_stream(11, 3, Purpose::Wiener);
        let a = simulate_wave(&p, &u0, &u1, &mut r1, 10).unwrap();
        let b = simulate_wave(&q, &s0t.u, &s0t.v, &mut r2, 10).unwrap();
        let mut worst: f64 = 0.0;
        for (x, y) in a.states.iter().zip(&b.states) {
            let xs = scale_transform(x, nu, 0.0, Direction::Forward).unwrap();
            for k in 1..=5 {
                worst = worst.max((xs.u.coeff(k) - y.u.coeff(k)).abs());
                worst = worst.max((xs.v.coeff(k) - y.v.coeff(k)).abs());
            }
        }
        assert!(worst < 1e-10, "max deviation {worst}");
    }

    #[test]
    fn euler_maruyama_guard() {
        let p = WaveParams::new(0.02, 0.5, 1.0, 4, 0.002, 0.1).unwrap();
        assert!(p.clone().with_scheme(Scheme::EulerMaruyama).is_err());
        let mut q = p;
        q.dt = 0.001;
        assert!(q.with_scheme(Scheme::EulerMaruyama).is_ok());
    }

    #[test]
    fn blow_up_reports_time() {
        // strongly negative cubic coefficient makes the reaction explode
        let p = WaveParams::new(0.02, 0.5, 0.0, 2, 0.01, 5.0)
            .unwrap()
            .with_cubic(-50.0)
            .unwrap();
        let basis = p.basis();
        let u0 = SpectralField::mode(basis, 1, 3.0).unwrap();
        let mut rng = derive_stream(0, 0, Purpose::Wiener);
        match simulate_wave(&p, &u0, &SpectralField::zeros(basis), &mut rng, 1) {
            Err(Error::BlowUp { time }) => assert!(time > 0.0 && time <= 5.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn rejects_mismatched_initial_data() {
        let p = WaveParams::new(0.02, 0.5, 1.0, 4, 0.01, 0.1).unwrap();
        let wrong = SpectralField::zeros(SineBasis::orthonormal(3).unwrap());
        let ok = SpectralField::zeros(p.basis());
        let mut rng = derive_stream(0, 0, Purpose::Wiener);
        assert!(matches!(simulate_wave(&p, &wrong, &ok, &mut rng, 1), Err(Error::Sizing(_))));
        let plain = SpectralField::zeros(SineBasis::plain(4).unwrap());
        assert!(matches!(
            simulate_wave(&p, &plain, &ok, &mut rng, 1),
            Err(Error::BasisMismatch(_))
        ));
    }
}
