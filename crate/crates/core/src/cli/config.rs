//! Run configuration: a TOML file with top-level run controls and one table
//! per model or experiment. Every key is optional; unknown keys are errors.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Coupling, MartingaleForm, ModelKind, TestFunctional};
use crate::dynamics::{Scheme, WaveParams};
use crate::error::{invalid, Error, Result};
use crate::noise::NoiseModel;
use crate::spectral::{SineBasis, SpectralField};
use crate::ssm::{ResidualRun, SsmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    #[default]
    Wave,
    Averaged,
    FastFrozen,
    Ssm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    pub seed: u64,
    pub trajectories: usize,
    pub record_every: usize,
    /// Per-trajectory CSVs are written for the first this many trajectories.
    pub write_trajectories: usize,
    pub wave: WaveSection,
    pub ssm: SsmSection,
    pub weak_error: WeakErrorSection,
    pub fast_ou: FastOuSection,
    pub martingale: MartingaleSection,
    pub ssm_residual: SsmResidualSection,
    pub ssm_compare: SsmCompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: Model::Wave,
            seed: 0,
            trajectories: 16,
            record_every: 10,
            write_trajectories: 4,
            wave: WaveSection::default(),
            ssm: SsmSection::default(),
            weak_error: WeakErrorSection::default(),
            fast_ou: FastOuSection::default(),
            martingale: MartingaleSection::default(),
            ssm_residual: SsmResidualSection::default(),
            ssm_compare: SsmCompareSection::default(),
        }
    }
}

/// Damped wave model. Noise is `b_k = k^{-noise_exponent}` unless
/// `noise_b` lists the eigenvalues explicitly. Initial data are orthonormal
/// coefficients, zero-padded to `modes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveSection {
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub cubic: f64,
    pub modes: usize,
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub noise_exponent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_b: Option<Vec<f64>>,
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
}

impl Default for WaveSection {
    fn default() -> Self {
        Self {
            nu: 0.01,
            alpha: 0.5,
            beta: 1.0,
            cubic: 1.0,
            modes: 8,
            dt: 1e-3,
            horizon: 1.0,
            scheme: Scheme::StiffExact,
            noise_exponent: 4.0,
            noise_b: None,
            u0: vec![1.0],
            u1: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmSection {
    pub nu: f64,
    pub gamma: f64,
    pub beta_prime: f64,
    pub sigma: f64,
    /// Per-mode amplitudes; `k^{-2}` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amps: Option<Vec<f64>>,
    pub modes: usize,
    pub radius: f64,
    pub cubic: bool,
    pub a0: f64,
    pub h: f64,
    pub horizon: f64,
}

impl Default for SsmSection {
    fn default() -> Self {
        Self {
            nu: 0.01,
            gamma: 1.0,
            beta_prime: 0.0,
            sigma: 0.0,
            amps: None,
            modes: 8,
            radius: crate::ssm::DEFAULT_RADIUS,
            cubic: true,
            a0: 0.1,
            h: 1e-3,
            horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakErrorSection {
    pub nu_grid: Vec<f64>,
    pub trajectories: usize,
    pub coupling: Coupling,
    pub reference: ReferenceModel,
    /// `mode:k`, `mode-squared:k` or `norm-squared`.
    pub functionals: Vec<String>,
    /// Fail the run when a fitted slope is below this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_slope: Option<f64>,
}

impl Default for WeakErrorSection {
    fn default() -> Self {
        Self {
            nu_grid: vec![0.04, 0.02, 0.01, 0.005],
            trajectories: 1024,
            coupling: Coupling::CommonNoise,
            reference: ReferenceModel::Full,
            functionals: vec!["mode:1".into()],
            min_slope: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceModel {
    #[default]
    Full,
    Averaged,
}

impl From<ReferenceModel> for ModelKind {
    fn from(r: ReferenceModel) -> Self {
        match r {
            ReferenceModel::Full => ModelKind::Full,
            ReferenceModel::Averaged => ModelKind::Averaged,
        }
    }
}

/// Frozen-slow fast-equation statistics. Times are in units of `ν`; the
/// recording step is `wave.dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FastOuSection {
    pub frozen_u: Vec<f64>,
    pub replicas: usize,
    pub burn_in_nu: f64,
    pub span_nu: f64,
    pub mean_se: f64,
    pub variance_tolerance: f64,
}

impl Default for FastOuSection {
    fn default() -> Self {
        Self {
            frozen_u: Vec::new(),
            replicas: 64,
            burn_in_nu: 50.0,
            span_nu: 500.0,
            mean_se: 3.0,
            variance_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MartingaleSection {
    /// Test function `φ = e_mode`.
    pub mode: usize,
    pub window: usize,
    pub form: FormChoice,
    pub slope_tolerance: f64,
    pub min_r_squared: f64,
}

impl Default for MartingaleSection {
    fn default() -> Self {
        Self {
            mode: 1,
            window: 1,
            form: FormChoice::VelocityCorrected,
            slope_tolerance: 0.1,
            min_r_squared: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FormChoice {
    Averaging,
    #[default]
    VelocityCorrected,
}

impl From<FormChoice> for MartingaleForm {
    fn from(f: FormChoice) -> Self {
        match f {
            FormChoice::Averaging => MartingaleForm::Averaging,
            FormChoice::VelocityCorrected => MartingaleForm::VelocityCorrected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    #[default]
    Deterministic,
    LinearNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmResidualSection {
    pub mode: ResidualMode,
    pub amplitudes: Vec<f64>,
    pub grid_points: usize,
    pub expected_slope: f64,
    pub slope_tolerance: f64,
    pub nus: Vec<f64>,
    pub half_width: f64,
    pub substeps: usize,
    pub horizon: f64,
    pub paths: usize,
    pub min_slope: f64,
}

impl Default for SsmResidualSection {
    fn default() -> Self {
        Self {
            mode: ResidualMode::Deterministic,
            amplitudes: vec![0.2, 0.1, 0.05],
            grid_points: 2001,
            expected_slope: 5.0,
            slope_tolerance: 0.3,
            nus: vec![0.02, 0.01, 0.005],
            half_width: 0.25,
            substeps: 25,
            horizon: 10.0,
            paths: 64,
            min_slope: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmCompareSection {
    pub samples: usize,
}

impl Default for SsmCompareSection {
    fn default() -> Self {
        Self { samples: 10_000 }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Configuration(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Checks everything that does not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 {
            return Err(invalid("trajectories", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be at least 1"));
        }
        self.wave_params()?;
        self.initial_data()?;
        self.ssm_params()?;
        Ok(())
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        let w = &self.wave;
        match &w.noise_b {
            Some(b) => {
                if b.len() > w.modes {
                    return Err(invalid("wave.noise_b", "more entries than modes"));
                }
                let mut b = b.clone();
                b.resize(w.modes, 0.0);
                NoiseModel::custom(b, w.alpha)
            }
            None => NoiseModel::power_law(w.modes, w.noise_exponent, w.alpha),
        }
    }

    pub fn wave_params(&self) -> Result<WaveParams> {
        let w = &self.wave;
        WaveParams::new(w.nu, w.alpha, w.beta, w.modes, w.dt, w.horizon)?
            .with_noise(self.noise()?)?
            .with_cubic(w.cubic)?
            .with_scheme(w.scheme)
    }

    fn padded(&self, field: &'static str, c: &[f64]) -> Result<SpectralField> {
        let k = self.wave.modes;
        if c.len() > k {
            return Err(invalid(field, format!("{} coefficients for {k} modes", c.len())));
        }
        let mut v = c.to_vec();
        v.resize(k, 0.0);
        SpectralField::new(SineBasis::orthonormal(k)?, v)
    }

    pub fn initial_data(&self) -> Result<(SpectralField, SpectralField)> {
        Ok((self.padded("wave.u0", &self.wave.u0)?, self.padded("wave.u1", &self.wave.u1)?))
    }

    pub fn frozen_u(&self) -> Result<SpectralField> {
        self.padded("fast_ou.frozen_u", &self.fast_ou.frozen_u)
    }

    pub fn ssm_params(&self) -> Result<SsmParams> {
        let s = &self.ssm;
        let mut p = SsmParams::new(s.nu, s.gamma, s.beta_prime, s.sigma, s.modes)?;
        if let Some(a) = &s.amps {
            p.amps = a.clone();
        }
        p.radius = s.radius;
        p.cubic = s.cubic;
        p.validate()?;
        Ok(p)
    }

    pub fn functionals(&self) -> Result<Vec<TestFunctional>> {
        let k = self.wave.modes;
        self.weak_error
            .functionals
            .iter()
            .map(|f| parse_functional(f, k))
            .collect()
    }

    pub fn residual_run(&self, threads: Option<usize>) -> ResidualRun {
        let r = &self.ssm_residual;
        match r.mode {
            ResidualMode::Deterministic => ResidualRun::Deterministic {
                amplitudes: r.amplitudes.clone(),
                grid_points: r.grid_points,
            },
            ResidualMode::LinearNoise => ResidualRun::LinearNoise {
                nus: r.nus.clone(),
                half_width: r.half_width,
                substeps: r.substeps,
                horizon: r.horizon,
                paths: r.paths,
                seed: self.seed,
                threads,
            },
        }
    }
}

fn parse_functional(s: &str, modes: usize) -> Result<TestFunctional> {
    let field = "weak_error.functionals";
    let mode = |k: &str| -> Result<usize> {
        k.parse()
            .map_err(|_| invalid(field, format!("bad mode index in {s:?}")))
    };
    match s.split_once(':') {
        Some(("mode", k)) => TestFunctional::projection_on_mode(modes, mode(k)?),
        Some(("mode-squared", k)) => match TestFunctional::projection_on_mode(modes, mode(k)?)? {
            TestFunctional::Projection(phi) => Ok(TestFunctional::SquaredProjection(phi)),
            _ => unreachable!("projection_on_mode returns a projection"),
        },
        None if s == "norm-squared" => Ok(TestFunctional::SquaredNorm),
        _ => Err(invalid(
            field,
            format!("unknown functional {s:?}; use mode:k, mode-squared:k or norm-squared"),
        )),
    }
}
