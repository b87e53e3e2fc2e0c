//! Statistical checks: the martingale of the slow variable and its realized
//! quadratic variation, fast stationary statistics, weak-error tables with
//! order fits, and two-sample Kolmogorov–Smirnov distances.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dynamics::{AveragedIntegrator, Trajectory, WaveIntegrator, WaveParams, WaveState};
use crate::ensemble::{collect_outcomes, parallel_map};
use crate::error::{invalid, Error, Result};
use crate::noise::{derive_stream, Purpose};
use crate::spectral::{dot, Grid, Normalization, SineBasis, SpectralField};

/// Scalar functional of the displacement `u`.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunctional {
    /// `⟨u, φ⟩`.
    Projection(SpectralField),
    /// `⟨u, φ⟩²`.
    SquaredProjection(SpectralField),
    /// `‖u‖₀²`.
    SquaredNorm,
}

impl TestFunctional {
    pub fn projection_on_mode(modes: usize, k: usize) -> Result<Self> {
        Ok(Self::Projection(SpectralField::mode(
            SineBasis::orthonormal(modes)?,
            k,
            1.0,
        )?))
    }

    /// Evaluate on orthonormal coefficients.
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            Self::Projection(phi) => dot(phi.coeffs(), u),
            Self::SquaredProjection(phi) => dot(phi.coeffs(), u).powi(2),
            Self::SquaredNorm => dot(u, u),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Projection(phi) => format!("<u,phi{}>", describe(phi)),
            Self::SquaredProjection(phi) => format!("<u,phi{}>^2", describe(phi)),
            Self::SquaredNorm => "|u|^2".into(),
        }
    }

    fn check(&self, modes: usize) -> Result<()> {
        match self {
            Self::Projection(phi) | Self::SquaredProjection(phi) => {
                if phi.modes() != modes || phi.basis().normalization() != Normalization::Orthonormal {
                    return Err(Error::BasisMismatch(format!(
                        "test function must be orthonormal with {modes} modes"
                    )));
                }
                Ok(())
            }
            Self::SquaredNorm => Ok(()),
        }
    }
}

fn describe(phi: &SpectralField) -> String {
    let nz: Vec<usize> = (1..=phi.modes()).filter(|&k| phi.coeff(k) != 0.0).collect();
    if nz.len() == 1 && phi.coeff(nz[0]) == 1.0 {
        format!("=e{}", nz[0])
    } else {
        String::new()
    }
}

/// Monte Carlo summary of one scalar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub count: usize,
    pub aborts: usize,
}

impl EnsembleSummary {
    /// Summary of `samples` (unbiased variance) with `aborts` failed runs.
    pub fn from_samples(samples: &[f64], aborts: usize) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                variance: f64::NAN,
                std_error: f64::NAN,
                count: 0,
                aborts,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            variance,
            std_error: (variance / n as f64).sqrt(),
            count: n,
            aborts,
        }
    }
}

/// Which centring of the slow variable to use for the martingale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MartingaleForm {
    /// `ν^{-α}{⟨u(t) - u₀, φ⟩ + ∫₀^t [⟨∇u, ∇φ⟩ - ⟨f(u), φ⟩] ds}`: the
    /// averaging functional. It carries an extra `-ν^{1-α}⟨v(t) - v(0), φ⟩`,
    /// so its quadratic variation matches `t⟨Qφ,φ⟩` only on windows `≫ ν`.
    Averaging,
    /// The averaging functional plus `ν^{1-α}⟨v(t) - v(0), φ⟩`: the exact
    /// martingale `⟨W(t), φ⟩`.
    #[default]
    VelocityCorrected,
}

const MIN_MARTINGALE_SAMPLES: usize = 10;

/// The martingale `M_t` along a recorded trajectory, normalized by
/// `ν^{-α}`; the time integral uses the trapezoid rule on the recording grid.
pub fn martingale_process(
    trajectory: &Trajectory<WaveState>,
    phi: &SpectralField,
    params: &WaveParams,
    form: MartingaleForm,
) -> Result<Vec<f64>> {
    let n = trajectory.len();
    if n < MIN_MARTINGALE_SAMPLES {
        return Err(Error::Resolution(format!(
            "martingale needs at least {MIN_MARTINGALE_SAMPLES} samples, got {n}"
        )));
    }
    if phi.modes() != params.modes || phi.basis().normalization() != Normalization::Orthonormal {
        return Err(Error::BasisMismatch(
            "test function must match the trajectory basis".into(),
        ));
    }
    let grid = Grid::for_cubic(params.modes);
    let mut f = vec![0.0; params.modes];
    let mut scratch = Vec::new();
    let phi_c = phi.coeffs();
    let grad_phi: Vec<f64> = phi_c
        .iter()
        .enumerate()
        .map(|(i, p)| SineBasis::eigenvalue(i + 1) * p)
        .collect();
    let mut integrand = |u: &[f64]| {
        grid.reaction_into(
            u,
            Normalization::Orthonormal,
            params.beta,
            params.cubic,
            &mut f,
            &mut scratch,
        );
        dot(u, &grad_phi) - dot(&f, phi_c)
    };
    let s0 = &trajectory.states[0];
    let u0 = dot(s0.u.coeffs(), phi_c);
    let v0 = dot(s0.v.coeffs(), phi_c);
    let scale = params.nu.powf(-params.alpha());
    let mut out = Vec::with_capacity(n);
    let mut integral = 0.0;
    let mut prev = integrand(s0.u.coeffs());
    out.push(0.0);
    for j in 1..n {
        let s = &trajectory.states[j];
        let g = integrand(s.u.coeffs());
        integral += 0.5 * (trajectory.times[j] - trajectory.times[j - 1]) * (prev + g);
        prev = g;
        let mut m = dot(s.u.coeffs(), phi_c) - u0 + integral;
        if form == MartingaleForm::VelocityCorrected {
            m += params.nu * (dot(s.v.coeffs(), phi_c) - v0);
        }
        out.push(scale * m);
    }
    Ok(out)
}

/// Realized quadratic variation and its linear fit against time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QvFit {
    /// Window end times.
    pub times: Vec<f64>,
    /// Squared increment over each window.
    pub increments: Vec<f64>,
    /// Cumulative realized QV at `times`.
    pub qv: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

const MIN_QV_SAMPLES: usize = 100;

/// Cumulative sums of squared increments over non-overlapping windows of
/// `window` samples, with a least-squares line through `(t, QV(t))`
/// including the origin sample.
pub fn realized_qv(series: &[f64], times: &[f64], window: usize) -> Result<QvFit> {
    realized_qv_ensemble(std::slice::from_ref(&series.to_vec()), times, window)
}

/// As [`realized_qv`], averaging the cumulative QV over several paths
/// sampled on the same grid.
pub fn realized_qv_ensemble(paths: &[Vec<f64>], times: &[f64], window: usize) -> Result<QvFit> {
    if paths.is_empty() {
        return Err(invalid("paths", "need at least one path"));
    }
    if window == 0 {
        return Err(invalid("window", "must be at least 1"));
    }
    let n = times.len();
    if n < MIN_QV_SAMPLES {
        return Err(Error::Resolution(format!(
            "realized QV needs at least {MIN_QV_SAMPLES} samples, got {n}"
        )));
    }
    if paths.iter().any(|p| p.len() != n) {
        return Err(Error::Sizing("paths and times differ in length".into()));
    }
    let ends: Vec<usize> = (1..)
        .map(|i| i * window)
        .take_while(|&j| j < n)
        .collect();
    if ends.len() < 2 {
        return Err(Error::Resolution(format!(
            "window {window} leaves fewer than 2 increments"
        )));
    }
    let mut increments = vec![0.0; ends.len()];
    for p in paths {
        let mut start = 0;
        for (inc, &end) in increments.iter_mut().zip(&ends) {
            *inc += (p[end] - p[start]).powi(2);
            start = end;
        }
    }
    let np = paths.len() as f64;
    increments.iter_mut().for_each(|x| *x /= np);
    let mut t = vec![times[0]];
    let mut qv = vec![0.0];
    let mut acc = 0.0;
    for (inc, &end) in increments.iter().zip(&ends) {
        acc += inc;
        t.push(times[end]);
        qv.push(acc);
    }
    let (slope, intercept, r_squared) = least_squares(&t, &qv);
    Ok(QvFit {
        times: t[1..].to_vec(),
        increments,
        qv: qv[1..].to_vec(),
        slope,
        intercept,
        r_squared,
    })
}

/// `(slope, intercept, R²)`; R² is 1 for an exactly constant response.
fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    (slope, intercept, r2)
}

/// Per-mode stationary statistics of a fast trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeStats {
    pub mode: usize,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean after the effective-sample-size correction.
    pub mean_std_error: f64,
    /// Standard error of the variance estimate.
    pub variance_std_error: f64,
    /// Effective sample size for the mean.
    pub ess: f64,
}

/// Time-averaged per-mode statistics after discarding `burn_in`, pooled
/// over independent replicas. Standard errors assume OU autocorrelation
/// `exp(-Δt/ν)` with the known relaxation time `ν`.
pub fn stationary_stats(
    replicas: &[Trajectory<SpectralField>],
    burn_in: f64,
    nu: f64,
) -> Result<Vec<ModeStats>> {
    if !(nu > 0.0) {
        return Err(invalid("nu", format!("must be positive, got {nu}")));
    }
    if !(burn_in >= 10.0 * nu * (1.0 - 1e-12)) {
        return Err(invalid(
            "burn_in",
            format!("must be at least 10 nu = {}, got {burn_in}", 10.0 * nu),
        ));
    }
    let first = replicas
        .first()
        .ok_or_else(|| invalid("replicas", "need at least one trajectory"))?;
    let modes = first
        .states
        .first()
        .map(|s| s.modes())
        .ok_or_else(|| Error::Resolution("empty trajectory".into()))?;
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); modes];
    let mut dt = f64::NAN;
    for r in replicas {
        if r.times.len() >= 2 {
            dt = r.times[1] - r.times[0];
        }
        for (t, s) in r.times.iter().zip(&r.states) {
            if *t < burn_in {
                continue;
            }
            if s.modes() != modes {
                return Err(Error::Sizing("replicas differ in mode count".into()));
            }
            for (k, c) in s.coeffs().iter().enumerate() {
                samples[k].push(*c);
            }
        }
    }
    let n = samples[0].len();
    if n < 10 * replicas.len() || !dt.is_finite() {
        return Err(Error::Resolution(format!(
            "only {n} samples remain after burn-in {burn_in}"
        )));
    }
    let rho = (-dt / nu).exp();
    let ess_mean = n as f64 * (1.0 - rho) / (1.0 + rho);
    let rho2 = rho * rho;
    let ess_var = n as f64 * (1.0 - rho2) / (1.0 + rho2);
    Ok(samples
        .iter()
        .enumerate()
        .map(|(k, xs)| {
            let s = EnsembleSummary::from_samples(xs, 0);
            ModeStats {
                mode: k + 1,
                mean: s.mean,
                variance: s.variance,
                mean_std_error: (s.variance / ess_mean).sqrt(),
                variance_std_error: s.variance * (2.0 / ess_var).sqrt(),
                ess: ess_mean,
            }
        })
        .collect())
}

/// How the two models in a weak-error comparison draw their noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// Both models read the same Wiener stream.
    #[default]
    CommonNoise,
    Independent,
}

/// Model on one side of a weak-error comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Full,
    Averaged,
}

/// Inputs of a weak-error experiment. Each ν-row uses `template` with `nu`
/// replaced, and the same trajectory seeds.
#[derive(Debug, Clone)]
pub struct WeakErrorSpec {
    pub nu_grid: Vec<f64>,
    pub template: WaveParams,
    pub u0: SpectralField,
    pub u1: SpectralField,
    pub functionals: Vec<TestFunctional>,
    pub trajectories: usize,
    pub coupling: Coupling,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Model compared against the averaged one (normally the full model).
    pub reference: ModelKind,
}

/// One `(ν, functional)` entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakErrorRow {
    pub nu: f64,
    pub functional: String,
    pub mean_reference: f64,
    pub mean_averaged: f64,
    /// `E[reference] - E[averaged]` estimated from paired samples.
    pub difference: f64,
    pub abs_error: f64,
    pub std_error: f64,
    /// 95% interval for `|difference|`, clipped at zero.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Standard deviation of the per-trajectory difference.
    pub difference_sd: f64,
    /// `|difference| > 2 SE`.
    pub conclusive: bool,
    pub count: usize,
    pub aborts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakErrorTable {
    pub coupling: Coupling,
    pub rows: Vec<WeakErrorRow>,
}

impl WeakErrorTable {
    /// Rows for one functional, in ν-grid order.
    pub fn rows_for(&self, functional: &str) -> Vec<&WeakErrorRow> {
        self.rows.iter().filter(|r| r.functional == functional).collect()
    }
}

const Z95: f64 = 1.959_963_984_540_054;
const CONCLUSIVE_SE: f64 = 2.0;

fn terminal_u(
    kind: ModelKind,
    params: &WaveParams,
    u0: &SpectralField,
    u1: &SpectralField,
    seed: u64,
    trajectory: u64,
    purpose: Purpose,
) -> Result<Vec<f64>> {
    let mut rng = derive_stream(seed, trajectory, purpose);
    let mut end = Vec::new();
    match kind {
        ModelKind::Full => WaveIntegrator::new(params)?.run(u0, u1, &mut rng, usize::MAX, |_, u, _| {
            end.clear();
            end.extend_from_slice(u);
        })?,
        ModelKind::Averaged => AveragedIntegrator::new(params)?.run(u0, &mut rng, usize::MAX, |_, u| {
            end.clear();
            end.extend_from_slice(u);
        })?,
    }
    Ok(end)
}

/// Differences of ensemble means between the reference model and the
/// averaged model over a ν-grid.
pub fn weak_error_table(spec: &WeakErrorSpec) -> Result<WeakErrorTable> {
    if spec.trajectories < 2 {
        return Err(invalid("trajectories", "need at least 2"));
    }
    if spec.functionals.is_empty() {
        return Err(invalid("functionals", "need at least one"));
    }
    for f in &spec.functionals {
        f.check(spec.template.modes)?;
    }
    let other_purpose = match spec.coupling {
        Coupling::CommonNoise => Purpose::Wiener,
        Coupling::Independent => Purpose::Reference,
    };
    let mut rows = Vec::new();
    for &nu in &spec.nu_grid {
        let mut params = spec.template.clone();
        params.nu = nu;
        params.validate()?;
        // fail fast on bad parameters before spawning work
        WaveIntegrator::new(&params)?;
        let results = parallel_map(spec.trajectories, spec.threads, |i| -> Result<(Vec<f64>, Vec<f64>)> {
            let i = i as u64;
            let a = terminal_u(spec.reference, &params, &spec.u0, &spec.u1, spec.seed, i, Purpose::Wiener)?;
            let b = terminal_u(ModelKind::Averaged, &params, &spec.u0, &spec.u1, spec.seed, i, other_purpose)?;
            Ok((
                spec.functionals.iter().map(|f| f.eval(&a)).collect(),
                spec.functionals.iter().map(|f| f.eval(&b)).collect(),
            ))
        });
        let outcome = collect_outcomes(results)?;
        for (fi, f) in spec.functionals.iter().enumerate() {
            let ra: Vec<f64> = outcome.values().map(|(a, _)| a[fi]).collect();
            let rb: Vec<f64> = outcome.values().map(|(_, b)| b[fi]).collect();
            let d: Vec<f64> = ra.iter().zip(&rb).map(|(a, b)| a - b).collect();
            let sd = EnsembleSummary::from_samples(&d, outcome.abort_count());
            let abs = sd.mean.abs();
            rows.push(WeakErrorRow {
                nu,
                functional: f.label(),
                mean_reference: EnsembleSummary::from_samples(&ra, 0).mean,
                mean_averaged: EnsembleSummary::from_samples(&rb, 0).mean,
                difference: sd.mean,
                abs_error: abs,
                std_error: sd.std_error,
                ci_low: (abs - Z95 * sd.std_error).max(0.0),
                ci_high: abs + Z95 * sd.std_error,
                difference_sd: sd.variance.sqrt(),
                conclusive: abs > CONCLUSIVE_SE * sd.std_error,
                count: sd.count,
                aborts: sd.aborts,
            });
        }
    }
    Ok(WeakErrorTable {
        coupling: spec.coupling,
        rows,
    })
}

/// Least-squares fit of `log error` against `log ν`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// 95% t-interval for the slope.
    pub slope_ci: (f64, f64),
    pub points: usize,
}

const MIN_FIT_ROWS: usize = 3;

/// Fit on the conclusive rows only; fewer than three of them refuses.
pub fn order_fit(rows: &[&WeakErrorRow]) -> Result<OrderFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.conclusive && r.abs_error > 0.0)
        .map(|r| (r.nu, r.abs_error))
        .collect();
    fit_points(&pts)
}

/// Fit on raw `(ν, error)` pairs, all treated as conclusive.
pub fn order_fit_points(points: &[(f64, f64)]) -> Result<OrderFit> {
    if let Some(p) = points.iter().find(|(n, e)| !(*n > 0.0) || !(*e > 0.0)) {
        return Err(invalid("points", format!("log fit needs positive values, got {p:?}")));
    }
    fit_points(points)
}

fn fit_points(pts: &[(f64, f64)]) -> Result<OrderFit> {
    if pts.len() < MIN_FIT_ROWS {
        return Err(Error::FitRefused(format!(
            "{} conclusive rows, need at least {MIN_FIT_ROWS}",
            pts.len()
        )));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r_squared) = least_squares(&x, &y);
    let n = pts.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sse: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let se = (sse / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::INFINITY);
    Ok(OrderFit {
        slope,
        intercept,
        r_squared,
        slope_ci: (slope - t * se, slope + t * se),
        points: pts.len(),
    })
}

/// Two-sample Kolmogorov–Smirnov result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic 5% critical value `1.358 √((n+m)/(nm))`.
    pub critical: f64,
    pub reject: bool,
    /// Asymptotic p-value from the Kolmogorov distribution.
    pub p_value: f64,
}

const KS_C95: f64 = 1.358;

pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("samples", "both samples must be nonempty"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(invalid("samples", "NaN in sample"));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let (nf, mf) = (n as f64, m as f64);
    let critical = KS_C95 * ((nf + mf) / (nf * mf)).sqrt();
    let ne = (nf * mf / (nf + mf)).sqrt();
    let p_value = kolmogorov_q((ne + 0.12 + 0.11 / ne) * d);
    Ok(KsResult {
        statistic: d,
        critical,
        reject: d > critical,
        p_value,
    })
}

/// `Q(λ) = 2 Σ (-1)^{k-1} exp(-2k²λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Ensemble of `max_t ‖u(t)‖₁²` over the full model, recorded every step.
pub fn max_h1_moment(
    params: &WaveParams,
    u0: &SpectralField,
    u1: &SpectralField,
    trajectories: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<EnsembleSummary> {
    let integ = WaveIntegrator::new(params)?;
    let lambdas: Vec<f64> = (1..=params.modes).map(SineBasis::eigenvalue).collect();
    let results = parallel_map(trajectories, threads, |i| -> Result<f64> {
        let mut rng = derive_stream(seed, i as u64, Purpose::Wiener);
        let mut worst: f64 = 0.0;
        integ.run(u0, u1, &mut rng, 1, |_, u, _| {
            let h1: f64 = u.iter().zip(&lambdas).map(|(c, l)| l * c * c).sum();
            worst = worst.max(h1);
        })?;
        Ok(worst)
    });
    let outcome = collect_outcomes(results)?;
    let xs: Vec<f64> = outcome.values().copied().collect();
    Ok(EnsembleSummary::from_samples(&xs, outcome.abort_count()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::simulate_wave;
    use crate::noise::{NoiseModel, RngStream};
    use approx::assert_relative_eq;

    fn brownian(q: f64, n: usize, dt: f64, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
        let mut w = vec![0.0];
        let mut t = vec![0.0];
        for j in 1..=n {
            let last = *w.last().unwrap();
            w.push(last + (q * dt).sqrt() * rng.normal());
            t.push(j as f64 * dt);
        }
        (w, t)
    }

    #[test]
    fn qv_of_brownian_path() {
        let mut rng = derive_stream(1, 0, Purpose::Scratch);
        let (w, t) = brownian(2.5, 10_000, 1e-4, &mut rng);
        let fit = realized_qv(&w, &t, 1).unwrap();
        assert_relative_eq!(fit.slope, 2.5, max_relative = 0.1);
        assert!(fit.r_squared > 0.99);
    }

    #[test]
    fn qv_of_constant_is_zero() {
        let t: Vec<f64> = (0..200).map(|j| j as f64).collect();
        let fit = realized_qv(&vec![3.0; 200], &t, 4).unwrap();
        assert_eq!(fit.slope, 0.0);
    }

    #[test]
    fn qv_requires_samples() {
        let t: Vec<f64> = (0..50).map(|j| j as f64).collect();
        assert!(matches!(realized_qv(&t, &t, 1), Err(Error::Resolution(_))));
    }

    #[test]
    fn quadratic_form_target() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let noise = NoiseModel::custom(vec![1.0, 0.0625], 0.5).unwrap();
        assert_relative_eq!(noise.quadratic_form(&[s, s]), 0.53125, max_relative = 1e-14);
    }

    #[test]
    fn martingale_vanishes_at_rest() {
        let p = WaveParams::new(0.02, 0.5, 1.0, 4, 0.01, 0.2)
            .unwrap()
            .with_noise(NoiseModel::silent(4, 0.5).unwrap())
            .unwrap();
        let basis = p.basis();
        let z = SpectralField::zeros(basis);
        let mut rng = derive_stream(0, 0, Purpose::Wiener);
        let tr = simulate_wave(&p, &z, &z, &mut rng, 1).unwrap();
        let phi = SpectralField::mode(basis, 1, 1.0).unwrap();
        for form in [MartingaleForm::Averaging, MartingaleForm::VelocityCorrected] {
            let m = martingale_process(&tr, &phi, &p, form).unwrap();
            assert!(m.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn martingale_needs_ten_samples() {
        let p = WaveParams::new(0.02, 0.5, 1.0, 2, 0.01, 0.05).unwrap();
        let basis = p.basis();
        let z = SpectralField::zeros(basis);
        let mut rng = derive_stream(0, 0, Purpose::Wiener);
        let tr = simulate_wave(&p, &z, &z, &mut rng, 1).unwrap();
        let phi = SpectralField::mode(basis, 1, 1.0).unwrap();
        assert!(matches!(
            martingale_process(&tr, &phi, &p, MartingaleForm::default()),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn martingale_mean_zero_and_increments_orthogonal() {
        let nu = 0.02;
        let p = WaveParams::new(nu, 0.5, 1.0, 4, nu / 10.0, 0.4).unwrap();
        let basis = p.basis();
        let u0 = SpectralField::mode(basis, 1, 0.5).unwrap();
        let u1 = SpectralField::zeros(basis);
        let phi = SpectralField::mode(basis, 1, 1.0).unwrap();
        let n = 500;
        let paths: Vec<Vec<f64>> = parallel_map(n, None, |i| {
            let mut rng = derive_stream(21, i as u64, Purpose::Wiener);
            let tr = simulate_wave(&p, &u0, &u1, &mut rng, 1).unwrap();
            martingale_process(&tr, &phi, &p, MartingaleForm::VelocityCorrected).unwrap()
        });
        let len = paths[0].len();
        for j in (10..len).step_by(40) {
            let xs: Vec<f64> = paths.iter().map(|m| m[j]).collect();
            let s = EnsembleSummary::from_samples(&xs, 0);
            assert!(s.mean.abs() < 3.0 * s.std_error + 1e-12, "t-index {j}: {s:?}");
        }
        // increment after mid-point against a bounded functional before it
        let mid = len / 2;
        let prod: Vec<f64> = paths
            .iter()
            .map(|m| (m[len - 1] - m[mid]) * m[mid].tanh())
            .collect();
        let s = EnsembleSummary::from_samples(&prod, 0);
        assert!(s.mean.abs() < 3.0 * s.std_error);
    }

    #[test]
    fn stationary_stats_preconditions() {
        let tr = Trajectory {
            times: vec![0.0, 0.1],
            states: vec![SpectralField::zeros(SineBasis::orthonormal(1).unwrap()); 2],
        };
        assert!(stationary_stats(std::slice::from_ref(&tr), 0.01, 0.01).is_err());
        assert!(matches!(
            stationary_stats(&[tr], 0.1, 0.01),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn order_fit_synthetic() {
        let grid: [f64; 4] = [0.04, 0.02, 0.01, 0.005];
        let f = order_fit_points(&grid.map(|n| (n, n.sqrt()))).unwrap();
        assert_relative_eq!(f.slope, 0.5, max_relative = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, max_relative = 1e-12);
        let g = order_fit_points(&grid.map(|n| (n, 2.0 * n))).unwrap();
        assert_relative_eq!(g.slope, 1.0, max_relative = 1e-12);
        assert_relative_eq!(g.intercept, 2f64.ln(), max_relative = 1e-12);
        assert!(matches!(
            order_fit_points(&[(0.1, 0.1), (0.2, 0.2)]),
            Err(Error::FitRefused(_))
        ));
    }

    #[test]
    fn order_fit_ignores_inconclusive_rows() {
        let row = |nu: f64, conclusive| WeakErrorRow {
            nu,
            functional: "f".into(),
            mean_reference: 0.0,
            mean_averaged: 0.0,
            difference: nu,
            abs_error: nu,
            std_error: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            difference_sd: 0.0,
            conclusive,
            count: 1,
            aborts: 0,
        };
        let rows = [row(0.04, true), row(0.02, true), row(0.01, false)];
        let refs: Vec<&WeakErrorRow> = rows.iter().collect();
        assert!(matches!(order_fit(&refs), Err(Error::FitRefused(_))));
    }

    #[test]
    fn ks_examples() {
        let mut r = derive_stream(3, 0, Purpose::Scratch);
        let a: Vec<f64> = (0..2000).map(|_| r.normal()).collect();
        let same = ks_distance(&a, &a).unwrap();
        assert_eq!(same.statistic, 0.0);
        assert!(!same.reject);
        let b: Vec<f64> = (0..2000).map(|_| r.normal() + 1.0).collect();
        assert!(ks_distance(&a, &b).unwrap().reject);
        assert!(ks_distance(&[], &a).is_err());
    }

    #[test]
    fn ks_calibration() {
        // false-rejection rate for equal laws is near 5%
        let rejections: usize = parallel_map(400, None, |s| {
            let mut r = derive_stream(77, s as u64, Purpose::Scratch);
            let a: Vec<f64> = (0..2000).map(|_| r.normal()).collect();
            let b: Vec<f64> = (0..2000).map(|_| r.normal()).collect();
            ks_distance(&a, &b).unwrap().reject as usize
        })
        .into_iter()
        .sum();
        // binomial(400, 0.05): mean 20, sd 4.4
        assert!((5..=38).contains(&rejections), "{rejections} rejections");
    }

    #[test]
    fn ks_p_value_consistent_with_decision() {
        let mut r = derive_stream(4, 0, Purpose::Scratch);
        let a: Vec<f64> = (0..500).map(|_| r.normal()).collect();
        let b: Vec<f64> = (0..500).map(|_| r.normal() + 0.3).collect();
        let res = ks_distance(&a, &b).unwrap();
        assert_eq!(res.reject, res.p_value < 0.05);
    }

    #[test]
    fn self_comparison_is_null() {
        let template = WaveParams::new(0.02, 0.5, 1.0, 4, 0.005, 0.2).unwrap();
        let basis = template.basis();
        let spec = WeakErrorSpec {
            nu_grid: vec![0.02],
            template,
            u0: SpectralField::mode(basis, 1, 1.0).unwrap(),
            u1: SpectralField::zeros(basis),
            functionals: vec![TestFunctional::projection_on_mode(4, 1).unwrap()],
            trajectories: 1000,
            coupling: Coupling::Independent,
            seed: 8,
            threads: None,
            reference: ModelKind::Averaged,
        };
        let t = weak_error_table(&spec).unwrap();
        let r = &t.rows[0];
        assert!(r.abs_error < 2.0 * r.std_error + 1e-15, "{r:?}");
    }

    #[test]
    fn common_noise_reduces_difference_spread() {
        let template = WaveParams::new(0.02, 0.5, 1.0, 4, 0.002, 0.2).unwrap();
        let basis = template.basis();
        let mut spec = WeakErrorSpec {
            nu_grid: vec![0.02],
            template,
            u0: SpectralField::mode(basis, 1, 1.0).unwrap(),
            u1: SpectralField::zeros(basis),
            functionals: vec![TestFunctional::projection_on_mode(4, 1).unwrap()],
            trajectories: 400,
            coupling: Coupling::CommonNoise,
            seed: 8,
            threads: None,
            reference: ModelKind::Full,
        };
        let common = weak_error_table(&spec).unwrap().rows[0].difference_sd;
        spec.coupling = Coupling::Independent;
        let indep = weak_error_table(&spec).unwrap().rows[0].difference_sd;
        assert!(common < indep, "common {common} vs independent {indep}");
    }

    #[test]
    fn table_is_thread_count_invariant() {
        let template = WaveParams::new(0.04, 0.5, 1.0, 3, 0.004, 0.1).unwrap();
        let basis = template.basis();
        let mut spec = WeakErrorSpec {
            nu_grid: vec![0.04, 0.02],
            template,
            u0: SpectralField::mode(basis, 1, 1.0).unwrap(),
            u1: SpectralField::zeros(basis),
            functionals: vec![
                TestFunctional::projection_on_mode(3, 1).unwrap(),
                TestFunctional::SquaredNorm,
            ],
            trajectories: 64,
            coupling: Coupling::CommonNoise,
            seed: 2,
            threads: Some(1),
            reference: ModelKind::Full,
        };
        let a = weak_error_table(&spec).unwrap();
        spec.threads = Some(5);
        let b = weak_error_table(&spec).unwrap();
        assert_eq!(a, b);
    }
}
