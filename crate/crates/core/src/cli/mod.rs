//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error (or any
//! other reason the experiment could not run), 3 numerical blow-up, 4 the
//! experiment ran but a check failed.

pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::diagnostics::{
    martingale_process, order_fit, realized_qv_ensemble, stationary_stats, weak_error_table, WeakErrorSpec,
};
use crate::dynamics::{fast_mean, simulate_fast_frozen, AveragedIntegrator, WaveIntegrator};
use crate::ensemble::parallel_map;
use crate::error::Error;
use crate::noise::{derive_stream, Purpose};
use crate::spectral::SpectralField;
use crate::ssm::{averaged_ssm_drift_diffusion, residual_check, simulate_ssm, ssm_drift_diffusion};

pub use config::{Model, RunConfig};
use output::{column_names, sha256_hex, AbortRecord, Aborts, Csv, OutputDir, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOW_UP: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "awl", version, about = "Stochastic damped wave equation lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration; defaults are used for anything not given.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for ensembles.
    #[arg(long, global = true, env = "AWL_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Simulate trajectories of the configured model.
    Simulate,
    /// Weak error of the averaged model over a ν-grid, with an order fit.
    WeakError,
    /// Stationary statistics of the fast equation with frozen slow field.
    FastOuStats,
    /// Realized quadratic variation of the martingale functional.
    MartingaleQv,
    /// Residual scaling of the stochastic slow manifold.
    SsmResidual,
    /// Full versus averaged slow SDE at ν = 0.
    SsmCompare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::WeakError => "weak-error",
            Self::FastOuStats => "fast-ou-stats",
            Self::MartingaleQv => "martingale-qv",
            Self::SsmResidual => "ssm-residual",
            Self::SsmCompare => "ssm-compare",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok,
    BlowUp,
    CheckFailed,
}

impl Status {
    fn label(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::BlowUp => "blow-up",
            Self::CheckFailed => "check-failed",
        }
    }

    fn code(self) -> i32 {
        match self {
            Self::Ok => EXIT_OK,
            Self::BlowUp => EXIT_BLOW_UP,
            Self::CheckFailed => EXIT_CHECK_FAILED,
        }
    }
}

enum Failure {
    Lib(Error),
    Io(std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

struct Outcome {
    status: Status,
    aborts: Aborts,
    summary: String,
}

impl Outcome {
    fn new(checks_passed: bool, aborts: Aborts, summary: String) -> Self {
        let status = if aborts.count > 0 {
            Status::BlowUp
        } else if !checks_passed {
            Status::CheckFailed
        } else {
            Status::Ok
        };
        Self {
            status,
            aborts,
            summary,
        }
    }
}

fn no_aborts() -> Aborts {
    Aborts {
        count: 0,
        trajectories: Vec::new(),
    }
}

struct Ctx<'a> {
    config: &'a RunConfig,
    threads: Option<usize>,
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    run(&cli)
}

pub fn load_config(cli: &Cli) -> crate::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if cli.threads == Some(0) {
        return Err(Error::Configuration("--threads must be at least 1".into()));
    }
    Ok(config)
}

pub fn run(cli: &Cli) -> i32 {
    let started = Instant::now();
    let config = match load_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let ctx = Ctx {
        config: &config,
        threads: cli.threads,
    };
    let mut out = match OutputDir::create(&cli.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot prepare {}: {e}", cli.out.display());
            return EXIT_IO;
        }
    };
    let result = match cli.command {
        Command::Simulate => simulate(&ctx, &mut out),
        Command::WeakError => weak_error(&ctx, &mut out),
        Command::FastOuStats => fast_ou_stats(&ctx, &mut out),
        Command::MartingaleQv => martingale_qv(&ctx, &mut out),
        Command::SsmResidual => ssm_residual(&ctx, &mut out),
        Command::SsmCompare => ssm_compare(&ctx, &mut out),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            return match e {
                Error::BlowUp { .. } | Error::ExpansionDomain { .. } => EXIT_BLOW_UP,
                _ => EXIT_CONFIG,
            };
        }
    };
    let text = config.emit();
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name().to_string(),
        status: outcome.status.label(),
        exit_code: outcome.status.code(),
        config_sha256: sha256_hex(text.as_bytes()),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        aborts: outcome.aborts,
        files: Vec::new(),
        config: text,
    };
    if let Err(e) = out.finish(manifest) {
        eprintln!("error: writing manifest: {e}");
        return EXIT_IO;
    }
    println!("{}: {}", outcome.status.label(), outcome.summary);
    outcome.status.code()
}

/// Recorded rows of one path: times and value rows (without `t`).
#[derive(Default)]
struct Records {
    times: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

fn is_abort(e: &Error) -> Option<f64> {
    match e {
        Error::BlowUp { time } => Some(*time),
        Error::ExpansionDomain { .. } => Some(f64::NAN),
        _ => None,
    }
}

/// Run `n` paths; per-path CSVs for the first `write` of them (partial for
/// aborted paths) and an aggregate mean/variance CSV over completed paths.
fn write_paths<F>(ctx: &Ctx, out: &mut OutputDir, columns: &[String], path: F) -> Result<Outcome, Failure>
where
    F: Fn(usize) -> (Records, crate::Result<()>) + Sync + Send,
{
    let c = ctx.config;
    let results = parallel_map(c.trajectories, ctx.threads, &path);
    let mut header = vec!["t".to_string()];
    header.extend(columns.iter().cloned());
    let mut aborts = Vec::new();
    let mut completed: Vec<&Records> = Vec::new();
    for (i, (rec, status)) in results.iter().enumerate() {
        match status {
            Ok(()) => completed.push(rec),
            Err(e) => match is_abort(e) {
                Some(time) => aborts.push(AbortRecord { trajectory: i, time }),
                None => return Err(Failure::Lib(e.clone())),
            },
        }
        if i < c.write_trajectories {
            let mut csv = Csv::new(&header);
            for (t, row) in rec.times.iter().zip(&rec.rows) {
                csv.row(*t, row.iter().copied());
            }
            out.write(&format!("trajectory_{i:05}.csv"), &csv.into_bytes())?;
        }
    }
    let mut agg_header = vec!["t".to_string()];
    agg_header.extend(columns.iter().map(|c| format!("mean_{c}")));
    agg_header.extend(columns.iter().map(|c| format!("var_{c}")));
    let mut agg = Csv::new(&agg_header);
    if let Some(first) = completed.first() {
        let n = completed.len() as f64;
        for (j, t) in first.times.iter().enumerate() {
            let m = columns.len();
            let mut mean = vec![0.0; m];
            for r in &completed {
                for (a, x) in mean.iter_mut().zip(&r.rows[j]) {
                    *a += x;
                }
            }
            mean.iter_mut().for_each(|a| *a /= n);
            let mut var = vec![0.0; m];
            if completed.len() > 1 {
                for r in &completed {
                    for ((s, x), mu) in var.iter_mut().zip(&r.rows[j]).zip(&mean) {
                        *s += (x - mu) * (x - mu);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n - 1.0);
            }
            agg.row(*t, mean.into_iter().chain(var));
        }
    }
    out.write("ensemble.csv", &agg.into_bytes())?;
    let summary = format!(
        "{} trajectories, {} completed, {} aborted",
        results.len(),
        completed.len(),
        aborts.len()
    );
    Ok(Outcome::new(
        true,
        Aborts {
            count: aborts.len(),
            trajectories: aborts,
        },
        summary,
    ))
}

fn simulate(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome, Failure> {
    let c = ctx.config;
    let every = c.record_every;
    match c.model {
        Model::Wave => {
            let params = c.wave_params()?;
            let (u0, u1) = c.initial_data()?;
            let integ = WaveIntegrator::new(&params)?;
            let k = params.modes;
            let cols: Vec<String> = column_names("u", k).chain(column_names("v", k)).collect();
            write_paths(ctx, out, &cols, |i| {
                let mut rng = derive_stream(c.seed, i as u64, Purpose::Wiener);
                let mut rec = Records::default();
                let r = integ.run(&u0, &u1, &mut rng, every, |t, u, v| {
                    rec.times.push(t);
                    rec.rows.push(u.iter().chain(v).copied().collect());
                });
                (rec, r)
            })
        }
        Model::Averaged => {
            let params = c.wave_params()?;
            let (u0, _) = c.initial_data()?;
            let integ = AveragedIntegrator::new(&params)?;
            let cols: Vec<String> = column_names("u", params.modes).collect();
            write_paths(ctx, out, &cols, |i| {
                let mut rng = derive_stream(c.seed, i as u64, Purpose::Wiener);
                let mut rec = Records::default();
                let r = integ.run(&u0, &mut rng, every, |t, u| {
                    rec.times.push(t);
                    rec.rows.push(u.to_vec());
                });
                (rec, r)
            })
        }
        Model::FastFrozen => {
            let params = c.wave_params()?;
            let u = c.frozen_u()?;
            let (_, v0) = c.initial_data()?;
            let cols: Vec<String> = column_names("v", params.modes).collect();
            write_paths(ctx, out, &cols, |i| {
                let mut rng = derive_stream(c.seed, i as u64, Purpose::Fast);
                let mut rec = Records::default();
                let r = simulate_fast_frozen(&u, Some(&v0), &params, &mut rng).map(|tr| {
                    let last = tr.len() - 1;
                    for (j, (t, s)) in tr.times.iter().zip(&tr.states).enumerate() {
                        if j % every == 0 || j == last {
                            rec.times.push(*t);
                            rec.rows.push(s.coeffs().to_vec());
                        }
                    }
                });
                (rec, r)
            })
        }
        Model::Ssm => {
            let params = c.ssm_params()?;
            let s = &c.ssm;
            params.check_radius(s.a0)?;
            let mut cols = vec!["a".to_string(), "a_avg".to_string()];
            cols.extend(column_names("u", params.modes));
            write_paths(ctx, out, &cols, |i| {
                let mut rng = derive_stream(c.seed, i as u64, Purpose::Bank);
                let mut rec = Records::default();
                let r = simulate_ssm(&params, s.a0, s.h, s.horizon, &mut rng, every).map(|path| {
                    for p in path {
                        rec.times.push(p.t);
                        let mut row = vec![p.a, p.a_avg];
                        row.extend(p.field);
                        rec.rows.push(row);
                    }
                });
                (rec, r)
            })
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
enum FitRecord {
    Ok {
        functional: String,
        slope: f64,
        intercept: f64,
        r_squared: f64,
        slope_ci: (f64, f64),
        points: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        pass: Option<bool>,
    },
    Refused {
        functional: String,
        reason: String,
    },
}

fn weak_error(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome, Failure> {
    let c = ctx.config;
    let w = &c.weak_error;
    if w.nu_grid.len() < 3 {
        return Err(Error::Configuration("weak_error.nu_grid needs at least 3 points".into()).into());
    }
    let (u0, u1) = c.initial_data()?;
    let spec = WeakErrorSpec {
        nu_grid: w.nu_grid.clone(),
        template: c.wave_params()?,
        u0,
        u1,
        functionals: c.functionals()?,
        trajectories: w.trajectories,
        coupling: w.coupling,
        seed: c.seed,
        threads: ctx.threads,
        reference: w.reference.into(),
    };
    let table = weak_error_table(&spec)?;
    out.write_jsonl("weak_error.jsonl", &table.rows)?;
    let mut fits = Vec::new();
    let mut passed = true;
    let mut notes = Vec::new();
    for f in &spec.functionals {
        let label = f.label();
        let rows = table.rows_for(&label);
        match order_fit(&rows) {
            Ok(fit) => {
                let pass = w.min_slope.map(|m| fit.slope >= m);
                passed &= pass.unwrap_or(true);
                notes.push(format!("{label}: slope {:.3}", fit.slope));
                fits.push(FitRecord::Ok {
                    functional: label,
                    slope: fit.slope,
                    intercept: fit.intercept,
                    r_squared: fit.r_squared,
                    slope_ci: fit.slope_ci,
                    points: fit.points,
                    pass,
                });
            }
            Err(e) => {
                notes.push(format!("{label}: fit refused"));
                fits.push(FitRecord::Refused {
                    functional: label,
                    reason: e.to_string(),
                });
            }
        }
    }
    out.write_jsonl("weak_error_fit.jsonl", &fits)?;
    let aborts: usize = table
        .rows
        .iter()
        .filter(|r| r.functional == table.rows[0].functional)
        .map(|r| r.aborts)
        .sum();
    Ok(Outcome::new(
        passed,
        Aborts {
            count: aborts,
            trajectories: Vec::new(),
        },
        notes.join("; "),
    ))
}

#[derive(Serialize)]
struct FastOuRow {
    mode: usize,
    mean: f64,
    target_mean: f64,
    mean_std_error: f64,
    mean_z: f64,
    variance: f64,
    target_variance: f64,
    variance_ratio: f64,
    pass: bool,
}

fn fast_ou_stats(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome, Failure> {
    let c = ctx.config;
    let f = &c.fast_ou;
    if f.replicas == 0 {
        return Err(Error::Configuration("fast_ou.replicas must be at least 1".into()).into());
    }
    let mut params = c.wave_params()?;
    let nu = params.nu;
    let burn_in = f.burn_in_nu * nu;
    params.horizon = (f.burn_in_nu + f.span_nu) * nu;
    params.validate()?;
    let u = c.frozen_u()?;
    let mean = fast_mean(&u, &params)?;
    let replicas = parallel_map(f.replicas, ctx.threads, |i| {
        let mut rng = derive_stream(c.seed, i as u64, Purpose::Fast);
        simulate_fast_frozen(&u, None, &params, &mut rng)
    });
    let replicas: Vec<_> = replicas.into_iter().collect::<crate::Result<_>>()?;
    let stats = stationary_stats(&replicas, burn_in, nu)?;
    let scale = nu.powf(2.0 * params.alpha() - 1.0) / 2.0;
    let rows: Vec<FastOuRow> = stats
        .iter()
        .map(|s| {
            let target_mean = mean.coeff(s.mode);
            let target_variance = scale * params.noise.b(s.mode);
            let mean_z = (s.mean - target_mean) / s.mean_std_error;
            let variance_ratio = s.variance / target_variance;
            FastOuRow {
                mode: s.mode,
                mean: s.mean,
                target_mean,
                mean_std_error: s.mean_std_error,
                mean_z,
                variance: s.variance,
                target_variance,
                variance_ratio,
                pass: mean_z.abs() <= f.mean_se && (variance_ratio - 1.0).abs() <= f.variance_tolerance,
            }
        })
        .collect();
    out.write_jsonl("fast_ou_stats.jsonl", &rows)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    let worst = rows
        .iter()
        .map(|r| (r.variance_ratio - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(Outcome::new(
        failed == 0,
        no_aborts(),
        format!("{failed} of {} modes failed; max |variance ratio - 1| = {worst:.4}", rows.len()),
    ))
}

#[derive(Serialize)]
struct QvReport {
    mode: usize,
    trajectories: usize,
    window: usize,
    slope: f64,
    expected: f64,
    intercept: f64,
    r_squared: f64,
    pass: bool,
}

fn martingale_qv(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome, Failure> {
    let c = ctx.config;
    let m = &c.martingale;
    let params = c.wave_params()?;
    let (u0, u1) = c.initial_data()?;
    let phi = SpectralField::mode(params.basis(), m.mode, 1.0)?;
    let integ = WaveIntegrator::new(&params)?;
    let form = m.form.into();
    let results = parallel_map(c.trajectories, ctx.threads, |i| -> crate::Result<_> {
        let mut rng = derive_stream(c.seed, i as u64, Purpose::Wiener);
        let mut tr = crate::dynamics::Trajectory {
            times: Vec::new(),
            states: Vec::new(),
        };
        let basis = params.basis();
        integ.run(&u0, &u1, &mut rng, 1, |t, u, v| {
            tr.times.push(t);
            tr.states.push(crate::dynamics::WaveState {
                u: SpectralField::new(basis, u.to_vec()).expect("band-limited"),
                v: SpectralField::new(basis, v.to_vec()).expect("band-limited"),
            });
        })?;
        let path = martingale_process(&tr, &phi, &params, form)?;
        Ok((tr.times, path))
    });
    let mut aborts = Vec::new();
    let mut times = Vec::new();
    let mut paths = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((t, p)) => {
                times = t;
                paths.push(p);
            }
            Err(Error::BlowUp { time }) => aborts.push(AbortRecord { trajectory: i, time }),
            Err(e) => return Err(e.into()),
        }
    }
    if paths.is_empty() {
        return Err(Error::BlowUp { time: f64::NAN }.into());
    }
    let fit = realized_qv_ensemble(&paths, &times, m.window)?;
    let expected = params.noise.quadratic_form(phi.coeffs());
    let pass = (fit.slope / expected - 1.0).abs() <= m.slope_tolerance && fit.r_squared >= m.min_r_squared;
    let mut csv = Csv::new(&["t".into(), "qv".into()]);
    for (t, q) in fit.times.iter().zip(&fit.qv) {
        csv.row(*t, [*q]);
    }
    out.write("qv.csv", &csv.into_bytes())?;
    out.write_jsonl(
        "martingale_qv.jsonl",
        &[QvReport {
            mode: m.mode,
            trajectories: paths.len(),
            window: m.window,
            slope: fit.slope,
            expected,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            pass,
        }],
    )?;
    Ok(Outcome::new(
        pass,
        Aborts {
            count: aborts.len(),
            trajectories: aborts,
        },
        format!("QV slope {:.4} vs {expected}, R^2 {:.5}", fit.slope, fit.r_squared),
    ))
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum ResidualRecord {
    Point {
        input: f64,
        residual: f64,
    },
    Fit {
        mode: String,
        slope: f64,
        intercept: f64,
        r_squared: f64,
        pass: bool,
    },
}

fn ssm_residual(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome, Failure> {
    let c = ctx.config;
    let r = &c.ssm_residual;
    let params = c.ssm_params()?;
    let report = residual_check(&params, &c.residual_run(ctx.threads))?;
    let pass = match r.mode {
        config::ResidualMode::Deterministic => (report.fit.slope - r.expected_slope).abs() <= r.slope_tolerance,
        config::ResidualMode::LinearNoise => report.fit.slope >= r.min_slope,
    };
    let mut records: Vec<ResidualRecord> = report
        .inputs
        .iter()
        .zip(&report.residuals)
        .map(|(i, v)| ResidualRecord::Point {
            input: *i,
            residual: *v,
        })
        .collect();
    records.push(ResidualRecord::Fit {
        mode: report.mode.clone(),
        slope: report.fit.slope,
        intercept: report.fit.intercept,
        r_squared: report.fit.r_squared,
        pass,
    });
    out.write_jsonl("ssm_residual.jsonl", &records)?;
    Ok(Outcome::new(
        pass,
        no_aborts(),
        format!("{} residual slope {:.4}", report.mode, report.fit.slope),
    ))
}

#[derive(Serialize)]
struct CompareReport {
    samples: usize,
    mismatches: usize,
    nu: f64,
    max_abs_difference_at_nu: f64,
    pass: bool,
}

fn ssm_compare(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome, Failure> {
    let c = ctx.config;
    let params = c.ssm_params()?;
    let h = c.ssm.h;
    if !(h > 0.0) {
        return Err(Error::Configuration("ssm.h must be positive".into()).into());
    }
    let mut at_zero = params.clone();
    at_zero.nu = 0.0;
    let mut rng = derive_stream(c.seed, 0, Purpose::Scratch);
    let mut mismatches = 0;
    let mut max_diff: f64 = 0.0;
    for _ in 0..c.ssm_compare.samples {
        let a = rng.uniform_in(-params.radius, params.radius);
        let dw: Vec<f64> = (0..params.modes).map(|_| h.sqrt() * rng.normal()).collect();
        let avg = averaged_ssm_drift_diffusion(a, &params, &dw, h)?;
        let full0 = ssm_drift_diffusion(a, &at_zero, &dw, h)?;
        if full0.to_bits() != avg.to_bits() {
            mismatches += 1;
        }
        max_diff = max_diff.max((ssm_drift_diffusion(a, &params, &dw, h)? - avg).abs());
    }
    let report = CompareReport {
        samples: c.ssm_compare.samples,
        mismatches,
        nu: params.nu,
        max_abs_difference_at_nu: max_diff,
        pass: mismatches == 0,
    };
    out.write_jsonl("ssm_compare.jsonl", &[&report])?;
    Ok(Outcome::new(
        report.pass,
        no_aborts(),
        format!("{mismatches} mismatches in {} samples", report.samples),
    ))
}
