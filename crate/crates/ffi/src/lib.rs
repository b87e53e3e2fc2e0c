//! C interface to the awl library.
//!
//! Every function returns an [`AwlStatus`]; on failure a message is kept
//! per thread and can be read with [`awl_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use awl::diagnostics::{ks_distance, order_fit_points};
use awl::dynamics::{WaveIntegrator, WaveParams, Workspace};
use awl::noise::{derive_stream, NoiseModel, Purpose, RngStream};
use awl::ssm::{averaged_ssm_drift_diffusion, ssm_drift_diffusion, SsmParams};
use awl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AwlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BlowUp = 3,
    ExpansionDomain = 4,
    FitRefused = 5,
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> AwlStatus {
    match e {
        Error::BlowUp { .. } => AwlStatus::BlowUp,
        Error::ExpansionDomain { .. } => AwlStatus::ExpansionDomain,
        Error::FitRefused(_) => AwlStatus::FitRefused,
        _ => AwlStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), AwlStatus>) -> AwlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AwlStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            AwlStatus::Internal
        }
    }
}

fn lib<T>(r: awl::Result<T>) -> Result<T, AwlStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null(what: &str) -> AwlStatus {
    set_error(format!("{what} is null"));
    AwlStatus::NullPointer
}

/// # Safety
/// `p` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], AwlStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn awl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn awl_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Full damped wave model with the stiff-exact integrator and default
/// noise spectrum `b_k = k^{-4}`.
pub struct AwlWave {
    integrator: WaveIntegrator,
    u: Vec<f64>,
    v: Vec<f64>,
    t: f64,
    rng: RngStream,
    workspace: Workspace,
}

/// Create a wave handle with zero initial data. The noise stream is
/// `(seed, trajectory)`, identical to the one the CLI uses for that
/// trajectory.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn awl_wave_new(
    nu: f64,
    alpha: f64,
    beta: f64,
    modes: usize,
    dt: f64,
    seed: u64,
    trajectory: u64,
    out: *mut *mut AwlWave,
) -> AwlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = lib(WaveParams::new(nu, alpha, beta, modes, dt, dt)
            .and_then(|p| p.with_noise(NoiseModel::default_spectrum(modes, alpha)?)))?;
        let integrator = lib(WaveIntegrator::new(&params))?;
        let h = Box::new(AwlWave {
            integrator,
            u: vec![0.0; modes],
            v: vec![0.0; modes],
            t: 0.0,
            rng: derive_stream(seed, trajectory, Purpose::Wiener),
            workspace: Workspace::default(),
        });
        *out = Box::into_raw(h);
        Ok(())
    })
}

/// Replace the state; `u` and `v` hold `len` orthonormal coefficients and
/// `len` must equal the mode count. Time is reset to zero.
///
/// # Safety
/// `handle` must come from [`awl_wave_new`]; `u` and `v` must point to
/// `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn awl_wave_set_state(handle: *mut AwlWave, u: *const f64, v: *const f64, len: usize) -> AwlStatus {
    guard(|| {
        let w = handle.as_mut().ok_or_else(|| null("handle"))?;
        if len != w.u.len() {
            set_error(format!("expected {} coefficients, got {len}", w.u.len()));
            return Err(AwlStatus::InvalidArgument);
        }
        let (u, v) = (slice(u, len, "u")?, slice(v, len, "v")?);
        if u.iter().chain(v).any(|x| !x.is_finite()) {
            set_error("state must be finite");
            return Err(AwlStatus::InvalidArgument);
        }
        w.u.copy_from_slice(u);
        w.v.copy_from_slice(v);
        w.t = 0.0;
        Ok(())
    })
}

/// Advance by `steps` timesteps. A non-finite state gives
/// [`AwlStatus::BlowUp`] and leaves the handle at the failing step.
///
/// # Safety
/// `handle` must come from [`awl_wave_new`].
#[no_mangle]
pub unsafe extern "C" fn awl_wave_step(handle: *mut AwlWave, steps: usize) -> AwlStatus {
    guard(|| {
        let w = handle.as_mut().ok_or_else(|| null("handle"))?;
        let dt = w.integrator.params().dt;
        for _ in 0..steps {
            w.integrator.step_raw(&mut w.u, &mut w.v, &mut w.rng, &mut w.workspace);
            w.t += dt;
            if w.u.iter().chain(&w.v).any(|x| !x.is_finite()) {
                set_error(format!("numerical blow-up at t = {}", w.t));
                return Err(AwlStatus::BlowUp);
            }
        }
        Ok(())
    })
}

/// Copy the state into `u_out` and `v_out` (each `len` doubles, `len`
/// equal to the mode count) and the current time into `t_out` if non-null.
///
/// # Safety
/// `handle` must come from [`awl_wave_new`]; the output buffers must hold
/// `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn awl_wave_get_state(
    handle: *const AwlWave,
    u_out: *mut f64,
    v_out: *mut f64,
    len: usize,
    t_out: *mut f64,
) -> AwlStatus {
    guard(|| {
        let w = handle.as_ref().ok_or_else(|| null("handle"))?;
        if len != w.u.len() {
            set_error(format!("expected {} coefficients, got {len}", w.u.len()));
            return Err(AwlStatus::InvalidArgument);
        }
        if u_out.is_null() || v_out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(w.u.as_ptr(), u_out, len);
        ptr::copy_nonoverlapping(w.v.as_ptr(), v_out, len);
        if let Some(t) = t_out.as_mut() {
            *t = w.t;
        }
        Ok(())
    })
}

/// Number of modes of the handle, or 0 for null.
///
/// # Safety
/// `handle` must be null or come from [`awl_wave_new`].
#[no_mangle]
pub unsafe extern "C" fn awl_wave_modes(handle: *const AwlWave) -> usize {
    handle.as_ref().map_or(0, |w| w.u.len())
}

/// Release a handle; null is ignored.
///
/// # Safety
/// `handle` must be null or come from [`awl_wave_new`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn awl_wave_free(handle: *mut AwlWave) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Slow-SDE increment over a step `h` on the stochastic slow manifold.
/// `amps` holds the per-mode noise amplitudes (scaled by `sigma`) and
/// `dw` the Brownian increments `Δw_1..`. With `averaged` nonzero the
/// averaged model is used, which ignores `nu`.
///
/// # Safety
/// `amps` and `dw` must point to `n_amps` and `n_dw` doubles; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn awl_ssm_increment(
    a: f64,
    nu: f64,
    beta_prime: f64,
    sigma: f64,
    amps: *const f64,
    n_amps: usize,
    dw: *const f64,
    n_dw: usize,
    h: f64,
    averaged: bool,
    out: *mut f64,
) -> AwlStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let amps = slice(amps, n_amps, "amps")?;
        let dw = slice(dw, n_dw, "dw")?;
        let mut p = lib(SsmParams::new(nu, 1.0, beta_prime, sigma, n_amps.max(1)))?;
        p.amps = amps.to_vec();
        lib(p.validate())?;
        *out = if averaged {
            lib(averaged_ssm_drift_diffusion(a, &p, dw, h))?
        } else {
            lib(ssm_drift_diffusion(a, &p, dw, h))?
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AwlKsResult {
    pub statistic: f64,
    pub critical: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Two-sample Kolmogorov–Smirnov test at the 5% level.
///
/// # Safety
/// `a` and `b` must point to `na` and `nb` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn awl_ks_two_sample(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut AwlKsResult,
) -> AwlStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = lib(ks_distance(slice(a, na, "a")?, slice(b, nb, "b")?))?;
        *out = AwlKsResult {
            statistic: r.statistic,
            critical: r.critical,
            p_value: r.p_value,
            reject: r.reject,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AwlOrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_ci_low: f64,
    pub slope_ci_high: f64,
}

/// Log-log least-squares fit of `err` against `nu` (`n ≥ 3` positive pairs).
///
/// # Safety
/// `nu` and `err` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn awl_order_fit(nu: *const f64, err: *const f64, n: usize, out: *mut AwlOrderFit) -> AwlStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let pts: Vec<(f64, f64)> = slice(nu, n, "nu")?
            .iter()
            .copied()
            .zip(slice(err, n, "err")?.iter().copied())
            .collect();
        let f = lib(order_fit_points(&pts))?;
        *out = AwlOrderFit {
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
            slope_ci_low: f.slope_ci.0,
            slope_ci_high: f.slope_ci.1,
        };
        Ok(())
    })
}
