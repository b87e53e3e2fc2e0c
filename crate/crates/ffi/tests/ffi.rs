use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use awl::dynamics::{WaveIntegrator, WaveParams};
use awl::noise::{derive_stream, NoiseModel, Purpose};
use awl::spectral::SpectralField;
use awl_ffi::*;

fn last_error() -> String {
    let p = awl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn wave_handle_matches_library_run() {
    let (nu, alpha, beta, k, dt) = (0.02, 0.5, 1.0, 4usize, 0.005);
    let mut h: *mut AwlWave = ptr::null_mut();
    unsafe {
        assert_eq!(awl_wave_new(nu, alpha, beta, k, dt, 11, 3, &mut h), AwlStatus::Ok);
        assert_eq!(awl_wave_modes(h), k);
        let u0 = [0.5, -0.1, 0.0, 0.02];
        let v0 = [0.0; 4];
        assert_eq!(awl_wave_set_state(h, u0.as_ptr(), v0.as_ptr(), k), AwlStatus::Ok);
        assert_eq!(awl_wave_step(h, 40), AwlStatus::Ok);
        let (mut u, mut v, mut t) = ([0.0; 4], [0.0; 4], 0.0);
        assert_eq!(awl_wave_get_state(h, u.as_mut_ptr(), v.as_mut_ptr(), k, &mut t), AwlStatus::Ok);
        awl_wave_free(h);

        let params = WaveParams::new(nu, alpha, beta, k, dt, 40.0 * dt)
            .unwrap()
            .with_noise(NoiseModel::default_spectrum(k, alpha).unwrap())
            .unwrap();
        let basis = params.basis();
        let mut rng = derive_stream(11, 3, Purpose::Wiener);
        let mut end = (Vec::new(), Vec::new());
        WaveIntegrator::new(&params)
            .unwrap()
            .run(
                &SpectralField::new(basis, u0.to_vec()).unwrap(),
                &SpectralField::new(basis, v0.to_vec()).unwrap(),
                &mut rng,
                usize::MAX,
                |_, u, v| end = (u.to_vec(), v.to_vec()),
            )
            .unwrap();
        assert_eq!(u.to_vec(), end.0);
        assert_eq!(v.to_vec(), end.1);
        assert!((t - 0.2).abs() < 1e-12);
    }
}

#[test]
fn errors_are_reported() {
    let mut h: *mut AwlWave = ptr::null_mut();
    unsafe {
        assert_eq!(awl_wave_new(-1.0, 0.5, 1.0, 4, 0.01, 0, 0, &mut h), AwlStatus::InvalidArgument);
        assert!(h.is_null());
        assert!(last_error().contains("nu"));
        assert_eq!(awl_wave_new(0.1, 0.5, 1.0, 4, 0.01, 0, 0, ptr::null_mut()), AwlStatus::NullPointer);
        assert_eq!(awl_wave_step(ptr::null_mut(), 1), AwlStatus::NullPointer);
        assert_eq!(awl_wave_new(0.1, 0.5, 1.0, 4, 0.01, 0, 0, &mut h), AwlStatus::Ok);
        let bad = [0.0; 3];
        assert_eq!(awl_wave_set_state(h, bad.as_ptr(), bad.as_ptr(), 3), AwlStatus::InvalidArgument);
        let big = [1e5, 0.0, 0.0, 0.0];
        assert_eq!(awl_wave_set_state(h, big.as_ptr(), [0.0; 4].as_ptr(), 4), AwlStatus::Ok);
        assert_eq!(awl_wave_step(h, 1000), AwlStatus::BlowUp);
        assert!(last_error().contains("blow-up"));
        awl_wave_free(h);
        awl_wave_free(ptr::null_mut());
    }
    // a successful call clears the message
    let mut out = AwlKsResult::default();
    let a = [1.0, 2.0, 3.0];
    unsafe { awl_ks_two_sample(a.as_ptr(), 3, a.as_ptr(), 3, &mut out) };
    assert!(awl_last_error_message().is_null());
}

#[test]
fn ssm_increment_and_identity() {
    let amps = [1.0, 0.25, 1.0 / 9.0, 1.0 / 16.0, 0.04];
    let dw = [0.1, -0.2, 0.05, 0.0, 0.3];
    let (mut full, mut avg) = (0.0, 0.0);
    unsafe {
        assert_eq!(
            awl_ssm_increment(0.2, 0.0, 0.1, 0.5, amps.as_ptr(), 5, dw.as_ptr(), 5, 0.01, false, &mut full),
            AwlStatus::Ok
        );
        assert_eq!(
            awl_ssm_increment(0.2, 0.3, 0.1, 0.5, amps.as_ptr(), 5, dw.as_ptr(), 5, 0.01, true, &mut avg),
            AwlStatus::Ok
        );
        assert_eq!(full.to_bits(), avg.to_bits());
        assert_eq!(
            awl_ssm_increment(0.7, 0.0, 0.1, 0.5, amps.as_ptr(), 5, dw.as_ptr(), 5, 0.01, false, &mut full),
            AwlStatus::ExpansionDomain
        );
    }
}

#[test]
fn ks_and_order_fit() {
    let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
    let b: Vec<f64> = (0..100).map(|i| i as f64 + 1000.0).collect();
    let mut ks = AwlKsResult::default();
    unsafe { assert_eq!(awl_ks_two_sample(a.as_ptr(), 100, b.as_ptr(), 100, &mut ks), AwlStatus::Ok) };
    assert_eq!(ks.statistic, 1.0);
    assert!(ks.reject);

    let nu = [0.04, 0.02, 0.01, 0.005];
    let err: Vec<f64> = nu.iter().map(|n: &f64| 3.0 * n.sqrt()).collect();
    let mut fit = AwlOrderFit::default();
    unsafe { assert_eq!(awl_order_fit(nu.as_ptr(), err.as_ptr(), 4, &mut fit), AwlStatus::Ok) };
    assert!((fit.slope - 0.5).abs() < 1e-12);
    assert!(fit.r_squared > 1.0 - 1e-12);
    unsafe { assert_eq!(awl_order_fit(nu.as_ptr(), err.as_ptr(), 2, &mut fit), AwlStatus::FitRefused) };
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(awl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/awl.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["awl_wave_new", "awl_wave_step", "awl_wave_get_state", "awl_wave_free", "awl_last_error_message"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let tmp = tempfile::TempDir::new().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"awl.h\"\nint main(void) { AwlWave *h = 0; AwlStatus s = awl_wave_new(0.1, 0.5, 1.0, 4, 0.01, 1, 0, &h); awl_wave_free(h); return s; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .status()
        .expect("a C compiler is needed to check the header");
    assert!(status.success());
}
