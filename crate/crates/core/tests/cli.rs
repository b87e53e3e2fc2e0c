use std::fs;
use std::path::Path;

use awl::cli::{main_with_args, EXIT_BLOW_UP, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK};
use tempfile::TempDir;

fn run(dir: &Path, config: &str, args: &[&str]) -> i32 {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    let mut argv = vec![
        "awl".to_string(),
        "--config".into(),
        cfg.display().to_string(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    main_with_args(argv)
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(dir, "manifest.json")).unwrap()
}

/// Every output file except the manifest, by name.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .map(|n| {
            let b = read(dir, &n);
            (n, b)
        })
        .collect();
    v.sort();
    v
}

const SMALL: &str = "trajectories = 6\nrecord_every = 5\nwrite_trajectories = 2\n[wave]\nhorizon = 0.1\nmodes = 4\n";

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let sa = a.display().to_string();
    let sb = b.display().to_string();
    assert_eq!(run(tmp.path(), SMALL, &["simulate", "--seed", "7", "--out", &sa]), EXIT_OK);
    assert_eq!(run(tmp.path(), SMALL, &["simulate", "--seed", "7", "--out", &sb]), EXIT_OK);
    assert_eq!(outputs(&a), outputs(&b));
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["files"], mb["files"]);
    assert_eq!(ma["config_sha256"], mb["config_sha256"]);
    let c = tmp.path().join("c");
    run(tmp.path(), SMALL, &["simulate", "--seed", "8", "--out", &c.display().to_string()]);
    assert_ne!(read(&a, "ensemble.csv"), read(&c, "ensemble.csv"));
}

#[test]
fn aggregate_is_independent_of_thread_count() {
    let tmp = TempDir::new().unwrap();
    let cfg = "trajectories = 4096\nrecord_every = 10\nwrite_trajectories = 0\n[wave]\nhorizon = 0.02\nmodes = 4\n";
    let one = tmp.path().join("one");
    let eight = tmp.path().join("eight");
    assert_eq!(
        run(tmp.path(), cfg, &["simulate", "--threads", "1", "--out", &one.display().to_string()]),
        EXIT_OK
    );
    assert_eq!(
        run(tmp.path(), cfg, &["simulate", "--threads", "8", "--out", &eight.display().to_string()]),
        EXIT_OK
    );
    assert_eq!(read(&one, "ensemble.csv"), read(&eight, "ensemble.csv"));
}

#[test]
fn zero_horizon_writes_initial_row_only() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let cfg = "trajectories = 1\n[wave]\nhorizon = 0.0\nmodes = 3\nu0 = [0.5, 0.25]\n";
    assert_eq!(run(tmp.path(), cfg, &["simulate", "--out", &out.display().to_string()]), EXIT_OK);
    let text = String::from_utf8(read(&out, "trajectory_00000.csv")).unwrap();
    assert_eq!(text, "t,u_1,u_2,u_3,v_1,v_2,v_3\n0.0,0.5,0.25,0.0,0.0,0.0,0.0\n");
}

#[test]
fn manifest_lists_checksums_and_config() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(run(tmp.path(), SMALL, &["simulate", "--out", &out.display().to_string()]), EXIT_OK);
    let m = manifest(&out);
    let files = m["files"].as_array().unwrap();
    assert_eq!(files.len(), 3);
    for f in files {
        let bytes = read(&out, f["name"].as_str().unwrap());
        assert_eq!(f["sha256"].as_str().unwrap(), awl::cli::output::sha256_hex(&bytes));
    }
    let config = m["config"].as_str().unwrap();
    let parsed = awl::cli::RunConfig::parse(config).unwrap();
    assert_eq!(parsed.trajectories, 6);
    assert_eq!(
        m["config_sha256"].as_str().unwrap(),
        awl::cli::output::sha256_hex(config.as_bytes())
    );
}

#[test]
fn config_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o").display().to_string();
    assert_eq!(run(tmp.path(), "bogus = 1\n", &["simulate", "--out", &out]), EXIT_CONFIG);
    assert_eq!(run(tmp.path(), "[wave]\nnu = 2.0\n", &["simulate", "--out", &out]), EXIT_CONFIG);
    assert_eq!(
        run(tmp.path(), "[weak_error]\nnu_grid = [0.1, 0.05]\n", &["weak-error", "--out", &out]),
        EXIT_CONFIG
    );
    assert_eq!(run(tmp.path(), "", &["simulate", "--threads", "0", "--out", &out]), EXIT_CONFIG);
    assert_eq!(main_with_args(["awl", "no-such-command"]), EXIT_CONFIG);
}

#[test]
fn blow_up_exits_three_and_is_recorded() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let cfg = "trajectories = 2\nwrite_trajectories = 2\n[wave]\nhorizon = 0.5\nmodes = 4\nu0 = [1e5]\n";
    assert_eq!(
        run(tmp.path(), cfg, &["simulate", "--out", &out.display().to_string()]),
        EXIT_BLOW_UP
    );
    let m = manifest(&out);
    assert_eq!(m["status"], "blow-up");
    assert_eq!(m["aborts"]["count"], 2);
    assert!(out.join("trajectory_00000.csv").exists());
}

#[test]
fn failed_check_exits_four() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let cfg = "[ssm_residual]\nexpected_slope = 3.0\n";
    assert_eq!(
        run(tmp.path(), cfg, &["ssm-residual", "--out", &out.display().to_string()]),
        EXIT_CHECK_FAILED
    );
    assert_eq!(manifest(&out)["status"], "check-failed");
}

#[test]
fn report_subcommands_pass_on_defaults() {
    let tmp = TempDir::new().unwrap();
    for cmd in ["fast-ou-stats", "martingale-qv", "ssm-residual", "ssm-compare"] {
        let out = tmp.path().join(cmd);
        assert_eq!(run(tmp.path(), "", &[cmd, "--out", &out.display().to_string()]), EXIT_OK, "{cmd}");
        assert_eq!(manifest(&out)["status"], "ok");
    }
}

#[test]
fn self_comparison_refuses_the_fit() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let cfg = "[wave]\nhorizon = 0.1\nmodes = 4\n[weak_error]\ntrajectories = 64\nreference = \"averaged\"\n";
    assert_eq!(run(tmp.path(), cfg, &["weak-error", "--out", &out.display().to_string()]), EXIT_OK);
    let fit = String::from_utf8(read(&out, "weak_error_fit.jsonl")).unwrap();
    assert!(fit.contains("\"status\":\"refused\""), "{fit}");
    let rows = String::from_utf8(read(&out, "weak_error.jsonl")).unwrap();
    for line in rows.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["abs_error"], 0.0);
    }
}

#[test]
fn ssm_paths_have_slow_columns() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let cfg = "model = \"ssm\"\ntrajectories = 2\nrecord_every = 100\n[ssm]\nsigma = 0.05\nbeta_prime = 0.1\nhorizon = 0.5\nh = 0.005\n";
    assert_eq!(run(tmp.path(), cfg, &["simulate", "--out", &out.display().to_string()]), EXIT_OK);
    let text = String::from_utf8(read(&out, "trajectory_00000.csv")).unwrap();
    assert!(text.starts_with("t,a,a_avg,u_1,"));
    assert_eq!(text.lines().count(), 2 + 1);
}
