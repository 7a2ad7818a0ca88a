//! End-to-end tests of the `mmq` binary: exit codes, byte-determinism,
//! config round-trips, and the structural invariants of each command's
//! output. Every run uses a deliberately tiny replication budget — the
//! statistical claims live in the acceptance suite, not here.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mmq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmq"))
}

/// Writes `text` as a config file and returns its path.
fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// The two-class demo in miniature: tiny n, few replications, short horizon.
fn small_config() -> String {
    serde_json::json!({
        "model": {
            "classes": 2,
            "states": 2,
            "generator": [[-2.0, 2.0], [1.0, -1.0]],
            "arrivals": {"base": [[1.0, 1.5], [1.0, 1.5]], "sqrtCoeff": [[0.6, 0.6], [1.2, 1.2]]},
            "services": {"base": [[2.5, 1.5], [2.5, 3.0]], "sqrtCoeff": [[3.0, 3.0], [6.0, 6.0]]},
            "holdingCosts": [20.0, 25.0],
            "discount": 2.0
        },
        "regime": {"nu": 1.0, "alpha": "auto"},
        "run": {
            "n": [4, 9],
            "policies": ["cmuStar", "dynamicCmu"],
            "replications": 8,
            "horizon": 2.0,
            "dt": 0.01,
            "masterSeed": 42,
            "gridDelta": 0.5,
            "traceHorizon": 0.5
        }
    })
    .to_string()
}

fn run(args: &[&str]) -> Output {
    mmq().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// All regular files under `dir`, relative names sorted.
fn file_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn verify_reports_the_demo_heavy_traffic_condition() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config());
    let out_dir = tmp.path().join("out");
    let out = run(&["verify", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_success(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("trafficSum,1.0000000000000000e0"), "{stdout}");
    assert!(stdout.contains("inHeavyTraffic,true"), "{stdout}");
    assert!(stdout.contains("cmuStarOrder,2-1"), "{stdout}");
    assert!(stdout.contains("regimeCovered,true"), "{stdout}");
    // The file carries exactly what was printed.
    let file = fs::read_to_string(out_dir.join("verify.csv")).unwrap();
    assert_eq!(file, stdout);
}

#[test]
fn every_command_is_byte_deterministic_across_reruns() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config());
    let cfg = cfg.to_str().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for dir in &dirs {
        let dir = dir.to_str().unwrap();
        for args in [
            vec!["verify", "--config", cfg, "--out", dir],
            vec!["simulate", "--config", cfg, "--out", dir],
            vec!["compare", "--config", cfg, "--out", dir],
            vec!["bcp", "--gap", "--config", cfg, "--out", dir],
            vec!["curves", "--config", cfg, "--out", dir],
        ] {
            assert_success(&run(&args));
        }
    }
    let names = file_names(&dirs[0]);
    assert_eq!(names, file_names(&dirs[1]));
    assert!(names.len() >= 9, "expected the full file set, got {names:?}");
    for name in &names {
        // The resolved echo embeds the output directory, which legitimately
        // differs between the two runs; everything else must match bitwise.
        if name == "resolved-config.json" {
            continue;
        }
        let a = fs::read(dirs[0].join(name)).unwrap();
        let b = fs::read(dirs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical reruns");
    }
}

#[test]
fn resolved_config_echo_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config());
    let d1 = tmp.path().join("first");
    let out = run(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        d1.to_str().unwrap(),
        "--seed",
        "7",
        "--reps",
        "5",
    ]);
    assert_success(&out);
    // Re-running from the echo with no flags must reproduce the table.
    let echo = d1.join("resolved-config.json");
    let d2 = tmp.path().join("second");
    let out = run(&[
        "compare",
        "--config",
        echo.to_str().unwrap(),
        "--out",
        d2.to_str().unwrap(),
    ]);
    assert_success(&out);
    let a = fs::read_to_string(d1.join("compare.csv")).unwrap();
    let b = fs::read_to_string(d2.join("compare.csv")).unwrap();
    assert_eq!(a, b);
    // The override made it into the echo.
    assert!(a.lines().nth(1).unwrap().contains(",5,"), "replication override lost: {a}");
}

#[test]
fn exit_codes_separate_parse_invariant_and_runtime_failures() {
    let tmp = TempDir::new().unwrap();
    let small = small_config();
    let good = write_config(tmp.path(), "good.json", &small);
    let malformed = write_config(tmp.path(), "malformed.json", "{\"model\": ");
    let unknown = write_config(tmp.path(), "unknown.json", &small.replacen("classes", "classez", 1));
    let positive_diagonal = write_config(
        tmp.path(),
        "posdiag.json",
        &small.replacen("[[-2.0,2.0],[1.0,-1.0]]", "[[2.0,-2.0],[1.0,-1.0]]", 1),
    );
    let one_policy = write_config(
        tmp.path(),
        "onepol.json",
        &small.replacen("[\"cmuStar\",\"dynamicCmu\"]", "[\"cmuStar\"]", 1),
    );
    let out_dir = tmp.path().join("out");
    let out_dir = out_dir.to_str().unwrap();

    // Parse failures: exit 2.
    let out = run(&["verify", "--config", malformed.to_str().unwrap(), "--out", out_dir]);
    assert_eq!(exit_code(&out), 2);
    // JSON errors are line-anchored.
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"), "{out:?}");
    let out = run(&["verify", "--config", unknown.to_str().unwrap(), "--out", out_dir]);
    assert_eq!(exit_code(&out), 2);
    let out = run(&["verify", "--config", tmp.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let out = run(&["verify"]);
    assert_eq!(exit_code(&out), 2);

    // Invariant failures: exit 3.
    let out = run(&["verify", "--config", positive_diagonal.to_str().unwrap(), "--out", out_dir]);
    assert_eq!(exit_code(&out), 3);
    let out = run(&["compare", "--config", one_policy.to_str().unwrap(), "--out", out_dir]);
    assert_eq!(exit_code(&out), 3);

    // Runtime failures: exit 4 (output directory blocked by a file).
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let nested = blocker.join("sub");
    let out = run(&["verify", "--config", good.to_str().unwrap(), "--out", nested.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 4);
}

#[test]
fn identical_policies_compare_to_exactly_zero() {
    let tmp = TempDir::new().unwrap();
    let text = small_config().replacen("dynamicCmu", "cmuStar", 1);
    let cfg = write_config(tmp.path(), "c.json", &text);
    let out_dir = tmp.path().join("out");
    let out = run(&["compare", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_success(&out);
    let table = fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    let zero = "0.0000000000000000e0";
    for line in table.lines().filter(|l| l.starts_with("crnDiff[")) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[5], zero, "diff mean must be exactly zero: {line}");
        assert_eq!(fields[6], zero, "diff standard error must be exactly zero: {line}");
        assert_eq!(fields[8], zero, "{line}");
        assert_eq!(fields[9], zero, "{line}");
    }
}

#[test]
fn single_class_work_conserving_policies_coincide() {
    let tmp = TempDir::new().unwrap();
    let text = serde_json::json!({
        "model": {
            "classes": 1,
            "states": 2,
            "generator": [[-1.0, 1.0], [2.0, -2.0]],
            "arrivals": {"base": [[0.8], [0.8]]},
            "services": {"base": [[1.0], [1.0]]},
            "holdingCosts": [3.0],
            "discount": 1.0
        },
        "regime": {"nu": 1.0, "alpha": "auto"},
        "run": {
            "n": [9],
            "policies": ["cmuStar", "dynamicCmu", {"static": [1]}],
            "replications": 6,
            "horizon": 2.0,
            "masterSeed": 5,
            "gridDelta": 0.5
        }
    })
    .to_string();
    let cfg = write_config(tmp.path(), "c.json", &text);
    let out_dir = tmp.path().join("out");
    let out = run(&["compare", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_success(&out);
    let table = fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    let zero = "0.0000000000000000e0";
    let diff_rows: Vec<&str> = table.lines().filter(|l| l.starts_with("crnDiff[")).collect();
    assert_eq!(diff_rows.len(), 2);
    for line in diff_rows {
        assert_eq!(line.split(',').nth(5).unwrap(), zero, "{line}");
    }
}

#[test]
fn zero_discount_makes_the_two_curves_coincide() {
    let tmp = TempDir::new().unwrap();
    let text = small_config().replacen("\"discount\":2.0", "\"discount\":0.0", 1);
    assert_ne!(text, small_config(), "replacement must hit");
    let cfg = write_config(tmp.path(), "c.json", &text);
    let out_dir = tmp.path().join("out");
    let out = run(&["curves", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_success(&out);
    for n in [4, 9] {
        let text = fs::read_to_string(out_dir.join(format!("curves-n{n}.csv"))).unwrap();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[1], f[2], "c1 and c2 must match bitwise at discount 0: {line}");
            assert_eq!(f[3], f[4], "{line}");
        }
    }
}

#[test]
fn discounted_curve_stays_below_the_undiscounted_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config());
    let out_dir = tmp.path().join("out");
    let out = run(&["curves", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_success(&out);
    let text = fs::read_to_string(out_dir.join("curves-n9.csv")).unwrap();
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(f[2] <= f[1] && f[4] <= f[3], "discounting must not increase cost: {line}");
    }
}

#[test]
fn simulate_dumps_one_trace_per_replication() {
    let tmp = TempDir::new().unwrap();
    let text = small_config().replacen("\"traceHorizon\":0.5", "\"traceHorizon\":0.5,\"traceReplications\":2", 1);
    assert_ne!(text, small_config(), "replacement must hit");
    let cfg = write_config(tmp.path(), "c.json", &text);
    let out_dir = tmp.path().join("out");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_success(&out);
    let r0 = fs::read_to_string(out_dir.join("trace-cmu-star-n4-r0.csv")).unwrap();
    let r1 = fs::read_to_string(out_dir.join("trace-cmu-star-n4-r1.csv")).unwrap();
    assert!(r0.starts_with("time,kind,class,envState,"), "{}", &r0[..60.min(r0.len())]);
    assert_ne!(r0, r1, "distinct replications must yield distinct traces");
}

#[test]
fn uncovered_regimes_are_labeled_not_rejected() {
    let tmp = TempDir::new().unwrap();
    // Negative ν with state-dependent service rates: constructible, but
    // outside the covered map, so verify must label it and still exit 0.
    let text = small_config().replacen("\"alpha\":\"auto\",\"nu\":1.0", "\"alpha\":0.5,\"nu\":-0.3333333333333333", 1);
    assert_ne!(text, small_config(), "replacement must hit");
    let cfg = write_config(tmp.path(), "c.json", &text);
    let out_dir = tmp.path().join("out");
    let out = run(&["verify", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_success(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("regimeCovered,false"), "{stdout}");
    assert!(stdout.contains("violation1,"), "{stdout}");
}

#[test]
fn bcp_emits_the_benchmark_row_and_the_gap() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config());
    let out_dir = tmp.path().join("out");
    let out = run(&["bcp", "--gap", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_success(&out);
    let table = fs::read_to_string(out_dir.join("bcp.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "header, BCP, cmu-star, gap: {table}");
    assert!(lines[1].starts_with("BCP,limit,"), "{table}");
    assert!(lines[2].starts_with("cmu-star,9,"), "{table}");
    assert!(lines[3].starts_with("gap[cmu-star],9,"), "{table}");
    let spec = fs::read_to_string(out_dir.join("bcp-spec.csv")).unwrap();
    for key in ["workloadDrift,", "workloadVariance,", "theta1,", "sigma11,", "lambdaCov11,"] {
        assert!(spec.contains(key), "missing {key} in {spec}");
    }
}
