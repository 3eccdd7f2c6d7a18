use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ces_cli::report::{BenchReport, RunReport};
use serde_json::json;

fn ces(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ces")).args(args).current_dir(dir).env_remove("CES_OUT_DIR").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const ARTIFACTS: [&str; 5] = ["trajectory.csv", "speed.csv", "bubbles.csv", "report.json", "plot.svg"];

fn write_maze(dir: &Path, seed: u64) -> std::path::PathBuf {
    let out = ces(&["scenario", "maze", "--seed", &seed.to_string()], dir);
    assert!(out.status.success(), "{}", stderr(&out));
    let path = dir.join(format!("maze{seed}.json"));
    fs::write(&path, &out.stdout).unwrap();
    path
}

fn load_report(dir: &Path) -> RunReport {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn maze_run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write_maze(tmp.path(), 5);
    let out = ces(&["run", file.to_str().unwrap(), "--out", "res", "--ces.max-iterations", "2"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for a in ARTIFACTS {
        assert!(tmp.path().join("res").join(a).is_file(), "missing {a}");
    }
    let r = load_report(&tmp.path().join("res"));
    assert!(r.audit.passed);
    assert!(r.iterations <= 2, "override ignored: {} iterations", r.iterations);
    // reductions recompute from the reported times
    let t0 = r.initial_time_s.unwrap();
    assert!((r.time_reduction_pct.unwrap() - 100.0 * (t0 - r.final_time_s) / t0).abs() < 1e-9);
    assert!((r.length_reduction_pct - 100.0 * (r.initial_length_m - r.final_length_m) / r.initial_length_m).abs() < 1e-9);
}

#[test]
fn out_dir_defaults_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write_maze(tmp.path(), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_ces"))
        .args(["run", file.to_str().unwrap(), "--ces.max-iterations", "1"])
        .current_dir(tmp.path())
        .env("CES_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(tmp.path().join("from-env/report.json").is_file());
}

#[test]
fn malformed_json_reports_location() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), "{\n  \"vehicle\": {\n    \"mu\": 0.8,,\n").unwrap();
    let out = ces(&["run", "bad.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_override_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write_maze(tmp.path(), 0);
    let out = ces(&["run", file.to_str().unwrap(), "--ces.no-such-key", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no_such_key"));
}

#[test]
fn blocked_goal_exits_infeasible() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = json!({
        "workspace": {"bounds": [0, 0, 20, 10], "obstacles": [[[15, 3], [19, 3], [19, 7], [15, 7]]]},
        "vehicle": {"mass_kg": 833.0, "mu": 0.8, "g": 9.81, "u_long_max_n": 3268.0, "r_min_m": 4.0},
        "reference": {"generator": {"kind": "grid", "start": [2, 5], "goal": [17, 5]}},
        "ces": {"r_l": 1.0, "r_u": 5.0}
    });
    fs::write(tmp.path().join("blocked.json"), scenario.to_string()).unwrap();
    let out = ces(&["run", "blocked.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unreachable goal"), "{}", stderr(&out));
}

#[test]
fn bench_of_one_matches_the_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write_maze(tmp.path(), 7);
    let run = ces(&["run", file.to_str().unwrap(), "--out", "single", "--no-timings", "--ces.max-iterations", "2"], tmp.path());
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let bench = ces(&["bench", "--count", "1", "--seed-base", "7", "--out", "b", "--no-timings", "--ces.max-iterations", "2"], tmp.path());
    assert_eq!(bench.status.code(), Some(0), "{}", stderr(&bench));
    let agg: BenchReport = serde_json::from_str(&fs::read_to_string(tmp.path().join("b/bench.json")).unwrap()).unwrap();
    assert_eq!(agg.count, 1);
    let mut single = load_report(&tmp.path().join("single"));
    single.scene = None;
    assert_eq!(agg.entries[0].report.as_ref().unwrap(), &single);
    let stdout = String::from_utf8_lossy(&bench.stdout);
    assert!(stdout.contains("time reduction"), "{stdout}");
}

#[test]
fn bench_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["bench", "--count", "2", "--seed-base", "11", "--out", out, "--no-timings", "--ces.max-iterations", "2"];
    for out in ["a", "b"] {
        let o = ces(&args(out), tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = fs::read(tmp.path().join("a/bench.json")).unwrap();
    let b = fs::read(tmp.path().join("b/bench.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn plot_handles_full_empty_and_partial_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let file = write_maze(tmp.path(), 2);
    let run = ces(&["run", file.to_str().unwrap(), "--out", "res", "--ces.max-iterations", "1"], tmp.path());
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let res = tmp.path().join("res");
    let first = fs::read(res.join("plot.svg")).unwrap();
    let again = ces(&["plot", "res"], tmp.path());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(fs::read(res.join("plot.svg")).unwrap(), first, "plot is not deterministic");

    fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(ces(&["plot", "empty"], tmp.path()).status.code(), Some(1));

    fs::remove_file(res.join("speed.csv")).unwrap();
    let partial = ces(&["plot", "res"], tmp.path());
    assert_eq!(partial.status.code(), Some(0));
    assert!(stderr(&partial).contains("speed.csv"));
    assert!(!fs::read_to_string(res.join("plot.svg")).unwrap().contains("linearGradient"));
}

#[test]
fn builtin_scenarios_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in ["maze", "lane-change", "moose"] {
        let out = ces(&["scenario", kind], tmp.path());
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        ces_core::scenarios::ScenarioFile::from_json(&text).unwrap();
    }
    assert_eq!(ces(&["scenario", "nope"], tmp.path()).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ces(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(ces(&["--help"], tmp.path()).status.code(), Some(0));
}
