use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use boss_core::bench::{regret_rows, run_policy, write_regret_csv, GaussianBanditInstance, PoolPolicy};
use boss_core::subsample::{RoundLimit, SsParams};

fn boss(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boss"))
        .args(args)
        .current_dir(dir)
        .env_remove("BOSS_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Deterministic objective: `(x - 0.3)^2 + 1 / budget`, after some log noise.
const QUADRATIC: &str = r#"#!/bin/sh
read cfg
x=$(echo "$cfg" | sed 's/.*"x":\([-0-9.eE+]*\).*/\1/')
echo "starting"
awk -v x="$x" -v b="$2" 'BEGIN { printf "%.17g\n", (x - 0.3) * (x - 0.3) + 1 / b }'
"#;

fn write_space(dir: &Path, command: &str, direction: &str) {
    let script = dir.join("obj.sh");
    fs::write(&script, QUADRATIC).unwrap();
    Command::new("chmod").arg("+x").arg(&script).status().unwrap();
    fs::write(
        dir.join("space.toml"),
        format!(
            "[objective]\ncommand = \"{command}\"\ndirection = \"{direction}\"\ntimeout = 30\n\n\
             [[param]]\nname = \"x\"\nkind = \"continuous\"\nlower = 0\nupper = 1\n"
        ),
    )
    .unwrap();
}

#[test]
fn bounds_gaussian_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = boss(&["bounds", "--means", "0,0.5", "--sigma", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("lower bound: 4.0000000000"), "{out}");
    assert!(out.contains("ss upper bound: 4.0000000000"), "{out}");
    assert!(out.contains("1,0.5,0.5,0.125,0.125"), "{out}");
}

#[test]
fn bounds_other_families() {
    let dir = tempfile::tempdir().unwrap();
    let o = boss(&["bounds", "--family", "bernoulli", "--means", "0.2,0.5,0.7"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = boss(&["bounds", "--family", "poisson", "--means", "1,2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = boss(&["bounds", "--family", "bernoulli", "--means", "0,0.5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn degenerate_instance_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = boss(&["bounds", "--means", "0,0,1"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = boss(&["bench", "--means", "0.1,0.1", "--runs", "1"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = boss(&["tune", "--policy", "boss"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--space"), "{}", stderr(&o));
    assert_eq!(boss(&["tune", "--policy", "grid", "--space", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(boss(&["tune", "--policy", "boss", "--space", "missing.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(boss(&[], dir.path()).status.code(), Some(1));
    assert_eq!(boss(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn space_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("space.toml"),
        "[objective]\ncommand = \"true\"\n\n[[param]]\nname = \"lr\"\nkind = \"log_continuous\"\nlower = 0\nupper = 1\n",
    )
    .unwrap();
    let o = boss(&["tune", "--policy", "boss", "--space", "space.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 6"), "{err}");
    assert!(err.contains("must be > 0"), "{err}");
}

#[test]
fn tune_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    write_space(dir.path(), "./obj.sh", "minimize");
    for out in ["a.jsonl", "b.jsonl"] {
        let o = boss(&["tune", "--policy", "boss", "--space", "space.toml", "--seed", "5", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b.jsonl")).unwrap());
    let header: serde_json::Value = serde_json::from_str(a.lines().next().unwrap()).unwrap();
    assert_eq!(header["schema"], "boss-trace/1");
    assert_eq!(header["seed"], 5);
    assert_eq!(header["policy"], "boss");
    assert_eq!(header["params"]["eta"], 3.0);
    assert_eq!(header["params"]["qn_rule"], "sqrt_log");
    assert!(a.lines().count() > 20);
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    write_space(dir.path(), "./obj.sh", "minimize");
    let o = boss(&["tune", "--policy", "sh", "--space", "space.toml", "--configs", "9", "--seed", "11", "--out", "flag.jsonl"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_boss"))
        .args(["tune", "--policy", "sh", "--space", "space.toml", "--configs", "9", "--out", "env.jsonl"])
        .current_dir(dir.path())
        .env("BOSS_SEED", "11")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("flag.jsonl")).unwrap(),
        fs::read_to_string(dir.path().join("env.jsonl")).unwrap()
    );
}

#[test]
fn every_tune_policy_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_space(dir.path(), "./obj.sh", "minimize");
    for policy in ["ss", "mss", "sh", "hb", "bohb", "boss", "parallel-boss"] {
        let o = boss(
            &["tune", "--policy", policy, "--space", "space.toml", "--configs", "9", "--max-budget", "9", "--workers", "3", "--out", "t.jsonl"],
            dir.path(),
        );
        assert!(o.status.success(), "{policy}: {}", stderr(&o));
        assert!(stdout(&o).starts_with(&format!("{policy}: ")), "{}", stdout(&o));
        let trace = fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
        let last: serde_json::Value = serde_json::from_str(trace.lines().last().unwrap()).unwrap();
        assert_eq!(last["policy"], policy);
        assert!(last["budget"].as_f64().unwrap() <= 9.0);
    }
}

#[test]
fn maximize_negates_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    write_space(dir.path(), "./obj.sh", "maximize");
    let o = boss(&["tune", "--policy", "sh", "--space", "space.toml", "--configs", "3", "--out", "t.jsonl"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    for line in trace.lines().skip(1) {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(r["loss"].as_f64().unwrap() < 0.0, "{line}");
    }
}

#[test]
fn all_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write_space(dir.path(), "exit 1", "minimize");
    let o = boss(&["tune", "--policy", "sh", "--space", "space.toml", "--configs", "3", "--out", "t.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    // Failures are kept in the trace with a null loss.
    let trace = fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    assert!(trace.lines().nth(1).unwrap().contains("\"loss\":null"));
}

#[test]
fn bench_is_seed_pinned() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["bench", "--policy", "ss,mss,sh", "--arms", "9", "--runs", "4", "--rounds", "100", "--seed", "7", "--out", out]
    };
    for out in ["a.csv", "b.csv"] {
        let o = boss(&args(out), dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("ss: accuracy"), "{}", stdout(&o));
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    assert!(a.starts_with(b"policy,run,step,budget_spent,avg_regret,cum_regret\n"));
}

#[test]
fn report_matches_in_memory_regret() {
    let dir = tempfile::tempdir().unwrap();
    let o = boss(
        &["bench", "--policy", "ss,sh", "--arms", "6", "--sigma", "0.7", "--runs", "3", "--rounds", "50", "--seed", "2", "--out", "bench.csv", "--traces", "traces"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let params = SsParams { limit: RoundLimit::Rounds(50), ..SsParams::default() };
    for (policy, label) in [(PoolPolicy::Ss, "ss"), (PoolPolicy::Sh, "sh")] {
        for run in 0..3 {
            let trace = format!("traces/{label}-{run}.jsonl");
            let o = boss(&["report", "--trace", &trace], dir.path());
            assert!(o.status.success(), "{}", stderr(&o));

            let inst = GaussianBanditInstance::new(6, 0.7, 2 + run as u64).unwrap();
            let result = run_policy(policy, &inst, &params).unwrap();
            let rows = regret_rows(&result.trace, &inst, label, run).unwrap();
            let mut expected = Vec::new();
            write_regret_csv(&mut expected, &rows).unwrap();
            assert_eq!(o.stdout, expected, "{label} run {run}");
        }
    }
}

#[test]
fn report_needs_arm_means() {
    let dir = tempfile::tempdir().unwrap();
    write_space(dir.path(), "./obj.sh", "minimize");
    let o = boss(&["tune", "--policy", "sh", "--space", "space.toml", "--configs", "3", "--out", "t.jsonl"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = boss(&["report", "--trace", "t.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--means"), "{}", stderr(&o));
}
