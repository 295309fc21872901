use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const RUN: &str = r#"
seed = 1

[pool]
volume = 40

[attack]
epsilon = 35.0
top_n = 3
t_max = 50
tau_c = "calibrate"

[targets]
count = 3

[paths]
pool = "pool.bin"
thresholds = "thresholds.json"
results = "results.jsonl"
report = "report.csv"
"#;

fn workdir(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn invkit(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_invkit"));
    cmd.current_dir(dir).arg("--config").arg("run.toml").args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("INVKIT_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(env.iter().copied());
    cmd.output().unwrap()
}

fn ok(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let out = invkit(dir, args, env);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> i32 {
    invkit(dir, args, env).status.code().unwrap()
}

fn full_run(dir: &Path, env: &[(&str, &str)]) {
    for step in ["build-pool", "calibrate", "attack", "report"] {
        ok(dir, &[step], env);
    }
}

/// Results with every `wall_time` field zeroed.
fn results_without_time(path: &Path) -> Vec<serde_json::Value> {
    fn zero(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, x) in m.iter_mut() {
                    if k == "wall_time" {
                        *x = serde_json::json!(0.0);
                    } else {
                        zero(x);
                    }
                }
            }
            serde_json::Value::Array(a) => a.iter_mut().for_each(zero),
            _ => {}
        }
    }
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            zero(&mut v);
            v
        })
        .collect()
}

/// Report lines with the trailing wall_time column dropped.
fn report_without_time(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() >= 8 && !l.starts_with("# cross_model") {
                fields[..7].join(",")
            } else if l.starts_with("# cross_model") {
                [&fields[..7], &fields[8..]].concat().join(",")
            } else {
                l.to_string()
            }
        })
        .collect()
}

#[test]
fn pipeline_is_deterministic() {
    let (a, b) = (workdir(RUN), workdir(RUN));
    full_run(a.path(), &[]);
    full_run(b.path(), &[]);
    let read = |d: &TempDir, f: &str| fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "pool.bin"), read(&b, "pool.bin"));
    assert_eq!(read(&a, "thresholds.json"), read(&b, "thresholds.json"));
    assert_eq!(
        results_without_time(&a.path().join("results.jsonl")),
        results_without_time(&b.path().join("results.jsonl"))
    );
    assert_eq!(
        report_without_time(&a.path().join("report.csv")),
        report_without_time(&b.path().join("report.csv"))
    );
}

#[test]
fn seed_changes_outputs() {
    let (a, b) = (workdir(RUN), workdir(RUN));
    ok(a.path(), &["build-pool"], &[]);
    ok(b.path(), &["build-pool", "--seed", "2"], &[]);
    assert_ne!(fs::read(a.path().join("pool.bin")).unwrap(), fs::read(b.path().join("pool.bin")).unwrap());
}

#[test]
fn report_has_rows_per_target_and_model() {
    let dir = workdir(RUN);
    full_run(dir.path(), &[("INVKIT_TARGETS_COUNT", "2")]);
    let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "target_id,target_model,eval_model,similarity,type1_hit,type2_rate,queries,wall_time");
    let detail = lines[1..].iter().filter(|l| !l.starts_with('#') && !l.starts_with("average")).count();
    let averages = lines.iter().filter(|l| l.starts_with("average,")).count();
    assert_eq!(detail, 4);
    assert_eq!(averages, 2);
    assert!(text.contains("# rows,4\n"));
    assert!(text.contains("# failed_targets,0\n"));
    assert_eq!(fs::read_to_string(dir.path().join("results.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn out_flag_overrides_configured_path() {
    let dir = workdir(RUN);
    ok(dir.path(), &["build-pool", "--out", "other.bin"], &[]);
    assert!(dir.path().join("other.bin").exists());
    assert!(!dir.path().join("pool.bin").exists());
}

#[test]
fn configuration_errors_exit_2() {
    let dir = workdir(RUN);
    ok(dir.path(), &["build-pool"], &[]);
    ok(dir.path(), &["calibrate"], &[]);
    assert_eq!(code(dir.path(), &["attack"], &[("INVKIT_TARGETS_MODEL", "synthetic-9")]), 2);
    assert_eq!(code(dir.path(), &["attack"], &[("INVKIT_ATTACK_EPSILOM", "3")]), 2);
    assert_eq!(code(dir.path(), &["attack"], &[("INVKIT_ATTACK_EPSILON", "-1")]), 2);
    assert_eq!(code(dir.path(), &["attack", "--jobs", "0"], &[]), 2);
    let bad = workdir("[attack]\nnorm = \"l3\"\n");
    assert_eq!(code(bad.path(), &["build-pool", "--out", "p.bin"], &[]), 2);
}

#[test]
fn pool_exhaustion_exits_3() {
    let dir = workdir(RUN);
    assert_eq!(code(dir.path(), &["build-pool"], &[("INVKIT_POOL_MAX_DRAWS", "100")]), 3);
    assert!(!dir.path().join("pool.bin").exists());
}

#[test]
fn missing_or_damaged_files_exit_4() {
    let dir = workdir(RUN);
    ok(dir.path(), &["calibrate"], &[]);
    assert_eq!(code(dir.path(), &["attack"], &[]), 4);
    ok(dir.path(), &["build-pool"], &[]);
    let pool = dir.path().join("pool.bin");
    let mut bytes = fs::read(&pool).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    fs::write(&pool, &bytes).unwrap();
    assert_eq!(code(dir.path(), &["attack"], &[]), 4);
    bytes.truncate(mid);
    fs::write(&pool, &bytes).unwrap();
    assert_eq!(code(dir.path(), &["attack"], &[]), 4);
    fs::write(&pool, b"not a pool").unwrap();
    assert_eq!(code(dir.path(), &["attack"], &[]), 4);
}

fn toy_adapter() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy_adapter.py")
}

fn adapter_config(mode: &str, embedder_args: &str) -> String {
    let script = toy_adapter().display().to_string();
    let budget = if mode == "whitebox" { "t_max = 10" } else { "q_max = 200" };
    format!(
        r#"
seed = 3

[backend]
kind = "adapters"
generator = ["python3", "{script}", "generator"]
embedders = [["python3", "{script}", "embedder"{embedder_args}]]
detector = ["python3", "{script}", "detector"]

[pool]
volume = 6

[attack]
mode = "{mode}"
epsilon = 5.0
top_n = 2
{budget}
tau_c = 0.9

[targets]
model = "toy-embedder"
file = "targets.jsonl"

[paths]
pool = "pool.bin"
results = "results.jsonl"
"#
    )
}

fn write_adapter_targets(dir: &Path) {
    let lines: Vec<String> = (0..2)
        .map(|i| {
            let e: Vec<f64> = (0..8).map(|k| ((i * 8 + k) as f64 * 0.7).sin()).collect();
            serde_json::json!({"target_id": format!("t{i}"), "embedding": e}).to_string()
        })
        .collect();
    fs::write(dir.join("targets.jsonl"), lines.join("\n") + "\n").unwrap();
}

#[test]
fn adapter_backend_attacks_targets() {
    let dir = workdir(&adapter_config("blackbox", ""));
    write_adapter_targets(dir.path());
    ok(dir.path(), &["build-pool"], &[]);
    ok(dir.path(), &["attack"], &[]);
    let results = fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 2);
    assert!(results.lines().all(|l| l.contains(r#""status":"ok""#)));
}

#[test]
fn every_target_failing_exits_5() {
    let dir = workdir(&adapter_config("blackbox", r#", "fail""#));
    write_adapter_targets(dir.path());
    ok(dir.path(), &["build-pool"], &[]);
    assert_eq!(code(dir.path(), &["attack"], &[]), 5);
    let results = fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 2);
    assert!(results.lines().all(|l| l.contains(r#""status":"failed""#)));
}

#[test]
fn whitebox_against_adapters_exits_2() {
    let dir = workdir(&adapter_config("whitebox", ""));
    write_adapter_targets(dir.path());
    ok(dir.path(), &["build-pool"], &[]);
    assert_eq!(code(dir.path(), &["attack"], &[]), 2);
}
