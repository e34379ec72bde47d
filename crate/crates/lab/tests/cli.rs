use std::path::Path;
use std::process::{Command, Output};

use emo_lab::report::strip_wall_time;

const BIN: &str = env!("CARGO_BIN_EXE_emo-lab");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap()
}

fn small(experiment: &str, extra: &str) -> String {
    format!(
        r#"experiment = "{experiment}"
seeds = [0, 1, 2]
iterations = 3
test_episodes = 10
output = "out"

[family.cluster]
n_way = 3
m_query = 4
input_dim = 4
n_modes = 2

[learner]
hidden = [8]

[encoder]
hidden = [8]
d_e = 8
d_key = 8
ffn_hidden = 8

[aggregator]
d_agg = 8
ffn_hidden = 8

[memory]
capacity = 6

{extra}
"#
    )
}

fn inner(alpha: f64, steps: usize, tail: &str) -> String {
    format!("[inner]\nalpha = {alpha:?}\nsteps = {steps}\nk = 3\n{tail}\n")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(2).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn defaults_validate_for_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    for kind in emo_lab::ExperimentKind::ALL {
        let out = run(dir.path(), &["print-defaults", "--experiment", kind.as_str()]);
        assert!(out.status.success());
        let f = write(dir.path(), "d.toml", &String::from_utf8(out.stdout).unwrap());
        let v = run(dir.path(), &["validate", &f]);
        assert!(v.status.success(), "{}: {}", kind.as_str(), String::from_utf8_lossy(&v.stderr));
    }
    assert_eq!(run(dir.path(), &["print-defaults", "--experiment", "nope"]).status.code(), Some(2));
}

#[test]
fn missing_alpha_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "c.toml", &small("train", "[inner]\nsteps = 1\n"));
    let out = run(dir.path(), &["run", &f]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inner.alpha"));
}

#[test]
fn theorem1_default_is_satisfied() {
    let dir = tempfile::tempdir().unwrap();
    let defaults = run(dir.path(), &["print-defaults", "--experiment", "theorem1-sweep"]);
    let f = write(dir.path(), "t.toml", &String::from_utf8(defaults.stdout).unwrap());
    let out = run(dir.path(), &["run", &f]);
    assert!(out.status.success());
    let csv = read(dir.path(), "out/theorem1-sweep/theorem1.csv");
    assert!(csv.starts_with("# emo-lab csv v1\n"));
    let body = rows(&csv);
    assert_eq!(body.len(), 500);
    assert!(body.iter().all(|r| r[4] == "true"));
}

#[test]
fn untrained_step_zero_conditions_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("compare-optimizers", &inner(0.1, 0, "")).replace("iterations = 3", "iterations = 0");
    let f = write(dir.path(), "c.toml", &cfg);
    assert!(run(dir.path(), &["run", &f]).status.success());
    let r = rows(&read(dir.path(), "out/report.csv"));
    assert_eq!(r.len(), 4);
    assert!(r.iter().all(|row| row[2] == r[0][2] && row[4] == "30"), "{r:?}");
}

#[test]
fn zero_capacity_emo_matches_sgd() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("compare-optimizers", &inner(0.1, 2, "")).replace("capacity = 6", "capacity = 0")
        + "[compare]\nconditions = [\"sgd\", \"emo\"]\n";
    let f = write(dir.path(), "c.toml", &cfg);
    assert!(run(dir.path(), &["run", &f]).status.success());
    let curves = rows(&read(dir.path(), "out/curves.csv"));
    let (sgd, emo): (Vec<_>, Vec<_>) = curves.into_iter().partition(|r| r[0] == "sgd");
    assert_eq!(sgd.len(), emo.len());
    for (a, b) in sgd.iter().zip(&emo) {
        assert_eq!(a[1..], b[1..]);
    }
    let report = rows(&read(dir.path(), "out/report.csv"));
    assert_eq!(report[0][2..5], report[1][2..5]);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("ablate-controller", &inner(0.1, 1, ""));
    let f = write(dir.path(), "c.toml", &cfg);
    let f2 = write(dir.path(), "c2.toml", &cfg.replace("output = \"out\"", "output = \"out2\""));
    assert!(run(dir.path(), &["run", &f]).status.success());
    assert!(run(dir.path(), &["run", &f2]).status.success());
    for name in ["report.csv", "curves.csv", "per_seed.csv"] {
        let a = strip_wall_time(&read(dir.path(), &format!("out/{name}")));
        let b = strip_wall_time(&read(dir.path(), &format!("out2/{name}")));
        assert_eq!(a, b, "{name}");
    }
    assert_eq!(rows(&read(dir.path(), "out/report.csv")).len(), 3);
}

#[test]
fn ablation_grids_produce_one_row_each() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, n) in [("ablate-steps", 4), ("ablate-memory-size", 3)] {
        let f = write(dir.path(), "a.toml", &small(kind, &inner(0.1, 1, "")));
        let out = run(dir.path(), &["run", &f]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let r = rows(&read(dir.path(), "out/report.csv"));
        assert_eq!(r.len(), n, "{kind}");
    }
    let r = rows(&read(dir.path(), "out/report.csv"));
    assert_eq!(r[0][0], "memory-size=10");
}

#[test]
fn train_eval_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "t.toml", &small("train", &inner(0.1, 1, "")));
    assert!(run(dir.path(), &["run", &f]).status.success());
    for name in ["train_seed0.csv", "memory_seed0.emo", "params_seed0.emp", "report.csv", "summary.md"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
    let eval = small("eval", &inner(0.1, 1, ""))
        .replace("output = \"out\"", "output = \"eval\"")
        + "[eval]\nparams = \"out/params_seed0.emp\"\nmemory = \"out/memory_seed0.emo\"\n";
    let f = write(dir.path(), "e.toml", &eval);
    let out = run(dir.path(), &["run", &f]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows(&read(dir.path(), "eval/report.csv"))[0][4], "30");

    let out = run(dir.path(), &["inspect-memory", "out/memory_seed0.emo"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("capacity: 6") && text.contains("occupancy: 6/6") && text.contains("controller: fifo"), "{text}");

    std::fs::write(dir.path().join("bad.emo"), b"nope").unwrap();
    assert_eq!(run(dir.path(), &["inspect-memory", "bad.emo"]).status.code(), Some(1));
}

#[test]
fn divergence_exits_with_three_and_flushes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("compare-optimizers", &inner(1e200, 3, "")) + "[compare]\nconditions = [\"sgd\"]\n";
    let f = write(dir.path(), "c.toml", &cfg);
    let out = run(dir.path(), &["run", &f]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/report.csv").exists());
}

#[test]
fn thread_cap_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "c.toml", &small("train", &inner(0.1, 1, "")));
    let out = Command::new(BIN).args(["validate", &f]).env("EMO_THREADS", "0").current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(BIN).args(["validate", &f]).env("EMO_THREADS", "2").current_dir(dir.path()).output().unwrap();
    assert!(out.status.success());
}
