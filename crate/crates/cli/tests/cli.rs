use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dynrag(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynrag"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("DYNRAG_OUT")
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_dir(o: &Output) -> PathBuf {
    let text = stdout(o);
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .unwrap_or_else(|| panic!("no run directory in {text:?}"));
    PathBuf::from(line)
}

/// The smoke config with `overrides` (`key = value` lines) replacing its keys.
fn write_config(dir: &Path, overrides: &str) -> String {
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let replaced: Vec<String> = overrides.lines().map(key).collect();
    let base = std::fs::read_to_string(config("smoke.conf")).unwrap();
    let kept: Vec<&str> = base.lines().filter(|l| !replaced.contains(&key(l))).collect();
    let path = dir.join(format!("run{}.conf", replaced.len()));
    std::fs::write(&path, format!("{}\n{overrides}", kept.join("\n"))).unwrap();
    path.display().to_string()
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dynrag(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(dynrag(tmp.path(), &["train"]).status.code(), Some(1));
    assert_eq!(
        dynrag(tmp.path(), &["synth", "--docs", "x", "--examples", "1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(dynrag(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(dynrag(tmp.path(), &["train", "--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.conf");
    std::fs::write(&path, "no_such_key = 3\n").unwrap();
    let o = dynrag(tmp.path(), &["train", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
    let missing = dynrag(tmp.path(), &["train", "--config", "/nonexistent/x.conf"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = [
        "synth",
        "--docs",
        "9",
        "--examples",
        "30",
        "--vocab",
        "120",
        "--seed",
        "3",
    ];
    let (oa, ob) = (dynrag(a.path(), &args), dynrag(b.path(), &args));
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    let read = |o: &Output| std::fs::read(run_dir(o).join("corpus.jsonl")).unwrap();
    assert_eq!(read(&oa), read(&ob));
    assert_eq!(read(&oa).iter().filter(|&&c| c == b'\n').count(), 9 + 30 + 1);
}

#[test]
fn gradcheck_passes_and_corruption_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = dynrag(tmp.path(), &["gradcheck", "--seed", "1"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(stdout(&ok).contains("tolerance 1e-4"));
    let bad = dynrag(tmp.path(), &["gradcheck", "--corrupt-backward", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn lambda_zero_logs_equal_loss_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dynrag(
        tmp.path(),
        &["train", "--config", &config("smoke.conf"), "--lambda", "0", "--trace"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = run_dir(&o);
    let log = std::fs::read_to_string(dir.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,L_gen,L_ret,L_total,probe_retrieval_acc"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r[1] == r[3]));
    for name in [
        "config.txt",
        "checkpoint.bin",
        "metrics.csv",
        "traces.jsonl",
        "manifest.json",
    ] {
        assert!(dir.join(name).exists(), "{name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let mut on_disk: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    let config_txt = std::fs::read_to_string(dir.join("config.txt")).unwrap();
    assert!(config_txt.lines().any(|l| l == "lambda=0"));
}

#[test]
fn one_step_run_and_eval_of_its_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "steps = 1\n");
    let one = dynrag(tmp.path(), &["train", "--config", &conf, "--seed", "5"]);
    assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
    let dir = run_dir(&one);
    let log = std::fs::read_to_string(dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().nth(1).unwrap().starts_with("1,"));

    let ckpt = dir.join("checkpoint.bin");
    let eval_conf = write_config(tmp.path(), &format!("steps = 1\ncheckpoint = {}\n", ckpt.display()));
    let eval = dynrag(tmp.path(), &["eval", "--config", &eval_conf, "--seed", "5"]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let metrics = std::fs::read_to_string(run_dir(&eval).join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("run_id,bucket,bleu,rouge_l,retrieval_acc,robustness_pct,n_examples\n"));
    assert!(metrics.lines().nth(1).unwrap().split(',').nth(1) == Some("all"));
}

#[test]
fn ablate_and_robustness_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "steps = 4\nmiss_penalty = 3\n");
    let a = dynrag(tmp.path(), &["ablate", "--config", &conf, "--k", "3"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let table = std::fs::read_to_string(run_dir(&a).join("ablation.csv")).unwrap();
    let variants: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(
        variants,
        [
            "static_query",
            "query_plus_history",
            "query_plus_context",
            "attention_fusion"
        ]
    );

    let r = dynrag(tmp.path(), &["robustness", "--config", &conf]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let table = std::fs::read_to_string(run_dir(&r).join("robustness.csv")).unwrap();
    let buckets: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(buckets, ["low", "mid", "high"]);
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dynrag"))
        .args(["synth", "--docs", "9", "--examples", "9", "--vocab", "120"])
        .env("DYNRAG_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(run_dir(&o).starts_with(tmp.path()));
}
