use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
seed = 7

[oracle]
target_aal = 6.607

[labeler]
lambda_hi = 1.5

[train]
lr = 0.01
epochs = 3
hidden = 16

[trace]
n_episodes = 40

[sweep]
episodes = 2
round_log_episodes = 1
taus = [1e-300, 0.5, 0.9]

[ablation]
episodes = 4
"#;

fn wisv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wisv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn error_line(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr not empty");
    serde_json::from_str(last).unwrap_or_else(|_| panic!("not a JSON error line: {last}"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn all_writes_full_grid_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = wisv(&["--config", &cfg, "--out", out.to_str().unwrap(), "all"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }

    let csv = read(&a.join("eval/metrics.csv"));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "mode,k,tau,rate_bps,rtt_s,aal,rounds,latency_s,throughput,accuracy_proxy,uplink_bits,downlink_bits"
    );
    // 4 modes x 5 windows x 4 scenarios
    assert_eq!(lines.count(), 80);
    assert_eq!(read(&a.join("eval/tau_sweep.csv")).lines().count(), 1 + 3);

    for rel in [
        "run_manifest.json",
        "traces/episodes.jsonl",
        "traces/mismatches.jsonl",
        "traces/stats.json",
        "data/dataset.bin",
        "data/dataset.json",
        "head/head.bin",
        "head/head.json",
        "eval/episodes.jsonl",
        "eval/rounds.jsonl",
        "eval/fig4.json",
        "eval/summary.json",
        "ablation/ablation.csv",
        "ablation/ablation.json",
        "ablation/head_nocsi.bin",
    ] {
        let x = std::fs::read(a.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
        let y = std::fs::read(b.join(rel)).unwrap();
        assert_eq!(x, y, "{rel} differs between identical runs");
    }

    let manifest: Value = serde_json::from_str(&read(&a.join("run_manifest.json"))).unwrap();
    let hash = manifest["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    let first_round: Value = serde_json::from_str(read(&a.join("eval/rounds.jsonl")).lines().next().unwrap()).unwrap();
    assert_eq!(first_round["config_hash"], hash);
}

#[test]
fn seed_flag_changes_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let o = wisv(&["--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap(), "trace"]);
        assert!(o.status.success());
        read(&out.join("traces/mismatches.jsonl"))
    };
    assert_ne!(run("7", "s7"), run("8", "s8"));
    assert_eq!(run("7", "again"), read(&tmp.path().join("s7/traces/mismatches.jsonl")));
}

#[test]
fn jobs_flag_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let out = tmp.path().join(jobs);
        let o = wisv(&["--config", &cfg, "--jobs", jobs, "--out", out.to_str().unwrap(), "trace"]);
        assert!(o.status.success());
        outputs.push(read(&out.join("traces/episodes.jsonl")));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn adaptive_mode_picks_fh_on_long_rtt() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("[sweep]\n", "[sweep]\nmodes = [\"wisv_adaptive\"]\nks = [10]\n")
        + r#"
[[sweep.scenarios]]
name = "far"
rate_bps = 1e8
rtt_s = 0.05

[[sweep.scenarios]]
name = "near"
rate_bps = 1e8
rtt_s = 0.005
"#;
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("o");
    for stage in ["trace", "relabel", "train", "eval"] {
        let o = wisv(&["--config", &cfg, "--out", out.to_str().unwrap(), stage]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let rounds = read(&out.join("eval/rounds.jsonl"));
    let (mut far, mut near) = (0, 0);
    for line in rounds.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        if v["mode"] != "wisv_adaptive" {
            continue;
        }
        match v["scenario"].as_str().unwrap() {
            "far" => {
                assert_eq!(v["protocol"], "fh");
                far += 1;
            }
            "near" => {
                assert!(v["protocol"] == "sh" || v["protocol"] == "tokens", "{v}");
                near += 1;
            }
            other => panic!("unexpected scenario {other}"),
        }
    }
    assert!(far > 0 && near > 0);
}

#[test]
fn errors_are_json_lines_with_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();

    let e = error_line(&wisv(&["--config", "/nonexistent.toml", "trace"]));
    assert_eq!(e["kind"], "io");

    let bad = write_config(tmp.path(), "[engine]\nk = 0\n");
    let e = error_line(&wisv(&["--config", &bad, "--out", out, "trace"]));
    assert_eq!(e["kind"], "config");

    let unknown = write_config(tmp.path(), "bogus = 1\n");
    assert_eq!(error_line(&wisv(&["--config", &unknown, "trace"]))["kind"], "config");

    // Stages run out of order fail cleanly.
    let e = error_line(&wisv(&["--out", out, "relabel"]));
    assert_eq!(e["kind"], "io");
    let e = error_line(&wisv(&["--out", out, "eval"]));
    assert_eq!(e["kind"], "config");
    assert!(e["error"].as_str().unwrap().contains("head"));
}
