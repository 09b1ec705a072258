use std::path::Path;
use std::process::{Command, Output};

fn dggn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dggn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dggn(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

/// synth -> train -> eval -> infer -> sentences in `dir`.
fn pipeline(dir: &Path) {
    let train = dir.join("train.json");
    let test = dir.join("test.json");
    let run = dir.join("run");
    ok(&[
        "synth",
        "--family",
        "mixed",
        "--count",
        "12",
        "--holdout",
        "4",
        "--holdout-out",
        s(&test),
        "--seed",
        "3",
        "--out",
        s(&train),
    ]);
    ok(&[
        "train",
        "--data",
        s(&train),
        "--out-dir",
        s(&run),
        "--iterations",
        "12",
        "--batch",
        "2",
        "--hidden-dim",
        "8",
        "--lr0",
        "0.003",
        "--seed",
        "3",
    ]);
    let ck = run.join("checkpoint.json");
    ok(&[
        "eval",
        "--data",
        s(&test),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&dir.join("metrics.csv")),
    ]);
    ok(&[
        "infer",
        "--data",
        s(&test),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&dir.join("graphs.json")),
    ]);
    ok(&[
        "sentences",
        "--graphs",
        s(&dir.join("graphs.json")),
        "--out",
        s(&dir.join("sentences.txt")),
        "--json",
        s(&dir.join("sentences.json")),
    ]);
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for p in [&a, &b] {
        ok(&[
            "synth",
            "--family",
            "cycle",
            "--count",
            "50",
            "--seed",
            "7",
            "--out",
            s(p),
        ]);
    }
    assert_eq!(read(&a), read(&b));
    let text = String::from_utf8(read(&a)).unwrap();
    assert!(text.contains("\"relations\""));
}

#[test]
fn pipeline_is_byte_identical_and_reports_all_metrics() {
    let one = tempfile::tempdir().unwrap();
    let two = tempfile::tempdir().unwrap();
    pipeline(one.path());
    pipeline(two.path());
    for f in [
        "train.json",
        "test.json",
        "run/checkpoint.json",
        "run/loss.csv",
        "run/run-config.json",
        "metrics.csv",
        "graphs.json",
        "sentences.txt",
        "sentences.json",
    ] {
        assert_eq!(read(one.path().join(f)), read(two.path().join(f)), "{f} differs");
    }
    let metrics = String::from_utf8(read(one.path().join("metrics.csv"))).unwrap();
    for name in ["mAP", "IoU_node", "IoU_edge", "R@5", "R@10", "R@20"] {
        assert!(
            metrics.lines().any(|l| l.starts_with(&format!("{name},"))),
            "{name} missing:\n{metrics}"
        );
    }
    let loss = String::from_utf8(read(one.path().join("run/loss.csv"))).unwrap();
    assert_eq!(loss.lines().next(), Some("iteration,loss,lr"));
    assert_eq!(loss.lines().count(), 13);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.json");
    ok(&["synth", "--count", "6", "--seed", "1", "--out", s(&data)]);
    let common = ["--batch", "2", "--hidden-dim", "6", "--lr0", "0.003", "--seed", "1"];
    let full = dir.path().join("full");
    let mut args = vec!["train", "--data", s(&data), "--out-dir", s(&full), "--iterations", "8"];
    args.extend(common);
    ok(&args);
    let part = dir.path().join("part");
    let mut args = vec!["train", "--data", s(&data), "--out-dir", s(&part), "--iterations", "4"];
    args.extend(common);
    ok(&args);
    let ck = part.join("checkpoint.json");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out-dir",
        s(&part),
        "--resume",
        s(&ck),
        "--iterations",
        "8",
    ]);
    assert_eq!(read(full.join("checkpoint.json")), read(part.join("checkpoint.json")));
    assert_eq!(read(full.join("loss.csv")), read(part.join("loss.csv")));
}

#[test]
fn diag_writes_gate_and_order_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.json");
    ok(&["synth", "--count", "4", "--seed", "2", "--out", s(&data)]);
    let mut cks = Vec::new();
    for mode in ["dggn", "vanilla_gru"] {
        let run = dir.path().join(mode);
        ok(&[
            "train",
            "--data",
            s(&data),
            "--out-dir",
            s(&run),
            "--iterations",
            "3",
            "--batch",
            "2",
            "--hidden-dim",
            "6",
            "--mode",
            mode,
        ]);
        let ck = dir.path().join(format!("{mode}.json"));
        std::fs::rename(run.join("checkpoint.json"), &ck).unwrap();
        cks.push(ck);
    }
    let out = dir.path().join("diag");
    let out_s = ok(&[
        "diag",
        "--data",
        s(&data),
        "--checkpoint",
        s(&cks[0]),
        "--checkpoint",
        s(&cks[1]),
        "--order-trials",
        "3",
        "--out-dir",
        s(&out),
    ]);
    let stdout = String::from_utf8(out_s.stdout).unwrap();
    assert!(stdout.contains("gate mean") && stdout.contains("AP50 variance"));
    let gates = String::from_utf8(read(out.join("gates.csv"))).unwrap();
    assert_eq!(gates.lines().count(), 3);
    let order = String::from_utf8(read(out.join("order.csv"))).unwrap();
    assert_eq!(order.lines().count(), 1 + 2 * 3);
    assert!(out.join("order_summary.csv").exists() && out.join("gate_steps.csv").exists());
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    for cmd in ["eval", "infer", "diag"] {
        let out = dggn(&[cmd, "--data", "x.json", "--out", "y", "--out-dir", "z"]);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("--checkpoint"), "{cmd}: {err}");
    }
}

#[test]
fn bad_inputs_fail_with_messages() {
    let out = dggn(&["synth", "--count", "2", "--out", "x.json", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = dggn(&["eval", "--data", "missing.json", "--checkpoint", "missing-ck.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing-ck.json"));
}
