use std::path::Path;
use std::process::{Command, Output};

fn adgve(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adgve"))
        .args(args)
        .current_dir(dir)
        .env_remove("ADGVE_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

fn gen(dir: &Path, count: &str, seed: &str) {
    ok(&adgve(dir, &["gen-synthetic", "--out", "scenes", "--count", count, "--seed", seed]));
}

#[test]
fn score_is_byte_identical_across_runs_and_job_counts() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "4", "11");
    ok(&adgve(d.path(), &["score", "--manifest", "scenes/manifest.txt", "--out", "a.jsonl"]));
    ok(&adgve(d.path(), &["score", "--manifest", "scenes/manifest.txt", "--out", "b.jsonl", "--jobs", "3"]));
    let a = std::fs::read(d.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(d.path().join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 4);
}

#[test]
fn recorded_transcript_replays_to_the_same_scores() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "2", "5");
    let m = "scenes/manifest.txt";
    ok(&adgve(d.path(), &["score", "--manifest", m, "--transcript", "t.jsonl", "--out", "live.jsonl"]));
    ok(&adgve(d.path(), &["score", "--manifest", m, "--vlm-mode", "replay", "--transcript", "t.jsonl", "--out", "r1.jsonl"]));
    ok(&adgve(d.path(), &["score", "--manifest", m, "--vlm-mode", "replay", "--transcript", "t.jsonl", "--out", "r2.jsonl"]));
    let read = |f: &str| std::fs::read_to_string(d.path().join(f)).unwrap();
    assert_eq!(read("r1.jsonl"), read("r2.jsonl"));
    let scores = |f: &str| -> Vec<serde_json::Value> {
        read(f).lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["s_overall"].clone()).collect()
    };
    assert_eq!(scores("live.jsonl"), scores("r1.jsonl"));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "2", "1");
    assert_eq!(adgve(d.path(), &["score"]).status.code(), Some(1));
    assert_eq!(adgve(d.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(adgve(d.path(), &["--help"]).status.code(), Some(0));

    let mut manifest = std::fs::read_to_string(d.path().join("scenes/manifest.txt")).unwrap();
    manifest.push_str("missing.json\n");
    std::fs::write(d.path().join("scenes/partial.txt"), manifest).unwrap();
    let partial = adgve(d.path(), &["score", "--manifest", "scenes/partial.txt", "--out", "p.jsonl"]);
    assert_eq!(partial.status.code(), Some(2));
    let lines = std::fs::read_to_string(d.path().join("p.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);

    std::fs::write(d.path().join("bad.txt"), "nope.json\n").unwrap();
    assert_eq!(adgve(d.path(), &["score", "--manifest", "bad.txt", "--out", "x"]).status.code(), Some(3));

    std::fs::write(d.path().join("empty.jsonl"), "").unwrap();
    let empty = adgve(d.path(), &["report", "empty.jsonl"]);
    assert_eq!(empty.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("no input"));
}

#[test]
fn filter_keeps_input_order_and_respects_threshold() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "5", "21");
    let m = "scenes/manifest.txt";
    ok(&adgve(d.path(), &["filter", m, "--threshold", "0", "--out", "all.txt"]));
    let all = std::fs::read_to_string(d.path().join("all.txt")).unwrap();
    assert_eq!(all, std::fs::read_to_string(d.path().join(m)).unwrap());
    assert!(d.path().join("all.reports.jsonl").exists());

    let o = adgve(d.path(), &["filter", m, "--threshold", "1", "--out", "none.txt"]);
    ok(&o);
    assert_eq!(std::fs::read_to_string(d.path().join("none.txt")).unwrap(), "");
    assert!(String::from_utf8_lossy(&o.stderr).contains("coverage 0.0000"));
}

#[test]
fn train_then_score_with_the_trained_model() {
    let d = tempfile::tempdir().unwrap();
    ok(&adgve(d.path(), &["gen-synthetic", "--out", "train", "--count", "14", "--balanced", "--seed", "100"]));
    let t = adgve(d.path(), &["train-fusion", "train/manifest.txt", "--vlm-mode", "oracle_stub", "--out", "model.txt"]);
    ok(&t);
    assert!(String::from_utf8_lossy(&t.stderr).contains("holdout_srcc"));
    let model = std::fs::read_to_string(d.path().join("model.txt")).unwrap();
    assert!(model.starts_with("adgve-fusion-model 1\n"));
    gen(d.path(), "2", "7");
    ok(&adgve(d.path(), &["score", "--manifest", "scenes/manifest.txt", "--model", "model.txt", "--out", "r.jsonl"]));
}

#[test]
fn gen_from_spec_file_and_instructions() {
    let d = tempfile::tempdir().unwrap();
    let spec = r#"{"seed": 4, "layout": "two_lane", "violations": [{"kind": "solid_cross"}]}"#;
    std::fs::write(d.path().join("spec.json"), spec).unwrap();
    ok(&adgve(d.path(), &["gen-synthetic", "--spec", "spec.json", "--out", "s", "--instructions", "12"]));
    let manifest = std::fs::read_to_string(d.path().join("s/manifest.txt")).unwrap();
    assert_eq!(manifest, "synth-two_lane-4-solid_cross.json\n");
    let truth = std::fs::read_to_string(d.path().join("s/synth-two_lane-4-solid_cross.truth.json")).unwrap();
    assert!(truth.contains("\"solid_cross\""));
    let instr = std::fs::read_to_string(d.path().join("s/instructions.jsonl")).unwrap();
    assert_eq!(instr.lines().count(), 12);

    std::fs::write(d.path().join("bad.json"), r#"{"seed": 1, "layout": "roundabout"}"#).unwrap();
    assert_eq!(adgve(d.path(), &["gen-synthetic", "--spec", "bad.json", "--out", "b"]).status.code(), Some(3));
}

#[test]
fn ablate_and_report_outputs() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "4", "31");
    let o = adgve(d.path(), &["ablate", "scenes/manifest.txt", "--vlm-mode", "oracle_stub", "--drop", "none,all"]);
    ok(&o);
    let table = String::from_utf8_lossy(&o.stdout).to_string();
    assert_eq!(table.lines().filter(|l| l.starts_with("0.")).count(), 3);
    assert!(table.contains("\nall\t4\tundefined"));

    ok(&adgve(d.path(), &["score", "--manifest", "scenes/manifest.txt", "--out", "r.jsonl"]));
    ok(&adgve(d.path(), &["report", "r.jsonl", "--out", "rep"]));
    let hist = std::fs::read_to_string(d.path().join("rep/histogram.tsv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.split('\t').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 4);
}

#[test]
fn config_file_and_env_fallback() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "1", "2");
    std::fs::write(d.path().join("c.cfg"), "pipeline.threshold = 1.0\n").unwrap();
    let run = |env: bool| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_adgve"));
        cmd.args(["filter", "scenes/manifest.txt", "--out", "k.txt"]).current_dir(d.path());
        if env {
            cmd.env("ADGVE_CONFIG", "c.cfg");
        } else {
            cmd.env_remove("ADGVE_CONFIG").args(["--config", "c.cfg"]);
        }
        let o = cmd.output().unwrap();
        ok(&o);
        std::fs::read_to_string(d.path().join("k.txt")).unwrap()
    };
    assert_eq!(run(false), "");
    assert_eq!(run(true), "");
    std::fs::write(d.path().join("broken.cfg"), "threshold 0.3\n").unwrap();
    assert_eq!(adgve(d.path(), &["score", "--config", "broken.cfg", "scenes/manifest.txt"]).status.code(), Some(3));
}
