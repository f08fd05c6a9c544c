//! End-to-end CLI behavior: command contracts, exit codes, and file formats.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fwpkm"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    binary().current_dir(dir).args(args).output().unwrap()
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn bench_trivial_rewrite_reports_full_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "bench",
            "--slots",
            "4096",
            "--top-k",
            "1",
            "--needles",
            "1",
            "--distractors",
            "0",
            "--iters",
            "1",
            "--seeds",
            "3",
            "--out",
            "b",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = fs::read_to_string(dir.path().join("b/summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iters,mean_accuracy,min_accuracy,max_accuracy,seeds"
    );
    assert_eq!(lines.next().unwrap(), "1,1.000000,1.000000,1.000000,3");
}

#[test]
fn bench_defaults_use_one_head_top8() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["bench", "--seeds", "1", "--iters", "1", "--out", "b"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let results = fs::read_to_string(dir.path().join("b/results.jsonl")).unwrap();
    let row: serde_json::Value = serde_json::from_str(results.lines().next().unwrap()).unwrap();
    assert_eq!(row["config"]["top_k"], 8);
    assert_eq!(row["config"]["heads"], 1);
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.conf"),
        "[memory]\nslots = 1024\nkey_dim = 16\nvalue_dim = 32\n\n[episode]\nneedles = 3\n\n[run]\nseeds = 2\niters = 1\n",
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &[
            "bench", "--config", "run.conf", "--needles", "4", "--out", "b",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let results = fs::read_to_string(dir.path().join("b/results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 2);
    let row: serde_json::Value = serde_json::from_str(results.lines().next().unwrap()).unwrap();
    assert_eq!(row["config"]["slots"], 1024);
    // flag beats file
    assert_eq!(row["config"]["needles"], 4);
}

#[test]
fn malformed_config_file_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conf"), "[memory]\nslots = banana\n").unwrap();
    let out = run_in(dir.path(), &["bench", "--config", "bad.conf", "--out", "b"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn missing_config_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["bench", "--config", "nope.conf", "--out", "b"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn invalid_geometry_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["bench", "--slots", "4095", "--out", "b"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = run_in(dir.path(), &["bench", "--key-dim", "7", "--out", "b"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn verify_passes_and_filters_checks() {
    let out = binary().args(["verify", "--checks", "select"]).output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("select-equivalence"));
    assert_eq!(text.lines().count(), 1);
    let out = binary()
        .args(["verify", "--checks", "select,entropy"])
        .output()
        .unwrap();
    assert_eq!(stdout(&out).lines().count(), 2);
}

#[test]
fn verify_fault_injection_fails_with_exit_1() {
    let out = binary()
        .args(["verify", "--checks", "grad-addr", "--inject-gradient-fault"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn verify_rejects_unknown_check_names() {
    let out = binary().args(["verify", "--checks", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_emits_eight_variants_with_shared_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "ablate",
            "--slots",
            "1024",
            "--key-dim",
            "16",
            "--value-dim",
            "32",
            "--needles",
            "5",
            "--distractors",
            "20",
            "--hidden",
            "32",
            "--seeds",
            "2",
            "--iters",
            "2",
            "--out",
            "a",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("a/ablate.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 8, "header plus 8 variants");
    assert!(table.starts_with(
        "variant,iter1_mean_accuracy,iter2_mean_accuracy,usage_fraction"
    ));

    let rows: Vec<serde_json::Value> = fs::read_to_string(dir.path().join("a/ablate.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let baseline_seeds: Vec<u64> = rows
        .iter()
        .filter(|r| r["variant"] == "baseline")
        .map(|r| r["episode_seed"].as_u64().unwrap())
        .collect();
    for variant in [
        "1-head-top32",
        "4-heads-top8",
        "no-value-norm",
        "no-addr-loss",
        "no-gating",
        "no-loss-weight",
        "no-lookahead",
    ] {
        let seeds: Vec<u64> = rows
            .iter()
            .filter(|r| r["variant"] == variant)
            .map(|r| r["episode_seed"].as_u64().unwrap())
            .collect();
        assert_eq!(seeds, baseline_seeds, "{variant} must share the seed list");
    }
}

#[test]
fn inspect_fresh_snapshot_reports_unwritten_slots() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "init", "--slots", "64", "--key-dim", "8", "--value-dim", "4", "--top-k", "2",
            "--out", "snap.bin",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    fs::write(
        dir.path().join("probes.jsonl"),
        "{\"query\": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]}\n",
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &["inspect", "--snapshot", "snap.bin", "--probes", "probes.jsonl"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // heads x top_k slots per probe
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l["unwritten"] == true));
}

#[test]
fn inspect_malformed_probe_line_is_named() {
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &[
            "init", "--slots", "64", "--key-dim", "8", "--value-dim", "4", "--out", "snap.bin",
        ],
    );
    fs::write(dir.path().join("probes.jsonl"), "{\"query\": [0.1]}\nnot json\n").unwrap();
    let out = run_in(
        dir.path(),
        &["inspect", "--snapshot", "snap.bin", "--probes", "probes.jsonl"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn inspect_corrupt_snapshot_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("snap.bin"), b"garbage").unwrap();
    fs::write(dir.path().join("probes.jsonl"), "{\"query\": [0.1]}\n").unwrap();
    let out = run_in(
        dir.path(),
        &["inspect", "--snapshot", "snap.bin", "--probes", "probes.jsonl"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn reset_discards_updates_and_reinitializes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "init", "--slots", "64", "--key-dim", "8", "--value-dim", "4", "--seed", "3",
            "--out", "snap.bin",
        ],
    );
    assert!(out.status.success());
    let out = run_in(
        dir.path(),
        &[
            "reset", "--snapshot", "snap.bin", "--seed", "3", "--out", "snap2.bin",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    // Same config and seed: reset reproduces the init snapshot bit for bit.
    assert_eq!(
        fs::read(dir.path().join("snap.bin")).unwrap(),
        fs::read(dir.path().join("snap2.bin")).unwrap()
    );
}

#[test]
fn bench_snapshots_feed_inspect_with_provenance_hits() {
    use fwpkm::bench::{gen_episode, EpisodeSpec, GateMode};
    use fwpkm::rng::stream_seed;

    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "bench",
            "--slots",
            "4096",
            "--key-dim",
            "16",
            "--value-dim",
            "32",
            "--top-k",
            "2",
            "--needles",
            "3",
            "--distractors",
            "0",
            "--codebook",
            "16",
            "--iters",
            "1",
            "--seeds",
            "1",
            "--seed",
            "11",
            "--addr-weight",
            "0",
            "--save-snapshots",
            "--out",
            "b",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("b/state-000.bin").exists());
    assert!(dir.path().join("b/state-000.bin.ledger.jsonl").exists());

    // Rebuild the same episode the run used and probe its needles by tag.
    let spec = EpisodeSpec {
        n_needles: 3,
        n_distractors: 0,
        codebook_size: 16,
        key_dim: 16,
        value_dim: 32,
        seed: stream_seed(11, "episode", 0),
        gate_mode: GateMode::AllOne,
        normalize_values: true,
    };
    let episode = gen_episode(&spec).unwrap();
    let probe_lines: Vec<String> = episode
        .probes
        .iter()
        .map(|p| {
            serde_json::to_string(&serde_json::json!({
                "query": p.query,
                "truth_tag": p.tag,
            }))
            .unwrap()
        })
        .collect();
    fs::write(dir.path().join("probes.jsonl"), probe_lines.join("\n") + "\n").unwrap();

    let out = run_in(
        dir.path(),
        &[
            "inspect",
            "--snapshot",
            "b/state-000.bin",
            "--probes",
            "probes.jsonl",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // 3 probes x 1 head x top-2 slots
    assert_eq!(lines.len(), 6);
    // With frozen keys every needle's top slot joins back to its own write.
    for probe in 0..3 {
        let hits: Vec<&serde_json::Value> =
            lines.iter().filter(|l| l["probe"] == probe).collect();
        assert!(
            hits.iter().any(|l| l["hit"] == true),
            "probe {probe} found no provenance hit: {hits:?}"
        );
    }
}
