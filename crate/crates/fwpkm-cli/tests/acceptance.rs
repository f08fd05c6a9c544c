//! CLI acceptance: every command rerun with identical flags produces
//! byte-identical result files.

use std::fs;
use std::path::Path;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fwpkm"))
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn criterion_11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // bench twice with an identical flag set
    for run in ["b1", "b2"] {
        let status = binary()
            .current_dir(root)
            .args([
                "bench",
                "--slots",
                "1024",
                "--key-dim",
                "16",
                "--value-dim",
                "32",
                "--needles",
                "10",
                "--distractors",
                "50",
                "--iters",
                "2",
                "--seeds",
                "4",
                "--seed",
                "7",
                "--out",
                run,
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let bench_identical = read(&root.join("b1/results.jsonl")) == read(&root.join("b2/results.jsonl"))
        && read(&root.join("b1/summary.csv")) == read(&root.join("b2/summary.csv"));

    // ablate twice
    for run in ["a1", "a2"] {
        let status = binary()
            .current_dir(root)
            .args([
                "ablate",
                "--slots",
                "1024",
                "--key-dim",
                "16",
                "--value-dim",
                "32",
                "--needles",
                "8",
                "--distractors",
                "40",
                "--hidden",
                "32",
                "--iters",
                "2",
                "--seeds",
                "2",
                "--seed",
                "7",
                "--out",
                run,
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let ablate_identical = read(&root.join("a1/ablate.jsonl")) == read(&root.join("a2/ablate.jsonl"))
        && read(&root.join("a1/ablate.csv")) == read(&root.join("a2/ablate.csv"));

    // snapshots twice
    for name in ["s1.bin", "s2.bin"] {
        let status = binary()
            .current_dir(root)
            .args([
                "init", "--slots", "256", "--key-dim", "8", "--value-dim", "4", "--seed", "5",
                "--out", name,
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let snapshots_identical = read(&root.join("s1.bin")) == read(&root.join("s2.bin"));

    // verify twice (stdout is the result surface)
    let out1 = binary().args(["verify", "--seed", "3"]).output().unwrap();
    let out2 = binary().args(["verify", "--seed", "3"]).output().unwrap();
    let verify_identical = out1.stdout == out2.stdout && out1.status.success();

    let pass = bench_identical && ablate_identical && snapshots_identical && verify_identical;
    println!(
        "ACCEPTANCE 11 determinism: {} (bench {bench_identical}, ablate {ablate_identical}, \
         snapshots {snapshots_identical}, verify {verify_identical})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}
