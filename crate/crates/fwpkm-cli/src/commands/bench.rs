//! Memory-level needle-in-a-haystack benchmark over a seed grid.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use fwpkm::bench::{gen_episode, run_niter, Chunking, EpisodeSpec, GateMode};
use fwpkm::numeric::Real;
use fwpkm::rng::stream_seed;
use fwpkm::MemoryState;

use crate::config_file::RunConfig;
use crate::exit;
use crate::output::{cell, write_csv, write_jsonl};

#[derive(Debug, Clone, Serialize)]
struct ConfigEcho {
    slots: usize,
    key_dim: usize,
    value_dim: usize,
    heads: usize,
    top_k: usize,
    chunk_size: usize,
    score: String,
    needles: usize,
    distractors: usize,
    codebook: usize,
    gate_mode: GateMode,
    iters: usize,
    chunking: Chunking,
    root_seed: u64,
}

#[derive(Debug, Serialize)]
struct BenchRow {
    seed_index: usize,
    episode_seed: u64,
    init_seed: u64,
    per_iter_accuracy: Vec<Real>,
    slot_collisions: usize,
    config: ConfigEcho,
}

fn echo(config: &RunConfig) -> ConfigEcho {
    ConfigEcho {
        slots: config.memory.n_slots(),
        key_dim: config.memory.key_dim,
        value_dim: config.memory.value_dim,
        heads: config.memory.heads,
        top_k: config.memory.top_k,
        chunk_size: config.memory.chunk_size,
        score: format!("{:?}", config.memory.score_kind).to_lowercase(),
        needles: config.needles,
        distractors: config.distractors,
        codebook: config.codebook,
        gate_mode: config.gate_mode,
        iters: config.iters,
        chunking: config.chunking,
        root_seed: config.seed,
    }
}

pub fn run(config: &RunConfig, save_snapshots: bool) -> anyhow::Result<i32> {
    let mut memory = config.memory.clone();
    if save_snapshots {
        // Saved states must carry provenance or inspect has nothing to join.
        memory.track_ledger = true;
    }
    memory.validate()?;
    if config.seeds == 0 || config.iters == 0 {
        anyhow::bail!(fwpkm::Error::InvalidArgument(
            "seeds and iters must be >= 1".into()
        ));
    }
    let out_dir = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("fwpkm-bench"));
    fs::create_dir_all(&out_dir)?;

    let echo_row = echo(config);
    let rows = super::run_seed_grid(config.seeds, |i| {
        let episode_seed = stream_seed(config.seed, "episode", i as u64);
        let init_seed = stream_seed(config.seed, "init", i as u64);
        let spec = EpisodeSpec {
            n_needles: config.needles,
            n_distractors: config.distractors,
            codebook_size: config.codebook,
            key_dim: memory.query_dim(),
            value_dim: memory.value_dim,
            seed: episode_seed,
            gate_mode: config.gate_mode,
            normalize_values: memory.toggles.value_norm,
        };
        let episode = gen_episode(&spec)?;
        let mut state = MemoryState::init(memory.clone(), init_seed)?;
        let report = run_niter(&mut state, &episode, config.iters, config.chunking)?;
        if save_snapshots {
            let snap = out_dir.join(format!("state-{i:03}.bin"));
            fwpkm::snapshot::save_state(&state, &snap)?;
            let mut ledger_name = snap.as_os_str().to_owned();
            ledger_name.push(".ledger.jsonl");
            fwpkm::snapshot::save_ledger(&state, std::path::Path::new(&ledger_name))?;
        }
        Ok(BenchRow {
            seed_index: i,
            episode_seed,
            init_seed,
            per_iter_accuracy: report.per_iter_accuracy,
            slot_collisions: report.slot_collisions,
            config: echo_row.clone(),
        })
    })?;

    let results_path = out_dir.join("results.jsonl");
    write_jsonl(&results_path, &rows)?;

    let mut csv_rows = Vec::with_capacity(config.iters);
    let mut means = Vec::with_capacity(config.iters);
    for iter in 0..config.iters {
        let accs: Vec<Real> = rows.iter().map(|r| r.per_iter_accuracy[iter]).collect();
        let mean = accs.iter().sum::<Real>() / accs.len() as Real;
        let min = accs.iter().copied().fold(Real::INFINITY, Real::min);
        let max = accs.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        means.push(mean);
        csv_rows.push(vec![
            (iter + 1).to_string(),
            cell(mean),
            cell(min),
            cell(max),
            config.seeds.to_string(),
        ]);
    }
    let summary_path = out_dir.join("summary.csv");
    write_csv(
        &summary_path,
        &["iters", "mean_accuracy", "min_accuracy", "max_accuracy", "seeds"],
        &csv_rows,
    )?;

    println!(
        "bench: {} seeds x {} iters on {} slots ({} needles, {} distractors)",
        config.seeds,
        config.iters,
        memory.n_slots(),
        config.needles,
        config.distractors
    );
    for (iter, mean) in means.iter().enumerate() {
        println!("  {}-iter mean accuracy {:.4}", iter + 1, mean);
    }
    println!(
        "  wrote {} and {}",
        results_path.display(),
        summary_path.display()
    );
    Ok(exit::OK)
}
