//! Ablation grid: the layer-level benchmark across the standard variant
//! list (baseline, alternate head/top-k layouts, and each technique
//! disabled) with shared seeds, reporting accuracy and slot usage.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use fwpkm::bench::{gen_hidden_episode, run_niter_layer, HiddenEpisodeSpec};
use fwpkm::diagnostics::usage_stats;
use fwpkm::layer::{LayerState, LayerWeights};
use fwpkm::numeric::Real;
use fwpkm::rng::stream_seed;
use fwpkm::{MemoryConfig, MemoryState};

use crate::config_file::RunConfig;
use crate::exit;
use crate::output::{cell, write_csv, write_jsonl};

/// The ablation variants, applied on top of the configured baseline.
fn variants(base: &MemoryConfig) -> Vec<(&'static str, MemoryConfig)> {
    let mut list = Vec::new();
    list.push(("baseline", base.clone()));
    let mut c = base.clone();
    c.heads = 1;
    c.top_k = 32.min(c.n_sub);
    list.push(("1-head-top32", c));
    let mut c = base.clone();
    c.heads = 4;
    c.top_k = 8.min(c.n_sub);
    list.push(("4-heads-top8", c));
    let mut c = base.clone();
    c.toggles.value_norm = false;
    list.push(("no-value-norm", c));
    let mut c = base.clone();
    c.toggles.addressing_loss = false;
    list.push(("no-addr-loss", c));
    let mut c = base.clone();
    c.toggles.gating = false;
    list.push(("no-gating", c));
    let mut c = base.clone();
    c.toggles.loss_weighting = false;
    list.push(("no-loss-weight", c));
    let mut c = base.clone();
    c.toggles.lookahead = false;
    list.push(("no-lookahead", c));
    list
}

#[derive(Debug, Serialize)]
struct AblateRow {
    variant: String,
    seed_index: usize,
    episode_seed: u64,
    per_iter_accuracy: Vec<Real>,
    usage_fraction: Real,
}

pub fn run(config: &RunConfig) -> anyhow::Result<i32> {
    config.memory.validate()?;
    if config.seeds == 0 || config.iters == 0 {
        anyhow::bail!(fwpkm::Error::InvalidArgument(
            "seeds and iters must be >= 1".into()
        ));
    }
    let out_dir = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("fwpkm-ablate"));
    fs::create_dir_all(&out_dir)?;

    let mut rows: Vec<AblateRow> = Vec::new();
    let mut table: Vec<Vec<String>> = Vec::new();
    for (name, memory) in variants(&config.memory) {
        memory.validate()?;
        let per_seed = super::run_seed_grid(config.seeds, |i| {
            // Episode streams are shared across variants; layer weights
            // depend on the variant's shape, so they get their own stream.
            let episode_seed = stream_seed(config.seed, "episode", i as u64);
            let spec = HiddenEpisodeSpec {
                n_needles: config.needles,
                n_distractors: config.distractors,
                codebook_size: config.codebook,
                hidden: config.hidden,
                seed: episode_seed,
            };
            let episode = gen_hidden_episode(&spec)?;
            let weights = LayerWeights::init(
                config.hidden,
                &memory,
                stream_seed(config.seed, "weights", i as u64),
            )?;
            let init_seed = stream_seed(config.seed, "init", i as u64);
            let mut layer = LayerState::new(MemoryState::init(memory.clone(), init_seed)?);
            let report = run_niter_layer(&mut layer, &weights, &episode, config.iters)?;
            let usage = usage_stats(&report.update_reports, memory.n_slots())?;
            Ok((episode_seed, report.per_iter_accuracy, usage.usage_fraction))
        })?;

        let seeds = per_seed.len() as Real;
        let mut iter_means = vec![0.0 as Real; config.iters];
        let mut usage_mean = 0.0;
        for (i, (episode_seed, accs, usage)) in per_seed.into_iter().enumerate() {
            for (m, a) in iter_means.iter_mut().zip(&accs) {
                *m += a / seeds;
            }
            usage_mean += usage / seeds;
            rows.push(AblateRow {
                variant: name.to_string(),
                seed_index: i,
                episode_seed,
                per_iter_accuracy: accs,
                usage_fraction: usage,
            });
        }
        let mut row = vec![name.to_string()];
        row.extend(iter_means.iter().map(|m| cell(*m)));
        row.push(cell(usage_mean));
        table.push(row);
    }

    let mut header: Vec<String> = vec!["variant".into()];
    header.extend((1..=config.iters).map(|i| format!("iter{i}_mean_accuracy")));
    header.push("usage_fraction".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();

    let results_path = out_dir.join("ablate.jsonl");
    write_jsonl(&results_path, &rows)?;
    let table_path = out_dir.join("ablate.csv");
    write_csv(&table_path, &header_refs, &table)?;

    println!(
        "ablate: {} variants x {} seeds x {} iters ({} needles, {} distractors, hidden {})",
        table.len(),
        config.seeds,
        config.iters,
        config.needles,
        config.distractors,
        config.hidden
    );
    println!("  {}", header.join(","));
    for row in &table {
        println!("  {}", row.join(","));
    }
    println!(
        "  wrote {} and {}",
        results_path.display(),
        table_path.display()
    );
    Ok(exit::OK)
}
