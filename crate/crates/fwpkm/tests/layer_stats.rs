//! Statistical behavior of the full layer on synthetic hidden-state
//! episodes: a second memorization pass must not hurt, and at loaded
//! capacity it reliably helps.

#![cfg(not(feature = "f32"))]

use fwpkm::bench::{gen_hidden_episode, run_niter_layer, HiddenEpisodeSpec};
use fwpkm::layer::{LayerState, LayerWeights};
use fwpkm::{MemoryConfig, MemoryState};

fn config() -> MemoryConfig {
    MemoryConfig {
        n_sub: 64,
        key_dim: 16,
        value_dim: 64,
        heads: 1,
        top_k: 8,
        chunk_size: 512,
        track_ledger: false,
        ..MemoryConfig::default()
    }
}

#[test]
fn second_pass_improves_layer_retrieval() {
    let seeds = 100u64;
    let mut wins = 0;
    let (mut mean1, mut mean2) = (0.0, 0.0);
    for seed in 0..seeds {
        let spec = HiddenEpisodeSpec {
            n_needles: 50,
            n_distractors: 500,
            codebook_size: 64,
            hidden: 64,
            seed,
        };
        let episode = gen_hidden_episode(&spec).unwrap();
        let config = config();
        let weights = LayerWeights::init(64, &config, 999).unwrap();
        let mut layer = LayerState::new(MemoryState::init(config, 1000 + seed).unwrap());
        let report = run_niter_layer(&mut layer, &weights, &episode, 2).unwrap();
        let acc = &report.per_iter_accuracy;
        assert!(acc.iter().all(|a| a.is_finite()));
        if acc[1] >= acc[0] {
            wins += 1;
        }
        mean1 += acc[0];
        mean2 += acc[1];
    }
    println!(
        "layer 2-pass: means {:.3} -> {:.3}, wins {wins}/{seeds}",
        mean1 / seeds as f64,
        mean2 / seeds as f64
    );
    assert!(
        wins * 100 >= seeds * 95,
        "pass-2 beat pass-1 in only {wins}/{seeds} seeds"
    );
}
