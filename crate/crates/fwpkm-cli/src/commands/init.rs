//! Write a freshly initialized memory snapshot.

use std::path::PathBuf;

use fwpkm::snapshot::save_state;
use fwpkm::{MemoryConfig, MemoryState};

use crate::exit;

pub struct InitOptions {
    pub memory: MemoryConfig,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run(options: &InitOptions) -> anyhow::Result<i32> {
    let state = MemoryState::init(options.memory.clone(), options.seed)?;
    save_state(&state, &options.out)?;
    println!(
        "init: wrote {} ({} slots, {} head(s), key dim {}, value dim {}, seed {})",
        options.out.display(),
        options.memory.n_slots(),
        options.memory.heads,
        options.memory.key_dim,
        options.memory.value_dim,
        options.seed
    );
    Ok(exit::OK)
}
