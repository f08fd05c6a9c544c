//! Re-initialize an existing snapshot's fast weights. Memory is never reset
//! implicitly between sequences; this is the explicit reset path.

use std::path::PathBuf;

use fwpkm::snapshot::{load_state, save_state};
use fwpkm::MemoryState;

use crate::exit;

pub struct ResetOptions {
    pub snapshot: PathBuf,
    pub seed: u64,
    /// Destination; defaults to overwriting the input snapshot.
    pub out: Option<PathBuf>,
}

pub fn run(options: &ResetOptions) -> anyhow::Result<i32> {
    let state = load_state(&options.snapshot)?;
    let old_step = state.step();
    let fresh = MemoryState::init(state.config().clone(), options.seed)?;
    let out = options.out.clone().unwrap_or_else(|| options.snapshot.clone());
    save_state(&fresh, &out)?;
    println!(
        "reset: {} ({} chunk updates discarded) -> {} with seed {}",
        options.snapshot.display(),
        old_step,
        out.display(),
        options.seed
    );
    Ok(exit::OK)
}
