//! Probe a snapshot and export slot-provenance traces as JSON lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fwpkm::diagnostics::{trace_lines, trace_retrieval};
use fwpkm::numeric::Real;
use fwpkm::snapshot::{load_ledger_into, load_state};

use crate::exit;
use crate::probes::parse_probes;

pub struct InspectOptions {
    pub snapshot: PathBuf,
    pub probes: PathBuf,
    /// Ledger sidecar; defaults to `<snapshot>.ledger.jsonl` when present.
    pub ledger: Option<PathBuf>,
    pub depth: usize,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct InspectLine {
    probe: usize,
    slot: usize,
    head: usize,
    step: Option<u64>,
    sample_tag: Option<String>,
    weight: Real,
    hit: Option<bool>,
    unwritten: bool,
}

fn default_ledger_path(snapshot: &Path) -> PathBuf {
    let mut name = snapshot.as_os_str().to_owned();
    name.push(".ledger.jsonl");
    PathBuf::from(name)
}

pub fn run(options: &InspectOptions) -> anyhow::Result<i32> {
    let mut state = load_state(&options.snapshot)?;
    match &options.ledger {
        Some(path) => load_ledger_into(&mut state, path)?,
        None => {
            let sidecar = default_ledger_path(&options.snapshot);
            if sidecar.exists() {
                load_ledger_into(&mut state, &sidecar)?;
            }
        }
    }

    let text = fs::read_to_string(&options.probes)?;
    let probes =
        parse_probes(&text).map_err(fwpkm::Error::InvalidArgument)?;

    let mut lines: Vec<InspectLine> = Vec::new();
    for (i, probe) in probes.iter().enumerate() {
        if probe.query.len() != state.config().query_dim() {
            anyhow::bail!(fwpkm::Error::InvalidArgument(format!(
                "probe {} query width {} does not match the snapshot's {}",
                i + 1,
                probe.query.len(),
                state.config().query_dim()
            )));
        }
        let retrieval = state.retrieve(&probe.query)?;
        let trace = trace_retrieval(
            &state,
            &retrieval,
            probe.truth_tag.as_deref(),
            options.depth,
        )?;
        for line in trace_lines(&trace) {
            lines.push(InspectLine {
                probe: i,
                slot: line.slot,
                head: line.head,
                step: line.step,
                sample_tag: line.sample_tag,
                weight: line.weight,
                hit: line.hit,
                unwritten: line.unwritten,
            });
        }
    }

    match &options.out {
        Some(path) => crate::output::write_jsonl(path, &lines)?,
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for line in &lines {
                serde_json::to_writer(&mut w, line)?;
                w.write_all(b"\n")?;
            }
        }
    }
    Ok(exit::OK)
}
