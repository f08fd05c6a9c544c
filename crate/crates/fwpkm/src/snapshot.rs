//! Versioned binary snapshots for memory states and layer weights, plus the
//! JSON-lines ledger sidecar.
//!
//! The container is fixed little-endian: an 8-byte magic, a version byte, a
//! kind byte, a config block, then matrices as raw f64 rows. Decoding treats
//! the input as untrusted: header fields are bounds-checked before any
//! allocation, matrices are read row by row, and trailing bytes are
//! rejected.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{MemoryConfig, ScoreKind, Toggles};
use crate::error::{Error, Result};
use crate::layer::{LayerWeights, LinearMap, Projection};
use crate::numeric::{Matrix, Real};
use crate::state::{MemoryState, WriteRecord};

const MAGIC: &[u8; 8] = b"FWPKMBIN";
const VERSION: u8 = 1;
const KIND_STATE: u8 = 0;
const KIND_LAYER: u8 = 1;

// Caps on decoded header fields; anything larger is treated as corruption.
const MAX_DIM: u64 = 1 << 16;
const MAX_HEADS: u64 = 1 << 8;

fn storage(msg: impl Into<String>) -> Error {
    Error::Storage(msg.into())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u8<R: Read>(r: &mut R, what: &str) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)
        .map_err(|_| storage(format!("truncated {what}")))?;
    Ok(buf[0])
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| storage(format!("truncated {what}")))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| storage(format!("truncated {what}")))?;
    Ok(f64::from_le_bytes(buf))
}

fn read_dim<R: Read>(r: &mut R, what: &str, max: u64) -> Result<usize> {
    let v = read_u64(r, what)?;
    if v == 0 || v > max {
        return Err(storage(format!("{what} {v} out of range")));
    }
    Ok(v as usize)
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    for v in m.data() {
        write_f64(w, *v as f64)?;
    }
    Ok(())
}

/// Read a rows x cols matrix row by row so corrupt headers cannot force one
/// huge allocation before the truncation is noticed.
fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
    let mut data: Vec<Real> = Vec::new();
    let mut row = vec![0u8; cols * 8];
    for _ in 0..rows {
        r.read_exact(&mut row)
            .map_err(|_| storage(format!("truncated {what}")))?;
        for chunk in row.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            if !v.is_finite() {
                return Err(storage(format!("non-finite entry in {what}")));
            }
            data.push(v as Real);
        }
    }
    Matrix::from_vec(rows, cols, data)
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut buf = [0u8; 1];
    match r.read(&mut buf) {
        Ok(0) => Ok(()),
        Ok(_) => Err(storage("trailing bytes after snapshot payload")),
        Err(e) => Err(e.into()),
    }
}

fn header<R: Read>(r: &mut R) -> Result<u8> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| storage("missing magic header"))?;
    if &magic != MAGIC {
        return Err(storage("bad magic header"));
    }
    let version = read_u8(r, "version byte")?;
    if version != VERSION {
        return Err(storage(format!("unsupported format version {version}")));
    }
    read_u8(r, "kind byte")
}

fn toggle_bits(t: &Toggles) -> u8 {
    u8::from(t.value_norm)
        | u8::from(t.addressing_loss) << 1
        | u8::from(t.gating) << 2
        | u8::from(t.loss_weighting) << 3
        | u8::from(t.lookahead) << 4
}

fn toggles_from_bits(bits: u8) -> Result<Toggles> {
    if bits & !0b11111 != 0 {
        return Err(storage(format!("unknown toggle bits {bits:#04x}")));
    }
    Ok(Toggles {
        value_norm: bits & 1 != 0,
        addressing_loss: bits & 2 != 0,
        gating: bits & 4 != 0,
        loss_weighting: bits & 8 != 0,
        lookahead: bits & 16 != 0,
    })
}

fn write_config<W: Write>(w: &mut W, config: &MemoryConfig) -> Result<()> {
    write_u64(w, config.n_sub as u64)?;
    write_u64(w, config.key_dim as u64)?;
    write_u64(w, config.value_dim as u64)?;
    write_u64(w, config.heads as u64)?;
    write_u64(w, config.top_k as u64)?;
    write_u64(w, config.chunk_size as u64)?;
    write_f64(w, config.eps_idw as f64)?;
    write_f64(w, config.addr_weight as f64)?;
    write_f64(w, config.lr as f64)?;
    w.write_all(&[
        match config.score_kind {
            ScoreKind::Idw => 0,
            ScoreKind::Dot => 1,
        },
        toggle_bits(&config.toggles),
        u8::from(config.track_ledger),
    ])?;
    Ok(())
}

fn read_config<R: Read>(r: &mut R) -> Result<MemoryConfig> {
    let n_sub = read_dim(r, "n_sub", MAX_DIM)?;
    let key_dim = read_dim(r, "key_dim", MAX_DIM)?;
    let value_dim = read_dim(r, "value_dim", MAX_DIM)?;
    let heads = read_dim(r, "heads", MAX_HEADS)?;
    let top_k = read_dim(r, "top_k", MAX_DIM)?;
    let chunk_size = read_dim(r, "chunk_size", u64::MAX >> 1)?;
    let eps_idw = read_f64(r, "eps_idw")? as Real;
    let addr_weight = read_f64(r, "addr_weight")? as Real;
    let lr = read_f64(r, "lr")? as Real;
    let score_kind = match read_u8(r, "score kind")? {
        0 => ScoreKind::Idw,
        1 => ScoreKind::Dot,
        other => return Err(storage(format!("unknown score kind {other}"))),
    };
    let toggles = toggles_from_bits(read_u8(r, "toggles")?)?;
    let track_ledger = match read_u8(r, "ledger flag")? {
        0 => false,
        1 => true,
        other => return Err(storage(format!("bad ledger flag {other}"))),
    };
    let config = MemoryConfig {
        n_sub,
        key_dim,
        value_dim,
        heads,
        top_k,
        chunk_size,
        eps_idw,
        addr_weight,
        lr,
        score_kind,
        toggles,
        track_ledger,
    };
    config
        .validate()
        .map_err(|e| storage(format!("invalid config in snapshot: {e}")))?;
    Ok(config)
}

/// Serialize a memory state (config, step, and all matrices; the ledger
/// lives in its own sidecar, see [`write_ledger`]).
pub fn write_state<W: Write>(w: &mut W, state: &MemoryState) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, KIND_STATE])?;
    write_config(w, state.config())?;
    write_u64(w, state.step())?;
    for head in 0..state.config().heads {
        let (k1, k2) = state.sub_keys(head);
        write_matrix(w, k1)?;
        write_matrix(w, k2)?;
    }
    write_matrix(w, state.value())?;
    Ok(())
}

/// Decode a memory state from untrusted bytes.
pub fn read_state<R: Read>(r: &mut R) -> Result<MemoryState> {
    let kind = header(r)?;
    if kind != KIND_STATE {
        return Err(storage(format!(
            "expected a memory-state snapshot, found kind {kind}"
        )));
    }
    let config = read_config(r)?;
    let step = read_u64(r, "step")?;
    let d = config.sub_key_dim();
    let mut k1 = Vec::with_capacity(config.heads);
    let mut k2 = Vec::with_capacity(config.heads);
    for _ in 0..config.heads {
        k1.push(read_matrix(r, config.n_sub, d, "sub-key matrix")?);
        k2.push(read_matrix(r, config.n_sub, d, "sub-key matrix")?);
    }
    let v = read_matrix(r, config.n_slots(), config.value_dim, "value matrix")?;
    expect_eof(r)?;
    MemoryState::from_parts(config, k1, k2, v, step)
}

pub fn save_state(state: &MemoryState, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_state(&mut w, state)?;
    w.flush()?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<MemoryState> {
    let mut r = BufReader::new(File::open(path)?);
    read_state(&mut r)
}

/// Load a state and reject it when its configuration differs from the
/// expected one.
pub fn load_state_expected(path: &Path, expected: &MemoryConfig) -> Result<MemoryState> {
    let state = load_state(path)?;
    if state.config() != expected {
        return Err(Error::ConfigMismatch(format!(
            "snapshot config {:?} does not match expected {:?}",
            state.config(),
            expected
        )));
    }
    Ok(state)
}

#[derive(Debug, Serialize, Deserialize)]
struct LedgerLine {
    slot: usize,
    step: u64,
    sample_tag: String,
    weight: Real,
}

/// Write the slot-provenance ledger as JSON lines, ordered by slot then
/// append order.
pub fn write_ledger<W: Write>(w: &mut W, state: &MemoryState) -> Result<()> {
    for (&slot, records) in state.ledger() {
        for record in records {
            let line = LedgerLine {
                slot,
                step: record.step,
                sample_tag: record.sample_tag.clone(),
                weight: record.weight,
            };
            serde_json::to_writer(&mut *w, &line)
                .map_err(|e| storage(format!("ledger encode: {e}")))?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Parse a JSON-lines ledger sidecar from untrusted bytes.
pub fn read_ledger<R: Read>(r: &mut R) -> Result<BTreeMap<usize, Vec<WriteRecord>>> {
    let mut text = String::new();
    r.read_to_string(&mut text)
        .map_err(|_| storage("ledger sidecar is not valid UTF-8"))?;
    let mut ledger: BTreeMap<usize, Vec<WriteRecord>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LedgerLine = serde_json::from_str(line)
            .map_err(|e| storage(format!("ledger line {}: {e}", lineno + 1)))?;
        if !parsed.weight.is_finite() {
            return Err(storage(format!(
                "ledger line {}: non-finite weight",
                lineno + 1
            )));
        }
        ledger.entry(parsed.slot).or_default().push(WriteRecord {
            step: parsed.step,
            sample_tag: parsed.sample_tag,
            weight: parsed.weight,
        });
    }
    Ok(ledger)
}

pub fn save_ledger(state: &MemoryState, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ledger(&mut w, state)?;
    w.flush()?;
    Ok(())
}

/// Load a ledger sidecar into a state, replacing any in-memory ledger. Slot
/// indices must be valid for the state's grid.
pub fn load_ledger_into(state: &mut MemoryState, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    let ledger = read_ledger(&mut r)?;
    let n_slots = state.config().n_slots();
    if let Some((&slot, _)) = ledger.iter().next_back() {
        if slot >= n_slots {
            return Err(Error::ConfigMismatch(format!(
                "ledger references slot {slot} beyond {n_slots} slots"
            )));
        }
    }
    state.ledger_replace(ledger);
    Ok(())
}

fn write_projection<W: Write>(w: &mut W, p: &Projection) -> Result<()> {
    write_u64(w, p.gain.len() as u64)?;
    for v in &p.gain {
        write_f64(w, *v as f64)?;
    }
    write_u64(w, p.linear.weight.rows() as u64)?;
    write_u64(w, p.linear.weight.cols() as u64)?;
    write_matrix(w, &p.linear.weight)?;
    write_u64(w, p.linear.bias.len() as u64)?;
    for v in &p.linear.bias {
        write_f64(w, *v as f64)?;
    }
    Ok(())
}

fn read_projection<R: Read>(r: &mut R, what: &str) -> Result<Projection> {
    let gain_len = read_dim(r, "projection gain length", MAX_DIM)?;
    let mut gain = Vec::with_capacity(gain_len);
    for _ in 0..gain_len {
        let v = read_f64(r, "projection gain")? as Real;
        if !v.is_finite() {
            return Err(storage(format!("non-finite gain in {what}")));
        }
        gain.push(v);
    }
    let rows = read_dim(r, "projection rows", MAX_DIM)?;
    let cols = read_dim(r, "projection cols", MAX_DIM)?;
    let weight = read_matrix(r, rows, cols, what)?;
    let bias_len = read_dim(r, "projection bias length", MAX_DIM)?;
    let mut bias = Vec::with_capacity(bias_len);
    for _ in 0..bias_len {
        let v = read_f64(r, "projection bias")? as Real;
        if !v.is_finite() {
            return Err(storage(format!("non-finite bias in {what}")));
        }
        bias.push(v);
    }
    if gain.len() != cols || bias.len() != rows {
        return Err(storage(format!("inconsistent projection shapes in {what}")));
    }
    Ok(Projection {
        gain,
        linear: LinearMap { weight, bias },
    })
}

/// Serialize layer weights in the same container format as memory states.
pub fn write_layer_weights<W: Write>(w: &mut W, weights: &LayerWeights) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, KIND_LAYER])?;
    write_u64(w, weights.hidden as u64)?;
    write_f64(w, weights.rms_eps as f64)?;
    for p in [&weights.q, &weights.v, &weights.g, &weights.o] {
        write_projection(w, p)?;
    }
    Ok(())
}

/// Decode layer weights from untrusted bytes.
pub fn read_layer_weights<R: Read>(r: &mut R) -> Result<LayerWeights> {
    let kind = header(r)?;
    if kind != KIND_LAYER {
        return Err(storage(format!(
            "expected a layer-weight snapshot, found kind {kind}"
        )));
    }
    let hidden = read_dim(r, "hidden width", MAX_DIM)?;
    let rms_eps = read_f64(r, "rms_eps")? as Real;
    if !(rms_eps.is_finite() && rms_eps > 0.0) {
        return Err(storage("rms_eps must be positive"));
    }
    let q = read_projection(r, "query projection")?;
    let v = read_projection(r, "value projection")?;
    let g = read_projection(r, "gate projection")?;
    let o = read_projection(r, "output projection")?;
    expect_eof(r)?;
    let weights = LayerWeights {
        hidden,
        rms_eps,
        q,
        v,
        g,
        o,
    };
    weights
        .validate_shapes()
        .map_err(|e| storage(format!("inconsistent layer shapes: {e}")))?;
    Ok(weights)
}

pub fn save_layer_weights(weights: &LayerWeights, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_layer_weights(&mut w, weights)?;
    w.flush()?;
    Ok(())
}

pub fn load_layer_weights(path: &Path) -> Result<LayerWeights> {
    let mut r = BufReader::new(File::open(path)?);
    read_layer_weights(&mut r)
}
