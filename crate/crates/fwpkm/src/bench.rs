//! Synthetic needle-in-a-haystack benchmark with iterative re-memorization.
//!
//! The memory-level variant binds unique query vectors to codebook value
//! vectors and probes retrieval accuracy by nearest-codeword decoding after
//! each memorization pass. The layer-level variant drives the full layer
//! with hidden-state streams in which a needle is an adjacent (key token,
//! value token) pair, so lookahead pairing is what binds them.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{project_inputs, LayerState, LayerWeights};
use crate::numeric::{dot, zscore, Real, ZSCORE_EPS};
use crate::rng::stream_rng;
use crate::state::MemoryState;
use crate::update::{update_chunk, update_chunk_unbounded, ChunkBatch, UpdateReport};

/// How per-item gates are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    AllOne,
    Random,
}

/// Parameters of one synthetic episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_needles: usize,
    pub n_distractors: usize,
    pub codebook_size: usize,
    /// Full query width (the memory's heads * key_dim).
    pub key_dim: usize,
    pub value_dim: usize,
    pub seed: u64,
    pub gate_mode: GateMode,
    /// Z-score codebook vectors on the feature dimension (the value-norm
    /// toggle applied at target construction time).
    pub normalize_values: bool,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            n_needles: 5,
            n_distractors: 0,
            codebook_size: 64,
            key_dim: 64,
            value_dim: 64,
            seed: 0,
            gate_mode: GateMode::AllOne,
            normalize_values: true,
        }
    }
}

/// One stream element: a query bound to a codebook value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamItem {
    pub query: Vec<Real>,
    pub codeword: usize,
    pub is_needle: bool,
    pub gate: Real,
    pub tag: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Probe {
    pub query: Vec<Real>,
    pub codeword: usize,
    pub tag: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Episode {
    pub stream: Vec<StreamItem>,
    pub probes: Vec<Probe>,
    pub codebook: Vec<Vec<Real>>,
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, std: Real) -> Vec<Real> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0_f64, std as f64).expect("positive std");
    (0..n).map(|_| normal.sample(rng) as Real).collect()
}

/// Generate a deterministic episode: z-scored Gaussian codebook vectors,
/// unit-scale Gaussian queries, needles bound to distinct codewords and
/// inserted at uniform positions among the distractors.
pub fn gen_episode(spec: &EpisodeSpec) -> Result<Episode> {
    if spec.codebook_size < spec.n_needles || spec.codebook_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "codebook_size ({}) must be >= n_needles ({}) and positive",
            spec.codebook_size, spec.n_needles
        )));
    }
    if spec.key_dim == 0 || spec.value_dim == 0 {
        return Err(Error::InvalidArgument(
            "key_dim and value_dim must be positive".into(),
        ));
    }

    let mut codebook_rng = stream_rng(spec.seed, "episode-codebook", 0);
    let codebook: Vec<Vec<Real>> = (0..spec.codebook_size)
        .map(|_| {
            let raw = gaussian_vec(&mut codebook_rng, spec.value_dim, 1.0);
            if spec.normalize_values {
                zscore(&raw, ZSCORE_EPS)
            } else {
                Ok(raw)
            }
        })
        .collect::<Result<_>>()?;

    let query_std = 1.0 / (spec.key_dim as Real).sqrt();
    let mut query_rng = stream_rng(spec.seed, "episode-queries", 0);
    let mut needle_queries: Vec<Vec<Real>> = Vec::with_capacity(spec.n_needles);
    while needle_queries.len() < spec.n_needles {
        let q = gaussian_vec(&mut query_rng, spec.key_dim, query_std);
        if !needle_queries.contains(&q) {
            needle_queries.push(q);
        }
    }

    let mut assign_rng = stream_rng(spec.seed, "episode-codewords", 0);
    let mut ids: Vec<usize> = (0..spec.codebook_size).collect();
    ids.shuffle(&mut assign_rng);
    let needle_ids: Vec<usize> = ids[..spec.n_needles].to_vec();

    let mut gate_rng = stream_rng(spec.seed, "episode-gates", 0);
    let mut draw_gate = |mode: GateMode| -> Real {
        match mode {
            GateMode::AllOne => 1.0,
            GateMode::Random => gate_rng.random::<f64>() as Real,
        }
    };

    let total = spec.n_needles + spec.n_distractors;
    let mut items: Vec<StreamItem> = Vec::with_capacity(total);
    for (j, (q, &id)) in needle_queries.iter().zip(&needle_ids).enumerate() {
        items.push(StreamItem {
            query: q.clone(),
            codeword: id,
            is_needle: true,
            gate: draw_gate(spec.gate_mode),
            tag: format!("needle{j}"),
        });
    }
    for i in 0..spec.n_distractors {
        let id = assign_rng.random_range(0..spec.codebook_size);
        items.push(StreamItem {
            query: gaussian_vec(&mut query_rng, spec.key_dim, query_std),
            codeword: id,
            is_needle: false,
            gate: draw_gate(spec.gate_mode),
            tag: format!("dist{i}"),
        });
    }
    let mut position_rng = stream_rng(spec.seed, "episode-positions", 0);
    items.shuffle(&mut position_rng);

    let probes = needle_queries
        .into_iter()
        .zip(&needle_ids)
        .enumerate()
        .map(|(j, (query, &codeword))| Probe {
            query,
            codeword,
            tag: format!("needle{j}"),
        })
        .collect();

    Ok(Episode {
        stream: items,
        probes,
        codebook,
    })
}

/// Nearest-codeword decoding result.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Decoded {
    pub id: usize,
    /// The retrieved vector was exactly zero, so no meaningful decode
    /// exists; `id` defaults to 0 and accuracy counts this as a miss.
    pub null_retrieval: bool,
    pub cosine: Real,
}

/// Decode a retrieved value by maximal cosine similarity against the
/// codebook. Ties break toward the lowest id.
pub fn decode(v_hat: &[Real], codebook: &[Vec<Real>]) -> Result<Decoded> {
    if codebook.is_empty() {
        return Err(Error::InvalidArgument("empty codebook".into()));
    }
    let v_norm = dot(v_hat, v_hat).sqrt();
    if v_norm == 0.0 {
        return Ok(Decoded {
            id: 0,
            null_retrieval: true,
            cosine: 0.0,
        });
    }
    let mut best_id = 0;
    let mut best: Real = Real::NEG_INFINITY;
    for (id, code) in codebook.iter().enumerate() {
        let c_norm = dot(code, code).sqrt();
        let cos = if c_norm == 0.0 {
            0.0
        } else {
            dot(v_hat, code) / (v_norm * c_norm)
        };
        if cos > best {
            best = cos;
            best_id = id;
        }
    }
    Ok(Decoded {
        id: best_id,
        null_retrieval: false,
        cosine: best,
    })
}

/// How a pass's writes are split into update chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chunking {
    /// The whole stream is one chunk per pass (the re-memorization setting:
    /// the chunk size becomes the stream length).
    PerEpisode,
    /// Split into chunks of the memory's configured chunk size.
    FixedC,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub probe: usize,
    pub truth: usize,
    pub decoded: usize,
    pub null_retrieval: bool,
    pub cosine: Real,
}

/// Accuracy after each memorization pass, with per-probe detail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_iter_accuracy: Vec<Real>,
    pub probe_details: Vec<Vec<ProbeOutcome>>,
    /// Slots written by more than one stream item in the same chunk. A
    /// nonzero count explains imperfect rewrites at light load.
    pub slot_collisions: usize,
    pub update_reports: Vec<UpdateReport>,
}

fn probe_accuracy(
    state: &MemoryState,
    episode: &Episode,
) -> Result<(Real, Vec<ProbeOutcome>)> {
    let mut outcomes = Vec::with_capacity(episode.probes.len());
    let mut correct = 0usize;
    for (i, probe) in episode.probes.iter().enumerate() {
        let retrieval = state.retrieve(&probe.query)?;
        let decoded = decode(&retrieval.v_hat, &episode.codebook)?;
        let hit = !decoded.null_retrieval && decoded.id == probe.codeword;
        if hit {
            correct += 1;
        }
        outcomes.push(ProbeOutcome {
            probe: i,
            truth: probe.codeword,
            decoded: decoded.id,
            null_retrieval: decoded.null_retrieval,
            cosine: decoded.cosine,
        });
    }
    Ok((correct as Real / episode.probes.len() as Real, outcomes))
}

/// Write the episode stream `n` times into the memory, probing (read-only)
/// after each pass.
pub fn run_niter(
    state: &mut MemoryState,
    episode: &Episode,
    n: usize,
    chunking: Chunking,
) -> Result<AccuracyReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if episode.probes.is_empty() {
        return Err(Error::InvalidArgument("episode has no probes".into()));
    }
    if episode.stream.is_empty() {
        return Err(Error::InvalidArgument("episode has an empty stream".into()));
    }
    let value_dim = state.config().value_dim;
    for item in &episode.stream {
        if item.codeword >= episode.codebook.len() {
            return Err(Error::InvalidArgument(format!(
                "stream references codeword {} beyond codebook",
                item.codeword
            )));
        }
        if episode.codebook[item.codeword].len() != value_dim {
            return Err(Error::dim(
                "run_niter codeword",
                value_dim,
                episode.codebook[item.codeword].len(),
            ));
        }
    }

    let mut report = AccuracyReport {
        per_iter_accuracy: Vec::with_capacity(n),
        probe_details: Vec::with_capacity(n),
        slot_collisions: 0,
        update_reports: Vec::new(),
    };
    for _pass in 0..n {
        let mut chunk = ChunkBatch::default();
        for item in &episode.stream {
            chunk.push(
                item.query.clone(),
                episode.codebook[item.codeword].clone(),
                item.gate,
                item.tag.clone(),
            );
            let full = match chunking {
                Chunking::PerEpisode => false,
                Chunking::FixedC => chunk.len() == state.config().chunk_size,
            };
            if full {
                let update = update_chunk(state, &chunk)?;
                report.slot_collisions +=
                    update.read_counts.values().filter(|&&c| c > 1).count();
                report.update_reports.push(update);
                chunk = ChunkBatch::default();
            }
        }
        if !chunk.is_empty() {
            let update = match chunking {
                Chunking::PerEpisode => update_chunk_unbounded(state, &chunk)?,
                Chunking::FixedC => update_chunk(state, &chunk)?,
            };
            report.slot_collisions +=
                update.read_counts.values().filter(|&&c| c > 1).count();
            report.update_reports.push(update);
        }

        let (accuracy, outcomes) = probe_accuracy(state, episode)?;
        report.per_iter_accuracy.push(accuracy);
        report.probe_details.push(outcomes);
    }
    Ok(report)
}

/// Parameters of a layer-level episode in hidden-state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenEpisodeSpec {
    pub n_needles: usize,
    pub n_distractors: usize,
    pub codebook_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

/// A hidden-state stream in which each needle is an adjacent (key token,
/// value token) pair; lookahead pairing binds the key's query to the value
/// token's projected value.
#[derive(Debug, Clone)]
pub struct HiddenEpisode {
    pub stream: Vec<Vec<Real>>,
    /// (key hidden state, codeword id) per needle.
    pub probes: Vec<(Vec<Real>, usize)>,
    /// The hidden-space codebook; decode targets are its value projections.
    pub codeword_hiddens: Vec<Vec<Real>>,
}

/// Generate a deterministic hidden-space episode.
pub fn gen_hidden_episode(spec: &HiddenEpisodeSpec) -> Result<HiddenEpisode> {
    if spec.codebook_size < spec.n_needles || spec.codebook_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "codebook_size ({}) must be >= n_needles ({}) and positive",
            spec.codebook_size, spec.n_needles
        )));
    }
    if spec.hidden == 0 {
        return Err(Error::InvalidArgument("hidden width must be >= 1".into()));
    }
    let std = 1.0 / (spec.hidden as Real).sqrt();

    let mut cb_rng = stream_rng(spec.seed, "hidden-codebook", 0);
    let codeword_hiddens: Vec<Vec<Real>> = (0..spec.codebook_size)
        .map(|_| gaussian_vec(&mut cb_rng, spec.hidden, std))
        .collect();

    let mut key_rng = stream_rng(spec.seed, "hidden-keys", 0);
    let needle_keys: Vec<Vec<Real>> = (0..spec.n_needles)
        .map(|_| gaussian_vec(&mut key_rng, spec.hidden, std))
        .collect();

    let mut assign_rng = stream_rng(spec.seed, "hidden-codewords", 0);
    let mut ids: Vec<usize> = (0..spec.codebook_size).collect();
    ids.shuffle(&mut assign_rng);
    let needle_ids: Vec<usize> = ids[..spec.n_needles].to_vec();

    // Blocks keep (key, value) pairs adjacent under shuffling. Distractors
    // are junk bindings onto real codewords, so their writes land on
    // decodable directions and genuinely contend with the needles.
    let mut dist_rng = stream_rng(spec.seed, "hidden-distractors", 0);
    let mut blocks: Vec<Vec<Vec<Real>>> = Vec::new();
    for (key, &id) in needle_keys.iter().zip(&needle_ids) {
        blocks.push(vec![key.clone(), codeword_hiddens[id].clone()]);
    }
    for _ in 0..spec.n_distractors {
        let key = gaussian_vec(&mut dist_rng, spec.hidden, std);
        let id = assign_rng.random_range(0..spec.codebook_size);
        blocks.push(vec![key, codeword_hiddens[id].clone()]);
    }
    let mut position_rng = stream_rng(spec.seed, "hidden-positions", 0);
    blocks.shuffle(&mut position_rng);
    let stream: Vec<Vec<Real>> = blocks.into_iter().flatten().collect();

    let probes = needle_keys.into_iter().zip(needle_ids).collect();
    Ok(HiddenEpisode {
        stream,
        probes,
        codeword_hiddens,
    })
}

/// Run a hidden-space episode through the full layer with per-episode
/// chunking, probing after each pass. Decode targets are the codewords'
/// value projections, normalized the same way the layer normalizes targets.
pub fn run_niter_layer(
    layer: &mut LayerState,
    weights: &LayerWeights,
    episode: &HiddenEpisode,
    n: usize,
) -> Result<AccuracyReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if episode.probes.is_empty() {
        return Err(Error::InvalidArgument("episode has no probes".into()));
    }
    let config = layer.memory.config().clone();
    let decode_book: Vec<Vec<Real>> = episode
        .codeword_hiddens
        .iter()
        .map(|h| {
            let (_, v, _) = project_inputs(weights, &config, h)?;
            if config.toggles.value_norm {
                zscore(&v, ZSCORE_EPS)
            } else {
                Ok(v)
            }
        })
        .collect::<Result<_>>()?;

    let mut report = AccuracyReport {
        per_iter_accuracy: Vec::with_capacity(n),
        probe_details: Vec::with_capacity(n),
        slot_collisions: 0,
        update_reports: Vec::new(),
    };
    for _pass in 0..n {
        let updates = layer.reprocess(weights, &episode.stream, 1)?;
        for update in updates {
            report.slot_collisions +=
                update.read_counts.values().filter(|&&c| c > 1).count();
            report.update_reports.push(update);
        }

        let mut outcomes = Vec::with_capacity(episode.probes.len());
        let mut correct = 0usize;
        for (i, (key_hidden, truth)) in episode.probes.iter().enumerate() {
            let (q, _, _) = project_inputs(weights, &config, key_hidden)?;
            let retrieval = layer.memory.retrieve(&q)?;
            let decoded = decode(&retrieval.v_hat, &decode_book)?;
            let hit = !decoded.null_retrieval && decoded.id == *truth;
            if hit {
                correct += 1;
            }
            outcomes.push(ProbeOutcome {
                probe: i,
                truth: *truth,
                decoded: decoded.id,
                null_retrieval: decoded.null_retrieval,
                cosine: decoded.cosine,
            });
        }
        report
            .per_iter_accuracy
            .push(correct as Real / episode.probes.len() as Real);
        report.probe_details.push(outcomes);
    }
    Ok(report)
}

/// Synthetic clustered query stream for slot-usage studies: queries are
/// drawn around a few cluster centers and every cluster maps to one fixed
/// target value. The structure is memorizable, so without the addressing
/// loss a handful of keys wins every cluster and selection collapses onto
/// them; with it, usage spreads while the cluster map is still learned.
pub fn clustered_query_stream(
    query_dim: usize,
    value_dim: usize,
    n_chunks: usize,
    chunk_len: usize,
    n_clusters: usize,
    within_std: Real,
    seed: u64,
) -> Result<Vec<ChunkBatch>> {
    if n_clusters == 0 || query_dim == 0 || value_dim == 0 || chunk_len == 0 {
        return Err(Error::InvalidArgument(
            "clustered_query_stream sizes must be positive".into(),
        ));
    }
    let std = 1.0 / (query_dim as Real).sqrt();
    let mut center_rng = stream_rng(seed, "cluster-centers", 0);
    let centers: Vec<Vec<Real>> = (0..n_clusters)
        .map(|_| gaussian_vec(&mut center_rng, query_dim, std))
        .collect();
    let targets: Vec<Vec<Real>> = (0..n_clusters)
        .map(|_| zscore(&gaussian_vec(&mut center_rng, value_dim, 1.0), ZSCORE_EPS))
        .collect::<Result<_>>()?;

    let mut chunks = Vec::with_capacity(n_chunks);
    for c in 0..n_chunks {
        let mut rng = stream_rng(seed, "cluster-stream", c as u64);
        let mut chunk = ChunkBatch::default();
        for t in 0..chunk_len {
            let cluster = rng.random_range(0..n_clusters);
            let noise = gaussian_vec(&mut rng, query_dim, within_std * std);
            let query: Vec<Real> = centers[cluster]
                .iter()
                .zip(&noise)
                .map(|(a, b)| a + b)
                .collect();
            chunk.push(query, targets[cluster].clone(), 1.0, format!("c{c}t{t}"));
        }
        chunks.push(chunk);
    }
    Ok(chunks)
}
