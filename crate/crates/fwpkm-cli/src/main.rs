use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fwpkm::bench::{Chunking, GateMode};
use fwpkm::numeric::Real;
use fwpkm::ScoreKind;
use fwpkm_cli::commands::verify::{Check, VerifyOptions};
use fwpkm_cli::commands::{ablate, bench, init, inspect, reset, verify};
use fwpkm_cli::config_file::{apply_config_text, slots_to_n_sub, ConfigError, RunConfig};
use fwpkm_cli::exit;

/// Fast-weight product-key memory: benchmarks, oracle checks, ablations,
/// and provenance traces.
#[derive(Parser)]
#[command(name = "fwpkm", version)]
struct Cli {
    /// Key = value config file with `[memory]`/`[episode]`/`[run]`
    /// sections; command-line flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Idw,
    Dot,
}

#[derive(Clone, Copy, ValueEnum)]
enum GateModeArg {
    AllOne,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChunkingArg {
    /// One update per pass over the whole stream (re-memorization mode).
    PerEpisode,
    /// Updates every configured chunk size.
    Fixed,
}

#[derive(Args, Default)]
struct MemoryFlags {
    /// Total memory slots (a perfect square)
    #[arg(long)]
    slots: Option<usize>,
    /// Per-head query/key width (even)
    #[arg(long)]
    key_dim: Option<usize>,
    /// Value width
    #[arg(long)]
    value_dim: Option<usize>,
    /// Retrieval heads (sub-keys are per head, the value table is shared)
    #[arg(long)]
    heads: Option<usize>,
    /// Slots retrieved per head
    #[arg(long)]
    top_k: Option<usize>,
    /// Tokens per fast-weight update
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Query-key score function
    #[arg(long, value_enum)]
    score: Option<ScoreArg>,
    /// Epsilon inside the inverse-distance-weight score
    #[arg(long)]
    eps_idw: Option<Real>,
    /// Weight on the marginal-entropy addressing loss
    #[arg(long)]
    addr_weight: Option<Real>,
    /// Fast-weight learning rate
    #[arg(long)]
    lr: Option<Real>,
    /// Do not z-score normalize target values
    #[arg(long)]
    no_value_norm: bool,
    /// Update keys with the MSE gradient instead of the addressing loss
    #[arg(long)]
    no_addr_loss: bool,
    /// Drop the gate entirely: output is prediction + residual, losses unweighted
    #[arg(long)]
    no_gating: bool,
    /// Keep the gate in the output path but do not weight the loss with it
    #[arg(long)]
    no_loss_weight: bool,
    /// Pair each query with its own timestep's value instead of the next one's
    #[arg(long)]
    no_lookahead: bool,
    /// Record per-slot write provenance (needed by inspect)
    #[arg(long)]
    ledger: bool,
}

#[derive(Args, Default)]
struct EpisodeFlags {
    /// Needles per episode
    #[arg(long)]
    needles: Option<usize>,
    /// Distractor bindings per episode
    #[arg(long)]
    distractors: Option<usize>,
    /// Codebook size for value decoding
    #[arg(long)]
    codebook: Option<usize>,
    /// How per-item gates are drawn
    #[arg(long, value_enum)]
    gate_mode: Option<GateModeArg>,
    /// Hidden width for layer-level episodes
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args, Default)]
struct RunFlags {
    /// Root seed; all randomness derives from it through named streams
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seed-grid runs
    #[arg(long)]
    seeds: Option<usize>,
    /// Memorization passes per episode
    #[arg(long)]
    iters: Option<usize>,
    /// Chunking of each pass
    #[arg(long, value_enum)]
    chunking: Option<ChunkingArg>,
    /// Output directory for result files
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic needle-in-a-haystack benchmark over a seed grid
    Bench {
        #[command(flatten)]
        memory: MemoryFlags,
        #[command(flatten)]
        episode: EpisodeFlags,
        #[command(flatten)]
        run: RunFlags,
        /// Also write each seed's final state (and its ledger sidecar) into
        /// the output directory for later inspection
        #[arg(long)]
        save_snapshots: bool,
    },
    /// Brute-force and finite-difference oracle checks
    Verify {
        /// Comma-separated subset of checks to run
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fault-injection hook: negate the analytic addressing gradient
        #[arg(long, hide = true)]
        inject_gradient_fault: bool,
    },
    /// Layer-level benchmark across the ablation variant grid
    Ablate {
        #[command(flatten)]
        memory: MemoryFlags,
        #[command(flatten)]
        episode: EpisodeFlags,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Export slot-provenance traces for probes against a snapshot
    Inspect {
        /// Memory snapshot to probe
        #[arg(long)]
        snapshot: PathBuf,
        /// JSON-lines probe file ({"query": [...], "truth_tag": "..."})
        #[arg(long)]
        probes: PathBuf,
        /// Ledger sidecar (defaults to `<snapshot>.ledger.jsonl` when present)
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Write records shown per slot
        #[arg(long, default_value_t = 1)]
        depth: usize,
        /// Output file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a freshly initialized memory snapshot
    Init {
        #[command(flatten)]
        memory: MemoryFlags,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Snapshot path to write
        #[arg(long)]
        out: PathBuf,
        /// Do not track write provenance in the new state
        #[arg(long)]
        no_ledger: bool,
    },
    /// Re-initialize an existing snapshot's fast weights (explicit reset)
    Reset {
        /// Snapshot to reset
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination (overwrites the input when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn apply_memory_flags(config: &mut RunConfig, flags: &MemoryFlags) -> anyhow::Result<()> {
    if let Some(slots) = flags.slots {
        config.memory.n_sub = slots_to_n_sub(slots)?;
    }
    if let Some(v) = flags.key_dim {
        config.memory.key_dim = v;
    }
    if let Some(v) = flags.value_dim {
        config.memory.value_dim = v;
    }
    if let Some(v) = flags.heads {
        config.memory.heads = v;
    }
    if let Some(v) = flags.top_k {
        config.memory.top_k = v;
    }
    if let Some(v) = flags.chunk_size {
        config.memory.chunk_size = v;
    }
    if let Some(v) = flags.score {
        config.memory.score_kind = match v {
            ScoreArg::Idw => ScoreKind::Idw,
            ScoreArg::Dot => ScoreKind::Dot,
        };
    }
    if let Some(v) = flags.eps_idw {
        config.memory.eps_idw = v;
    }
    if let Some(v) = flags.addr_weight {
        config.memory.addr_weight = v;
    }
    if let Some(v) = flags.lr {
        config.memory.lr = v;
    }
    if flags.no_value_norm {
        config.memory.toggles.value_norm = false;
    }
    if flags.no_addr_loss {
        config.memory.toggles.addressing_loss = false;
    }
    if flags.no_gating {
        config.memory.toggles.gating = false;
    }
    if flags.no_loss_weight {
        config.memory.toggles.loss_weighting = false;
    }
    if flags.no_lookahead {
        config.memory.toggles.lookahead = false;
    }
    if flags.ledger {
        config.memory.track_ledger = true;
    }
    Ok(())
}

fn apply_episode_flags(config: &mut RunConfig, flags: &EpisodeFlags) {
    if let Some(v) = flags.needles {
        config.needles = v;
    }
    if let Some(v) = flags.distractors {
        config.distractors = v;
    }
    if let Some(v) = flags.codebook {
        config.codebook = v;
    }
    if let Some(v) = flags.gate_mode {
        config.gate_mode = match v {
            GateModeArg::AllOne => GateMode::AllOne,
            GateModeArg::Random => GateMode::Random,
        };
    }
    if let Some(v) = flags.hidden {
        config.hidden = v;
    }
}

fn apply_run_flags(config: &mut RunConfig, flags: &RunFlags) {
    if let Some(v) = flags.seed {
        config.seed = v;
    }
    if let Some(v) = flags.seeds {
        config.seeds = v;
    }
    if let Some(v) = flags.iters {
        config.iters = v;
    }
    if let Some(v) = flags.chunking {
        config.chunking = match v {
            ChunkingArg::PerEpisode => Chunking::PerEpisode,
            ChunkingArg::Fixed => Chunking::FixedC,
        };
    }
    if let Some(v) = &flags.out {
        config.out = Some(v.clone());
    }
}

fn load_run_config(path: &Option<PathBuf>) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)?;
        apply_config_text(&mut config, &text)?;
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Bench {
            memory,
            episode,
            run,
            save_snapshots,
        } => {
            let mut config = load_run_config(&cli.config)?;
            apply_memory_flags(&mut config, &memory)?;
            apply_episode_flags(&mut config, &episode);
            apply_run_flags(&mut config, &run);
            bench::run(&config, save_snapshots)
        }
        Command::Verify {
            checks,
            seed,
            inject_gradient_fault,
        } => {
            let checks = match checks {
                Some(names) => names
                    .iter()
                    .map(|n| Check::parse(n).map_err(fwpkm::Error::InvalidArgument))
                    .collect::<Result<Vec<_>, _>>()?,
                None => Check::ALL.to_vec(),
            };
            verify::run(&VerifyOptions {
                checks,
                seed,
                inject_gradient_fault,
            })
        }
        Command::Ablate {
            memory,
            episode,
            run,
        } => {
            let mut config = load_run_config(&cli.config)?;
            apply_memory_flags(&mut config, &memory)?;
            apply_episode_flags(&mut config, &episode);
            apply_run_flags(&mut config, &run);
            ablate::run(&config)
        }
        Command::Inspect {
            snapshot,
            probes,
            ledger,
            depth,
            out,
        } => inspect::run(&inspect::InspectOptions {
            snapshot,
            probes,
            ledger,
            depth,
            out,
        }),
        Command::Init {
            memory,
            seed,
            out,
            no_ledger,
        } => {
            let mut config = load_run_config(&cli.config)?;
            apply_memory_flags(&mut config, &memory)?;
            config.memory.track_ledger = !no_ledger;
            init::run(&init::InitOptions {
                memory: config.memory,
                seed,
                out,
            })
        }
        Command::Reset { snapshot, seed, out } => {
            reset::run(&reset::ResetOptions { snapshot, seed, out })
        }
    }
}

fn classify(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<fwpkm::Error>() {
            return match e {
                fwpkm::Error::InvalidArgument(_)
                | fwpkm::Error::ConfigMismatch(_)
                | fwpkm::Error::Dimension { .. } => exit::CONFIG,
                fwpkm::Error::Io(_) | fwpkm::Error::Storage(_) => exit::IO,
                fwpkm::Error::Numeric(_) => exit::CHECK_FAILED,
            };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return exit::CONFIG;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return exit::IO;
        }
    }
    exit::CHECK_FAILED
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(classify(&err));
        }
    }
}
