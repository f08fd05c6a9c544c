//! Flat key = value configuration files with `[memory]`, `[episode]`, and
//! `[run]` sections. Key names mirror the memory hyperparameter table;
//! command-line flags override file values, which override the built-in
//! defaults.

use std::fmt;
use std::path::PathBuf;

use fwpkm::bench::{Chunking, GateMode};
use fwpkm::numeric::Real;
use fwpkm::{MemoryConfig, ScoreKind};

/// A configuration error with the offending line number when it came from a
/// file.
#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        message: message.into(),
    }
}

/// Everything a run needs: the memory configuration plus episode and grid
/// settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub memory: MemoryConfig,
    pub needles: usize,
    pub distractors: usize,
    pub codebook: usize,
    pub gate_mode: GateMode,
    pub hidden: usize,
    pub seed: u64,
    pub seeds: usize,
    pub iters: usize,
    pub chunking: Chunking,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    /// Desk-scale benchmark defaults: a 64 x 64 slot grid probed with the
    /// standard 1 head x top-8 retrieval.
    fn default() -> Self {
        RunConfig {
            memory: MemoryConfig {
                n_sub: 64,
                key_dim: 16,
                value_dim: 64,
                heads: 1,
                top_k: 8,
                chunk_size: 512,
                track_ledger: false,
                ..MemoryConfig::default()
            },
            needles: 5,
            distractors: 0,
            codebook: 64,
            gate_mode: GateMode::AllOne,
            hidden: 64,
            seed: 0,
            seeds: 10,
            iters: 2,
            chunking: Chunking::PerEpisode,
            out: None,
        }
    }
}

fn parse_bool(line: usize, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        other => Err(err(line, format!("expected a boolean, got '{other}'"))),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, value: &str, what: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| err(line, format!("expected {what}, got '{value}'")))
}

/// Convert a total slot count into the per-matrix sub-key count.
pub fn slots_to_n_sub(slots: usize) -> Result<usize, ConfigError> {
    let n_sub = (slots as f64).sqrt().round() as usize;
    if n_sub == 0 || n_sub * n_sub != slots {
        return Err(ConfigError {
            line: None,
            message: format!("slots ({slots}) must be a positive perfect square"),
        });
    }
    Ok(n_sub)
}

/// Parse a config file's text into `base`, overriding only the keys present.
pub fn apply_config_text(base: &mut RunConfig, text: &str) -> Result<(), ConfigError> {
    #[derive(PartialEq, Clone, Copy)]
    enum Section {
        None,
        Memory,
        Episode,
        Run,
    }
    let mut section = Section::None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.split_once(['#', ';']) {
            Some((before, _)) => before.trim(),
            None => raw.trim(),
        };
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(lineno, "unterminated section header"))?;
            section = match name.trim() {
                "memory" => Section::Memory,
                "episode" => Section::Episode,
                "run" => Section::Run,
                other => return Err(err(lineno, format!("unknown section '[{other}]'"))),
            };
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(lineno, "expected 'key = value'"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(err(lineno, "expected 'key = value'"));
        }
        match (section, key) {
            (Section::Memory, "slots") => {
                let slots: usize = parse_num(lineno, value, "a slot count")?;
                base.memory.n_sub = slots_to_n_sub(slots).map_err(|e| err(lineno, e.message))?;
            }
            (Section::Memory, "key_dim") => {
                base.memory.key_dim = parse_num(lineno, value, "a dimension")?
            }
            (Section::Memory, "value_dim") => {
                base.memory.value_dim = parse_num(lineno, value, "a dimension")?
            }
            (Section::Memory, "heads") => {
                base.memory.heads = parse_num(lineno, value, "a head count")?
            }
            (Section::Memory, "top_k") => {
                base.memory.top_k = parse_num(lineno, value, "a selection size")?
            }
            (Section::Memory, "chunk_size") => {
                base.memory.chunk_size = parse_num(lineno, value, "a chunk size")?
            }
            (Section::Memory, "score") => {
                base.memory.score_kind = match value {
                    "idw" => ScoreKind::Idw,
                    "dot" => ScoreKind::Dot,
                    other => return Err(err(lineno, format!("unknown score kind '{other}'"))),
                }
            }
            (Section::Memory, "eps_idw") => {
                base.memory.eps_idw = parse_num::<Real>(lineno, value, "a number")?
            }
            (Section::Memory, "addr_loss_weight") => {
                base.memory.addr_weight = parse_num::<Real>(lineno, value, "a number")?
            }
            (Section::Memory, "lr") => {
                base.memory.lr = parse_num::<Real>(lineno, value, "a number")?
            }
            (Section::Memory, "value_norm") => {
                base.memory.toggles.value_norm = parse_bool(lineno, value)?
            }
            (Section::Memory, "addr_loss") => {
                base.memory.toggles.addressing_loss = parse_bool(lineno, value)?
            }
            (Section::Memory, "gating") => {
                base.memory.toggles.gating = parse_bool(lineno, value)?
            }
            (Section::Memory, "loss_weight") => {
                base.memory.toggles.loss_weighting = parse_bool(lineno, value)?
            }
            (Section::Memory, "lookahead") => {
                base.memory.toggles.lookahead = parse_bool(lineno, value)?
            }
            (Section::Memory, "ledger") => {
                base.memory.track_ledger = parse_bool(lineno, value)?
            }
            (Section::Episode, "needles") => {
                base.needles = parse_num(lineno, value, "a count")?
            }
            (Section::Episode, "distractors") => {
                base.distractors = parse_num(lineno, value, "a count")?
            }
            (Section::Episode, "codebook") => {
                base.codebook = parse_num(lineno, value, "a count")?
            }
            (Section::Episode, "gate_mode") => {
                base.gate_mode = match value {
                    "all_one" => GateMode::AllOne,
                    "random" => GateMode::Random,
                    other => return Err(err(lineno, format!("unknown gate mode '{other}'"))),
                }
            }
            (Section::Episode, "hidden") => base.hidden = parse_num(lineno, value, "a width")?,
            (Section::Run, "seed") => base.seed = parse_num(lineno, value, "a seed")?,
            (Section::Run, "seeds") => base.seeds = parse_num(lineno, value, "a count")?,
            (Section::Run, "iters") => base.iters = parse_num(lineno, value, "a count")?,
            (Section::Run, "chunking") => {
                base.chunking = match value {
                    "per_episode" => Chunking::PerEpisode,
                    "fixed" => Chunking::FixedC,
                    other => return Err(err(lineno, format!("unknown chunking '{other}'"))),
                }
            }
            (Section::Run, "out") => base.out = Some(PathBuf::from(value)),
            (Section::None, _) => {
                return Err(err(lineno, "key outside any [section]"));
            }
            (_, other) => {
                return Err(err(lineno, format!("unknown key '{other}'")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_round_trip() {
        let text = "\
# benchmark preset
[memory]
slots = 1024          ; 32 x 32
key_dim = 8
value_dim = 16
heads = 2
top_k = 4
chunk_size = 64
score = dot
eps_idw = 0.01
addr_loss_weight = 5
lr = 0.5
value_norm = false
addr_loss = off
gating = true
loss_weight = yes
lookahead = no
ledger = true

[episode]
needles = 7
distractors = 100
codebook = 32
gate_mode = random
hidden = 48

[run]
seed = 9
seeds = 3
iters = 4
chunking = fixed
out = /tmp/results
";
        let mut config = RunConfig::default();
        apply_config_text(&mut config, text).unwrap();
        assert_eq!(config.memory.n_sub, 32);
        assert_eq!(config.memory.key_dim, 8);
        assert_eq!(config.memory.heads, 2);
        assert_eq!(config.memory.score_kind, ScoreKind::Dot);
        assert!(!config.memory.toggles.value_norm);
        assert!(!config.memory.toggles.addressing_loss);
        assert!(!config.memory.toggles.lookahead);
        assert!(config.memory.track_ledger);
        assert_eq!(config.needles, 7);
        assert_eq!(config.gate_mode, GateMode::Random);
        assert_eq!(config.hidden, 48);
        assert_eq!(config.seeds, 3);
        assert_eq!(config.chunking, Chunking::FixedC);
        assert_eq!(config.out, Some(PathBuf::from("/tmp/results")));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut config = RunConfig::default();
        let e = apply_config_text(&mut config, "[memory]\nslots = 120\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = apply_config_text(&mut config, "slots = 4096\n").unwrap_err();
        assert_eq!(e.line, Some(1));
        let e = apply_config_text(&mut config, "[memory]\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = apply_config_text(&mut config, "[memory]\ntop_k eight\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = apply_config_text(&mut config, "[nope]\n").unwrap_err();
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn partial_files_only_override_named_keys() {
        let mut config = RunConfig::default();
        apply_config_text(&mut config, "[run]\nseeds = 42\n").unwrap();
        assert_eq!(config.seeds, 42);
        assert_eq!(config.memory, RunConfig::default().memory);
    }

    #[test]
    fn slots_must_be_square() {
        assert!(slots_to_n_sub(4096).is_ok());
        assert!(slots_to_n_sub(4095).is_err());
        assert!(slots_to_n_sub(0).is_err());
    }
}
