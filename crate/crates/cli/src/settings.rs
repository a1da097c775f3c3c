use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use prefagg_core::aggregate::{Method, MethodParams};
use prefagg_core::scoring::{TurnScope, DEFAULT_TIE_THRESHOLD};

use crate::UsageError;

pub const SEED_ENV: &str = "PREFAGG_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Subset {
    All,
    Balanced,
    CensusUk,
    CensusUs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// Settings shared by every command. Each is optional so that flags, the
/// environment and a config file can be layered.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Participant survey JSONL
    #[arg(long, global = true)]
    pub survey: Option<PathBuf>,
    /// Conversations JSONL
    #[arg(long, global = true)]
    pub conversations: Option<PathBuf>,
    /// Utterance table JSONL
    #[arg(long, global = true)]
    pub utterances: Option<PathBuf>,
    /// Metadata JSONL
    #[arg(long, global = true)]
    pub metadata: Option<PathBuf>,
    /// Embeddings JSONL keyed by conversation, interaction or utterance id
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// Topic assignments JSONL
    #[arg(long, global = true)]
    pub topics: Option<PathBuf>,
    /// Battle list (CSV or JSONL) used instead of a corpus where supported
    #[arg(long, global = true)]
    pub battles: Option<PathBuf>,
    /// Participant subset to analyse
    #[arg(long, global = true, value_enum)]
    pub subset: Option<Subset>,
    /// Score gap at or below which a pair counts as a tie
    #[arg(long, global = true)]
    pub tie_threshold: Option<f64>,
    /// Rank centrality regularization
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Online Elo step size
    #[arg(long, global = true)]
    pub k_factor: Option<f64>,
    /// Aggregation method, e.g. rank_centrality, elo_mle, avg_win_rate
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Turns that yield battles: openers or all
    #[arg(long, global = true)]
    pub turns: Option<String>,
    /// Seed for every random draw
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Bootstrap or welfare replications
    #[arg(long, global = true)]
    pub replications: Option<usize>,
    /// Participants per bootstrap or welfare sample
    #[arg(long, global = true)]
    pub sample_size: Option<usize>,
    /// Grouping attribute, conversation_type or all
    #[arg(long, global = true)]
    pub group_by: Option<String>,
    /// Cosine-distance threshold for neighbourhoods
    #[arg(long, global = true)]
    pub tau_cos: Option<f64>,
    /// Output directory; results go to stdout when absent
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output formats, comma separated
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    pub format: Option<Vec<Format>>,
    /// Worker threads; results do not depend on it
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

impl Settings {
    /// Fills every unset field from `other`.
    fn or(self, other: Settings) -> Settings {
        Settings {
            survey: self.survey.or(other.survey),
            conversations: self.conversations.or(other.conversations),
            utterances: self.utterances.or(other.utterances),
            metadata: self.metadata.or(other.metadata),
            embeddings: self.embeddings.or(other.embeddings),
            topics: self.topics.or(other.topics),
            battles: self.battles.or(other.battles),
            subset: self.subset.or(other.subset),
            tie_threshold: self.tie_threshold.or(other.tie_threshold),
            alpha: self.alpha.or(other.alpha),
            k_factor: self.k_factor.or(other.k_factor),
            method: self.method.or(other.method),
            turns: self.turns.or(other.turns),
            seed: self.seed.or(other.seed),
            replications: self.replications.or(other.replications),
            sample_size: self.sample_size.or(other.sample_size),
            group_by: self.group_by.or(other.group_by),
            tau_cos: self.tau_cos.or(other.tau_cos),
            out: self.out.or(other.out),
            format: self.format.or(other.format),
            threads: self.threads.or(other.threads),
        }
    }
}

/// Fully resolved settings, embedded in every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub survey: Option<PathBuf>,
    pub conversations: Option<PathBuf>,
    pub utterances: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    pub battles: Option<PathBuf>,
    pub subset: Subset,
    pub tie_threshold: f64,
    pub alpha: f64,
    pub k_factor: f64,
    pub method: Method,
    pub turns: TurnScope,
    pub seed: u64,
    pub replications: usize,
    pub sample_size: usize,
    pub group_by: Option<String>,
    pub tau_cos: f64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub format: Vec<Format>,
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Layers flags over the environment over the config file over defaults.
    pub fn resolve(flags: Settings, config_file: Option<&Path>, env_seed: Option<&str>) -> Result<RunConfig, UsageError> {
        let file = match config_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<Settings>(&text)
                    .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?
            }
            None => Settings::default(),
        };
        let env = Settings {
            seed: env_seed
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| UsageError(format!("{SEED_ENV} must be an unsigned integer, got '{s}'")))
                })
                .transpose()?,
            ..Settings::default()
        };
        let s = flags.or(env).or(file);
        let parse = |what: &str, e: prefagg_core::Error| UsageError(format!("{what}: {e}"));
        let method = s
            .method
            .as_deref()
            .unwrap_or("rank_centrality")
            .parse()
            .map_err(|e| parse("--method", e))?;
        let turns = s
            .turns
            .as_deref()
            .unwrap_or("openers")
            .parse()
            .map_err(|e| parse("--turns", e))?;
        let cfg = RunConfig {
            survey: s.survey,
            conversations: s.conversations,
            utterances: s.utterances,
            metadata: s.metadata,
            embeddings: s.embeddings,
            topics: s.topics,
            battles: s.battles,
            subset: s.subset.unwrap_or(Subset::All),
            tie_threshold: s.tie_threshold.unwrap_or(DEFAULT_TIE_THRESHOLD),
            alpha: s.alpha.unwrap_or(1.0),
            k_factor: s.k_factor.unwrap_or(4.0),
            method,
            turns,
            seed: s.seed.unwrap_or(0),
            replications: s.replications.unwrap_or(1000),
            sample_size: s.sample_size.unwrap_or(100),
            group_by: s.group_by,
            tau_cos: s.tau_cos.unwrap_or(0.05),
            out: s.out,
            format: s.format.unwrap_or_else(|| vec![Format::Json]),
            threads: s.threads,
        };
        if cfg.tie_threshold < 0.0 || !cfg.tie_threshold.is_finite() {
            return Err(UsageError(format!("--tie-threshold must be >= 0, got {}", cfg.tie_threshold)));
        }
        if cfg.alpha < 0.0 || !cfg.alpha.is_finite() {
            return Err(UsageError(format!("--alpha must be >= 0, got {}", cfg.alpha)));
        }
        if !(cfg.tau_cos > 0.0 && cfg.tau_cos < 1.0) {
            return Err(UsageError(format!("--tau-cos must lie in (0, 1), got {}", cfg.tau_cos)));
        }
        if cfg.threads == Some(0) {
            return Err(UsageError("--threads must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn params(&self) -> MethodParams {
        MethodParams {
            tie_threshold: self.tie_threshold,
            alpha: self.alpha,
            k_factor: self.k_factor,
            scope: self.turns,
            ..MethodParams::default()
        }
    }

    pub fn wants(&self, format: Format) -> bool {
        self.format.contains(&format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_env_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 1\nalpha = 0.5\nmethod = \"elo_mle\"\n").unwrap();
        let flags = Settings {
            method: Some("avg_win_rate".into()),
            ..Settings::default()
        };
        let cfg = RunConfig::resolve(flags, Some(&path), Some("7")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.method, Method::AvgWinRate);
        let cfg = RunConfig::resolve(Settings::default(), Some(&path), None).unwrap();
        assert_eq!(cfg.seed, 1);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "sed = 1\n").unwrap();
        assert!(RunConfig::resolve(Settings::default(), Some(&path), None).is_err());
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let bad = |s: Settings| RunConfig::resolve(s, None, None).is_err();
        assert!(bad(Settings {
            alpha: Some(-1.0),
            ..Settings::default()
        }));
        assert!(bad(Settings {
            method: Some("borda".into()),
            ..Settings::default()
        }));
        assert!(RunConfig::resolve(Settings::default(), None, Some("x")).is_err());
    }
}
