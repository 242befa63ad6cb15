use std::path::{Path, PathBuf};

use glrtml::cplfpa::AdaptConfig;
use glrtml::dataset::SynthConfig;
use glrtml::loss::LossConfig;
use glrtml::model::GlrtConfig;
use glrtml::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Glrt,
    Cosine,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Glrt => "glrt",
            Metric::Cosine => "cosine",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    #[default]
    Source,
    Target,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub metric: Metric,
    /// Cutoffs for recall and precision at K.
    pub k_list: Vec<usize>,
    /// Number of ROC thresholds; 0 uses every distinct score.
    pub roc_grid: usize,
    /// Split used by `eval`, `score` and `roc`.
    pub domain: Domain,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            metric: Metric::Glrt,
            k_list: vec![50],
            roc_grid: 0,
            domain: Domain::Source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Directory holding the CSV splits written by `gen`.
    pub data_dir: PathBuf,
    /// Model file read by `adapt`, `eval`, `score` and `roc`.
    pub model: PathBuf,
    /// Default output directory when `--out` is absent.
    pub out_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            data_dir: PathBuf::from("data"),
            model: PathBuf::from("out/model.json"),
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces the seed of every section.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub glrt: GlrtConfig,
    pub adapt: AdaptConfig,
    pub retrieval: RetrievalConfig,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Pushes the global seed into every section and drops it, so the
    /// result serializes to a config that reproduces the same run.
    pub fn resolve_seed(&mut self) {
        if let Some(seed) = self.seed.take() {
            self.synth.seed = seed;
            self.train.seed = seed;
            self.adapt.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.glrt.validate()?;
        self.adapt.validate()?;
        if self.retrieval.k_list.contains(&0) {
            return Err(CliError::Config("retrieval k_list entries must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[train]\nbatchsize = 3\n").unwrap_err();
        assert!(err.to_string().contains("batchsize"));
        assert!(RunConfig::parse("colour = 1\n").is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let mut cfg = RunConfig::parse("seed = 7\n[glrt]\nvariant = \"gmm\"\nk0 = 3\n").unwrap();
        cfg.resolve_seed();
        assert_eq!((cfg.synth.seed, cfg.train.seed, cfg.adapt.seed), (7, 7, 7));
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
}
