use std::path::Path;

use glrtml::embedder::EmbedderParams;
use glrtml::model::{GlrtConfig, HypothesisModel};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Embedder and hypothesis model stored together, so downstream commands
/// never combine parameters from different runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub embedder: EmbedderParams,
    /// Settings the hypothesis model was fitted with.
    pub glrt: GlrtConfig,
    pub hypothesis: HypothesisModel,
}

impl ModelFile {
    pub fn new(embedder: EmbedderParams, glrt: GlrtConfig, hypothesis: HypothesisModel) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            embedder,
            glrt,
            hypothesis,
        }
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| CliError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                message: format!(
                    "format_version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                    file.format_version
                ),
            });
        }
        if file.embedder.embedding_dim() != file.hypothesis.dim() {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                message: format!(
                    "embedding dimension {} does not match hypothesis dimension {}",
                    file.embedder.embedding_dim(),
                    file.hypothesis.dim()
                ),
            });
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}
