//! `--config` file: TOML tables mirroring the library configuration types.
//!
//! ```toml
//! seed = 7
//!
//! [prompt]
//! persona = "multilingual"
//! source_language = "en"
//! mix = { en = 4, fr = 12 }
//!
//! [backend]
//! base_url = "https://api.openai.com/v1"
//! max_concurrent_requests = 4
//!
//! [generate]
//! parallelism = 4
//! retry_invalid = true
//!
//! [train]
//! epochs = 30
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use phrasebreak_core::llm::BackendConfig;
use phrasebreak_core::pipeline::GenerateOptions;
use phrasebreak_core::predictor::Hyper;
use phrasebreak_core::prompting::PromptConfig;
use phrasebreak_core::{Error, Result};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub prompt: Option<PromptConfig>,
    pub backend: BackendConfig,
    pub generate: GenerateOptions,
    pub train: Hyper,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_owned(),
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }

    /// `--seed` wins over the file, which wins over the default.
    pub fn resolve_seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(DEFAULT_SEED)
    }
}
