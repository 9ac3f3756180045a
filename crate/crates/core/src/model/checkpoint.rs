use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, SeqSplatNet, Vocabulary};
use crate::autograd::load_checkpoint;
use crate::error::{Error, Result};
use crate::lift::LiftConfig;
use crate::util::write_atomic;

pub const PARAMS_FILE: &str = "model.ssck";
pub const VOCAB_FILE: &str = "vocab.json";
pub const CONFIG_FILE: &str = "model.toml";

/// Everything besides the weights needed to rebuild a network and its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub seed: u64,
    pub vocab_size: usize,
    pub sem_dim: usize,
    /// Lifting settings for the semantic bank; absent when features are off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<LiftConfig>,
    pub model: ModelConfig,
}

/// Writes `model.ssck`, `vocab.json` and `model.toml` into `dir`.
pub fn save_model(dir: impl AsRef<Path>, net: &SeqSplatNet, vocab: &Vocabulary, meta: &ModelMeta) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    net.params.save(dir.join(PARAMS_FILE))?;
    vocab.save(dir.join(VOCAB_FILE))?;
    let text = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&dir.join(CONFIG_FILE), text.as_bytes())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<(SeqSplatNet, Vocabulary, ModelMeta)> {
    let dir = dir.as_ref();
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ModelMeta =
        toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let vocab = Vocabulary::load(dir.join(VOCAB_FILE))?;
    if vocab.len() != meta.vocab_size {
        return Err(Error::Invalid(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            meta.vocab_size
        )));
    }
    let mut net = SeqSplatNet::new(meta.model.clone(), meta.vocab_size, meta.sem_dim, meta.seed)?;
    net.params.load_named(&load_checkpoint(dir.join(PARAMS_FILE))?, true)?;
    Ok((net, vocab, meta))
}
