//! Single-file JSON checkpoint:
//! `{"format":"scopeworks-checkpoint","version":1,"task",…,"config",…,"tokenizer",…,"params":[…],"history",…}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierConfig, History, Transformer, TransformerTagger};
use crate::encoding::Task;
use crate::error::{Error, Result};
use crate::tokenize::WordPiece;

pub const CHECKPOINT_FORMAT: &str = "scopeworks-checkpoint";
pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u64,
    task: Task,
    config: ClassifierConfig,
    tokenizer: WordPiece,
    params: Vec<f64>,
    #[serde(default)]
    history: History,
}

pub fn save_checkpoint(tagger: &TransformerTagger, history: &History, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        task: tagger.task,
        config: tagger.network.config.clone(),
        tokenizer: tagger.tokenizer.clone(),
        params: tagger.network.params.clone(),
        history: history.clone(),
    };
    crate::io::write_atomic(path, &serde_json::to_vec(&ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(TransformerTagger, History)> {
    let bytes = crate::io::read_file(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Schema(format!("{} is not a {CHECKPOINT_FORMAT} file", path.display())));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            schema: CHECKPOINT_FORMAT.into(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let ck: Checkpoint = serde_json::from_value(value)?;
    let network = Transformer::from_params(ck.config, ck.params)?;
    Ok((
        TransformerTagger {
            task: ck.task,
            tokenizer: ck.tokenizer,
            network,
        },
        ck.history,
    ))
}
