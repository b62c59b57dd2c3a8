//! Versioned JSON container for the model and both prototype banks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{InputSpec, Model};
use crate::protolib::PrototypeBank;

use super::config::Config;

pub const CHECKPOINT_FORMAT: &str = "protoseg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Number of completed epochs.
    pub epoch: usize,
    pub input_spec: InputSpec,
    pub model: Model,
    pub bank_consistent: PrototypeBank,
    pub bank_ambiguous: PrototypeBank,
}

impl Checkpoint {
    pub fn new(
        epoch: usize,
        input_spec: InputSpec,
        model: Model,
        bank_consistent: PrototypeBank,
        bank_ambiguous: PrototypeBank,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            epoch,
            input_spec,
            model,
            bank_consistent,
            bank_ambiguous,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Checkpoint> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::data(format!("{} is not a checkpoint", path.display())));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.model.extractor.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text, path)
    }

    pub fn primitives(&self) -> usize {
        self.model.head.classes()
    }

    /// Checks that the checkpoint was trained with dimensions matching `config`.
    pub fn check_compatible(&self, config: &Config) -> Result<()> {
        let spec = config.data.input_spec();
        if self.input_spec != spec {
            return Err(Error::config(format!(
                "checkpoint inputs {:?} differ from configured {:?}",
                self.input_spec, spec
            )));
        }
        if self.model.extractor.input_dim() != spec.dim() {
            return Err(Error::config("checkpoint extractor width does not match its input spec"));
        }
        if self.model.extractor.feature_dim() != config.model.feature_dim {
            return Err(Error::config("checkpoint feature width differs from model.feature_dim"));
        }
        if self.primitives() != config.model.primitives {
            return Err(Error::config("checkpoint head width differs from model.primitives"));
        }
        if self.bank_consistent.num_classes() != self.primitives()
            || self.bank_ambiguous.num_classes() != self.primitives()
        {
            return Err(Error::data("checkpoint banks disagree with the head width"));
        }
        Ok(())
    }
}
