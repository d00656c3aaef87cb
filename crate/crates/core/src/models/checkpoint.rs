//! JSON checkpoints: a manifest (format, version, model config) followed by
//! named flat parameter arrays. `f64` values round-trip bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{DataError, Error};
use crate::nn::NamedParam;

pub const CHECKPOINT_FORMAT: &str = "contexthar-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedParam>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            params: model.params().iter().cloned().collect(),
        }
    }

    /// Rebuilds the model, checking every parameter name and shape.
    pub fn into_model(self) -> Result<Model, Error> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("not a checkpoint (format {:?})", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut model = Model::new(self.config, 0)?;
        let expected: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
        let got: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        if expected.iter().map(String::as_str).ne(got.iter().copied()) {
            return Err(Error::Config("checkpoint parameter names do not match the model config".into()));
        }
        model
            .params_mut()
            .set_values(self.params.into_iter().map(|p| p.value).collect())?;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), Error> {
    let json = serde_json::to_string(&Checkpoint::from_model(model))?;
    fs::write(path, json).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, Error> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    ck.into_model()
}
