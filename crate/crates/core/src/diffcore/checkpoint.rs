use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiffError, ParamSet, Tensor};

pub const CHECKPOINT_FORMAT: &str = "convnas-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// JSON checkpoint: a versioned header, the parameters in insertion order
/// (name, shape, row-major values) and an optional free-form config block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub order: Vec<String>,
    params: BTreeMap<String, StoredTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamSet, config: Option<serde_json::Value>) -> Self {
        let mut map = BTreeMap::new();
        let mut order = Vec::new();
        for (_, name, t) in params.iter() {
            order.push(name.to_string());
            map.insert(
                name.to_string(),
                StoredTensor {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            );
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            order,
            params: map,
            config,
        }
    }

    pub fn to_params(&self) -> Result<ParamSet, DiffError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(DiffError::Param(
                "<header>".into(),
                format!(
                    "unsupported checkpoint {} v{}",
                    self.format, self.version
                ),
            ));
        }
        let mut set = ParamSet::new();
        for name in &self.order {
            let st = self
                .params
                .get(name)
                .ok_or_else(|| DiffError::Param(name.clone(), "missing".into()))?;
            set.insert(name.clone(), Tensor::new(st.shape.clone(), st.data.clone())?)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
