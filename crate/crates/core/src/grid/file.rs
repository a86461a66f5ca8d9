//! Feeder file format: a JSON document with node count, branch list,
//! substation voltage, and per-unit bases.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bases, BranchSpec, FeederModel, GridError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederFile {
    pub nodes: usize,
    pub branches: Vec<BranchSpec>,
    pub v0: f64,
    #[serde(default)]
    pub bases: Bases,
}

impl FeederFile {
    pub fn into_model(self) -> Result<FeederModel, GridError> {
        FeederModel::new(self.nodes, &self.branches, self.v0, self.bases)
    }

    pub fn from_model(model: &FeederModel) -> Self {
        FeederFile {
            nodes: model.node_count(),
            branches: model.branches(),
            v0: model.substation_voltage(),
            bases: model.bases(),
        }
    }
}

pub fn load_feeder(path: &Path) -> Result<FeederModel, GridError> {
    let text = std::fs::read_to_string(path)?;
    let file: FeederFile = serde_json::from_str(&text)?;
    file.into_model()
}

pub fn save_feeder(model: &FeederModel, path: &Path) -> Result<(), GridError> {
    let file = FeederFile::from_model(model);
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}
