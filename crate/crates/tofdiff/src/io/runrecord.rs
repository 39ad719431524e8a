//! Per-invocation run records: enough provenance to reproduce any output
//! from (config, seed) alone. Deliberately excludes timestamps and absolute
//! paths so identical runs produce identical records.

use crate::error::Result;
use crate::io::config::RunConfig;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub config: RunConfig,
    /// Sorted free-form details (input names, step counts).
    pub details: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn new(subcommand: &str, seed: Option<u64>, config: RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            seed,
            config,
            details: BTreeMap::new(),
        }
    }

    pub fn with_detail(mut self, key: &str, value: impl ToString) -> Self {
        self.details.insert(key.to_string(), value.to_string());
        self
    }

    /// Writes `run_record_<subcommand>.json` under `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(format!("run_record_{}.json", self.subcommand));
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
