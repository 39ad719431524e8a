//! Dataset manifest: one JSON document listing every record's files.
//!
//! Paths are stored relative to the manifest's directory so dataset trees
//! are relocatable and byte-identical across runs.

use crate::error::{Error, Result};
use crate::tofmodel::NoiseParams;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILENAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub seed: u64,
    pub ideal_i: String,
    pub ideal_q: String,
    pub noisy_i: String,
    pub noisy_q: String,
    pub gt_depth: String,
    pub gt_mask: String,
    pub noisy_depth: String,
    pub noisy_mask: String,
    pub confidence: String,
}

impl ManifestRecord {
    pub fn paths(&self) -> [&str; 9] {
        [
            &self.ideal_i,
            &self.ideal_q,
            &self.noisy_i,
            &self.noisy_q,
            &self.gt_depth,
            &self.gt_mask,
            &self.noisy_depth,
            &self.noisy_mask,
            &self.confidence,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub frequency_hz: f64,
    pub noise: NoiseParams,
    pub scale_const: f64,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Parses and structurally validates a manifest document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate_structure()?;
        Ok(m)
    }

    pub fn validate_structure(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported version {}, expected {MANIFEST_VERSION}",
                self.version
            )));
        }
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::Manifest("frequency_hz must be positive".into()));
        }
        if !(self.scale_const.is_finite() && self.scale_const > 0.0) {
            return Err(Error::Manifest("scale_const must be positive".into()));
        }
        self.noise
            .validate()
            .map_err(|e| Error::Manifest(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.records {
            if r.id.is_empty() {
                return Err(Error::Manifest("empty record id".into()));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate record id {:?}", r.id)));
            }
            for p in r.paths() {
                if p.is_empty() {
                    return Err(Error::Manifest(format!("record {:?} has empty path", r.id)));
                }
                if Path::new(p).is_absolute() || p.contains("..") {
                    return Err(Error::Manifest(format!(
                        "record {:?} path {p:?} must be relative without ..",
                        r.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that every referenced file exists under `base_dir`. Run before
    /// any long stage.
    pub fn validate_files(&self, base_dir: &Path) -> Result<()> {
        for r in &self.records {
            for p in r.paths() {
                let full = base_dir.join(p);
                if !full.is_file() {
                    return Err(Error::Manifest(format!(
                        "record {:?}: missing file {}",
                        r.id,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Atomic save: write to a temp file in the target directory, then
    /// rename over the destination.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate_structure()?;
        let text = self.to_json_string()?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let tmp = dir.join(".manifest.tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Directory the record paths are relative to.
    pub fn base_dir(path: &Path) -> PathBuf {
        path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf()
    }
}
