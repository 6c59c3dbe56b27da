//! Truth manifest written by `simulate` and read by the other commands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use csi_dielectric::DielectricProperties;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Calibration,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    /// Trace path, relative to the manifest's directory unless absolute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub eps_r: f64,
    pub sigma: f64,
    pub role: Role,
}

impl ManifestEntry {
    pub fn props(&self) -> DielectricProperties {
        DielectricProperties {
            eps_r: self.eps_r,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub materials: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(seed: Option<u64>, materials: Vec<ManifestEntry>) -> Self {
        Self {
            seed,
            materials,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn truth(&self, label: &str) -> Option<DielectricProperties> {
        self.materials
            .iter()
            .find(|e| e.label == label)
            .map(ManifestEntry::props)
    }

    /// Trace files of every entry with the given role, in manifest order.
    pub fn files(&self, role: Role) -> Vec<PathBuf> {
        self.materials
            .iter()
            .filter(|e| e.role == role)
            .filter_map(|e| e.file.as_ref())
            .map(|f| {
                if f.is_absolute() {
                    f.clone()
                } else {
                    self.base_dir.join(f)
                }
            })
            .collect()
    }
}
