//! Run configuration, stored as TOML. Every field has a default, so a config
//! file only needs the values it changes:
//!
//! ```toml
//! [paths]
//! records = "data"
//! output = "out"
//!
//! [pipeline]
//! prd_int = 0.05
//!
//! [pipeline.ksvd]
//! n_atoms = 200
//! iterations = 20
//!
//! [mccv]
//! iterations = 10
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::DEFAULT_PRD_CLASS;
use crate::codec::{DEFAULT_PRD_COMPR, DEFAULT_PRD_INT};
use crate::error::{Error, Result};
use crate::ksvd::KsvdConfig;
use crate::streamer::StreamerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of `<id>.csv` / `<id>.ann.csv` pairs.
    pub records: PathBuf,
    pub output: PathBuf,
    // Model files; relative paths are taken under `output`.
    pub d_normal: PathBuf,
    pub d_pvc: PathBuf,
    pub codec: PathBuf,
    /// Threshold and classification fidelity, JSON.
    pub classifier: PathBuf,
}

impl PathsConfig {
    /// Relative model paths live under `output`.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.output.join(p)
        }
    }
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            records: "data".into(),
            output: "out".into(),
            d_normal: "d_normal.csv".into(),
            d_pvc: "d_pvc.csv".into(),
            codec: "codec.json".into(),
            classifier: "classifier.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub prd_class: f64,
    pub prd_int: f64,
    pub prd_compr: f64,
    pub target_se: f64,
    /// Fixed threshold; calibrated for `target_se` when absent.
    pub tau: Option<f64>,
    pub th: u64,
    pub n_th: Option<u64>,
    /// Leading minutes of each test record moved into training.
    pub patient_specific_minutes: f64,
    /// Trailing fraction of each class's training beats held out for tau calibration.
    pub holdout_fraction: f64,
    pub ksvd: KsvdConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            prd_class: DEFAULT_PRD_CLASS,
            prd_int: DEFAULT_PRD_INT,
            prd_compr: DEFAULT_PRD_COMPR,
            target_se: 0.99,
            tau: None,
            th: 0,
            n_th: None,
            patient_specific_minutes: 5.0,
            holdout_fraction: 0.2,
            ksvd: KsvdConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn streamer(&self) -> StreamerConfig {
        StreamerConfig {
            th: self.th,
            n_th: self.n_th.unwrap_or(u64::MAX),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prd_class", self.prd_class),
            ("prd_int", self.prd_int),
            ("prd_compr", self.prd_compr),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::usage(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.prd_int > self.prd_compr {
            return Err(Error::usage(format!(
                "prd_int ({}) must not exceed prd_compr ({})",
                self.prd_int, self.prd_compr
            )));
        }
        if !(0.0..=1.0).contains(&self.target_se) {
            return Err(Error::usage("target_se must lie in [0, 1]"));
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0) {
                return Err(Error::usage("tau must be non-negative"));
            }
        }
        if !(self.patient_specific_minutes >= 0.0) {
            return Err(Error::usage("patient_specific_minutes must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::usage("holdout_fraction must lie in [0, 1)"));
        }
        if self.ksvd.n_atoms == 0 || self.ksvd.sparsity == 0 || self.ksvd.iterations == 0 {
            return Err(Error::usage("ksvd n_atoms, sparsity and iterations must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MccvConfig {
    /// 1 (fixed Partition-4), 2 (even split) or 3 (40/4 split).
    pub proposal: u8,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for MccvConfig {
    fn default() -> Self {
        MccvConfig {
            proposal: 3,
            iterations: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub pipeline: PipelineConfig,
    pub mccv: MccvConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::format(format!("config: {e}")))?;
        cfg.pipeline.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn partial_override() {
        let cfg = RunConfig::from_toml("[pipeline]\nprd_int = 0.05\n[pipeline.ksvd]\nn_atoms = 40\n").unwrap();
        assert_eq!(cfg.pipeline.prd_int, 0.05);
        assert_eq!(cfg.pipeline.ksvd.n_atoms, 40);
        assert_eq!(cfg.pipeline.ksvd.sparsity, 10);
        assert_eq!(cfg.pipeline.prd_compr, 0.09);
    }

    #[test]
    fn invalid_rejected() {
        assert!(RunConfig::from_toml("[pipeline]\nprd_int = 0.2\n").is_err());
        assert!(RunConfig::from_toml("[pipeline]\nprd_class = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[pipeline]\nbogus = 1\n").is_err());
    }
}
