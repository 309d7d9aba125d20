//! Single-file pipeline configuration (TOML, versioned).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterRegistry, DbscanConfig};
use crate::concepts::{DEFAULT_CAPTION_COUNT, DEFAULT_REPRESENTATIVE_COUNT};
use crate::datamodel::FoldSizes;
use crate::decoder::{DecoderRegistry, EnsembleSpec, TrainConfig, DEFAULT_LAMBDA_GRID};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_K_VALUES;
use crate::synth::PlantedSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub prepare: PrepareConfig,
    #[serde(default)]
    pub train: TrainStageConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub cluster: ClusterStageConfig,
    #[serde(default)]
    pub interpret: InterpretConfig,
    #[serde(default)]
    pub synth: PlantedSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub data_root: PathBuf,
    pub output_root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    /// Noise ceiling percent a voxel must exceed.
    pub voxel_threshold: f64,
    pub val_items: usize,
    pub test_items: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        let sizes = FoldSizes::default();
        Self {
            voxel_threshold: 8.0,
            val_items: sizes.val_items,
            test_items: sizes.test_items,
        }
    }
}

impl PrepareConfig {
    pub fn fold_sizes(&self) -> FoldSizes {
        FoldSizes {
            val_items: self.val_items,
            test_items: self.test_items,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStageConfig {
    /// Decoder strategies to fit, by registry name.
    pub methods: Vec<String>,
    /// Which fitted decoder feeds clustering and interpretation.
    pub cluster_method: String,
    pub restarts: usize,
    pub lambda_grid: Vec<f64>,
    pub contrastive: TrainConfig,
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        Self {
            methods: vec!["contrastive".into(), "ridge".into()],
            cluster_method: "contrastive".into(),
            restarts: EnsembleSpec::DEFAULT_RESTARTS,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            contrastive: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub k_values: Vec<usize>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            k_values: DEFAULT_K_VALUES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterStageConfig {
    pub algorithm: String,
    pub epsilons: Vec<f64>,
    pub min_neighbors: usize,
    /// `epsilon_expansion = min(epsilon + margin, cap)`.
    pub expansion_margin: f64,
    pub expansion_cap: f64,
}

impl Default for ClusterStageConfig {
    fn default() -> Self {
        Self {
            algorithm: "sdc-dbscan".into(),
            epsilons: DbscanConfig::DEFAULT_EPSILONS.to_vec(),
            min_neighbors: DbscanConfig::DEFAULT_MIN_NEIGHBORS,
            expansion_margin: DbscanConfig::EXPANSION_MARGIN,
            expansion_cap: DbscanConfig::EXPANSION_CAP,
        }
    }
}

impl ClusterStageConfig {
    pub fn dbscan_configs(&self) -> Vec<DbscanConfig> {
        self.epsilons
            .iter()
            .map(|&e| DbscanConfig::with_expansion_rule(e, self.min_neighbors, self.expansion_margin, self.expansion_cap))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretConfig {
    pub representative_count: usize,
    pub caption_count: usize,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self {
            representative_count: DEFAULT_REPRESENTATIVE_COUNT,
            caption_count: DEFAULT_CAPTION_COUNT,
        }
    }
}

impl PipelineConfig {
    /// Default settings rooted at the given directories.
    pub fn with_paths(data_root: impl Into<PathBuf>, output_root: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            paths: PathsConfig {
                data_root: data_root.into(),
                output_root: output_root.into(),
            },
            prepare: PrepareConfig::default(),
            train: TrainStageConfig::default(),
            evaluate: EvaluateConfig::default(),
            cluster: ClusterStageConfig::default(),
            interpret: InterpretConfig::default(),
            synth: PlantedSpec::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.data_root, &mut cfg.paths.output_root] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.prepare.voxel_threshold >= 0.0) {
            return invalid("prepare.voxel_threshold must be >= 0".into());
        }
        if self.train.methods.is_empty() {
            return invalid("train.methods is empty".into());
        }
        if !self.train.methods.contains(&self.train.cluster_method) {
            return invalid(format!(
                "train.cluster_method `{}` is not listed in train.methods",
                self.train.cluster_method
            ));
        }
        if self.train.restarts == 0 {
            return invalid("train.restarts must be >= 1".into());
        }
        if self.train.lambda_grid.is_empty() || self.train.lambda_grid.iter().any(|&l| !(l > 0.0)) {
            return invalid("train.lambda_grid must hold positive values".into());
        }
        self.train.contrastive.validate()?;
        let unknown = |e: Error| Error::ConfigInvalid(e.to_string());
        let decoders = DecoderRegistry::with_defaults(self.train.contrastive.clone(), self.train.lambda_grid.clone());
        for m in &self.train.methods {
            decoders.get(m).map_err(unknown)?;
        }
        ClusterRegistry::with_defaults().get(&self.cluster.algorithm).map_err(unknown)?;
        if self.evaluate.k_values.is_empty() || self.evaluate.k_values.contains(&0) {
            return invalid("evaluate.k_values must be non-empty and positive".into());
        }
        if self.cluster.epsilons.is_empty() {
            return invalid("cluster.epsilons is empty".into());
        }
        if let Some(e) = self.cluster.epsilons.iter().find(|&&e| !(e > 0.0 && e < 2.0)) {
            return invalid(format!("epsilon {e} outside (0, 2)"));
        }
        for c in self.cluster.dbscan_configs() {
            c.validate()?;
        }
        if self.interpret.representative_count == 0 || self.interpret.caption_count == 0 {
            return invalid("interpret counts must be >= 1".into());
        }
        Ok(())
    }
}
