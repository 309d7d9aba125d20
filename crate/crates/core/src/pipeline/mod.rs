//! Staged pipeline: `synth`, `prepare`, `train`, `evaluate`, `cluster`,
//! `interpret`, `report`.
//!
//! Every stage except `synth` writes into `output_root/<stage>-<hash>`, where
//! the hash covers the stage's config section, the seed and the hashes of
//! the stages it reads. A `manifest.json` in each directory lists the input
//! and output files with their sha256. Rerunning a stage whose manifest
//! still matches is a no-op.

mod config;
mod manifest;
mod report;
mod stages;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use config::{
    ClusterStageConfig, EvaluateConfig, InterpretConfig, PathsConfig, PipelineConfig, PrepareConfig,
    TrainStageConfig, SCHEMA_VERSION,
};
pub use manifest::{first_mismatch, hash_file, hash_json, hash_tree, FileHash, Manifest, MANIFEST_FILE};
pub use report::{planted_recovery, EpsilonReport, PlantedRecovery, ReportSummary, REPORT_JSON, REPORT_MD, TOPK_CURVES_CSV};
pub use stages::{epsilon_dir_name, participant_ids, read_voxel_ids, TopkRow, TOPK_CSV};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Prepare,
    Train,
    Evaluate,
    Cluster,
    Interpret,
    Report,
}

impl Stage {
    /// Analysis stages in execution order (`synth` is separate since it
    /// writes the data root).
    pub const ANALYSIS: [Stage; 6] = [
        Stage::Prepare,
        Stage::Train,
        Stage::Evaluate,
        Stage::Cluster,
        Stage::Interpret,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Cluster => "cluster",
            Stage::Interpret => "interpret",
            Stage::Report => "report",
        }
    }

    /// Stages whose directories this stage reads.
    pub fn reads(self) -> &'static [Stage] {
        match self {
            Stage::Synth | Stage::Prepare => &[],
            Stage::Train => &[Stage::Prepare],
            Stage::Evaluate => &[Stage::Prepare, Stage::Train],
            Stage::Cluster => &[Stage::Train],
            Stage::Interpret => &[Stage::Prepare, Stage::Train, Stage::Cluster],
            Stage::Report => &[Stage::Prepare, Stage::Evaluate, Stage::Cluster, Stage::Interpret],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Stage::Synth]
            .into_iter()
            .chain(Stage::ANALYSIS)
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub force: bool,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { force: false, jobs: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    /// Outputs were current; nothing was written.
    Skipped,
    /// An earlier run existed but was stale for the given reason.
    Recomputed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRun {
    pub stage: Stage,
    pub dir: PathBuf,
    pub outcome: Outcome,
}

pub struct Pipeline {
    config: PipelineConfig,
    options: RunOptions,
    pool: rayon::ThreadPool,
}

const DIR_HASH_CHARS: usize = 12;

impl Pipeline {
    pub fn new(config: PipelineConfig, options: RunOptions) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
        Ok(Self { config, options, pool })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn section(&self, stage: Stage) -> serde_json::Value {
        let c = &self.config;
        let value = match stage {
            Stage::Synth => serde_json::to_value(&c.synth),
            Stage::Prepare => serde_json::to_value(&c.prepare),
            Stage::Train => serde_json::to_value(&c.train),
            Stage::Evaluate => serde_json::to_value(&c.evaluate),
            Stage::Cluster => serde_json::to_value(&c.cluster),
            Stage::Interpret => serde_json::to_value(&c.interpret),
            Stage::Report => Ok(serde_json::Value::Null),
        };
        value.expect("config sections serialize")
    }

    /// Full config hash of a stage, chained through the stages it reads.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let upstream: Vec<String> = stage.reads().iter().map(|&s| self.stage_hash(s)).collect();
        hash_json(&serde_json::json!({
            "schema_version": self.config.schema_version,
            "stage": stage.name(),
            "config": self.section(stage),
            "seed": self.config.seed,
            "upstream": upstream,
        }))
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::Synth => self.config.paths.data_root.clone(),
            _ => self
                .config
                .paths
                .output_root
                .join(format!("{}-{}", stage.name(), &self.stage_hash(stage)[..DIR_HASH_CHARS])),
        }
    }

    /// Checks upstream manifests and outputs, returning the prefixed input
    /// listing for `stage`.
    fn inputs(&self, stage: Stage) -> Result<Vec<FileHash>> {
        if stage == Stage::Prepare {
            let data = &self.config.paths.data_root;
            if !data.is_dir() {
                return Err(Error::MissingUpstream {
                    stage: "data",
                    path: data.clone(),
                });
            }
            return Ok(prefixed("data", hash_tree(data)?));
        }
        let mut inputs = Vec::new();
        for &up in stage.reads() {
            let dir = self.stage_dir(up);
            let manifest = Manifest::read(&dir)?.ok_or_else(|| Error::MissingUpstream {
                stage: up.name(),
                path: Manifest::path(&dir),
            })?;
            if let Some(reason) = first_mismatch(&dir, &manifest.outputs)? {
                return Err(Error::UpstreamModified {
                    stage: up.name(),
                    reason,
                });
            }
            inputs.extend(prefixed(up.name(), manifest.outputs));
        }
        Ok(inputs)
    }

    /// Runs one stage (or skips it when its outputs are current).
    pub fn run(&self, stage: Stage) -> Result<StageRun> {
        let dir = self.stage_dir(stage);
        let inputs = self.inputs(stage)?;
        let config_hash = self.stage_hash(stage);
        let existing = Manifest::read(&dir)?;
        let mut outcome = Outcome::Ran;
        if let Some(m) = &existing {
            match m.staleness(&dir, &config_hash, &inputs)? {
                None if !self.options.force => {
                    info!("{stage}: up to date in {}", dir.display());
                    return Ok(StageRun {
                        stage,
                        dir,
                        outcome: Outcome::Skipped,
                    });
                }
                None => outcome = Outcome::Recomputed("forced".into()),
                Some(reason) => {
                    warn!("{stage}: rerunning, {reason}");
                    outcome = Outcome::Recomputed(reason);
                }
            }
        }
        self.clear(stage, &dir, existing.is_some())?;
        info!("{stage}: writing {}", dir.display());
        let start = Instant::now();
        self.pool.install(|| self.execute(stage, &dir))?;
        let manifest = Manifest {
            stage: stage.name().into(),
            config_hash,
            config: self.section(stage),
            seed: self.config.seed,
            upstream: stage
                .reads()
                .iter()
                .map(|&s| (s.name().to_string(), self.stage_hash(s)))
                .collect(),
            inputs,
            outputs: hash_tree(&dir)?,
            wall_time_seconds: start.elapsed().as_secs_f64(),
        };
        manifest.write(&dir)?;
        info!("{stage}: done in {:.1}s", manifest.wall_time_seconds);
        Ok(StageRun { stage, dir, outcome })
    }

    /// Runs every analysis stage in order.
    pub fn run_all(&self) -> Result<Vec<StageRun>> {
        Stage::ANALYSIS.iter().map(|&s| self.run(s)).collect()
    }

    fn clear(&self, stage: Stage, dir: &Path, had_manifest: bool) -> Result<()> {
        let occupied = dir.is_dir() && std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if stage == Stage::Synth && occupied && !had_manifest {
            // never wipe a data root synth did not write
            return Err(Error::ConfigInvalid(format!(
                "{} already holds data without a synth manifest",
                dir.display()
            )));
        }
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    fn execute(&self, stage: Stage, dir: &Path) -> Result<()> {
        let c = &self.config;
        match stage {
            Stage::Synth => stages::synth(&c.synth, dir),
            Stage::Prepare => stages::prepare(c, dir),
            Stage::Train => stages::train(c, &self.stage_dir(Stage::Prepare), dir),
            Stage::Evaluate => stages::evaluate(c, &self.stage_dir(Stage::Prepare), &self.stage_dir(Stage::Train), dir),
            Stage::Cluster => stages::cluster(c, &self.stage_dir(Stage::Train), dir),
            Stage::Interpret => stages::interpret(
                c,
                &self.stage_dir(Stage::Prepare),
                &self.stage_dir(Stage::Train),
                &self.stage_dir(Stage::Cluster),
                dir,
            ),
            Stage::Report => report::report(
                c,
                &self.stage_dir(Stage::Prepare),
                &self.stage_dir(Stage::Evaluate),
                &self.stage_dir(Stage::Cluster),
                &self.stage_dir(Stage::Interpret),
                dir,
            ),
        }
    }
}

fn prefixed(prefix: &str, files: Vec<FileHash>) -> Vec<FileHash> {
    files
        .into_iter()
        .map(|f| FileHash {
            path: format!("{prefix}/{}", f.path),
            ..f
        })
        .collect()
}
