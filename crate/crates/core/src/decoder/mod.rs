//! Participant-specific linear decoders from voxel responses to the
//! embedding space.

mod adam;
mod contrastive;
mod loss;
mod registry;
mod ridge;

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use contrastive::{batched_loss, train_contrastive, ContrastiveFit, LossRecord, TrainConfig, VAL_EVERY};
pub use loss::{contrast_term, infonce_loss, infonce_loss_and_grad};
pub use registry::{ContrastiveTrainer, DecoderRegistry, DecoderTrainer, RidgeTrainer, TrainingData};
pub use ridge::{ridge_solve, train_ridge, RidgeFit, RidgeSystem, DEFAULT_LAMBDA_GRID};

use crate::datamodel::{read_matrix, sidecar_path, write_matrix};
use crate::error::{Error, Result};

/// `weights` is voxels x dim; row `i` is the concept vector of voxel
/// `voxel_index_map[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder {
    pub participant_id: u32,
    pub voxel_index_map: Vec<usize>,
    pub weights: Array2<f32>,
}

impl LinearDecoder {
    pub fn new(participant_id: u32, voxel_index_map: Vec<usize>, weights: Array2<f32>) -> Result<Self> {
        if voxel_index_map.len() != weights.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} voxel ids for {} weight rows",
                voxel_index_map.len(),
                weights.nrows()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("decoder weights contain non-finite values".into()));
        }
        Ok(Self {
            participant_id,
            voxel_index_map,
            weights,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.weights.nrows()
    }

    /// `Y = X W` for rows of `x` over the decoder's voxels.
    pub fn predict(&self, x: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        if x.ncols() != self.weights.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} columns, decoder expects {}",
                x.ncols(),
                self.weights.nrows()
            )));
        }
        Ok(x.dot(&self.weights))
    }
}

/// Elementwise mean of decoders for the same participant and voxels.
pub fn ensemble_average(decoders: &[LinearDecoder]) -> Result<LinearDecoder> {
    let first = decoders
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no decoders to average".into()))?;
    let mut sum = Array2::<f64>::zeros(first.weights.raw_dim());
    for d in decoders {
        if d.participant_id != first.participant_id
            || d.weights.shape() != first.weights.shape()
            || d.voxel_index_map != first.voxel_index_map
        {
            return Err(Error::ShapeMismatch(format!(
                "decoder for participant {} ({:?}) does not match participant {} ({:?})",
                d.participant_id,
                d.weights.shape(),
                first.participant_id,
                first.weights.shape()
            )));
        }
        sum.zip_mut_with(&d.weights, |s, &w| *s += w as f64);
    }
    let n = decoders.len() as f64;
    LinearDecoder::new(
        first.participant_id,
        first.voxel_index_map.clone(),
        sum.mapv(|s| (s / n) as f32),
    )
}

/// Restart seeds for one participant's ensemble.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub seeds: Vec<u64>,
}

impl EnsembleSpec {
    pub const DEFAULT_RESTARTS: usize = 50;

    pub fn new(seeds: Vec<u64>) -> Result<Self> {
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() || seeds.is_empty() {
            return Err(Error::ConfigInvalid("ensemble seeds must be non-empty and distinct".into()));
        }
        Ok(Self { seeds })
    }

    /// Derives `restarts` distinct seeds from a base seed and participant.
    pub fn derive(base_seed: u64, participant_id: u32, restarts: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed ^ (u64::from(participant_id) << 40));
        let mut seeds = Vec::with_capacity(restarts);
        while seeds.len() < restarts {
            let s: u64 = rng.gen();
            if !seeds.contains(&s) {
                seeds.push(s);
            }
        }
        Self::new(seeds)
    }

    pub fn restarts(&self) -> usize {
        self.seeds.len()
    }
}

/// JSON sidecar of a decoder checkpoint. The matrix fields keep it readable
/// as an ordinary matrix sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub role: String,
    pub participant_id: u32,
    pub method: String,
    pub voxel_index_map: Vec<usize>,
    pub train_config: serde_json::Value,
    pub final_losses: FinalLosses,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalLosses {
    /// Mean over restarts.
    pub train: Option<f64>,
    pub val: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ridge_lambda: Option<f64>,
}

pub fn save_checkpoint(
    path: &Path,
    decoder: &LinearDecoder,
    method: &str,
    train_config: serde_json::Value,
    final_losses: FinalLosses,
    seeds: Vec<u64>,
) -> Result<()> {
    write_matrix(path, &decoder.weights, "decoder")?;
    let meta = CheckpointMeta {
        rows: decoder.weights.nrows(),
        cols: decoder.weights.ncols(),
        dtype: "f32".into(),
        role: "decoder".into(),
        participant_id: decoder.participant_id,
        method: method.into(),
        voxel_index_map: decoder.voxel_index_map.clone(),
        train_config,
        final_losses,
        seeds,
    };
    let sidecar = sidecar_path(path);
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&sidecar, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(LinearDecoder, CheckpointMeta)> {
    let (weights, _) = read_matrix(path)?;
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let decoder = LinearDecoder::new(meta.participant_id, meta.voxel_index_map.clone(), weights)?;
    Ok((decoder, meta))
}
