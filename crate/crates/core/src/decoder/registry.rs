//! Decoder training strategies, selectable by name.

use std::collections::BTreeMap;

use ndarray::ArrayView2;

use super::contrastive::{train_contrastive, TrainConfig};
use super::ridge::train_ridge;
use super::{FinalLosses, LinearDecoder};
use crate::error::{Error, Result};

/// Inputs for fitting one participant's decoder.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub participant_id: u32,
    pub voxel_index_map: &'a [usize],
    pub x_train: ArrayView2<'a, f32>,
    pub y_train: ArrayView2<'a, f32>,
    pub x_val: ArrayView2<'a, f32>,
    pub y_val: ArrayView2<'a, f32>,
}

pub trait DecoderTrainer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether different seeds give different decoders (and ensembles are
    /// worth training).
    fn is_stochastic(&self) -> bool;

    fn config_json(&self) -> serde_json::Value;

    fn fit(&self, data: &TrainingData<'_>, seed: u64) -> Result<(LinearDecoder, FinalLosses)>;
}

#[derive(Debug, Clone)]
pub struct ContrastiveTrainer {
    pub config: TrainConfig,
}

impl DecoderTrainer for ContrastiveTrainer {
    fn name(&self) -> &'static str {
        "contrastive"
    }

    fn is_stochastic(&self) -> bool {
        true
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("plain struct")
    }

    fn fit(&self, data: &TrainingData<'_>, seed: u64) -> Result<(LinearDecoder, FinalLosses)> {
        let cfg = TrainConfig {
            seed,
            ..self.config.clone()
        };
        let val = (data.x_val.nrows() > 0).then_some((data.x_val, data.y_val));
        let fit = train_contrastive(data.x_train, data.y_train, val, &cfg)?;
        let decoder = LinearDecoder::new(data.participant_id, data.voxel_index_map.to_vec(), fit.weights)?;
        Ok((
            decoder,
            FinalLosses {
                train: Some(fit.final_train_loss),
                val: fit.final_val_loss,
                ridge_lambda: None,
            },
        ))
    }
}

#[derive(Debug, Clone)]
pub struct RidgeTrainer {
    pub lambda_grid: Vec<f64>,
}

impl DecoderTrainer for RidgeTrainer {
    fn name(&self) -> &'static str {
        "ridge"
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::json!({ "lambda_grid": self.lambda_grid })
    }

    fn fit(&self, data: &TrainingData<'_>, _seed: u64) -> Result<(LinearDecoder, FinalLosses)> {
        let fit = train_ridge(data.x_train, data.y_train, &self.lambda_grid, data.x_val, data.y_val)?;
        let decoder = LinearDecoder::new(data.participant_id, data.voxel_index_map.to_vec(), fit.weights)?;
        Ok((
            decoder,
            FinalLosses {
                train: None,
                val: None,
                ridge_lambda: Some(fit.lambda),
            },
        ))
    }
}

/// Trainers keyed by name.
#[derive(Default)]
pub struct DecoderRegistry {
    trainers: BTreeMap<&'static str, Box<dyn DecoderTrainer>>,
}

impl DecoderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `contrastive` and `ridge`.
    pub fn with_defaults(config: TrainConfig, lambda_grid: Vec<f64>) -> Self {
        let mut registry = Self::new();
        registry.register(Box::new(ContrastiveTrainer { config }));
        registry.register(Box::new(RidgeTrainer { lambda_grid }));
        registry
    }

    /// Replaces any trainer already registered under the same name.
    pub fn register(&mut self, trainer: Box<dyn DecoderTrainer>) {
        self.trainers.insert(trainer.name(), trainer);
    }

    pub fn get(&self, name: &str) -> Result<&dyn DecoderTrainer> {
        self.trainers
            .get(name)
            .map(|t| t.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "decoder",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.trainers.keys().copied().collect()
    }
}
