//! Linear decoder trained with batched symmetric InfoNCE and Adam.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{infonce_loss, infonce_loss_and_grad};
use crate::error::{Error, Result};

/// Iterations between validation-loss evaluations.
pub const VAL_EVERY: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 128,
            learning_rate: 1e-4,
            temperature: 0.03,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::ConfigInvalid(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::ConfigInvalid("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub train: f64,
    pub val: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ContrastiveFit {
    pub weights: Array2<f32>,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
    pub history: Vec<LossRecord>,
}

/// Trains `W` (voxels x dim) so that `X W` matches `Y` under InfoNCE.
///
/// Batches are drawn by shuffling once per epoch without replacement; the
/// last short batch of an epoch is kept. Every batch input gets fresh
/// `N(0, sigma^2)` noise.
pub fn train_contrastive(
    x_train: ArrayView2<'_, f32>,
    y_train: ArrayView2<'_, f32>,
    val: Option<(ArrayView2<'_, f32>, ArrayView2<'_, f32>)>,
    cfg: &TrainConfig,
) -> Result<ContrastiveFit> {
    cfg.validate()?;
    let n = x_train.nrows();
    if y_train.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} training inputs for {} targets",
            n,
            y_train.nrows()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 training rows".into()));
    }
    if let Some((xv, yv)) = val {
        if xv.nrows() != yv.nrows() || xv.ncols() != x_train.ncols() || yv.ncols() != y_train.ncols() {
            return Err(Error::DimensionMismatch("validation shapes".into()));
        }
    }
    let voxels = x_train.ncols();
    let dim = y_train.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    let bound = 1.0 / (voxels.max(1) as f32).sqrt();
    let mut weights = Array2::from_shape_simple_fn((voxels, dim), || rng.gen_range(-bound..bound));
    let mut adam = Adam::new((voxels, dim), cfg.learning_rate as f32);

    let sigma = cfg.noise_sigma as f32;
    let tau = cfg.temperature;
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut history = Vec::new();
    let mut xb = Array2::<f32>::zeros((cfg.batch_size.min(n), voxels));

    for iteration in 1..=cfg.iterations {
        if cursor >= n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(n);
        let batch = &order[cursor..end];
        cursor = end;
        let b = batch.len();

        let mut xb_view = xb.slice_mut(s![..b, ..]);
        for (mut dst, &src) in xb_view.axis_iter_mut(Axis(0)).zip(batch) {
            dst.assign(&x_train.row(src));
            if sigma > 0.0 {
                dst.mapv_inplace(|v| v + sigma * rng.sample::<f32, _>(StandardNormal));
            }
        }
        let xb_batch = xb.slice(s![..b, ..]);
        let yb = y_train.select(Axis(0), batch).mapv(f64::from);

        let predicted = xb_batch.dot(&weights).mapv(f64::from);
        let (loss, grad) = infonce_loss_and_grad(predicted.view(), yb.view(), tau)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration });
        }
        let grad_w = xb_batch.t().dot(&grad.mapv(|g| g as f32));
        adam.step(weights.view_mut(), grad_w.view());

        if iteration % VAL_EVERY == 0 || iteration == cfg.iterations {
            let val_loss = match val {
                Some((xv, yv)) => Some(batched_loss(xv, yv, weights.view(), cfg.batch_size, tau)?),
                None => None,
            };
            log::debug!("iter {iteration}: train {loss:.4} val {val_loss:?}");
            history.push(LossRecord {
                iteration,
                train: loss,
                val: val_loss,
            });
        }
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFiniteLoss {
            iteration: cfg.iterations,
        });
    }

    let final_train_loss = batched_loss(x_train, y_train, weights.view(), cfg.batch_size, tau)?;
    let final_val_loss = match val {
        Some((xv, yv)) => Some(batched_loss(xv, yv, weights.view(), cfg.batch_size, tau)?),
        None => None,
    };
    Ok(ContrastiveFit {
        weights,
        final_train_loss,
        final_val_loss,
        history,
    })
}

/// Mean InfoNCE over consecutive, noise-free batches (deterministic).
pub fn batched_loss(
    x: ArrayView2<'_, f32>,
    y: ArrayView2<'_, f32>,
    weights: ArrayView2<'_, f32>,
    batch_size: usize,
    tau: f64,
) -> Result<f64> {
    let n = x.nrows();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let predicted = x.slice(s![start..end, ..]).dot(&weights).mapv(f64::from);
        let targets = y.slice(s![start..end, ..]).mapv(f64::from);
        let loss = infonce_loss(predicted.view(), targets.view(), tau)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: 0 });
        }
        total += loss * (end - start) as f64;
        count += end - start;
        start = end;
    }
    Ok(if count > 0 { total / count as f64 } else { 0.0 })
}
