//! Planted linear decoding problems: items have latent factors that drive
//! both the voxel responses and the target embeddings.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{gaussian_matrix, stream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearSpec {
    pub n_train_items: usize,
    pub n_val_items: usize,
    pub n_test_items: usize,
    pub n_voxels: usize,
    pub latent_dim: usize,
    pub embedding_dim: usize,
    /// Noisy presentations per item; training rows are single trials and
    /// validation/test rows are repeat averages.
    pub repeats: usize,
    /// Percent; 100 is noiseless.
    pub noise_ceiling: f64,
    /// The first `loud_dims` latent factors get `loud_scale` times the
    /// target variance but only `loud_gain` times the voxel encoding.
    pub loud_dims: usize,
    pub loud_scale: f64,
    pub loud_gain: f64,
    pub seed: u64,
}

impl Default for LinearSpec {
    fn default() -> Self {
        Self {
            n_train_items: 2000,
            n_val_items: 200,
            n_test_items: 200,
            n_voxels: 100,
            latent_dim: 100,
            embedding_dim: 512,
            repeats: 1,
            noise_ceiling: 100.0,
            loud_dims: 0,
            loud_scale: 1.0,
            loud_gain: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearProblem {
    pub x_train: Array2<f32>,
    pub y_train: Array2<f32>,
    pub x_val: Array2<f32>,
    pub y_val: Array2<f32>,
    pub x_test: Array2<f32>,
    pub y_test: Array2<f32>,
}

pub fn planted_linear(spec: &LinearSpec) -> Result<LinearProblem> {
    if spec.repeats == 0 || spec.latent_dim == 0 || spec.loud_dims > spec.latent_dim {
        return Err(Error::InfeasibleSpec(format!("invalid planted linear spec {spec:?}")));
    }
    if !(spec.noise_ceiling > 0.0 && spec.noise_ceiling <= 100.0) {
        return Err(Error::InfeasibleSpec(format!("noise ceiling {} outside (0, 100]", spec.noise_ceiling)));
    }
    let mut rng = stream(spec.seed, 7);
    let d = spec.latent_dim;
    let loud = |j: usize| j < spec.loud_dims;
    let mut to_targets = gaussian_matrix(&mut rng, d, spec.embedding_dim);
    let mut to_voxels = gaussian_matrix(&mut rng, d, spec.n_voxels);
    for j in 0..d {
        if loud(j) {
            to_targets.row_mut(j).mapv_inplace(|x| x * spec.loud_scale);
            to_voxels.row_mut(j).mapv_inplace(|x| x * spec.loud_gain);
        }
    }
    to_targets /= (d as f64).sqrt();
    to_voxels /= (d as f64).sqrt();

    // per-voxel signal variance with unit latent factors
    let signal_var: Array1<f64> = to_voxels.mapv(|x| x * x).sum_axis(Axis(0));
    let t = spec.noise_ceiling;
    let noise_sd = signal_var.mapv(|s| (3.0 * s * (100.0 - t) / t).sqrt());

    let n_items = spec.n_train_items + spec.n_val_items + spec.n_test_items;
    let latent = gaussian_matrix(&mut rng, n_items, d);
    let targets = latent.dot(&to_targets);
    let clean = latent.dot(&to_voxels);

    let mut trials = |rows: std::ops::Range<usize>| -> Vec<Array2<f64>> {
        (0..spec.repeats)
            .map(|_| {
                let mut x = clean.slice(s![rows.clone(), ..]).to_owned();
                for mut row in x.rows_mut() {
                    row.iter_mut()
                        .zip(&noise_sd)
                        .for_each(|(v, &sd)| *v += sd * rng.sample::<f64, _>(StandardNormal));
                }
                x
            })
            .collect()
    };
    let (a, b) = (spec.n_train_items, spec.n_train_items + spec.n_val_items);
    let train = trials(0..a);
    let val = trials(a..b);
    let test = trials(b..n_items);

    let stack = |parts: &[Array2<f64>]| {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("equal widths").mapv(|x| x as f32)
    };
    let average = |parts: &[Array2<f64>]| {
        let mut sum = parts[0].clone();
        for p in &parts[1..] {
            sum += p;
        }
        (sum / parts.len() as f64).mapv(|x| x as f32)
    };
    let y = |rows: std::ops::Range<usize>| targets.slice(s![rows, ..]).mapv(|x| x as f32);
    let y_train_once = y(0..a);
    let y_train_views: Vec<_> = (0..spec.repeats).map(|_| y_train_once.view()).collect();
    Ok(LinearProblem {
        x_train: stack(&train),
        y_train: ndarray::concatenate(Axis(0), &y_train_views).expect("equal widths"),
        x_val: average(&val),
        y_val: y(a..b),
        x_test: average(&test),
        y_test: y(b..n_items),
    })
}
