//! Closed-form ridge baseline: `W = (X^T X + lambda I)^-1 X^T Y`.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::evaluation::topk_accuracy;

pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5];

#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub weights: Array2<f32>,
    pub lambda: f64,
    /// Validation top-1 accuracy per grid value, in grid order.
    pub val_top1: Vec<f64>,
}

/// Normal-equation factors shared by every lambda of a grid.
pub struct RidgeSystem {
    gram: Array2<f64>,
    cross: Array2<f64>,
}

impl RidgeSystem {
    pub fn new(x: ArrayView2<'_, f32>, y: ArrayView2<'_, f32>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs for {} targets",
                x.nrows(),
                y.nrows()
            )));
        }
        let x = x.mapv(f64::from);
        let y = y.mapv(f64::from);
        Ok(Self {
            gram: x.t().dot(&x),
            cross: x.t().dot(&y),
        })
    }

    pub fn solve(&self, lambda: f64) -> Result<Array2<f64>> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("ridge lambda must be >= 0, got {lambda}")));
        }
        let mut a = self.gram.clone();
        a.diag_mut().mapv_inplace(|d| d + lambda);
        let l = cholesky(a).ok_or(Error::SingularMatrix { lambda })?;
        Ok(cholesky_solve(&l, &self.cross))
    }
}

pub fn ridge_solve(x: ArrayView2<'_, f32>, y: ArrayView2<'_, f32>, lambda: f64) -> Result<Array2<f64>> {
    RidgeSystem::new(x, y)?.solve(lambda)
}

/// Fits every grid value and keeps the one with the best validation top-1
/// retrieval accuracy (ties go to the earlier grid value).
pub fn train_ridge(
    x_train: ArrayView2<'_, f32>,
    y_train: ArrayView2<'_, f32>,
    lambda_grid: &[f64],
    x_val: ArrayView2<'_, f32>,
    y_val: ArrayView2<'_, f32>,
) -> Result<RidgeFit> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    if let Some(bad) = lambda_grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::InvalidInput(format!("ridge lambda must be >= 0, got {bad}")));
    }
    let system = RidgeSystem::new(x_train, y_train)?;
    let mut best: Option<(f64, f64, Array2<f32>)> = None;
    let mut val_top1 = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let w = system.solve(lambda)?.mapv(|v| v as f32);
        let predicted = x_val.dot(&w);
        let acc = if predicted.iter().all(|v| *v == 0.0) {
            0.0
        } else {
            match topk_accuracy(predicted.view(), y_val, &[1]) {
                Ok(report) => report.accuracy[0],
                // A zero prediction row cannot be ranked.
                Err(Error::DegenerateRow { .. }) => 0.0,
                Err(e) => return Err(e),
            }
        };
        log::debug!("ridge lambda {lambda}: val top-1 {acc:.4}");
        val_top1.push(acc);
        if best.as_ref().map_or(true, |(_, b, _)| acc > *b) {
            best = Some((lambda, acc, w));
        }
    }
    let (lambda, _, weights) = best.expect("non-empty grid");
    Ok(RidgeFit {
        weights,
        lambda,
        val_top1,
    })
}

/// Lower-triangular `L` with `L L^T = a`, or `None` when `a` is not
/// (numerically) positive definite.
fn cholesky(mut a: Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let scale = a.diag().iter().fold(0.0f64, |m, &d| m.max(d.abs())).max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if !(d > 1e-12 * scale) {
            return None;
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / d;
        }
        for k in j + 1..n {
            a[[j, k]] = 0.0;
        }
    }
    Some(a)
}

fn cholesky_solve(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut z = b.clone();
    // forward: L z = b
    for i in 0..n {
        for k in 0..i {
            let lik = l[[i, k]];
            if lik != 0.0 {
                let (head, mut tail) = z.view_mut().split_at(ndarray::Axis(0), i);
                tail.row_mut(0).scaled_add(-lik, &head.row(k));
            }
        }
        let d = l[[i, i]];
        z.row_mut(i).mapv_inplace(|v| v / d);
    }
    // backward: L^T x = z
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[[k, i]];
            if lki != 0.0 {
                let (mut head, tail) = z.view_mut().split_at(ndarray::Axis(0), i + 1);
                head.row_mut(i).scaled_add(-lki, &tail.row(k - i - 1));
            }
        }
        let d = l[[i, i]];
        z.row_mut(i).mapv_inplace(|v| v / d);
    }
    z
}
