//! Symmetric InfoNCE over cosine similarities.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Rows scaled to unit norm, plus the original norms.
fn normalize_rows(m: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(row) = norms.iter().position(|&n| !(n > 0.0)) {
        return Err(Error::ZeroVector { row });
    }
    let mut unit = m.to_owned();
    for (mut r, &n) in unit.rows_mut().into_iter().zip(norms.iter()) {
        r /= n;
    }
    Ok((unit, norms))
}

fn check_pair(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, tau: f64) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "contrastive inputs {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::InvalidInput("contrastive batch is empty".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// `S[i, j] = cos(a_i, b_j) / tau`.
fn scaled_similarity(a_unit: &Array2<f64>, b_unit: &Array2<f64>, tau: f64) -> Array2<f64> {
    a_unit.dot(&b_unit.t()) / tau
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over rows of `lse_j S[i, j] - S[i, i]`, i.e. cross-entropy with
/// the matching column as the label.
fn row_cross_entropy(s: &Array2<f64>) -> f64 {
    let m = s.nrows();
    let total: f64 = s
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| (log_sum_exp(row.iter().copied()) - row[i]).max(0.0))
        .sum();
    total / m as f64
}

/// `-(1/M) sum_i log( exp(cos(a_i, b_i)/tau) / sum_j exp(cos(a_i, b_j)/tau) )`.
pub fn contrast_term(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, tau: f64) -> Result<f64> {
    check_pair(a, b, tau)?;
    let (a_unit, _) = normalize_rows(a)?;
    let (b_unit, _) = normalize_rows(b)?;
    Ok(row_cross_entropy(&scaled_similarity(&a_unit, &b_unit, tau)))
}

/// `(Contrast(A, B) + Contrast(B, A)) / 2`.
pub fn infonce_loss(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, tau: f64) -> Result<f64> {
    Ok(0.5 * (contrast_term(a, b, tau)? + contrast_term(b, a, tau)?))
}

/// Loss and its gradient with respect to `predicted` (the first argument).
pub fn infonce_loss_and_grad(
    predicted: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    check_pair(predicted, targets, tau)?;
    let m = predicted.nrows();
    let (p_unit, p_norm) = normalize_rows(predicted)?;
    let (t_unit, _) = normalize_rows(targets)?;
    let s = scaled_similarity(&p_unit, &t_unit, tau);

    let row_lse: Array1<f64> = s.rows().into_iter().map(|r| log_sum_exp(r.iter().copied())).collect();
    let col_lse: Array1<f64> = s
        .columns()
        .into_iter()
        .map(|c| log_sum_exp(c.iter().copied()))
        .collect();
    let mut row_ce = 0.0;
    let mut col_ce = 0.0;
    for i in 0..m {
        row_ce += (row_lse[i] - s[[i, i]]).max(0.0);
        col_ce += (col_lse[i] - s[[i, i]]).max(0.0);
    }
    let loss = 0.5 * (row_ce + col_ce) / m as f64;

    // dL/dS = (softmax_rows(S) - I + softmax_cols(S) - I) / (2M)
    let scale = 0.5 / m as f64;
    let mut d_s = Array2::<f64>::zeros((m, m));
    for ((i, j), d) in d_s.indexed_iter_mut() {
        let sij = s[[i, j]];
        let mut g = (sij - row_lse[i]).exp() + (sij - col_lse[j]).exp();
        if i == j {
            g -= 2.0;
        }
        *d = scale * g;
    }
    // S = P_unit T_unit^T / tau
    let d_unit = d_s.dot(&t_unit) / tau;
    // Back through row normalization: (g - u (u . g)) / |p|
    let mut grad = d_unit;
    for ((mut g, u), &n) in grad
        .axis_iter_mut(Axis(0))
        .zip(p_unit.axis_iter(Axis(0)))
        .zip(p_norm.iter())
    {
        let proj = u.dot(&g);
        g.zip_mut_with(&u, |gi, &ui| *gi = (*gi - ui * proj) / n);
    }
    Ok((loss, grad))
}
