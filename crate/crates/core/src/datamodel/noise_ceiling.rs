//! Per-voxel noise ceiling from repeated presentations.
//!
//! `NC = 100 * s / (s + n / 3)` where `n` is the mean within-item sample
//! variance over items with at least two repeats and
//! `s = max(0, total variance - n)`. The `/ 3` accounts for responses being
//! averaged over three repeats.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView2};

use super::tables::Trial;
use crate::error::{Error, Result};

const AVERAGED_REPEATS: f64 = 3.0;

/// Noise ceiling (percent variance explainable) per column of `responses`.
///
/// `responses` row `i` belongs to `trials[i]`; callers pass Train-fold rows
/// only.
pub fn compute_noise_ceiling(responses: ArrayView2<'_, f32>, trials: &[Trial]) -> Result<Vec<f64>> {
    if responses.nrows() != trials.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} response rows for {} trials",
            responses.nrows(),
            trials.len()
        )));
    }
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (row, t) in trials.iter().enumerate() {
        groups.entry(t.item_id).or_default().push(row);
    }
    let voxels = responses.ncols();

    let mut noise_sum = Array1::<f64>::zeros(voxels);
    let mut repeated_items = 0usize;
    let mut mean = Array1::<f64>::zeros(voxels);
    for rows in groups.values().filter(|rows| rows.len() >= 2) {
        repeated_items += 1;
        mean.fill(0.0);
        for &r in rows {
            mean.zip_mut_with(&responses.row(r), |m, &x| *m += x as f64);
        }
        mean /= rows.len() as f64;
        let denom = (rows.len() - 1) as f64;
        for &r in rows {
            ndarray::Zip::from(&mut noise_sum)
                .and(&responses.row(r))
                .and(&mean)
                .for_each(|acc, &x, &m| *acc += (x as f64 - m).powi(2) / denom);
        }
    }
    if repeated_items == 0 {
        return Err(Error::NoRepeats);
    }
    let noise = noise_sum / repeated_items as f64;

    let total = column_sample_variance(responses);
    Ok(total
        .iter()
        .zip(noise.iter())
        .map(|(&total, &noise)| {
            let signal = (total - noise).max(0.0);
            let denom = signal + noise / AVERAGED_REPEATS;
            if denom > 0.0 {
                (100.0 * signal / denom).clamp(0.0, 100.0)
            } else {
                0.0
            }
        })
        .collect())
}

fn column_sample_variance(x: ArrayView2<'_, f32>) -> Array1<f64> {
    let n = x.nrows();
    let mut mean = Array1::<f64>::zeros(x.ncols());
    for row in x.rows() {
        mean.zip_mut_with(&row, |m, &v| *m += v as f64);
    }
    mean /= n as f64;
    let mut ss = Array1::<f64>::zeros(x.ncols());
    for row in x.rows() {
        ndarray::Zip::from(&mut ss)
            .and(&row)
            .and(&mean)
            .for_each(|acc, &v, &m| *acc += (v as f64 - m).powi(2));
    }
    if n > 1 {
        ss / (n - 1) as f64
    } else {
        Array1::zeros(x.ncols())
    }
}

/// Indices of voxels with noise ceiling strictly above `threshold`, ascending.
pub fn select_voxels(noise_ceiling: &[f64], threshold: f64) -> Result<Vec<usize>> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "voxel threshold must be >= 0, got {threshold}"
        )));
    }
    let selected: Vec<usize> = noise_ceiling
        .iter()
        .enumerate()
        .filter(|(_, &nc)| nc > threshold)
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection { threshold });
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn trials(items: usize, repeats: u8) -> Vec<Trial> {
        let mut out = Vec::new();
        for item in 0..items as u64 {
            for r in 0..repeats {
                out.push(Trial {
                    trial_id: out.len(),
                    item_id: item,
                    session_id: 0,
                    repeat_index: r,
                });
            }
        }
        out
    }

    /// `voxels` columns of `signal_sd * item_effect + noise_sd * noise`.
    fn simulate(items: usize, voxels: usize, signal_sd: f64, noise_sd: f64, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut x = Array2::zeros((items * 3, voxels));
        for v in 0..voxels {
            for item in 0..items {
                let s = signal_sd * normal.sample(&mut rng);
                for r in 0..3 {
                    x[[item * 3 + r, v]] = (s + noise_sd * normal.sample(&mut rng)) as f32;
                }
            }
        }
        x
    }

    #[test]
    fn zero_noise_gives_100() {
        let x = simulate(50, 3, 1.0, 0.0, 1);
        let nc = compute_noise_ceiling(x.view(), &trials(50, 3)).unwrap();
        assert!(nc.iter().all(|&v| v == 100.0), "{nc:?}");
    }

    #[test]
    fn pure_noise_is_near_zero() {
        // Monte-Carlo reference (1000 items, 3 repeats): the clipped estimator
        // has median 0 and mean ~2.1 over voxels.
        let x = simulate(1000, 200, 0.0, 1.0, 2);
        let nc = compute_noise_ceiling(x.view(), &trials(1000, 3)).unwrap();
        let mut sorted = nc.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let mean = nc.iter().sum::<f64>() / nc.len() as f64;
        assert!(median < 2.0, "median {median}");
        assert!(mean < 3.5, "mean {mean}");
    }

    #[test]
    fn planted_ratio_matches_analytic_expectation() {
        // signal var / noise var = 0.25 -> 100 * 0.25 / (0.25 + 1/3) = 42.857
        let expected = 100.0 * 0.25 / (0.25 + 1.0 / 3.0);
        let x = simulate(1000, 100, 0.5, 1.0, 3);
        let nc = compute_noise_ceiling(x.view(), &trials(1000, 3)).unwrap();
        let mean = nc.iter().sum::<f64>() / nc.len() as f64;
        // Per-voxel sd is ~3.1 (Monte-Carlo), so the mean of 100 has sd ~0.31.
        assert!((mean - expected).abs() < 1.5, "mean {mean} vs {expected}");
    }

    #[test]
    fn needs_repeats() {
        let x = simulate(10, 2, 1.0, 1.0, 4);
        let single: Vec<Trial> = (0..30)
            .map(|i| Trial {
                trial_id: i,
                item_id: i as u64,
                session_id: 0,
                repeat_index: 0,
            })
            .collect();
        assert!(matches!(
            compute_noise_ceiling(x.view(), &single),
            Err(Error::NoRepeats)
        ));
    }

    #[test]
    fn strict_threshold() {
        assert_eq!(select_voxels(&[10.0, 5.0, 8.0, 8.1], 8.0).unwrap(), vec![0, 3]);
        assert!(matches!(
            select_voxels(&[0.0; 4], 8.0),
            Err(Error::EmptySelection { .. })
        ));
        assert!(select_voxels(&[1.0], -1.0).is_err());
    }

    proptest! {
        #[test]
        fn raising_threshold_never_adds(nc in proptest::collection::vec(0.0f64..100.0, 1..40),
                                        lo in 0.0f64..50.0, delta in 0.0f64..50.0) {
            let a = select_voxels(&nc, lo).unwrap_or_default();
            let b = select_voxels(&nc, lo + delta).unwrap_or_default();
            prop_assert!(b.iter().all(|i| a.contains(i)));
        }

        #[test]
        fn offset_invariant(offset in -50.0f32..50.0, seed in 0u64..1000) {
            let x = simulate(30, 4, 1.0, 0.7, seed);
            let t = trials(30, 3);
            let base = compute_noise_ceiling(x.view(), &t).unwrap();
            let shifted = compute_noise_ceiling((&x + offset).view(), &t).unwrap();
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-2, "{} vs {}", a, b);
            }
        }
    }
}
