use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};

use super::tables::{ItemMatrix, Trial};
use crate::error::{Error, Result};

/// Z-scores every voxel within each scanning session using the population
/// standard deviation. Constant (voxel, session) groups become zero.
pub fn normalize_by_session(responses: ArrayView2<'_, f32>, trials: &[Trial]) -> Result<Array2<f32>> {
    if responses.nrows() != trials.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} response rows for {} trials",
            responses.nrows(),
            trials.len()
        )));
    }
    let mut sessions: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (row, t) in trials.iter().enumerate() {
        sessions.entry(t.session_id).or_default().push(row);
    }
    if let Some((&session, rows)) = sessions.iter().find(|(_, rows)| rows.len() < 2) {
        return Err(Error::SessionTooSmall {
            session,
            trials: rows.len(),
        });
    }

    let cols = responses.ncols();
    let mut out = Array2::<f32>::zeros(responses.raw_dim());
    for rows in sessions.values() {
        let n = rows.len() as f64;
        let mut mean = Array1::<f64>::zeros(cols);
        for &r in rows {
            mean.zip_mut_with(&responses.row(r), |m, &x| *m += x as f64);
        }
        mean /= n;
        let mut var = Array1::<f64>::zeros(cols);
        for &r in rows {
            ndarray::Zip::from(&mut var)
                .and(&responses.row(r))
                .and(&mean)
                .for_each(|acc, &x, &m| *acc += (x as f64 - m).powi(2));
        }
        var /= n;
        let scale: Array1<f64> = ndarray::Zip::from(&var).and(&mean).map_collect(|&v, &m| {
            let sd = v.sqrt();
            // Rounding residue of a constant group, not real spread.
            if sd <= 1e-12 * m.abs().max(1e-30) || sd == 0.0 {
                0.0
            } else {
                1.0 / sd
            }
        });
        for &r in rows {
            ndarray::Zip::from(out.row_mut(r))
                .and(&responses.row(r))
                .and(&mean)
                .and(&scale)
                .for_each(|o, &x, &m, &s| *o = ((x as f64 - m) * s) as f32);
        }
    }
    Ok(out)
}

/// Mean of each item's trial rows; output rows in ascending item order.
pub fn average_repeats(per_trial: ArrayView2<'_, f32>, trials: &[Trial]) -> Result<ItemMatrix> {
    if per_trial.nrows() != trials.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows for {} trials",
            per_trial.nrows(),
            trials.len()
        )));
    }
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (row, t) in trials.iter().enumerate() {
        groups.entry(t.item_id).or_default().push(row);
    }
    let mut values = Array2::<f32>::zeros((groups.len(), per_trial.ncols()));
    let mut acc = Array1::<f64>::zeros(per_trial.ncols());
    for (out_row, rows) in groups.values().enumerate() {
        acc.fill(0.0);
        for &r in rows {
            acc.zip_mut_with(&per_trial.row(r), |a, &x| *a += x as f64);
        }
        let n = rows.len() as f64;
        values
            .row_mut(out_row)
            .iter_mut()
            .zip(acc.iter())
            .for_each(|(o, &a)| *o = (a / n) as f32);
    }
    ItemMatrix::new(groups.into_keys().collect(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};
    use proptest::prelude::*;

    fn trials(sessions: &[u32], items: &[u64]) -> Vec<Trial> {
        let mut repeats: BTreeMap<u64, u8> = BTreeMap::new();
        sessions
            .iter()
            .zip(items)
            .enumerate()
            .map(|(i, (&s, &item))| {
                let r = repeats.entry(item).or_insert(0);
                let t = Trial {
                    trial_id: i,
                    item_id: item,
                    session_id: s,
                    repeat_index: *r,
                };
                *r += 1;
                t
            })
            .collect()
    }

    #[test]
    fn one_two_three() {
        let x = array![[1.0f32], [2.0], [3.0]];
        let out = normalize_by_session(x.view(), &trials(&[0, 0, 0], &[0, 1, 2])).unwrap();
        // population sd = sqrt(2/3)
        let expected = [-1.224_744_9f32, 0.0, 1.224_744_9];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-5, "{o} vs {e}");
        }
    }

    #[test]
    fn constant_group_is_zero() {
        let x = array![[5.0f32, 0.1], [5.0, 0.1], [5.0, 0.1]];
        let out = normalize_by_session(x.view(), &trials(&[0, 0, 0], &[0, 1, 2])).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sessions_are_independent() {
        let x = array![[1.0f32], [3.0], [100.0], [140.0], [120.0]];
        let t = trials(&[0, 0, 1, 1, 1], &[0, 1, 2, 3, 4]);
        let out = normalize_by_session(x.view(), &t).unwrap();
        let m0 = out.slice(ndarray::s![0..2, ..]).mean_axis(Axis(0)).unwrap()[0];
        let m1 = out.slice(ndarray::s![2..5, ..]).mean_axis(Axis(0)).unwrap()[0];
        assert!(m0.abs() < 1e-6 && m1.abs() < 1e-6);
        assert_eq!(out[[0, 0]], -1.0);
    }

    #[test]
    fn tiny_session_rejected() {
        let x = array![[1.0f32], [2.0], [3.0]];
        let err = normalize_by_session(x.view(), &trials(&[0, 0, 1], &[0, 1, 2])).unwrap_err();
        assert!(matches!(err, Error::SessionTooSmall { session: 1, trials: 1 }));
    }

    #[test]
    fn averaging() {
        let x = array![[1.0f32, -2.0], [-1.0, 2.0], [4.0, 4.0], [3.0, 0.5], [0.0, 1.0], [9.0, -3.0]];
        // item 5: rows 0,1 (r, -r); item 2: rows 2; item 9: rows 3,4,5
        let t = trials(&[0; 6], &[5, 5, 2, 9, 9, 9]);
        let avg = average_repeats(x.view(), &t).unwrap();
        assert_eq!(avg.item_ids, vec![2, 5, 9]);
        assert_eq!(avg.values.row(0).to_vec(), vec![4.0, 4.0]);
        assert_eq!(avg.values.row(1).to_vec(), vec![0.0, 0.0]);
        let direct = [(3.0 + 0.0 + 9.0) / 3.0, (0.5 + 1.0 - 3.0) / 3.0];
        for (a, b) in avg.values.row(2).iter().zip(direct) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn idempotent(values in proptest::collection::vec(-100.0f32..100.0, 24)) {
            let x = Array2::from_shape_vec((8, 3), values).unwrap();
            let t = trials(&[0, 0, 0, 1, 1, 1, 1, 0], &[0, 1, 2, 3, 4, 5, 6, 7]);
            let once = normalize_by_session(x.view(), &t).unwrap();
            let twice = normalize_by_session(once.view(), &t).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() < 1e-5, "{} vs {}", a, b);
            }
        }
    }
}
