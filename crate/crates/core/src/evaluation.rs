//! Top-k retrieval accuracy of decoded embeddings against their targets.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K_VALUES: [usize; 4] = [1, 5, 10, 50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub participant_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub method: Option<String>,
    pub k_values: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub chance: Vec<f64>,
    #[serde(rename = "N")]
    pub candidate_count: usize,
}

fn unit_rows(m: ArrayView2<'_, f32>, what: &'static str) -> Result<Array2<f64>> {
    let mut out = m.mapv(f64::from);
    for (row, mut r) in out.rows_mut().into_iter().enumerate() {
        let norm = r.dot(&r).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateRow { what, row });
        }
        r /= norm;
    }
    Ok(out)
}

/// 0-based rank of the true target for each predicted row.
///
/// Candidates are ordered by descending cosine similarity, ties by ascending
/// candidate index, so a tied candidate with a lower index outranks the true
/// one.
pub fn target_ranks(predicted: ArrayView2<'_, f32>, targets: ArrayView2<'_, f32>) -> Result<Vec<usize>> {
    if predicted.shape() != targets.shape() {
        return Err(Error::DimensionMismatch(format!(
            "predicted {:?} vs targets {:?}",
            predicted.shape(),
            targets.shape()
        )));
    }
    let p = unit_rows(predicted, "predicted")?;
    let t = unit_rows(targets, "targets")?;
    let sim = p.dot(&t.t());
    Ok(sim
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let truth = row[i];
            row.iter()
                .enumerate()
                .filter(|&(j, &s)| s > truth || (s == truth && j < i))
                .count()
        })
        .collect())
}

pub fn topk_accuracy(
    predicted: ArrayView2<'_, f32>,
    targets: ArrayView2<'_, f32>,
    k_values: &[usize],
) -> Result<RetrievalReport> {
    let n = predicted.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("no rows to evaluate".into()));
    }
    if let Some(&k) = k_values.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::InvalidInput(format!("k = {k} outside 1..={n}")));
    }
    let ranks = target_ranks(predicted, targets)?;
    let accuracy = k_values
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r < k).count() as f64 / n as f64)
        .collect();
    Ok(RetrievalReport {
        participant_id: None,
        method: None,
        k_values: k_values.to_vec(),
        accuracy,
        chance: k_values.iter().map(|&k| k as f64 / n as f64).collect(),
        candidate_count: n,
    })
}

fn pairs(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same points.
///
/// Returns 1 when both labelings are trivially identical (every pair agrees
/// and the chance correction is degenerate).
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Eq + std::hash::Hash,
    B: Eq + std::hash::Hash,
{
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} labels", a.len(), b.len())));
    }
    let mut joint: HashMap<(&A, &B), usize> = HashMap::new();
    let mut rows: HashMap<&A, usize> = HashMap::new();
    let mut cols: HashMap<&B, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&n| pairs(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| pairs(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| pairs(n)).sum();
    let total = pairs(a.len());
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn ari_matches_reference_values() {
        // values from an external implementation
        let cases: [(&[u32], &[u32], f64); 6] = [
            (&[0, 0, 1, 1, 2, 2], &[0, 0, 1, 1, 1, 2], 0.4444444444444444),
            (&[0, 0, 0, 1, 1, 1, 2, 2, 2, 3], &[1, 1, 0, 0, 2, 2, 2, 3, 3, 3], 0.2028985507246377),
            (&[0, 1, 2, 3], &[0, 0, 0, 0], 0.0),
            (&[0, 0, 1, 1], &[1, 1, 0, 0], 1.0),
            (&[0, 0, 0, 0], &[0, 0, 0, 0], 1.0),
            (&[5, 5, 7, 7, 7, 9, 9, 1], &[0, 0, 0, 1, 1, 2, 2, 2], 0.3684210526315789),
        ];
        for (a, b, want) in cases {
            assert!((adjusted_rand_index(a, b).unwrap() - want).abs() < 1e-12, "{a:?} {b:?}");
        }
        assert!(adjusted_rand_index(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn exact_match_is_perfect() {
        let t = gaussian(30, 8, 1);
        let r = topk_accuracy(t.view(), t.view(), &[1, 5, 30]).unwrap();
        assert_eq!(r.accuracy, vec![1.0, 1.0, 1.0]);
        assert_eq!(r.chance, vec![1.0 / 30.0, 5.0 / 30.0, 1.0]);
        assert_eq!(r.candidate_count, 30);
    }

    #[test]
    fn ties_break_by_candidate_index() {
        // Both targets are the same direction: row 0 wins the tie, row 1 loses it.
        let t = array![[1.0f32, 0.0], [2.0, 0.0]];
        let p = array![[1.0f32, 0.0], [1.0, 0.0]];
        assert_eq!(target_ranks(p.view(), t.view()).unwrap(), vec![0, 1]);
        let r = topk_accuracy(p.view(), t.view(), &[1, 2]).unwrap();
        assert_eq!(r.accuracy, vec![0.5, 1.0]);
    }

    #[test]
    fn degenerate_row() {
        let t = array![[1.0f32, 0.0], [0.0, 1.0]];
        let p = array![[1.0f32, 0.0], [0.0, 0.0]];
        assert!(matches!(
            topk_accuracy(p.view(), t.view(), &[1]),
            Err(Error::DegenerateRow { what: "predicted", row: 1 })
        ));
    }

    #[test]
    fn k_must_fit_pool() {
        let t = gaussian(4, 3, 2);
        assert!(topk_accuracy(t.view(), t.view(), &[5]).is_err());
        assert!(topk_accuracy(t.view(), t.view(), &[0]).is_err());
    }

    #[test]
    fn json_shape() {
        let t = gaussian(4, 3, 2);
        let mut r = topk_accuracy(t.view(), t.view(), &[1]).unwrap();
        r.participant_id = Some(3);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["participant_id", "k_values", "accuracy", "chance", "N"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn monotone_in_k_and_full_at_n(seed in any::<u64>()) {
            let p = gaussian(20, 6, seed);
            let t = gaussian(20, 6, seed ^ 1);
            let ks: Vec<usize> = (1..=20).collect();
            let r = topk_accuracy(p.view(), t.view(), &ks).unwrap();
            prop_assert!(r.accuracy.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*r.accuracy.last().unwrap(), 1.0);
        }

        #[test]
        fn invariant_to_positive_scaling_and_permutation(seed in any::<u64>(),
                                                         scale in 0.01f32..100.0) {
            let p = gaussian(15, 6, seed);
            let t = p.clone() + gaussian(15, 6, seed ^ 2);
            let ks = [1, 3, 7];
            let base = topk_accuracy(p.view(), t.view(), &ks).unwrap();

            let mut scaled = p.clone();
            scaled.row_mut(4).mapv_inplace(|v| v * scale);
            let r = topk_accuracy(scaled.view(), t.view(), &ks).unwrap();
            prop_assert_eq!(&base.accuracy, &r.accuracy);

            let perm: Vec<usize> = (0..15).rev().collect();
            let r = topk_accuracy(p.select(Axis(0), &perm).view(), t.select(Axis(0), &perm).view(), &ks).unwrap();
            prop_assert_eq!(&base.accuracy, &r.accuracy);
        }
    }
}
