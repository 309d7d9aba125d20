//! Cluster interpretation: centroids, averaged decoded embeddings of shared
//! items, representative items and caption word tables.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterResult, ConceptPointSet};
use crate::datamodel::{ensure_parent, read_matrix, write_matrix, ItemMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_REPRESENTATIVE_COUNT: usize = 10;
pub const DEFAULT_CAPTION_COUNT: usize = 50;
const DEGENERATE_NORM: f64 = 1e-8;

/// Fixed English stop-word list (version 1, 50 words).
pub const STOP_WORDS: [&str; 50] = [
    "a", "an", "and", "are", "as", "at", "be", "been", "but", "by", "for", "from", "has", "have", "he", "her",
    "his", "in", "into", "is", "it", "its", "near", "next", "of", "on", "one", "or", "other", "out", "over",
    "s", "she", "some", "that", "the", "their", "them", "there", "these", "they", "this", "those", "to",
    "two", "up", "was", "while", "with", "very",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptCentroid {
    pub cluster_id: usize,
    pub vector: Vec<f64>,
    pub member_count: usize,
    /// Norm below `1e-8`; the centroid has no usable direction.
    pub degenerate: bool,
}

/// Arithmetic mean of the member vectors.
pub fn cluster_centroid<V: AsRef<[f32]>>(cluster_id: usize, members: &[V]) -> Result<ConceptCentroid> {
    let first = members.first().ok_or(Error::EmptyCluster { cluster_id })?;
    let dim = first.as_ref().len();
    let mut sum = vec![0.0f64; dim];
    for m in members {
        let m = m.as_ref();
        if m.len() != dim {
            return Err(Error::DimensionMismatch(format!("member of dimension {} in cluster of dimension {dim}", m.len())));
        }
        sum.iter_mut().zip(m).for_each(|(s, &x)| *s += x as f64);
    }
    let n = members.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(ConceptCentroid {
        cluster_id,
        vector: sum,
        member_count: members.len(),
        degenerate: norm < DEGENERATE_NORM,
    })
}

/// Centroids of every cluster in `result`, in cluster id order.
pub fn centroids(points: &ConceptPointSet, result: &ClusterResult) -> Result<Vec<ConceptCentroid>> {
    result
        .clusters
        .iter()
        .enumerate()
        .map(|(id, members)| {
            let vectors: Vec<&[f32]> = members.iter().map(|&i| points.points()[i].vector.as_slice()).collect();
            cluster_centroid(id, &vectors)
        })
        .collect()
}

/// One participant's decoded embeddings, one row per test trial.
#[derive(Debug, Clone)]
pub struct TrialPredictions {
    pub participant_id: u32,
    pub item_ids: Vec<u64>,
    pub rows: Array2<f32>,
}

/// Per shared item: mean over repeats within each participant, then mean
/// over participants. Rows follow ascending item id.
pub fn averaged_decoded_embeddings(predictions: &[TrialPredictions], shared_items: &[u64]) -> Result<ItemMatrix> {
    let mut items = shared_items.to_vec();
    items.sort_unstable();
    items.dedup();
    let dim = predictions.first().map_or(0, |p| p.rows.ncols());
    let mut total = Array2::<f64>::zeros((items.len(), dim));
    for p in predictions {
        if p.rows.nrows() != p.item_ids.len() || p.rows.ncols() != dim {
            return Err(Error::ShapeMismatch(format!(
                "participant {}: {} item ids for a {}x{} prediction matrix",
                p.participant_id,
                p.item_ids.len(),
                p.rows.nrows(),
                p.rows.ncols()
            )));
        }
        let mut by_item: HashMap<u64, Vec<usize>> = HashMap::new();
        for (row, id) in p.item_ids.iter().enumerate() {
            by_item.entry(*id).or_default().push(row);
        }
        for (out, &item_id) in total.rows_mut().into_iter().zip(&items) {
            let rows = by_item.get(&item_id).ok_or(Error::MissingItem {
                item_id,
                participant_id: p.participant_id,
            })?;
            let mut out = out;
            let weight = 1.0 / rows.len() as f64;
            for &r in rows {
                out.iter_mut().zip(p.rows.row(r)).for_each(|(o, &x)| *o += weight * x as f64);
            }
        }
    }
    let n = predictions.len().max(1) as f64;
    ItemMatrix::new(items, total.mapv(|x| (x / n) as f32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item_id: u64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    pub cluster_id: usize,
    pub positives: Vec<RankedItem>,
    pub negatives: Vec<RankedItem>,
    pub list_length: usize,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

/// Cosine distance from `direction` to every row, with rows pre-checked as
/// nonzero.
fn distances(direction: &[f64], rows: ArrayView2<'_, f32>) -> Result<Vec<f64>> {
    if rows.ncols() != direction.len() {
        return Err(Error::DimensionMismatch(format!(
            "centroid of dimension {} against rows of dimension {}",
            direction.len(),
            rows.ncols()
        )));
    }
    let u = unit(direction);
    rows.rows()
        .into_iter()
        .enumerate()
        .map(|(r, row)| {
            let (mut dot, mut nn) = (0.0f64, 0.0f64);
            for (&x, &w) in row.iter().zip(&u) {
                let x = x as f64;
                dot += x * w;
                nn += x * x;
            }
            if !(nn > 0.0) {
                return Err(Error::ZeroVector { row: r });
            }
            Ok((1.0 - dot / nn.sqrt()).clamp(0.0, 2.0))
        })
        .collect()
}

/// The `count` smallest distances, ties broken by ascending key.
fn smallest(dist: &[f64], keys: &[u64], count: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(keys[a].cmp(&keys[b])));
    order.truncate(count);
    order.into_iter().map(|i| (i, dist[i])).collect()
}

fn check_direction(centroid: &ConceptCentroid) -> Result<Vec<f64>> {
    if centroid.degenerate || unit(&centroid.vector).iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateCentroid {
            cluster_id: centroid.cluster_id,
        });
    }
    Ok(centroid.vector.clone())
}

/// Pool items nearest to the centroid (positives) and to its negation
/// (negatives).
pub fn representative_items(centroid: &ConceptCentroid, pool: &ItemMatrix, count: usize) -> Result<RepresentativeSet> {
    let w = check_direction(centroid)?;
    let neg: Vec<f64> = w.iter().map(|x| -x).collect();
    let ids = &pool.item_ids;
    let rank = |direction: &[f64]| -> Result<Vec<RankedItem>> {
        let d = distances(direction, pool.values.view())?;
        Ok(smallest(&d, ids, count)
            .into_iter()
            .map(|(i, distance)| RankedItem {
                item_id: ids[i],
                distance,
            })
            .collect())
    };
    Ok(RepresentativeSet {
        cluster_id: centroid.cluster_id,
        positives: rank(&w)?,
        negatives: rank(&neg)?,
        list_length: count,
    })
}

pub const CAPTIONS_FILE: &str = "captions.csv";
pub const CAPTION_EMBEDDINGS_FILE: &str = "caption_embeddings.f32";

/// Caption texts with precomputed embeddings, one row per caption.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionCorpus {
    pub texts: Vec<String>,
    pub embeddings: Array2<f32>,
}

#[derive(Serialize, Deserialize)]
struct CaptionRow {
    caption_id: usize,
    text: String,
}

impl CaptionCorpus {
    /// Writes `captions.csv` (`caption_id,text`) and the embedding matrix.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(CAPTIONS_FILE);
        ensure_parent(&path)?;
        let mut w = csv::Writer::from_path(&path)?;
        for (caption_id, text) in self.texts.iter().enumerate() {
            w.serialize(CaptionRow {
                caption_id,
                text: text.clone(),
            })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        write_matrix(&dir.join(CAPTION_EMBEDDINGS_FILE), &self.embeddings, "caption_embeddings")
    }

    /// `None` when the directory has no caption files.
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(CAPTIONS_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let mut r = csv::Reader::from_path(&path)?;
        let mut texts = Vec::new();
        for (i, row) in r.deserialize::<CaptionRow>().enumerate() {
            let row = row?;
            if row.caption_id != i {
                return Err(Error::format(&path, format!("caption_id {} at row {i}", row.caption_id)));
            }
            texts.push(row.text);
        }
        let (embeddings, _) = read_matrix(&dir.join(CAPTION_EMBEDDINGS_FILE))?;
        if embeddings.nrows() != texts.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} captions but {} caption embeddings",
                texts.len(),
                embeddings.nrows()
            )));
        }
        Ok(Some(Self { texts, embeddings }))
    }
}

/// Lowercased alphabetic tokens with stop words removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOP_WORDS.contains(&t.as_str()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCount {
    pub word: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTables {
    pub cluster_id: usize,
    /// Caption indices selected for each side, nearest first.
    pub positive_captions: Vec<usize>,
    pub negative_captions: Vec<usize>,
    pub positive: Vec<WordCount>,
    pub negative: Vec<WordCount>,
}

fn count_words<'a>(texts: impl Iterator<Item = &'a str>) -> Vec<WordCount> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for token in tokenize(text) {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut table: Vec<WordCount> = counts.into_iter().map(|(word, count)| WordCount { word, count }).collect();
    // BTreeMap order gives the alphabetical tie-break.
    table.sort_by(|a, b| b.count.cmp(&a.count));
    table
}

/// Word frequencies over the `top_n` captions nearest to the centroid and
/// to its negation. `top_n` is capped at the corpus size.
pub fn caption_word_counts(
    centroid: &ConceptCentroid,
    caption_embeddings: ArrayView2<'_, f32>,
    caption_texts: &[String],
    top_n: usize,
) -> Result<WordTables> {
    if caption_texts.is_empty() || caption_embeddings.nrows() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if caption_texts.len() != caption_embeddings.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} captions but {} caption embeddings",
            caption_texts.len(),
            caption_embeddings.nrows()
        )));
    }
    let w = check_direction(centroid)?;
    let neg: Vec<f64> = w.iter().map(|x| -x).collect();
    let keys: Vec<u64> = (0..caption_texts.len() as u64).collect();
    let select = |direction: &[f64]| -> Result<Vec<usize>> {
        let d = distances(direction, caption_embeddings)?;
        Ok(smallest(&d, &keys, top_n).into_iter().map(|(i, _)| i).collect())
    };
    let positive_captions = select(&w)?;
    let negative_captions = select(&neg)?;
    Ok(WordTables {
        cluster_id: centroid.cluster_id,
        positive: count_words(positive_captions.iter().map(|&i| caption_texts[i].as_str())),
        negative: count_words(negative_captions.iter().map(|&i| caption_texts[i].as_str())),
        positive_captions,
        negative_captions,
    })
}

/// Representative sets for all non-degenerate centroids, in cluster order.
pub fn interpret_clusters(centroids: &[ConceptCentroid], pool: &ItemMatrix, count: usize) -> Result<Vec<RepresentativeSet>> {
    centroids
        .par_iter()
        .filter(|c| !c.degenerate)
        .map(|c| representative_items(c, pool, count))
        .collect()
}

pub fn write_representatives_json(path: &Path, sets: &[RepresentativeSet]) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(sets)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_representatives_json(path: &Path) -> Result<Vec<RepresentativeSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Serialize)]
struct WordRow<'a> {
    word: &'a str,
    count: usize,
    polarity: Polarity,
}

/// CSV `word,count,polarity`, positive rows first.
pub fn write_word_tables_csv(path: &Path, tables: &WordTables) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for (polarity, table) in [(Polarity::Positive, &tables.positive), (Polarity::Negative, &tables.negative)] {
        for wc in table {
            w.serialize(WordRow {
                word: &wc.word,
                count: wc.count,
                polarity,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f32> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0f32..1.0))
    }

    fn pool(values: Array2<f32>) -> ItemMatrix {
        let ids = (0..values.nrows() as u64).map(|i| 1000 + 3 * i).collect();
        ItemMatrix::new(ids, values).unwrap()
    }

    fn w_of(p: &ItemMatrix, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        (0..p.values.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn centroid_of(v: Vec<f64>) -> ConceptCentroid {
        ConceptCentroid {
            cluster_id: 0,
            member_count: 1,
            degenerate: false,
            vector: v,
        }
    }

    #[test]
    fn centroid_basics() {
        let v = [1.0f32, -2.0, 0.5];
        let c = cluster_centroid(2, &[v]).unwrap();
        assert_eq!(c.vector, vec![1.0, -2.0, 0.5]);
        assert!(!c.degenerate);
        let neg = [-1.0f32, 2.0, -0.5];
        let c = cluster_centroid(0, &[v, neg]).unwrap();
        assert!(c.degenerate);
        assert!(c.vector.iter().all(|&x| x == 0.0));
        let empty: [Vec<f32>; 0] = [];
        assert!(matches!(cluster_centroid(7, &empty), Err(Error::EmptyCluster { cluster_id: 7 })));
    }

    #[test]
    fn centroid_matches_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let members = random_matrix(&mut rng, 5, 16);
        let rows: Vec<Vec<f32>> = members.rows().into_iter().map(|r| r.to_vec()).collect();
        let c = cluster_centroid(0, &rows).unwrap();
        for j in 0..16 {
            let mut s = 0.0f64;
            for r in &rows {
                s += r[j] as f64;
            }
            assert!((c.vector[j] - s / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_examples() {
        let e = [0.5f32, -1.0, 2.0];
        let preds: Vec<TrialPredictions> = (0..3)
            .map(|p| TrialPredictions {
                participant_id: p,
                item_ids: vec![4, 4],
                rows: Array2::from_shape_fn((2, 3), |(_, j)| e[j]),
            })
            .collect();
        let avg = averaged_decoded_embeddings(&preds, &[4]).unwrap();
        assert_eq!(avg.values.row(0).to_vec(), e.to_vec());

        let r = [1.0f32, 2.0, -3.0];
        let pair = vec![
            TrialPredictions {
                participant_id: 1,
                item_ids: vec![9],
                rows: Array2::from_shape_fn((1, 3), |(_, j)| r[j]),
            },
            TrialPredictions {
                participant_id: 2,
                item_ids: vec![9],
                rows: Array2::from_shape_fn((1, 3), |(_, j)| -r[j]),
            },
        ];
        let avg = averaged_decoded_embeddings(&pair, &[9]).unwrap();
        assert!(avg.values.iter().all(|&x| x == 0.0));
        assert!(matches!(
            averaged_decoded_embeddings(&pair, &[9, 10]),
            Err(Error::MissingItem { item_id: 10, participant_id: 1 })
        ));
    }

    #[test]
    fn equal_repeats_match_flat_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let items = [3u64, 8, 21];
        let preds: Vec<TrialPredictions> = (0..4)
            .map(|p| {
                let mut ids: Vec<u64> = items.iter().flat_map(|&i| [i; 3]).collect();
                // interleave repeats
                ids.sort_by_key(|&i| (i * 7) % 5);
                TrialPredictions {
                    participant_id: p,
                    rows: random_matrix(&mut rng, ids.len(), 6),
                    item_ids: ids,
                }
            })
            .collect();
        let avg = averaged_decoded_embeddings(&preds, &[21, 3, 8]).unwrap();
        assert_eq!(avg.item_ids, vec![3, 8, 21]);
        for (r, &item) in avg.item_ids.iter().enumerate() {
            for j in 0..6 {
                let mut sum = 0.0f64;
                let mut n = 0;
                for p in &preds {
                    for (k, &id) in p.item_ids.iter().enumerate() {
                        if id == item {
                            sum += p.rows[[k, j]] as f64;
                            n += 1;
                        }
                    }
                }
                assert_eq!(n, 12);
                assert!((avg.values[[r, j]] as f64 - sum / 12.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn representatives_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = pool(random_matrix(&mut rng, 30, 8));
        let target = p.values.row(17).mapv(|x| x as f64).to_vec();
        let set = representative_items(&centroid_of(target), &p, 5).unwrap();
        assert_eq!(set.positives[0].item_id, p.item_ids[17]);
        assert!(set.positives[0].distance < 1e-6);
        assert_eq!(set.positives.len(), 5);
        let degenerate = ConceptCentroid {
            degenerate: true,
            ..centroid_of(vec![0.0; 8])
        };
        assert!(matches!(
            representative_items(&degenerate, &p, 5),
            Err(Error::DegenerateCentroid { .. })
        ));
    }

    #[test]
    fn representatives_match_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = pool(random_matrix(&mut rng, 100, 12));
        let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let set = representative_items(&centroid_of(w.clone()), &p, 10).unwrap();
        // oracle: every distance via the clustering cosine, fully sorted
        let wf: Vec<f32> = w.iter().map(|&x| x as f32).collect();
        let nf: Vec<f32> = w.iter().map(|&x| -x as f32).collect();
        for (dir, got) in [(&wf, &set.positives), (&nf, &set.negatives)] {
            let mut all: Vec<(f64, u64)> = p
                .values
                .rows()
                .into_iter()
                .zip(&p.item_ids)
                .map(|(r, &id)| (crate::clustering::cosine_distance(dir, r.as_slice().unwrap()).unwrap(), id))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let want: Vec<u64> = all[..10].iter().map(|x| x.1).collect();
            let ids: Vec<u64> = got.iter().map(|x| x.item_id).collect();
            assert_eq!(ids, want);
            for (g, a) in got.iter().zip(&all) {
                assert!((g.distance - a.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ties_break_by_item_id() {
        let values = Array2::from_shape_vec((3, 2), vec![1.0f32, 0.0, 2.0, 0.0, 0.0, 1.0]).unwrap();
        let p = ItemMatrix::new(vec![5, 9, 12], values).unwrap();
        let set = representative_items(&centroid_of(vec![1.0, 0.0]), &p, 3).unwrap();
        let ids: Vec<u64> = set.positives.iter().map(|x| x.item_id).collect();
        assert_eq!(ids, vec![5, 9, 12]);
    }

    #[test]
    fn zero_pool_row_rejected() {
        let p = ItemMatrix::new(vec![1, 2], Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!(matches!(
            representative_items(&centroid_of(vec![1.0, 0.0]), &p, 1),
            Err(Error::ZeroVector { row: 1 })
        ));
    }

    #[test]
    fn stop_words_and_tokens() {
        assert_eq!(STOP_WORDS.len(), 50);
        let mut sorted = STOP_WORDS.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
        assert_eq!(tokenize("A red-bus, parked THE street's edge!"), vec!["red", "bus", "parked", "street", "edge"]);
    }

    #[test]
    fn caption_examples() {
        let c = centroid_of(vec![1.0, 0.0]);
        let texts = vec!["a red bus".to_string()];
        let emb = Array2::from_shape_vec((1, 2), vec![1.0f32, 0.1]).unwrap();
        let t = caption_word_counts(&c, emb.view(), &texts, DEFAULT_CAPTION_COUNT).unwrap();
        assert_eq!(
            t.positive,
            vec![
                WordCount { word: "bus".into(), count: 1 },
                WordCount { word: "red".into(), count: 1 }
            ]
        );

        let texts = vec!["Two dogs play with a ball".to_string(); 50];
        let emb = Array2::from_shape_fn((50, 2), |(i, j)| if j == 0 { 1.0 } else { i as f32 * 0.01 });
        let t = caption_word_counts(&c, emb.view(), &texts, 50).unwrap();
        assert_eq!(t.positive.len(), 3);
        assert!(t.positive.iter().all(|w| w.count == 50));

        let none: Vec<String> = Vec::new();
        let emb = Array2::<f32>::zeros((0, 2));
        assert!(matches!(caption_word_counts(&c, emb.view(), &none, 50), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn caption_selection_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let emb = random_matrix(&mut rng, 200, 10);
        let texts: Vec<String> = (0..200).map(|i| format!("word{}", i % 7)).collect();
        let w: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = caption_word_counts(&centroid_of(w.clone()), emb.view(), &texts, 50).unwrap();
        let wf: Vec<f32> = w.iter().map(|&x| x as f32).collect();
        let mut all: Vec<(f64, usize)> = (0..200)
            .map(|i| (crate::clustering::cosine_distance(&wf, emb.row(i).as_slice().unwrap()).unwrap(), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let want: Vec<usize> = all[..50].iter().map(|x| x.1).collect();
        assert_eq!(t.positive_captions, want);
        // digits are separators, so every caption contributes "word"
        assert_eq!(t.positive, vec![WordCount { word: "word".into(), count: 50 }]);
    }

    #[test]
    fn outputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = pool(random_matrix(&mut rng, 20, 4));
        let set = representative_items(&centroid_of(vec![1.0, 0.5, 0.0, -1.0]), &p, 4).unwrap();
        let path = dir.path().join("reps.json");
        write_representatives_json(&path, std::slice::from_ref(&set)).unwrap();
        assert_eq!(read_representatives_json(&path).unwrap(), vec![set]);

        let tables = WordTables {
            cluster_id: 0,
            positive_captions: vec![0],
            negative_captions: vec![1],
            positive: vec![WordCount { word: "bus".into(), count: 3 }],
            negative: vec![WordCount { word: "cat".into(), count: 1 }],
        };
        let path = dir.path().join("words.csv");
        write_word_tables_csv(&path, &tables).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "word,count,polarity\nbus,3,positive\ncat,1,negative\n"
        );
    }

    proptest! {
        #[test]
        fn negation_swaps_lists(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = pool(random_matrix(&mut rng, 40, 6));
            let w = w_of(&p, seed);
            let neg: Vec<f64> = w.iter().map(|x| -x).collect();
            let a = representative_items(&centroid_of(w), &p, 8).unwrap();
            let b = representative_items(&centroid_of(neg), &p, 8).unwrap();
            prop_assert_eq!(&a.positives, &b.negatives);
            prop_assert_eq!(&a.negatives, &b.positives);
            // d(-w, y) = 2 - d(w, y)
            let dw = distances(&w_of(&p, seed), p.values.view()).unwrap();
            for r in &a.negatives {
                let row = p.row_of(r.item_id).unwrap();
                prop_assert!((r.distance - (2.0 - dw[row])).abs() < 1e-9);
            }
        }

        #[test]
        fn ranking_scale_invariant(seed in any::<u64>(), scale in 0.001f64..1000.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = pool(random_matrix(&mut rng, 40, 6));
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
            let a = representative_items(&centroid_of(w), &p, 8).unwrap();
            let b = representative_items(&centroid_of(scaled), &p, 8).unwrap();
            let ids = |s: &RepresentativeSet| s.positives.iter().chain(&s.negatives).map(|x| x.item_id).collect::<Vec<_>>();
            prop_assert_eq!(ids(&a), ids(&b));
        }

        #[test]
        fn single_repeat_single_participant_is_identity(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_matrix(&mut rng, 12, 5);
            let ids: Vec<u64> = (0..12).map(|i| i * 2 + 1).collect();
            let preds = [TrialPredictions { participant_id: 3, item_ids: ids.clone(), rows: rows.clone() }];
            let avg = averaged_decoded_embeddings(&preds, &ids).unwrap();
            prop_assert_eq!(avg.values, rows);
        }
    }
}
