//! Synthetic multi-participant datasets with planted shared concepts.
//!
//! Every participant sees the same pool of shared items plus its own unique
//! items. A signal voxel responds to the projection of the item embedding on
//! its planted concept direction; background voxels respond with noise only.
//! Noise is scaled so that the signal voxels hit a target noise ceiling.

mod linear;

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use linear::{planted_linear, LinearProblem, LinearSpec};

use crate::concepts::CaptionCorpus;
use crate::datamodel::{
    ensure_parent, participant_dir_name, read_matrix, write_item_ids, write_matrix, ItemMatrix, ParticipantDataset,
    Trial, TrialTable, EMBEDDING_DIM, FULL_REPEATS,
};
use crate::error::{Error, Result};

/// Unique item ids of participant `p` start at `p * UNIQUE_ID_STRIDE`.
pub const UNIQUE_ID_STRIDE: u64 = 1_000_000;

pub const SPEC_FILE: &str = "spec.json";
pub const CONCEPTS_FILE: &str = "concepts.f32";
pub const SHARED_ITEMS_FILE: &str = "shared_items.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSpec {
    pub n_participants: u32,
    pub n_voxels: usize,
    /// Items per participant, shared ones included.
    pub n_items: usize,
    pub n_shared_items: usize,
    /// Unique items shown fewer than three times.
    pub n_partial_items: usize,
    pub n_concepts: usize,
    /// Fraction of each participant's voxels carrying a planted concept.
    pub signal_fraction: f64,
    /// Percent; 100 means noiseless repeats.
    pub noise_ceiling_target: f64,
    pub n_sessions: u32,
    pub embedding_dim: usize,
    /// Per-dimension standard deviation of the isotropic part of each item
    /// embedding; the concept coefficients have unit variance.
    pub residual_sd: f64,
    /// Concept directions must be more than `2 * separation_epsilon` apart.
    pub separation_epsilon: f64,
    /// Every concept must appear in at least `min_neighbors + 1` participants.
    pub min_neighbors: usize,
    pub n_captions: usize,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            n_participants: 4,
            n_voxels: 2000,
            n_items: 3000,
            n_shared_items: 413,
            n_partial_items: 0,
            n_concepts: 5,
            signal_fraction: 0.2,
            noise_ceiling_target: 60.0,
            n_sessions: 4,
            embedding_dim: EMBEDDING_DIM,
            residual_sd: 0.05,
            separation_epsilon: 0.45,
            min_neighbors: 3,
            n_captions: 0,
            seed: 0,
        }
    }
}

impl PlantedSpec {
    pub fn n_signal_voxels(&self) -> usize {
        (self.signal_fraction * self.n_voxels as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InfeasibleSpec(msg));
        // Orthonormal directions sit at cosine distance exactly 1.
        if 2.0 * self.separation_epsilon >= 1.0 {
            return fail(format!(
                "orthonormal concepts are at distance 1, not above 2 * {}",
                self.separation_epsilon
            ));
        }
        if self.n_concepts == 0 || self.n_concepts > self.embedding_dim {
            return fail(format!(
                "{} concepts cannot be orthonormal in dimension {}",
                self.n_concepts, self.embedding_dim
            ));
        }
        if (self.n_participants as usize) < self.min_neighbors + 1 {
            return fail(format!(
                "{} participants cannot cover min_neighbors + 1 = {}",
                self.n_participants,
                self.min_neighbors + 1
            ));
        }
        if !(0.0..=1.0).contains(&self.signal_fraction) || self.n_signal_voxels() < self.n_concepts {
            return fail(format!(
                "{} signal voxels cannot host {} concepts",
                self.n_signal_voxels(),
                self.n_concepts
            ));
        }
        if !(self.noise_ceiling_target > 0.0 && self.noise_ceiling_target <= 100.0) {
            return fail(format!("noise ceiling target {} outside (0, 100]", self.noise_ceiling_target));
        }
        if self.n_shared_items + self.n_partial_items > self.n_items {
            return fail("shared plus partial items exceed items per participant".into());
        }
        if !(self.residual_sd >= 0.0) {
            return fail(format!("residual_sd {} must be >= 0", self.residual_sd));
        }
        if self.n_sessions < 2 {
            return fail("need at least 2 sessions".into());
        }
        if self.n_items * FULL_REPEATS as usize / (self.n_sessions as usize) < 2 {
            return fail("too few trials per session".into());
        }
        Ok(())
    }
}

/// Generated data plus the planted truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: PlantedSpec,
    /// concepts x embedding dim, orthonormal rows
    pub concept_vectors: Array2<f32>,
    pub participants: Vec<ParticipantDataset>,
    /// Planted concept per voxel, `None` for background.
    pub assignment: Vec<Vec<Option<usize>>>,
    pub shared_items: Vec<u64>,
    pub captions: Option<CaptionCorpus>,
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

const CONCEPT_STREAM: u64 = 1;
const SHARED_STREAM: u64 = 2;
const CAPTION_STREAM: u64 = 3;
const PARTICIPANT_STREAM: u64 = 1 << 32;

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// Gram-Schmidt on Gaussian rows.
fn orthonormal_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    loop {
        let mut m = gaussian_matrix(rng, rows, cols);
        let mut ok = true;
        for i in 0..rows {
            for j in 0..i {
                let proj = m.row(i).dot(&m.row(j));
                let rj = m.row(j).to_owned();
                m.row_mut(i).scaled_add(-proj, &rj);
            }
            let norm = m.row(i).dot(&m.row(i)).sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            m.row_mut(i).mapv_inplace(|x| x / norm);
        }
        if ok {
            return m;
        }
    }
}

/// `z C + r` with unit-variance concept coefficients `z` and isotropic
/// residual `r`.
fn item_embeddings(rng: &mut ChaCha8Rng, spec: &PlantedSpec, concepts: &Array2<f64>, n: usize) -> Array2<f64> {
    let coefficients = gaussian_matrix(rng, n, spec.n_concepts);
    let residual = gaussian_matrix(rng, n, spec.embedding_dim);
    coefficients.dot(concepts) + residual * spec.residual_sd
}

pub fn generate_dataset(spec: &PlantedSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let dim = spec.embedding_dim;
    let concepts = orthonormal_rows(&mut stream(spec.seed, CONCEPT_STREAM), spec.n_concepts, dim);
    let shared_items: Vec<u64> = (0..spec.n_shared_items as u64).collect();
    let shared_embeddings = item_embeddings(&mut stream(spec.seed, SHARED_STREAM), spec, &concepts, spec.n_shared_items);

    let generated: Vec<(ParticipantDataset, Vec<Option<usize>>)> = (1..=spec.n_participants)
        .into_par_iter()
        .map(|pid| generate_participant(spec, pid, &concepts, &shared_embeddings))
        .collect::<Result<_>>()?;
    let (participants, assignment) = generated.into_iter().unzip();

    let captions = (spec.n_captions > 0).then(|| synthetic_captions(spec, &concepts));
    Ok(SyntheticDataset {
        spec: spec.clone(),
        concept_vectors: concepts.mapv(|x| x as f32),
        participants,
        assignment,
        shared_items,
        captions,
    })
}

fn generate_participant(
    spec: &PlantedSpec,
    pid: u32,
    concepts: &Array2<f64>,
    shared_embeddings: &Array2<f64>,
) -> Result<(ParticipantDataset, Vec<Option<usize>>)> {
    let mut rng = stream(spec.seed, PARTICIPANT_STREAM + u64::from(pid));
    let dim = spec.embedding_dim;

    // items: shared ids first, then this participant's unique ids
    let n_unique = spec.n_items - spec.n_shared_items;
    let mut item_ids: Vec<u64> = (0..spec.n_shared_items as u64).collect();
    item_ids.extend((0..n_unique as u64).map(|j| u64::from(pid) * UNIQUE_ID_STRIDE + j));
    let unique_embeddings = item_embeddings(&mut rng, spec, concepts, n_unique);
    let mut embeddings = Array2::<f64>::zeros((spec.n_items, dim));
    embeddings.slice_mut(ndarray::s![..spec.n_shared_items, ..]).assign(shared_embeddings);
    embeddings.slice_mut(ndarray::s![spec.n_shared_items.., ..]).assign(&unique_embeddings);
    let projections = embeddings.dot(&concepts.t());

    // voxel roles: signal voxels cycle through the concepts, then get shuffled
    let n_signal = spec.n_signal_voxels();
    let mut assignment: Vec<Option<usize>> = (0..spec.n_voxels)
        .map(|v| (v < n_signal).then_some(v % spec.n_concepts))
        .collect();
    assignment.shuffle(&mut rng);
    let gains: Vec<f64> = (0..spec.n_voxels).map(|_| rng.gen_range(0.5..1.5)).collect();
    let baselines: Vec<f64> = (0..spec.n_voxels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t = spec.noise_ceiling_target;
    // NC = s / (s + n/3)  =>  n = 3 s (100 - T) / T
    let noise_ratio = (3.0 * (100.0 - t) / t).sqrt();
    let noise_sd: Vec<f64> = assignment
        .iter()
        .zip(&gains)
        .map(|(a, g)| if a.is_some() { g * noise_ratio } else { 1.0 })
        .collect();

    // schedule: partial items are the last unique ones
    let mut events: Vec<usize> = Vec::with_capacity(spec.n_items * FULL_REPEATS as usize);
    for row in 0..spec.n_items {
        let repeats = if row >= spec.n_items - spec.n_partial_items {
            rng.gen_range(1..FULL_REPEATS)
        } else {
            FULL_REPEATS
        };
        events.extend(std::iter::repeat(row).take(repeats as usize));
    }
    events.shuffle(&mut rng);
    let n_trials = events.len();
    let mut seen = vec![0u8; spec.n_items];
    let trials: Vec<Trial> = events
        .iter()
        .enumerate()
        .map(|(trial_id, &row)| {
            let repeat_index = seen[row];
            seen[row] += 1;
            Trial {
                trial_id,
                item_id: item_ids[row],
                session_id: (trial_id * spec.n_sessions as usize / n_trials) as u32,
                repeat_index,
            }
        })
        .collect();

    let mut responses = Array2::<f32>::zeros((n_trials, spec.n_voxels));
    for (mut out, &row) in responses.rows_mut().into_iter().zip(&events) {
        for (v, x) in out.iter_mut().enumerate() {
            let signal = assignment[v].map_or(0.0, |k| gains[v] * projections[[row, k]]);
            let noise: f64 = rng.sample(StandardNormal);
            *x = (baselines[v] + signal + noise_sd[v] * noise) as f32;
        }
    }

    let mut order: Vec<usize> = (0..spec.n_items).collect();
    order.sort_by_key(|&r| item_ids[r]);
    let targets = ItemMatrix::new(
        order.iter().map(|&r| item_ids[r]).collect(),
        Array2::from_shape_fn((spec.n_items, dim), |(i, j)| embeddings[[order[i], j]] as f32),
    )?;
    let dataset = ParticipantDataset {
        participant_id: pid,
        responses,
        targets,
        trials: TrialTable::new(trials)?,
    };
    Ok((dataset, assignment))
}

const POSITIVE_WORDS: [&str; 8] = ["sunlit", "striped", "crowded", "furry", "wooden", "glossy", "snowy", "floral"];
const NEGATIVE_WORDS: [&str; 8] = ["dark", "plain", "empty", "metal", "plastic", "matte", "sandy", "bare"];
const FILLERS: [&str; 6] = ["street", "room", "table", "field", "kitchen", "park"];

/// Random caption embeddings whose text names the concept they project on
/// most strongly, with the word depending on the sign of the projection.
fn synthetic_captions(spec: &PlantedSpec, concepts: &Array2<f64>) -> CaptionCorpus {
    let mut rng = stream(spec.seed, CAPTION_STREAM);
    let embeddings = gaussian_matrix(&mut rng, spec.n_captions, spec.embedding_dim);
    let proj = embeddings.dot(&concepts.t());
    let texts = proj
        .rows()
        .into_iter()
        .map(|row| {
            let (k, &p) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .expect("at least one concept");
            let word = if p > 0.0 {
                POSITIVE_WORDS[k % POSITIVE_WORDS.len()]
            } else {
                NEGATIVE_WORDS[k % NEGATIVE_WORDS.len()]
            };
            format!("A {word} scene in the {}", FILLERS[rng.gen_range(0..FILLERS.len())])
        })
        .collect();
    CaptionCorpus {
        texts,
        embeddings: embeddings.mapv(|x| x as f32),
    }
}

/// Expected caption word for the positive or negative side of a concept.
pub fn caption_word(concept: usize, positive: bool) -> &'static str {
    if positive {
        POSITIVE_WORDS[concept % POSITIVE_WORDS.len()]
    } else {
        NEGATIVE_WORDS[concept % NEGATIVE_WORDS.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub participant_id: u32,
    pub voxel_id: usize,
    /// -1 for background voxels.
    pub concept_id: i64,
}

pub fn write_ground_truth(path: &Path, assignment: &[Vec<Option<usize>>]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for (p, voxels) in assignment.iter().enumerate() {
        for (voxel_id, a) in voxels.iter().enumerate() {
            w.serialize(GroundTruthRow {
                participant_id: p as u32 + 1,
                voxel_id,
                concept_id: a.map_or(-1, |k| k as i64),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

impl SyntheticDataset {
    /// Writes the datamodel layout: one directory per participant plus the
    /// shared item list, planted concepts, ground truth and captions.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for p in &self.participants {
            p.save(&dir.join(participant_dir_name(p.participant_id)))?;
        }
        write_item_ids(&dir.join(SHARED_ITEMS_FILE), &self.shared_items)?;
        write_matrix(&dir.join(CONCEPTS_FILE), &self.concept_vectors, "concepts")?;
        write_ground_truth(&dir.join(GROUND_TRUTH_FILE), &self.assignment)?;
        if let Some(c) = &self.captions {
            c.save(dir)?;
        }
        let spec_path = dir.join(SPEC_FILE);
        std::fs::write(&spec_path, serde_json::to_string_pretty(&self.spec)?).map_err(|e| Error::io(&spec_path, e))
    }
}

/// Planted concept vectors written next to a synthetic dataset.
pub fn read_concepts(dir: &Path) -> Result<Array2<f32>> {
    Ok(read_matrix(&dir.join(CONCEPTS_FILE))?.0)
}

/// Distinct participants per concept in an assignment.
pub fn concept_coverage(assignment: &[Vec<Option<usize>>], n_concepts: usize) -> Vec<usize> {
    (0..n_concepts)
        .map(|k| {
            assignment
                .iter()
                .enumerate()
                .filter(|(_, voxels)| voxels.contains(&Some(k)))
                .map(|(p, _)| p)
                .collect::<BTreeSet<_>>()
                .len()
        })
        .collect()
}

#[cfg(test)]
mod tests;
