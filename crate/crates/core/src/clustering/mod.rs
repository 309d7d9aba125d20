//! Cross-participant DBSCAN over per-voxel concept vectors.
//!
//! A point is *core* when points from at least `min_neighbors` other
//! participants lie strictly within `epsilon` (cosine distance). Core points
//! closer than `epsilon` are connected and each connected component is a
//! cluster. Non-core points within `epsilon` of a core point join as
//! *border* points (nearest core point wins, ties go to the lower cluster
//! id). Finally, remaining outliers within `epsilon_expansion` of a core or
//! border member from their *own* participant join that cluster as
//! *expanded* points, in a single pass.
//!
//! Cluster ids are ordered by the smallest core point index they contain.

mod bruteforce;
mod sdc_dbscan;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bruteforce::{bruteforce_reference, BruteForce};
pub use sdc_dbscan::{run_sdc_dbscan, SdcDbscan};

use crate::datamodel::ensure_parent;
use crate::decoder::LinearDecoder;
use crate::error::{Error, Result};

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", u.len(), v.len())));
    }
    let (mut uv, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if !(uu > 0.0) {
        return Err(Error::ZeroVector { row: 0 });
    }
    if !(vv > 0.0) {
        return Err(Error::ZeroVector { row: 1 });
    }
    Ok((1.0 - uv / (uu.sqrt() * vv.sqrt())).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptPoint {
    pub participant_id: u32,
    pub voxel_id: usize,
    pub vector: Vec<f32>,
}

/// Participant-tagged concept vectors with a common dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConceptPointSet {
    points: Vec<ConceptPoint>,
}

impl ConceptPointSet {
    pub fn new(points: Vec<ConceptPoint>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let dim = points.first().map(|p| p.vector.len());
        for (i, p) in points.iter().enumerate() {
            if Some(p.vector.len()) != dim {
                return Err(Error::DimensionMismatch(format!(
                    "point {i} has dimension {}, expected {}",
                    p.vector.len(),
                    dim.unwrap_or(0)
                )));
            }
            if !p.vector.iter().any(|&x| x != 0.0) || p.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::ZeroVector { row: i });
            }
            if !seen.insert((p.participant_id, p.voxel_id)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate point (participant {}, voxel {})",
                    p.participant_id, p.voxel_id
                )));
            }
        }
        Ok(Self { points })
    }

    /// One point per decoder weight row.
    pub fn from_decoders(decoders: &[LinearDecoder]) -> Result<Self> {
        let points = decoders
            .iter()
            .flat_map(|d| {
                d.weights.rows().into_iter().zip(&d.voxel_index_map).map(|(row, &voxel_id)| ConceptPoint {
                    participant_id: d.participant_id,
                    voxel_id,
                    vector: row.to_vec(),
                })
            })
            .collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[ConceptPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.vector.len())
    }

    pub fn participants(&self) -> BTreeSet<u32> {
        self.points.iter().map(|p| p.participant_id).collect()
    }

    /// Checks the multi-participant preconditions a real analysis needs:
    /// at least two participants and `min_neighbors <= participants - 1`.
    pub fn check_clusterable(&self, cfg: &DbscanConfig) -> Result<()> {
        let found = self.participants().len();
        if found < 2 {
            return Err(Error::TooFewParticipants { found });
        }
        if cfg.min_neighbors > found - 1 {
            return Err(Error::ConfigInvalid(format!(
                "min_neighbors {} exceeds participants - 1 = {}",
                cfg.min_neighbors,
                found - 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanConfig {
    pub epsilon: f64,
    pub min_neighbors: usize,
    pub epsilon_expansion: f64,
}

impl DbscanConfig {
    pub const DEFAULT_EPSILONS: [f64; 4] = [0.5, 0.55, 0.6, 0.65];
    pub const DEFAULT_MIN_NEIGHBORS: usize = 3;
    pub const EXPANSION_MARGIN: f64 = 0.05;
    pub const EXPANSION_CAP: f64 = 0.65;

    /// `epsilon_expansion = min(epsilon + margin, cap)`, but never below
    /// `epsilon`.
    pub fn with_expansion_rule(epsilon: f64, min_neighbors: usize, margin: f64, cap: f64) -> Self {
        Self {
            epsilon,
            min_neighbors,
            epsilon_expansion: (epsilon + margin).min(cap).max(epsilon),
        }
    }

    pub fn standard(epsilon: f64, min_neighbors: usize) -> Self {
        Self::with_expansion_rule(epsilon, min_neighbors, Self::EXPANSION_MARGIN, Self::EXPANSION_CAP)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 2.0) {
            return Err(Error::ConfigInvalid(format!("epsilon {} outside (0, 2]", self.epsilon)));
        }
        if !(self.epsilon_expansion >= self.epsilon && self.epsilon_expansion <= 2.0) {
            return Err(Error::ConfigInvalid(format!(
                "epsilon_expansion {} must lie in [epsilon, 2]",
                self.epsilon_expansion
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Core,
    Border,
    Expanded,
    Outlier,
}

impl fmt::Display for PointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointKind::Core => "core",
            PointKind::Border => "border",
            PointKind::Expanded => "expanded",
            PointKind::Outlier => "outlier",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterResult {
    /// Cluster id per point, `None` for outliers.
    pub labels: Vec<Option<usize>>,
    pub kinds: Vec<PointKind>,
    /// Member point indices per cluster, ascending.
    pub clusters: Vec<Vec<usize>>,
}

impl ClusterResult {
    /// Builds the membership lists from labels.
    pub fn from_labels(labels: Vec<Option<usize>>, kinds: Vec<PointKind>, n_clusters: usize) -> Self {
        let mut clusters = vec![Vec::new(); n_clusters];
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                clusters[*c].push(i);
            }
        }
        Self {
            labels,
            kinds,
            clusters,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Distinct participants among a cluster's core points.
    pub fn core_participants(&self, points: &ConceptPointSet, cluster: usize) -> BTreeSet<u32> {
        self.clusters[cluster]
            .iter()
            .filter(|&&i| self.kinds[i] == PointKind::Core)
            .map(|&i| points.points()[i].participant_id)
            .collect()
    }

    /// Member count per participant for one cluster.
    pub fn participant_counts(&self, points: &ConceptPointSet, cluster: usize) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for &i in &self.clusters[cluster] {
            *counts.entry(points.points()[i].participant_id).or_insert(0) += 1;
        }
        counts
    }

    pub fn write_csv(&self, points: &ConceptPointSet, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["participant_id", "voxel_id", "cluster_id", "point_kind"])?;
        for (i, p) in points.points().iter().enumerate() {
            let cluster = self.labels[i].map_or(-1, |c| c as i64);
            w.write_record([
                p.participant_id.to_string(),
                p.voxel_id.to_string(),
                cluster.to_string(),
                self.kinds[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn summary(&self, points: &ConceptPointSet, cfg: &DbscanConfig) -> ClusterSummary {
        ClusterSummary {
            epsilon: cfg.epsilon,
            min_neighbors: cfg.min_neighbors,
            epsilon_expansion: cfg.epsilon_expansion,
            n_points: points.len(),
            n_clusters: self.n_clusters(),
            clusters: (0..self.n_clusters())
                .map(|c| ClusterStats {
                    cluster_id: c,
                    size: self.clusters[c].len(),
                    core: self.clusters[c]
                        .iter()
                        .filter(|&&i| self.kinds[i] == PointKind::Core)
                        .count(),
                    core_participants: self.core_participants(points, c).len(),
                    participant_counts: self.participant_counts(points, c),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub cluster_id: usize,
    pub size: usize,
    pub core: usize,
    pub core_participants: usize,
    pub participant_counts: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub epsilon: f64,
    pub min_neighbors: usize,
    pub epsilon_expansion: f64,
    pub n_points: usize,
    pub n_clusters: usize,
    pub clusters: Vec<ClusterStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClusterRow {
    participant_id: u32,
    voxel_id: usize,
    cluster_id: i64,
    point_kind: PointKind,
}

/// Reads a cluster CSV back as `(participant_id, voxel_id, cluster, kind)`.
pub fn read_cluster_csv(path: &Path) -> Result<Vec<(u32, usize, Option<usize>, PointKind)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<ClusterRow>()
        .map(|row| {
            let row = row?;
            let cluster = usize::try_from(row.cluster_id).ok();
            Ok((row.participant_id, row.voxel_id, cluster, row.point_kind))
        })
        .collect()
}

pub trait ClusterAlgorithm: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, points: &ConceptPointSet, cfg: &DbscanConfig) -> Result<ClusterResult>;
}

/// Clustering implementations keyed by name.
#[derive(Default)]
pub struct ClusterRegistry {
    algorithms: BTreeMap<&'static str, Box<dyn ClusterAlgorithm>>,
}

impl ClusterRegistry {
    /// `sdc-dbscan` and `bruteforce`.
    pub fn with_defaults() -> Self {
        let mut registry = Self::default();
        registry.register(Box::new(SdcDbscan::default()));
        registry.register(Box::new(BruteForce));
        registry
    }

    pub fn register(&mut self, algorithm: Box<dyn ClusterAlgorithm>) {
        self.algorithms.insert(algorithm.name(), algorithm);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ClusterAlgorithm> {
        self.algorithms
            .get(name)
            .map(|a| a.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "clustering algorithm",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.algorithms.keys().copied().collect()
    }
}
