use ndarray::{s, Array2};
use rayon::prelude::*;

use super::{ClusterAlgorithm, ClusterResult, ConceptPointSet, DbscanConfig, PointKind};
use crate::error::Result;

/// Exact neighbourhood search with blocked similarity products, union-find
/// components and a deterministic border/expansion pass.
#[derive(Debug, Clone, Copy)]
pub struct SdcDbscan {
    /// Rows per similarity block.
    pub block_rows: usize,
}

impl Default for SdcDbscan {
    fn default() -> Self {
        Self { block_rows: 256 }
    }
}

impl ClusterAlgorithm for SdcDbscan {
    fn name(&self) -> &'static str {
        "sdc-dbscan"
    }

    fn run(&self, points: &ConceptPointSet, cfg: &DbscanConfig) -> Result<ClusterResult> {
        cfg.validate()?;
        Ok(cluster(points, cfg, self.block_rows.max(1)))
    }
}

pub fn run_sdc_dbscan(points: &ConceptPointSet, cfg: &DbscanConfig) -> Result<ClusterResult> {
    SdcDbscan::default().run(points, cfg)
}

struct Neighbor {
    index: usize,
    distance: f64,
}

fn unit_matrix(points: &ConceptPointSet) -> Array2<f64> {
    let mut u = Array2::<f64>::zeros((points.len(), points.dim()));
    for (mut row, p) in u.rows_mut().into_iter().zip(points.points()) {
        row.iter_mut().zip(&p.vector).for_each(|(d, &v)| *d = v as f64);
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    u
}

/// Neighbours of every point strictly within `radius`, excluding itself.
fn neighbor_lists(unit: &Array2<f64>, radius: f64, block_rows: usize) -> Vec<Vec<Neighbor>> {
    let n = unit.nrows();
    let starts: Vec<usize> = (0..n).step_by(block_rows).collect();
    let blocks: Vec<Vec<Vec<Neighbor>>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + block_rows).min(n);
            let sim = unit.slice(s![start..end, ..]).dot(&unit.t());
            sim.rows()
                .into_iter()
                .enumerate()
                .map(|(r, row)| {
                    let i = start + r;
                    row.iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .filter_map(|(j, &c)| {
                            let distance = (1.0 - c).clamp(0.0, 2.0);
                            (distance < radius).then_some(Neighbor { index: j, distance })
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    blocks.into_iter().flatten().collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller index as root.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn cluster(points: &ConceptPointSet, cfg: &DbscanConfig, block_rows: usize) -> ClusterResult {
    let n = points.len();
    if n == 0 {
        return ClusterResult::from_labels(Vec::new(), Vec::new(), 0);
    }
    let owner: Vec<u32> = points.points().iter().map(|p| p.participant_id).collect();
    let unit = unit_matrix(points);
    let radius = cfg.epsilon.max(cfg.epsilon_expansion);
    let neighbors = neighbor_lists(&unit, radius, block_rows);

    // (1) cross-participant core rule
    let is_core: Vec<bool> = neighbors
        .par_iter()
        .enumerate()
        .map(|(i, list)| {
            let mut others: Vec<u32> = list
                .iter()
                .filter(|nb| nb.distance < cfg.epsilon && owner[nb.index] != owner[i])
                .map(|nb| owner[nb.index])
                .collect();
            others.sort_unstable();
            others.dedup();
            others.len() >= cfg.min_neighbors
        })
        .collect();

    // (2)-(3) connected components of the core graph
    let mut uf = UnionFind::new(n);
    for i in (0..n).filter(|&i| is_core[i]) {
        for nb in &neighbors[i] {
            if nb.distance < cfg.epsilon && is_core[nb.index] {
                uf.union(i, nb.index);
            }
        }
    }
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut kinds = vec![PointKind::Outlier; n];
    let mut root_label: Vec<Option<usize>> = vec![None; n];
    let mut n_clusters = 0;
    for i in (0..n).filter(|&i| is_core[i]) {
        let root = uf.find(i);
        let label = *root_label[root].get_or_insert_with(|| {
            n_clusters += 1;
            n_clusters - 1
        });
        labels[i] = Some(label);
        kinds[i] = PointKind::Core;
    }

    // (4) border points: nearest core neighbour, ties to the lower cluster id
    for i in (0..n).filter(|&i| !is_core[i]) {
        let best = neighbors[i]
            .iter()
            .filter(|nb| nb.distance < cfg.epsilon && is_core[nb.index])
            .map(|nb| (nb.distance, labels[nb.index].expect("core is labelled")))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, label)) = best {
            labels[i] = Some(label);
            kinds[i] = PointKind::Border;
        }
    }

    // (5) single-pass same-participant expansion anchored on core/border members
    let mut expanded = Vec::new();
    for i in (0..n).filter(|&i| kinds[i] == PointKind::Outlier) {
        let best = neighbors[i]
            .iter()
            .filter(|nb| {
                nb.distance < cfg.epsilon_expansion
                    && owner[nb.index] == owner[i]
                    && matches!(kinds[nb.index], PointKind::Core | PointKind::Border)
            })
            .map(|nb| (nb.distance, labels[nb.index].expect("member is labelled")))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, label)) = best {
            expanded.push((i, label));
        }
    }
    for (i, label) in expanded {
        labels[i] = Some(label);
        kinds[i] = PointKind::Expanded;
    }

    ClusterResult::from_labels(labels, kinds, n_clusters)
}
