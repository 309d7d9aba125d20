//! Exhaustive O(n^2) reference: every distance is recomputed from the raw
//! vectors and components are found by naive label propagation.

use std::collections::BTreeSet;

use super::{cosine_distance, ClusterAlgorithm, ClusterResult, ConceptPointSet, DbscanConfig, PointKind};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default)]
pub struct BruteForce;

impl ClusterAlgorithm for BruteForce {
    fn name(&self) -> &'static str {
        "bruteforce"
    }

    fn run(&self, points: &ConceptPointSet, cfg: &DbscanConfig) -> Result<ClusterResult> {
        bruteforce_reference(points, cfg)
    }
}

pub fn bruteforce_reference(points: &ConceptPointSet, cfg: &DbscanConfig) -> Result<ClusterResult> {
    cfg.validate()?;
    let pts = points.points();
    let n = pts.len();
    let dist = |i: usize, j: usize| cosine_distance(&pts[i].vector, &pts[j].vector);

    let mut core = vec![false; n];
    for i in 0..n {
        let mut participants = BTreeSet::new();
        for j in 0..n {
            if j != i && pts[j].participant_id != pts[i].participant_id && dist(i, j)? < cfg.epsilon {
                participants.insert(pts[j].participant_id);
            }
        }
        core[i] = participants.len() >= cfg.min_neighbors;
    }

    // Each core point starts with its own index; repeatedly take the minimum
    // over core neighbours until nothing changes.
    let mut component: Vec<Option<usize>> = (0..n).map(|i| core[i].then_some(i)).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if i != j && core[i] && core[j] && dist(i, j)? < cfg.epsilon {
                    let (ci, cj) = (component[i].unwrap(), component[j].unwrap());
                    if cj < ci {
                        component[i] = Some(cj);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    // Component value is its smallest core index, so sorting orders ids.
    let roots: Vec<usize> = component.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let id_of = |root: usize| roots.binary_search(&root).expect("known root");

    let mut labels: Vec<Option<usize>> = component.iter().map(|c| c.map(id_of)).collect();
    let mut kinds: Vec<PointKind> = core
        .iter()
        .map(|&c| if c { PointKind::Core } else { PointKind::Outlier })
        .collect();

    for i in 0..n {
        if core[i] {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if !core[j] {
                continue;
            }
            let d = dist(i, j)?;
            if d >= cfg.epsilon {
                continue;
            }
            let cand = (d, labels[j].unwrap());
            let better = match best {
                None => true,
                Some(b) => cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1),
            };
            if better {
                best = Some(cand);
            }
        }
        if let Some((_, label)) = best {
            labels[i] = Some(label);
            kinds[i] = PointKind::Border;
        }
    }

    let snapshot = kinds.clone();
    for i in 0..n {
        if snapshot[i] != PointKind::Outlier {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            let anchor = matches!(snapshot[j], PointKind::Core | PointKind::Border);
            if j == i || !anchor || pts[j].participant_id != pts[i].participant_id {
                continue;
            }
            let d = dist(i, j)?;
            if d >= cfg.epsilon_expansion {
                continue;
            }
            let cand = (d, labels[j].unwrap());
            let better = match best {
                None => true,
                Some(b) => cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1),
            };
            if better {
                best = Some(cand);
            }
        }
        if let Some((_, label)) = best {
            labels[i] = Some(label);
            kinds[i] = PointKind::Expanded;
        }
    }

    Ok(ClusterResult::from_labels(labels, kinds, roots.len()))
}
