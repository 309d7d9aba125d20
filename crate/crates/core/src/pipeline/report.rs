//! Markdown and JSON summary of a finished run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::stages::{epsilon_dir_name, TopkRow, CLUSTERS_CSV, REPRESENTATIVES_JSON, SUMMARY_JSON, TOPK_CSV};
use crate::clustering::{read_cluster_csv, ClusterStats, ClusterSummary, PointKind};
use crate::concepts::{read_representatives_json, RepresentativeSet};
use crate::error::{Error, Result};
use crate::evaluation::adjusted_rand_index;
use crate::synth::{read_ground_truth, GroundTruthRow, GROUND_TRUTH_FILE};

pub const REPORT_MD: &str = "report.md";
pub const REPORT_JSON: &str = "report.json";
pub const TOPK_CURVES_CSV: &str = "topk_curves.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConcept {
    pub cluster_id: usize,
    pub size: usize,
    /// Most common planted concept among members, if any member is a
    /// signal voxel.
    pub planted_concept: Option<usize>,
    /// Share of members carrying that concept.
    pub purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRecovery {
    /// Over all planted signal voxels. Voxels left unclustered (outliers or
    /// not selected) each count as their own singleton.
    pub adjusted_rand_index: f64,
    pub signal_voxels: usize,
    pub signal_voxels_clustered: usize,
    pub clusters: Vec<ClusterConcept>,
}

/// Compares a clustering (rows of `participant, voxel, cluster, kind`) to
/// the planted voxel partition.
pub fn planted_recovery(
    truth: &[GroundTruthRow],
    clusters: &[(u32, usize, Option<usize>, PointKind)],
) -> Result<PlantedRecovery> {
    let label: BTreeMap<(u32, usize), Option<usize>> = clusters.iter().map(|r| ((r.0, r.1), r.2)).collect();
    let concept: BTreeMap<(u32, usize), i64> = truth.iter().map(|t| ((t.participant_id, t.voxel_id), t.concept_id)).collect();
    let signal: Vec<&GroundTruthRow> = truth.iter().filter(|t| t.concept_id >= 0).collect();
    if signal.is_empty() {
        return Err(Error::InvalidInput("ground truth has no signal voxels".into()));
    }
    let planted: Vec<i64> = signal.iter().map(|t| t.concept_id).collect();
    let recovered: Vec<(i64, u32, usize)> = signal
        .iter()
        .map(|t| match label.get(&(t.participant_id, t.voxel_id)).copied().flatten() {
            Some(c) => (c as i64, 0, 0),
            None => (-1, t.participant_id, t.voxel_id),
        })
        .collect();
    let n_clusters = clusters.iter().filter_map(|r| r.2).max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<i64>> = vec![Vec::new(); n_clusters];
    for r in clusters {
        if let Some(c) = r.2 {
            members[c].push(concept.get(&(r.0, r.1)).copied().unwrap_or(-1));
        }
    }
    let clusters_out = members
        .iter()
        .enumerate()
        .map(|(cluster_id, m)| {
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            for &k in m.iter().filter(|&&k| k >= 0) {
                *counts.entry(k).or_default() += 1;
            }
            // ties go to the lower concept id
            let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)));
            ClusterConcept {
                cluster_id,
                size: m.len(),
                planted_concept: best.map(|(&k, _)| k as usize),
                purity: best.map_or(0.0, |(_, &n)| n as f64 / m.len() as f64),
            }
        })
        .collect();
    Ok(PlantedRecovery {
        adjusted_rand_index: adjusted_rand_index(&planted, &recovered)?,
        signal_voxels: signal.len(),
        signal_voxels_clustered: recovered.iter().filter(|r| r.0 >= 0).count(),
        clusters: clusters_out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub summary: ClusterSummary,
    pub outliers: usize,
    pub representatives: Vec<RepresentativeSet>,
    pub recovery: Option<PlantedRecovery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub k: usize,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub chance: f64,
    pub participants: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub epsilons: Vec<EpsilonReport>,
    /// Epsilon with the highest adjusted Rand index (lowest on ties), when
    /// ground truth is available.
    pub best_epsilon: Option<f64>,
    pub topk_curves: Vec<CurvePoint>,
}

impl ReportSummary {
    pub fn read(report_dir: &Path) -> Result<Self> {
        let path = report_dir.join(REPORT_JSON);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn topk_curves(rows: &[TopkRow]) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<(String, usize), Vec<&TopkRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method.clone(), r.k)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, k), g)| {
            let n = g.len() as f64;
            CurvePoint {
                method,
                k,
                mean_accuracy: g.iter().map(|r| r.accuracy).sum::<f64>() / n,
                min_accuracy: g.iter().map(|r| r.accuracy).fold(f64::INFINITY, f64::min),
                max_accuracy: g.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max),
                chance: g.iter().map(|r| r.chance).sum::<f64>() / n,
                participants: g.len(),
            }
        })
        .collect()
}

fn counts_cell(stats: &ClusterStats) -> String {
    stats
        .participant_counts
        .iter()
        .map(|(p, n)| format!("p{p}:{n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn ids(items: &[crate::concepts::RankedItem]) -> String {
    items.iter().map(|i| i.item_id.to_string()).collect::<Vec<_>>().join(", ")
}

fn markdown(cfg: &PipelineConfig, s: &ReportSummary) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Shared concept report\n");
    let _ = writeln!(
        md,
        "Seed {}, decoder `{}`, clustering `{}`, min_neighbors {}.\n",
        cfg.seed, cfg.train.cluster_method, cfg.cluster.algorithm, cfg.cluster.min_neighbors
    );
    let _ = writeln!(md, "## Clusters per epsilon\n");
    let _ = writeln!(md, "| epsilon | epsilon_expansion | points | clusters | outliers | ARI |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for e in &s.epsilons {
        let ari = e
            .recovery
            .as_ref()
            .map_or("n/a".to_string(), |r| format!("{:.3}", r.adjusted_rand_index));
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {ari} |",
            e.summary.epsilon, e.summary.epsilon_expansion, e.summary.n_points, e.summary.n_clusters, e.outliers
        );
    }
    if let Some(best) = s.best_epsilon {
        let _ = writeln!(md, "\nBest epsilon against the planted partition: {best}.");
    }

    let _ = writeln!(md, "\n## Participant coverage\n");
    for e in &s.epsilons {
        let _ = writeln!(md, "### epsilon = {}\n", e.summary.epsilon);
        if e.summary.clusters.is_empty() {
            let _ = writeln!(md, "No clusters.\n");
            continue;
        }
        let _ = writeln!(md, "| cluster | size | core | core participants | members per participant | planted concept |");
        let _ = writeln!(md, "|---|---|---|---|---|---|");
        for c in &e.summary.clusters {
            let planted = e
                .recovery
                .as_ref()
                .and_then(|r| r.clusters.get(c.cluster_id))
                .and_then(|p| p.planted_concept.map(|k| format!("{k} ({:.0}%)", 100.0 * p.purity)))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {planted} |",
                c.cluster_id,
                c.size,
                c.core,
                c.core_participants,
                counts_cell(c)
            );
        }
        let _ = writeln!(md);
    }

    let _ = writeln!(md, "## Representative items\n");
    for e in &s.epsilons {
        if e.representatives.is_empty() {
            continue;
        }
        let _ = writeln!(md, "### epsilon = {}\n", e.summary.epsilon);
        for r in &e.representatives {
            let _ = writeln!(md, "- cluster {}: positive [{}]; negative [{}]", r.cluster_id, ids(&r.positives), ids(&r.negatives));
        }
        let _ = writeln!(md);
    }

    let _ = writeln!(md, "## Top-k retrieval\n");
    let _ = writeln!(md, "Mean over participants; full curves in `{TOPK_CURVES_CSV}`.\n");
    let _ = writeln!(md, "| method | k | accuracy | min | max | chance |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for c in &s.topk_curves {
        let _ = writeln!(
            md,
            "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
            c.method, c.k, c.mean_accuracy, c.min_accuracy, c.max_accuracy, c.chance
        );
    }
    md
}

pub(super) fn report(
    cfg: &PipelineConfig,
    prepare_dir: &Path,
    evaluate_dir: &Path,
    cluster_dir: &Path,
    interpret_dir: &Path,
    dir: &Path,
) -> Result<()> {
    let truth_path = prepare_dir.join(GROUND_TRUTH_FILE);
    let truth = truth_path.is_file().then(|| read_ground_truth(&truth_path)).transpose()?;

    let mut epsilons = Vec::new();
    for c in cfg.cluster.dbscan_configs() {
        let name = epsilon_dir_name(c.epsilon);
        let summary_path = cluster_dir.join(&name).join(SUMMARY_JSON);
        let text = fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let summary: ClusterSummary = serde_json::from_str(&text)?;
        let rows = read_cluster_csv(&cluster_dir.join(&name).join(CLUSTERS_CSV))?;
        let recovery = truth.as_ref().map(|t| planted_recovery(t, &rows)).transpose()?;
        epsilons.push(EpsilonReport {
            summary,
            outliers: rows.iter().filter(|r| r.2.is_none()).count(),
            representatives: read_representatives_json(&interpret_dir.join(&name).join(REPRESENTATIVES_JSON))?,
            recovery,
        });
    }
    let best_epsilon = epsilons
        .iter()
        .filter_map(|e| e.recovery.as_ref().map(|r| (e.summary.epsilon, r.adjusted_rand_index)))
        .fold(None, |best: Option<(f64, f64)>, (eps, ari)| match best {
            Some((_, b)) if b >= ari => best,
            _ => Some((eps, ari)),
        })
        .map(|(eps, _)| eps);

    let mut reader = csv::Reader::from_path(evaluate_dir.join(TOPK_CSV))?;
    let rows: Vec<TopkRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    let summary = ReportSummary {
        epsilons,
        best_epsilon,
        topk_curves: topk_curves(&rows),
    };

    let curves_path = dir.join(TOPK_CURVES_CSV);
    let mut w = csv::Writer::from_path(&curves_path)?;
    for c in &summary.topk_curves {
        w.serialize(c)?;
    }
    w.flush().map_err(|e| Error::io(&curves_path, e))?;
    let json_path = dir.join(REPORT_JSON);
    fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&json_path, e))?;
    let md_path = dir.join(REPORT_MD);
    fs::write(&md_path, markdown(cfg, &summary)).map_err(|e| Error::io(&md_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(rows: &[(u32, usize, i64)]) -> Vec<GroundTruthRow> {
        rows.iter()
            .map(|&(participant_id, voxel_id, concept_id)| GroundTruthRow {
                participant_id,
                voxel_id,
                concept_id,
            })
            .collect()
    }

    #[test]
    fn perfect_and_partial_recovery() {
        let truth = gt(&[(1, 0, 0), (1, 1, 1), (2, 0, 0), (2, 1, 1), (2, 2, -1)]);
        let k = PointKind::Core;
        let perfect = [(1, 0, Some(1), k), (1, 1, Some(0), k), (2, 0, Some(1), k), (2, 1, Some(0), k), (2, 2, None, PointKind::Outlier)];
        let r = planted_recovery(&truth, &perfect).unwrap();
        assert_eq!(r.adjusted_rand_index, 1.0);
        assert_eq!(r.signal_voxels_clustered, 4);
        assert_eq!(r.clusters[0].planted_concept, Some(1));
        assert_eq!(r.clusters[1].purity, 1.0);

        // voxel (2,1) unselected; (2,0) an outlier
        let partial = [(1, 0, Some(0), k), (1, 1, Some(1), k), (2, 0, None, PointKind::Outlier), (2, 2, Some(1), k)];
        let r = planted_recovery(&truth, &partial).unwrap();
        // planted [0,1,0,1] vs recovered [a,b,x,y]: sklearn gives 0.0 here
        assert_eq!(r.adjusted_rand_index, 0.0);
        assert_eq!(r.clusters[1].purity, 0.5);
    }

    #[test]
    fn curves_average_participants() {
        let row = |p, acc| TopkRow {
            method: "ridge".into(),
            participant_id: p,
            k: 5,
            accuracy: acc,
            chance: 0.05,
        };
        let c = topk_curves(&[row(1, 0.2), row(2, 0.4)]);
        assert_eq!(c.len(), 1);
        assert!((c[0].mean_accuracy - 0.3).abs() < 1e-12);
        assert_eq!((c[0].min_accuracy, c[0].max_accuracy, c[0].participants), (0.2, 0.4, 2));
    }
}
