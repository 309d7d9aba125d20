use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::info;
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::clustering::{read_cluster_csv, ClusterRegistry, ClusterResult, ConceptPointSet};
use crate::concepts::{
    averaged_decoded_embeddings, caption_word_counts, centroids, interpret_clusters, write_representatives_json,
    write_word_tables_csv, CaptionCorpus, TrialPredictions, CAPTIONS_FILE, CAPTION_EMBEDDINGS_FILE,
};
use crate::datamodel::{
    average_repeats, compute_noise_ceiling, normalize_by_session, participant_dir_name, read_item_ids, read_matrix,
    select_voxels, sidecar_path, split_folds_with, write_item_ids, write_matrix, Fold, ItemMatrix,
    ParticipantDataset, Trial,
};
use crate::decoder::{
    ensemble_average, load_checkpoint, save_checkpoint, DecoderRegistry, EnsembleSpec, FinalLosses, LinearDecoder,
    TrainingData,
};
use crate::error::{Error, Result};
use crate::evaluation::topk_accuracy;
use crate::synth::{generate_dataset, PlantedSpec, CONCEPTS_FILE, GROUND_TRUTH_FILE, SHARED_ITEMS_FILE};

pub const FOLDS_FILE: &str = "folds.csv";
pub const NOISE_CEILING_FILE: &str = "noise_ceiling.csv";
pub const SELECTED_VOXELS_FILE: &str = "selected_voxels.csv";
pub const TEST_TRIALS_FILE: &str = "x_test_trials.f32";
pub const TEST_TRIAL_ITEMS_FILE: &str = "test_trial_items.csv";
pub const RETRIEVAL_JSON: &str = "retrieval.json";
pub const TOPK_CSV: &str = "topk.csv";
pub const CLUSTERS_CSV: &str = "clusters.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPRESENTATIVES_JSON: &str = "representatives.json";

/// Data-root files copied into the prepare directory when present, so later
/// stages read only from upstream stage directories.
const PASSTHROUGH: [&str; 5] = [SHARED_ITEMS_FILE, GROUND_TRUTH_FILE, CONCEPTS_FILE, CAPTIONS_FILE, CAPTION_EMBEDDINGS_FILE];

/// Participant ids from `participant_XX` subdirectories, ascending.
pub fn participant_ids(dir: &Path) -> Result<Vec<u32>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_prefix("participant_").and_then(|s| s.parse::<u32>().ok()) {
            if entry.path().is_dir() {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

/// `eps_0.55`
pub fn epsilon_dir_name(epsilon: f64) -> String {
    format!("eps_{epsilon}")
}

#[derive(Debug, Serialize, Deserialize)]
struct VoxelRow {
    voxel_id: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct NoiseCeilingRow {
    voxel_id: usize,
    noise_ceiling: f64,
}

pub fn read_voxel_ids(path: &Path) -> Result<Vec<usize>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<VoxelRow>().map(|v| Ok(v?.voxel_id)).collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).map(|_| ()).map_err(|e| Error::io(from, e))
}

pub(super) fn synth(spec: &PlantedSpec, dir: &Path) -> Result<()> {
    let ds = generate_dataset(spec)?;
    info!(
        "synth: {} participants, {} voxels, {} items",
        spec.n_participants, spec.n_voxels, spec.n_items
    );
    ds.save(dir)
}

pub(super) fn prepare(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let data = &cfg.paths.data_root;
    let ids = participant_ids(data)?;
    if ids.is_empty() {
        return Err(Error::MissingUpstream {
            stage: "data",
            path: data.join("participant_01"),
        });
    }
    for name in PASSTHROUGH {
        let src = data.join(name);
        if src.is_file() {
            copy(&src, &dir.join(name))?;
            if name.ends_with(".f32") {
                copy(&sidecar_path(&src), &sidecar_path(&dir.join(name)))?;
            }
        }
    }
    let shared_path = data.join(SHARED_ITEMS_FILE);
    let shared: BTreeSet<u64> = if shared_path.is_file() {
        read_item_ids(&shared_path)?.into_iter().collect()
    } else {
        BTreeSet::new()
    };
    ids.par_iter()
        .map(|&pid| prepare_participant(cfg, &shared, pid, &dir.join(participant_dir_name(pid))))
        .collect()
}

fn rows_of(trials: &[Trial], rows: &[usize]) -> Vec<Trial> {
    rows.iter().map(|&r| trials[r]).collect()
}

fn prepare_participant(cfg: &PipelineConfig, shared: &BTreeSet<u64>, pid: u32, out: &Path) -> Result<()> {
    let ds = ParticipantDataset::load(&cfg.paths.data_root.join(participant_dir_name(pid)), pid)?;
    let trials = ds.trials.trials();
    let folds = split_folds_with(&ds.trials, shared, cfg.prepare.fold_sizes(), cfg.seed.wrapping_add(u64::from(pid)))?;

    let train_rows = folds.trial_rows(&ds.trials, Fold::Train);
    let nc = compute_noise_ceiling(ds.responses.select(Axis(0), &train_rows).view(), &rows_of(trials, &train_rows))?;
    let selected = select_voxels(&nc, cfg.prepare.voxel_threshold)?;
    info!("prepare: participant {pid}: {} of {} voxels selected", selected.len(), nc.len());
    let x = normalize_by_session(ds.responses.select(Axis(1), &selected).view(), trials)?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    folds.write_csv(&out.join(FOLDS_FILE))?;
    write_rows(
        &out.join(NOISE_CEILING_FILE),
        nc.iter().enumerate().map(|(voxel_id, &noise_ceiling)| NoiseCeilingRow { voxel_id, noise_ceiling }),
    )?;
    write_rows(&out.join(SELECTED_VOXELS_FILE), selected.iter().map(|&voxel_id| VoxelRow { voxel_id }))?;

    let item_ids = |rows: &[usize]| rows.iter().map(|&r| trials[r].item_id).collect::<Vec<_>>();
    let x_train = x.select(Axis(0), &train_rows);
    let train_items = item_ids(&train_rows);
    write_matrix(&out.join("x_train.f32"), &x_train, "x_train")?;
    write_matrix(&out.join("y_train.f32"), &ds.targets.select(&train_items)?, "y_train")?;
    write_item_ids(&out.join("train_items.csv"), &train_items)?;

    for (fold, name) in [(Fold::Val, "val"), (Fold::Test, "test")] {
        let rows = folds.trial_rows(&ds.trials, fold);
        let per_trial = x.select(Axis(0), &rows);
        let averaged = if rows.is_empty() {
            ItemMatrix::new(Vec::new(), Array2::zeros((0, x.ncols())))?
        } else {
            average_repeats(per_trial.view(), &rows_of(trials, &rows))?
        };
        write_matrix(&out.join(format!("x_{name}.f32")), &averaged.values, &format!("x_{name}"))?;
        let y = ds.targets.select(&averaged.item_ids)?;
        write_matrix(&out.join(format!("y_{name}.f32")), &y, &format!("y_{name}"))?;
        write_item_ids(&out.join(format!("{name}_items.csv")), &averaged.item_ids)?;
        if fold == Fold::Test {
            write_matrix(&out.join(TEST_TRIALS_FILE), &per_trial, "x_test_trials")?;
            write_item_ids(&out.join(TEST_TRIAL_ITEMS_FILE), &item_ids(&rows))?;
        }
    }
    Ok(())
}

/// One participant's prepared matrices.
struct Prepared {
    voxels: Vec<usize>,
    x_train: Array2<f32>,
    y_train: Array2<f32>,
    x_val: Array2<f32>,
    y_val: Array2<f32>,
}

fn load_prepared(dir: &Path) -> Result<Prepared> {
    let m = |name: &str| read_matrix(&dir.join(name)).map(|(m, _)| m);
    Ok(Prepared {
        voxels: read_voxel_ids(&dir.join(SELECTED_VOXELS_FILE))?,
        x_train: m("x_train.f32")?,
        y_train: m("y_train.f32")?,
        x_val: m("x_val.f32")?,
        y_val: m("y_val.f32")?,
    })
}

fn checkpoint_path(train_dir: &Path, method: &str, pid: u32) -> std::path::PathBuf {
    train_dir.join(method).join(format!("{}.f32", participant_dir_name(pid)))
}

pub(super) fn train(cfg: &PipelineConfig, prepare_dir: &Path, dir: &Path) -> Result<()> {
    let t = &cfg.train;
    let registry = DecoderRegistry::with_defaults(t.contrastive.clone(), t.lambda_grid.clone());
    let ids = participant_ids(prepare_dir)?;
    for method in &t.methods {
        let trainer = registry.get(method)?;
        for &pid in &ids {
            let p = load_prepared(&prepare_dir.join(participant_dir_name(pid)))?;
            let data = TrainingData {
                participant_id: pid,
                voxel_index_map: &p.voxels,
                x_train: p.x_train.view(),
                y_train: p.y_train.view(),
                x_val: p.x_val.view(),
                y_val: p.y_val.view(),
            };
            let seeds = if trainer.is_stochastic() {
                EnsembleSpec::derive(cfg.seed, pid, t.restarts)?.seeds
            } else {
                vec![cfg.seed]
            };
            info!("train: {method}, participant {pid}, {} fit(s)", seeds.len());
            let fits: Vec<(LinearDecoder, FinalLosses)> =
                seeds.par_iter().map(|&s| trainer.fit(&data, s)).collect::<Result<_>>()?;
            let decoders: Vec<LinearDecoder> = fits.iter().map(|(d, _)| d.clone()).collect();
            let mean = |f: fn(&FinalLosses) -> Option<f64>| {
                let v: Vec<f64> = fits.iter().filter_map(|(_, l)| f(l)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            let losses = FinalLosses {
                train: mean(|l| l.train),
                val: mean(|l| l.val),
                ridge_lambda: fits[0].1.ridge_lambda,
            };
            save_checkpoint(
                &checkpoint_path(dir, method, pid),
                &ensemble_average(&decoders)?,
                method,
                trainer.config_json(),
                losses,
                seeds,
            )?;
        }
    }
    Ok(())
}

fn load_decoders(train_dir: &Path, method: &str) -> Result<Vec<LinearDecoder>> {
    let method_dir = train_dir.join(method);
    let mut out = Vec::new();
    for entry in fs::read_dir(&method_dir).map_err(|e| Error::io(&method_dir, e))? {
        let path = entry.map_err(|e| Error::io(&method_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "f32") {
            out.push(load_checkpoint(&path)?.0);
        }
    }
    out.sort_by_key(|d| d.participant_id);
    if out.is_empty() {
        return Err(Error::MissingUpstream {
            stage: "train",
            path: method_dir,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkRow {
    pub method: String,
    pub participant_id: u32,
    pub k: usize,
    pub accuracy: f64,
    pub chance: f64,
}

pub(super) fn evaluate(cfg: &PipelineConfig, prepare_dir: &Path, train_dir: &Path, dir: &Path) -> Result<()> {
    let mut reports = Vec::new();
    for method in &cfg.train.methods {
        for d in load_decoders(train_dir, method)? {
            let pdir = prepare_dir.join(participant_dir_name(d.participant_id));
            let (x, _) = read_matrix(&pdir.join("x_test.f32"))?;
            let (y, _) = read_matrix(&pdir.join("y_test.f32"))?;
            let mut r = topk_accuracy(d.predict(x.view())?.view(), y.view(), &cfg.evaluate.k_values)?;
            r.participant_id = Some(d.participant_id);
            r.method = Some(method.clone());
            info!("evaluate: {method}, participant {}: top-k {:?}", d.participant_id, r.accuracy);
            reports.push(r);
        }
    }
    write_json(&dir.join(RETRIEVAL_JSON), &reports)?;
    write_rows(
        &dir.join(TOPK_CSV),
        reports.iter().flat_map(|r| {
            (0..r.k_values.len()).map(move |i| TopkRow {
                method: r.method.clone().unwrap_or_default(),
                participant_id: r.participant_id.unwrap_or_default(),
                k: r.k_values[i],
                accuracy: r.accuracy[i],
                chance: r.chance[i],
            })
        }),
    )
}

pub(super) fn cluster(cfg: &PipelineConfig, train_dir: &Path, dir: &Path) -> Result<()> {
    let decoders = load_decoders(train_dir, &cfg.train.cluster_method)?;
    let points = ConceptPointSet::from_decoders(&decoders)?;
    let registry = ClusterRegistry::with_defaults();
    let algorithm = registry.get(&cfg.cluster.algorithm)?;
    for c in cfg.cluster.dbscan_configs() {
        points.check_clusterable(&c)?;
        let result = algorithm.run(&points, &c)?;
        info!("cluster: eps {}: {} clusters over {} points", c.epsilon, result.n_clusters(), points.len());
        let out = dir.join(epsilon_dir_name(c.epsilon));
        result.write_csv(&points, &out.join(CLUSTERS_CSV))?;
        write_json(&out.join(SUMMARY_JSON), &result.summary(&points, &c))?;
    }
    Ok(())
}

/// Rebuilds a cluster result from its CSV, checking it lines up with
/// `points`.
pub(super) fn load_cluster_result(path: &Path, points: &ConceptPointSet) -> Result<ClusterResult> {
    let rows = read_cluster_csv(path)?;
    if rows.len() != points.len() {
        return Err(Error::format(path, format!("{} rows for {} points", rows.len(), points.len())));
    }
    for (row, p) in rows.iter().zip(points.points()) {
        if (row.0, row.1) != (p.participant_id, p.voxel_id) {
            return Err(Error::format(path, "point order does not match the decoders"));
        }
    }
    let n_clusters = rows.iter().filter_map(|r| r.2).max().map_or(0, |m| m + 1);
    let labels = rows.iter().map(|r| r.2).collect();
    let kinds = rows.iter().map(|r| r.3).collect();
    Ok(ClusterResult::from_labels(labels, kinds, n_clusters))
}

/// Items to interpret with: the shared list when every participant has test
/// trials for it, otherwise the items common to all participants' test
/// trials.
fn interpretation_pool(prepare_dir: &Path, predictions: &[TrialPredictions]) -> Result<Vec<u64>> {
    let mut common: Option<BTreeSet<u64>> = None;
    for p in predictions {
        let items: BTreeSet<u64> = p.item_ids.iter().copied().collect();
        common = Some(match common {
            None => items,
            Some(c) => c.intersection(&items).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    let shared_path = prepare_dir.join(SHARED_ITEMS_FILE);
    if shared_path.is_file() {
        let shared = read_item_ids(&shared_path)?;
        if !shared.is_empty() && shared.iter().all(|id| common.contains(id)) {
            return Ok(shared);
        }
    }
    Ok(common.into_iter().collect())
}

pub(super) fn interpret(
    cfg: &PipelineConfig,
    prepare_dir: &Path,
    train_dir: &Path,
    cluster_dir: &Path,
    dir: &Path,
) -> Result<()> {
    let decoders = load_decoders(train_dir, &cfg.train.cluster_method)?;
    let points = ConceptPointSet::from_decoders(&decoders)?;
    let predictions = decoders
        .iter()
        .map(|d| {
            let pdir = prepare_dir.join(participant_dir_name(d.participant_id));
            let (x, _) = read_matrix(&pdir.join(TEST_TRIALS_FILE))?;
            Ok(TrialPredictions {
                participant_id: d.participant_id,
                item_ids: read_item_ids(&pdir.join(TEST_TRIAL_ITEMS_FILE))?,
                rows: d.predict(x.view())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pool_items = interpretation_pool(prepare_dir, &predictions)?;
    if pool_items.is_empty() {
        return Err(Error::InvalidInput("no test item is common to all participants".into()));
    }
    let pool = averaged_decoded_embeddings(&predictions, &pool_items)?;
    write_item_ids(&dir.join("pool_items.csv"), &pool.item_ids)?;
    let captions = CaptionCorpus::load(prepare_dir)?;

    for c in cfg.cluster.dbscan_configs() {
        let name = epsilon_dir_name(c.epsilon);
        let result = load_cluster_result(&cluster_dir.join(&name).join(CLUSTERS_CSV), &points)?;
        let cents = centroids(&points, &result)?;
        let sets = interpret_clusters(&cents, &pool, cfg.interpret.representative_count)?;
        let out = dir.join(&name);
        write_representatives_json(&out.join(REPRESENTATIVES_JSON), &sets)?;
        if let Some(corpus) = &captions {
            for cent in cents.iter().filter(|c| !c.degenerate) {
                let tables = caption_word_counts(
                    cent,
                    corpus.embeddings.view(),
                    &corpus.texts,
                    cfg.interpret.caption_count,
                )?;
                write_word_tables_csv(&out.join(format!("words_cluster_{:02}.csv", cent.cluster_id)), &tables)?;
            }
        }
    }
    Ok(())
}
