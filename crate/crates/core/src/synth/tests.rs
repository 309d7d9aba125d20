use super::*;
use ndarray::s;
use crate::datamodel::{compute_noise_ceiling, select_voxels, Fold};

fn small(seed: u64) -> PlantedSpec {
    PlantedSpec {
        n_participants: 3,
        n_voxels: 60,
        n_items: 120,
        n_shared_items: 20,
        n_partial_items: 10,
        n_concepts: 3,
        signal_fraction: 0.5,
        embedding_dim: 16,
        min_neighbors: 2,
        n_captions: 30,
        seed,
        ..PlantedSpec::default()
    }
}

#[test]
fn reproducible_and_seed_sensitive() {
    let a = generate_dataset(&small(3)).unwrap();
    let b = generate_dataset(&small(3)).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&small(4)).unwrap();
    assert_ne!(a.participants[0].responses, c.participants[0].responses);
}

#[test]
fn structure() {
    let spec = small(1);
    let ds = generate_dataset(&spec).unwrap();
    assert_eq!(ds.participants.len(), 3);
    let gram = ds.concept_vectors.dot(&ds.concept_vectors.t());
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((gram[[i, j]] - want).abs() < 1e-5);
        }
    }
    assert!(concept_coverage(&ds.assignment, 3).iter().all(|&c| c == 3));
    for p in &ds.participants {
        p.validate().unwrap();
        let counts = p.trials.repeat_counts();
        assert_eq!(counts.len(), spec.n_items);
        assert_eq!(counts.values().filter(|&&n| n < 3).count(), spec.n_partial_items);
        let sessions: BTreeSet<u32> = p.trials.trials().iter().map(|t| t.session_id).collect();
        assert_eq!(sessions.len(), spec.n_sessions as usize);
        // repeat indices follow presentation order
        let mut last: std::collections::HashMap<u64, u8> = Default::default();
        for t in p.trials.trials() {
            let expected = last.get(&t.item_id).map_or(0, |r| r + 1);
            assert_eq!(t.repeat_index, expected);
            last.insert(t.item_id, t.repeat_index);
        }
    }
    // shared embeddings are identical across participants
    for id in &ds.shared_items {
        let r0 = ds.participants[0].targets.row(*id).unwrap();
        for p in &ds.participants[1..] {
            assert_eq!(p.targets.row(*id).unwrap(), r0);
        }
    }
    let captions = ds.captions.as_ref().unwrap();
    assert_eq!(captions.texts.len(), 30);
}

#[test]
fn infeasible_specs() {
    let bad = |f: fn(&mut PlantedSpec)| {
        let mut s = small(0);
        f(&mut s);
        matches!(generate_dataset(&s), Err(Error::InfeasibleSpec(_)))
    };
    assert!(bad(|s| s.separation_epsilon = 0.5));
    assert!(bad(|s| s.n_concepts = 17));
    assert!(bad(|s| s.min_neighbors = 3));
    assert!(bad(|s| s.signal_fraction = 0.01));
    assert!(bad(|s| s.noise_ceiling_target = 0.0));
    assert!(bad(|s| s.n_sessions = 1));
}

#[test]
fn noiseless_signal_voxels_hit_full_ceiling() {
    let spec = PlantedSpec {
        noise_ceiling_target: 100.0,
        n_partial_items: 0,
        ..small(2)
    };
    let ds = generate_dataset(&spec).unwrap();
    let p = &ds.participants[0];
    let nc = compute_noise_ceiling(p.responses.view(), p.trials.trials()).unwrap();
    for (v, a) in ds.assignment[0].iter().enumerate() {
        if a.is_some() {
            assert!((nc[v] - 100.0).abs() < 1e-6, "voxel {v}: {}", nc[v]);
        } else {
            assert!(nc[v] < 40.0);
        }
    }
}

#[test]
fn signal_voxels_near_target_ceiling() {
    let spec = PlantedSpec {
        n_participants: 2,
        n_voxels: 40,
        n_items: 2000,
        n_shared_items: 0,
        n_concepts: 2,
        signal_fraction: 0.5,
        embedding_dim: 8,
        min_neighbors: 1,
        noise_ceiling_target: 30.0,
        ..PlantedSpec::default()
    };
    let ds = generate_dataset(&spec).unwrap();
    let p = &ds.participants[1];
    let nc = compute_noise_ceiling(p.responses.view(), p.trials.trials()).unwrap();
    let signal: Vec<f64> = (0..40).filter(|&v| ds.assignment[1][v].is_some()).map(|v| nc[v]).collect();
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    assert!((mean - 30.0).abs() < 3.0, "mean signal NC {mean}");
}

#[test]
fn background_only_participant_selects_almost_nothing() {
    // Monte-Carlo: pure-noise voxels with 4000 three-repeat items.
    let spec = PlantedSpec {
        n_participants: 1,
        n_voxels: 500,
        n_items: 4000,
        n_shared_items: 0,
        n_concepts: 1,
        signal_fraction: 0.002,
        embedding_dim: 4,
        min_neighbors: 0,
        ..PlantedSpec::default()
    };
    let ds = generate_dataset(&spec).unwrap();
    let p = &ds.participants[0];
    let nc = compute_noise_ceiling(p.responses.view(), p.trials.trials()).unwrap();
    let background: Vec<f64> = (0..500).filter(|&v| ds.assignment[0][v].is_none()).map(|v| nc[v]).collect();
    let false_selected = select_voxels(&background, 8.0).map_or(0, |v| v.len());
    assert!((false_selected as f64) < 0.01 * background.len() as f64, "{false_selected} false selections");
}

#[test]
fn signal_correlates_most_with_own_concept() {
    let spec = PlantedSpec {
        noise_ceiling_target: 50.0,
        n_partial_items: 0,
        ..small(9)
    };
    let ds = generate_dataset(&spec).unwrap();
    for (p, participant) in ds.participants.iter().enumerate() {
        let avg = crate::datamodel::average_repeats(participant.responses.view(), participant.trials.trials()).unwrap();
        let y = participant.targets.select(&avg.item_ids).unwrap();
        let proj = y.dot(&ds.concept_vectors.t());
        for (v, a) in ds.assignment[p].iter().enumerate() {
            let Some(k) = a else { continue };
            let corr: Vec<f64> = (0..spec.n_concepts)
                .map(|c| pearson(avg.values.column(v).to_vec(), proj.column(c).to_vec()))
                .collect();
            let best = (0..corr.len()).max_by(|&a, &b| corr[a].total_cmp(&corr[b])).unwrap();
            assert_eq!(best, *k, "participant {p} voxel {v}: {corr:?}");
        }
    }
}

fn pearson(a: Vec<f32>, b: Vec<f32>) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&x| x as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(&b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn save_layout() {
    let ds = generate_dataset(&small(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let p2 = ParticipantDataset::load(&dir.path().join("participant_02"), 2).unwrap();
    assert_eq!(p2, ds.participants[1]);
    let truth = read_ground_truth(&dir.path().join(GROUND_TRUTH_FILE)).unwrap();
    assert_eq!(truth.len(), 3 * 60);
    let text = std::fs::read_to_string(dir.path().join(GROUND_TRUTH_FILE)).unwrap();
    assert!(text.starts_with("participant_id,voxel_id,concept_id\n"));
    assert_eq!(read_concepts(dir.path()).unwrap(), ds.concept_vectors);
    assert_eq!(CaptionCorpus::load(dir.path()).unwrap(), ds.captions);
    let shared = crate::datamodel::read_item_ids(&dir.path().join(SHARED_ITEMS_FILE)).unwrap();
    assert_eq!(shared, ds.shared_items);
}

#[test]
fn folds_put_shared_items_in_test() {
    let ds = generate_dataset(&small(6)).unwrap();
    let shared: BTreeSet<u64> = ds.shared_items.iter().copied().collect();
    let p = &ds.participants[0];
    let sizes = crate::datamodel::FoldSizes {
        val_items: 30,
        test_items: 25,
    };
    let folds = crate::datamodel::split_folds_with(&p.trials, &shared, sizes, 1).unwrap();
    assert!(shared.iter().all(|id| folds.fold_of(*id) == Some(Fold::Test)));
    assert_eq!(folds.items(Fold::Val).len(), 30);
}

#[test]
fn planted_linear_shapes_and_noiseless_fit() {
    let spec = LinearSpec {
        n_train_items: 300,
        n_voxels: 20,
        latent_dim: 20,
        embedding_dim: 32,
        ..LinearSpec::default()
    };
    let prob = planted_linear(&spec).unwrap();
    assert_eq!(prob.x_train.dim(), (300, 20));
    assert_eq!(prob.y_train.dim(), (300, 32));
    assert_eq!(prob.x_test.dim(), (200, 20));
    // noiseless: Y is exactly linear in X
    let w = crate::decoder::ridge_solve(prob.x_train.view(), prob.y_train.view(), 1e-9).unwrap();
    let pred = prob.x_test.mapv(f64::from).dot(&w);
    let err = (&pred - &prob.y_test.mapv(f64::from)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(err < 1e-3, "max error {err}");

    let noisy = planted_linear(&LinearSpec {
        repeats: 3,
        noise_ceiling: 30.0,
        ..spec
    })
    .unwrap();
    assert_eq!(noisy.x_train.nrows(), 900);
    assert_eq!(noisy.y_train.slice(s![..300, ..]), noisy.y_train.slice(s![300..600, ..]));
}
