use proptest::prelude::*;

use weaksup::problem::Task;
use weaksup_harness::crossval::{crossval, Protocol};
use weaksup_harness::experiment::{prequantize, run_experiment, ExperimentConfig, Mode};
use weaksup_harness::metrics::{accuracy_best_perm, kmeans_baseline};
use weaksup_harness::synthetic::{gen_clusters, gen_mil, make_ssl, MilSyntheticSpec, Shape, SyntheticSpec};

fn blobs(n: usize, separation: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec { n_points: n, separation, seed, ..SyntheticSpec::default() }
}

#[test]
fn kmeans_on_far_blobs_is_exact() {
    let d = gen_clusters(&blobs(60, 100.0, 1)).unwrap();
    let km = kmeans_baseline(&d.dataset, 3, 0, 5).unwrap();
    assert_eq!(accuracy_best_perm(&km.labels, &d.truth).unwrap(), 1.0);

    let tiny = gen_clusters(&SyntheticSpec { n_points: 6, n_clusters: 3, ..SyntheticSpec::default() }).unwrap();
    let km = kmeans_baseline(&tiny.dataset, 6, 0, 3).unwrap();
    assert!(km.distortion.abs() < 1e-20, "{}", km.distortion);
}

#[test]
fn kmeans_mode_matches_baseline() {
    let d = gen_clusters(&blobs(90, 4.0, 2)).unwrap();
    let cfg = ExperimentConfig { mode: Mode::KMeans, seed: 5, ..ExperimentConfig::default() };
    let res = run_experiment(&d.dataset, Some(&d.truth), &cfg).unwrap();
    let km = kmeans_baseline(&d.dataset, 3, 5, 20).unwrap();
    assert_eq!(res.predictions, km.labels);
    assert!(res.gap.is_none() && res.z.is_none());
    assert!(res.max_scores.iter().all(|&s| s <= 0.0));
}

#[test]
fn relaxation_trace_and_gap() {
    let d = gen_clusters(&blobs(90, 4.0, 3)).unwrap();
    let cfg = ExperimentConfig { lambdas: vec![10.0], ..ExperimentConfig::default() };
    let res = run_experiment(&d.dataset, Some(&d.truth), &cfg).unwrap();
    let gap = res.gap.unwrap();
    assert!((0.0..=cfg.gap_tol).contains(&gap), "{gap}");
    for w in res.outer_trace.windows(2) {
        assert!(w[1].value <= w[0].value);
    }
    assert!(res.outer_trace.iter().all(|r| r.gap >= 0.0));
    assert!(res.metrics.unwrap().accuracy_best_perm >= 0.9);
    let z = res.z.unwrap();
    assert_eq!(z.shape(), (90, 90));
}

#[test]
fn ssl_keeps_labeled_points_and_holds_must_not_link() {
    let d = gen_clusters(&blobs(90, 4.0, 4)).unwrap();
    let (ssl, labeled) = make_ssl(&d, 6, 4).unwrap();
    let cfg = ExperimentConfig { task: Task::Ssl, lambdas: vec![10.0], ..ExperimentConfig::default() };
    let res = run_experiment(&ssl.dataset, Some(&ssl.truth), &cfg).unwrap();
    for &i in &labeled {
        assert_eq!(res.predictions[i], ssl.truth[i]);
    }
    let last = res.outer_trace.last().unwrap();
    assert!(last.violation <= 1e-8, "{}", last.violation);
    assert!(res.gap.unwrap() <= cfg.gap_tol);
    assert!(res.metrics.unwrap().accuracy >= 0.9);
}

#[test]
fn mil_crossval_is_deterministic_and_accurate() {
    let data = gen_mil(&MilSyntheticSpec { n_pos_bags: 6, n_neg_bags: 6, bag_size: 5, separation: 8.0, seed: 3, ..MilSyntheticSpec::default() }).unwrap();
    let cfg = ExperimentConfig { lambdas: vec![10.0], ..ExperimentConfig::default() };
    let a = crossval(&data, Protocol::Mil10Split, &[1.0, 10.0], &cfg).unwrap();
    let b = crossval(&data, Protocol::Mil10Split, &[1.0, 10.0], &cfg).unwrap();
    assert_eq!(a.accuracies, b.accuracies);
    assert_eq!(a.chosen_lambdas, b.chosen_lambdas);
    assert_eq!(a.accuracies.len(), 10);
    assert!(a.mean >= 0.95, "{}", a.mean);
}

#[test]
fn prequantized_relaxation_on_separated_blobs() {
    let d = gen_clusters(&blobs(60, 30.0, 6)).unwrap();
    let q = prequantize(&d.dataset, 3, 0).unwrap();
    assert_eq!(q.dataset.len(), 3);
    let mass: f64 = q.dataset.weights.iter().sum();
    assert!((mass - 1.0).abs() < 1e-12);
    let cfg = ExperimentConfig { lambdas: vec![10.0], prequantize: Some(3), ..ExperimentConfig::default() };
    let res = run_experiment(&d.dataset, Some(&d.truth), &cfg).unwrap();
    assert_eq!(res.predictions.len(), 60);
    assert_eq!(res.metrics.unwrap().accuracy_best_perm, 1.0);
}

#[test]
fn off_center_and_rings_generators() {
    for shape in [Shape::OffCenter, Shape::Rings] {
        let d = gen_clusters(&SyntheticSpec { shape, noise_dims: 2, ..SyntheticSpec::default() }).unwrap();
        assert_eq!(d.dataset.len(), 150);
        assert_eq!(d.dataset.dense_features().unwrap().ncols(), 4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn best_permutation_accuracy_ignores_relabeling(
        labels in prop::collection::vec(0usize..4, 1..60),
        truth_seed in any::<u64>(),
        perm_idx in 0usize..24,
    ) {
        let truth: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| (l + (truth_seed as usize >> (i % 16)) % 2) % 4).collect();
        let mut perm = vec![0, 1, 2, 3];
        let mut k = perm_idx;
        for i in (1..4).rev() {
            perm.swap(i, k % (i + 1));
            k /= i + 1;
        }
        let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let a = accuracy_best_perm(&labels, &truth).unwrap();
        let b = accuracy_best_perm(&relabeled, &truth).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn generators_are_deterministic(seed in any::<u64>(), k in 2usize..5, noise in 0usize..3) {
        let spec = SyntheticSpec { n_points: 40, n_clusters: k, noise_dims: noise, seed, ..SyntheticSpec::default() };
        let a = gen_clusters(&spec).unwrap();
        let b = gen_clusters(&spec).unwrap();
        prop_assert_eq!(&a.truth, &b.truth);
        prop_assert_eq!(a.dataset.dense_features(), b.dataset.dense_features());
        let m = MilSyntheticSpec { seed, ..MilSyntheticSpec::default() };
        let (x, y) = (gen_mil(&m).unwrap(), gen_mil(&m).unwrap());
        prop_assert_eq!(x.dataset.dense_features(), y.dataset.dense_features());
        prop_assert_eq!(x.truth, y.truth);
    }
}
