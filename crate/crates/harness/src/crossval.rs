//! Evaluation protocols: bag-level MIL splits with inner 2-fold choice of
//! `λ`, and transductive semi-supervised splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use weaksup::problem::{Task, WeakDataset};

use crate::error::{HarnessError, Result};
use crate::experiment::{predict_rows, run_experiment, ExperimentConfig};
use crate::metrics::{accuracy, mean_std};
use crate::synthetic::{ssl_from_indices, LabeledData};

pub const SPLITS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Ten seeded 90/10 bag splits, bag-level accuracy on the held-out bags.
    Mil10Split,
    /// Ten seeded draws of `l` labeled instances; accuracy on the rest.
    SslFixedLabeled(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub accuracies: Vec<f64>,
    /// `λ` chosen on every split.
    pub chosen_lambdas: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub wall_time_s: f64,
}

/// Worker count from `WEAKSUP_THREADS`, defaulting to all cores.
pub fn thread_count() -> usize {
    std::env::var("WEAKSUP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Seed of split `s` under master seed `seed`.
fn split_seed(seed: u64, s: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(s as u64 + 1)
}

/// Run the protocol; `lambda_grid` replaces the relaxation `λ` of `cfg`, and
/// splits run in parallel on a pool of [`thread_count`] workers.
pub fn crossval(data: &LabeledData, protocol: Protocol, lambda_grid: &[f64], cfg: &ExperimentConfig) -> Result<CvResult> {
    if lambda_grid.is_empty() {
        return Err(HarnessError::Spec("empty lambda grid".into()));
    }
    let start = std::time::Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| HarnessError::Spec(e.to_string()))?;
    let per_split: Vec<(f64, f64)> = match protocol {
        Protocol::Mil10Split => {
            let ds = &data.dataset;
            if !ds.labels.is_mil() {
                return Err(HarnessError::Spec("the MIL protocol needs a MIL dataset".into()));
            }
            if ds.bags.len() < SPLITS {
                return Err(HarnessError::Spec(format!("the MIL protocol needs at least {SPLITS} bags, got {}", ds.bags.len())));
            }
            if ds.dense_features().is_none() {
                return Err(HarnessError::Spec("the MIL protocol needs explicit features".into()));
            }
            let cfg = ExperimentConfig { task: Task::Mil, ..cfg.clone() };
            pool.install(|| {
                (0..SPLITS)
                    .into_par_iter()
                    .map(|s| mil_split(ds, lambda_grid, &cfg, split_seed(cfg.seed, s)))
                    .collect::<Result<Vec<_>>>()
            })?
        }
        Protocol::SslFixedLabeled(l) => {
            let p = data.dataset.latent_count();
            if l < p || l >= data.dataset.len() {
                return Err(HarnessError::Spec(format!("need {p} ≤ l < {}, got l = {l}", data.dataset.len())));
            }
            let cfg = ExperimentConfig { task: Task::Ssl, ..cfg.clone() };
            pool.install(|| {
                (0..SPLITS)
                    .into_par_iter()
                    .map(|s| ssl_split(data, l, lambda_grid, &cfg, split_seed(cfg.seed, s)))
                    .collect::<Result<Vec<_>>>()
            })?
        }
    };
    let (accuracies, chosen_lambdas): (Vec<f64>, Vec<f64>) = per_split.into_iter().unzip();
    let (mean, std) = mean_std(&accuracies);
    Ok(CvResult {
        accuracies,
        chosen_lambdas,
        mean,
        std,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Train on the bags `train`, return bag-level accuracy on `test`.
fn mil_bag_accuracy(ds: &WeakDataset, train: &[usize], test: &[usize], cfg: &ExperimentConfig) -> Result<f64> {
    let (sub, _) = ds.subset_bags(train, cfg.weights)?;
    let res = run_experiment(&sub, None, cfg)?;
    let x = ds.dense_features().unwrap();
    let mut pred = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    for &b in test {
        let bag = &ds.bags[b];
        let (labels, _) = predict_rows(&res, &x.select_rows(bag.members.iter()))?;
        pred.push(usize::from(labels.contains(&1)));
        truth.push(bag.label);
    }
    accuracy(&pred, &truth)
}

/// Stratified shuffle of `bags`: positives and negatives are shuffled
/// separately and interleaved in proportion, so every prefix is close to the
/// overall class balance.
fn stratified_shuffle(ds: &WeakDataset, bags: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pos: Vec<usize> = bags.iter().copied().filter(|&b| ds.bags[b].label == 1).collect();
    let mut neg: Vec<usize> = bags.iter().copied().filter(|&b| ds.bags[b].label != 1).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let mut out = Vec::with_capacity(bags.len());
    let (np, nn) = (pos.len(), neg.len());
    let (mut i, mut j) = (0, 0);
    while i < np || j < nn {
        if j >= nn || (i < np && i * nn <= j * np) {
            out.push(pos[i]);
            i += 1;
        } else {
            out.push(neg[j]);
            j += 1;
        }
    }
    out
}

/// Two halves of `bags` with the bags of each class alternating between them.
fn stratified_halves(ds: &WeakDataset, bags: &[usize], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut seen = [0usize; 2];
    for bag in stratified_shuffle(ds, bags, rng) {
        let class = usize::from(ds.bags[bag].label == 1);
        if seen[class] % 2 == 0 { &mut a } else { &mut b }.push(bag);
        seen[class] += 1;
    }
    (a, b)
}

fn mil_split(ds: &WeakDataset, grid: &[f64], cfg: &ExperimentConfig, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..ds.bags.len()).collect();
    let order = stratified_shuffle(ds, &all, &mut rng);
    let n_test = (ds.bags.len() as f64 / SPLITS as f64).round().max(1.0) as usize;
    let (test, train) = order.split_at(n_test);
    let (a, b) = stratified_halves(ds, train, &mut rng);
    let lambda = choose_lambda(grid, |lambda| {
        let c = ExperimentConfig { lambdas: vec![lambda], ..cfg.clone() };
        Ok(0.5 * (mil_bag_accuracy(ds, &a, &b, &c)? + mil_bag_accuracy(ds, &b, &a, &c)?))
    })?;
    let c = ExperimentConfig { lambdas: vec![lambda], ..cfg.clone() };
    Ok((mil_bag_accuracy(ds, train, test, &c)?, lambda))
}

/// First grid value with the best score.
fn choose_lambda(grid: &[f64], mut score: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &l in grid {
        let s = score(l)?;
        if s > best.0 {
            best = (s, l);
        }
    }
    Ok(best.1)
}

fn ssl_split(data: &LabeledData, l: usize, grid: &[f64], cfg: &ExperimentConfig, seed: u64) -> Result<(f64, f64)> {
    let (split, labeled) = crate::synthetic::make_ssl(data, l, seed)?;
    let p = data.dataset.latent_count();
    let transductive = |ld: &LabeledData, eval: &[usize], lambda: f64| -> Result<f64> {
        let c = ExperimentConfig { lambdas: vec![lambda], ..cfg.clone() };
        let res = run_experiment(&ld.dataset, None, &c)?;
        let pred: Vec<usize> = eval.iter().map(|&i| res.predictions[i]).collect();
        let truth: Vec<usize> = eval.iter().map(|&i| data.truth[i]).collect();
        accuracy(&pred, &truth)
    };
    // 2-fold choice of λ on the labeled points, when both halves can still
    // anchor every class.
    let lambda = if labeled.len() >= 2 * p {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); p];
        for &i in &labeled {
            by_class[data.truth[i]].push(i);
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for members in &mut by_class {
            members.shuffle(&mut rng);
            for (k, &i) in members.iter().enumerate() {
                if k % 2 == 0 { a.push(i) } else { b.push(i) }
            }
        }
        if b.iter().map(|&i| data.truth[i]).collect::<std::collections::BTreeSet<_>>().len() == p {
            let fa = ssl_from_indices(data, &a)?;
            let fb = ssl_from_indices(data, &b)?;
            choose_lambda(grid, |lambda| Ok(0.5 * (transductive(&fa, &b, lambda)? + transductive(&fb, &a, lambda)?)))?
        } else {
            grid[0]
        }
    } else {
        grid[0]
    };
    let unlabeled: Vec<usize> = (0..data.dataset.len()).filter(|i| labeled.binary_search(i).is_err()).collect();
    Ok((transductive(&split, &unlabeled, lambda)?, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gen_mil, MilSyntheticSpec};

    #[test]
    fn too_few_bags() {
        let data = gen_mil(&MilSyntheticSpec { n_pos_bags: 4, n_neg_bags: 4, ..MilSyntheticSpec::default() }).unwrap();
        let err = crossval(&data, Protocol::Mil10Split, &[1.0], &ExperimentConfig::default()).unwrap_err();
        assert!(err.to_string().contains("at least 10 bags"));
    }

    #[test]
    fn stratified_order() {
        let data = gen_mil(&MilSyntheticSpec { n_pos_bags: 5, n_neg_bags: 10, ..MilSyntheticSpec::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let order = stratified_shuffle(&data.dataset, &(0..15).collect::<Vec<_>>(), &mut rng);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..15).collect::<Vec<_>>());
        // Every window of three holds one positive bag.
        for w in order.chunks(3) {
            assert_eq!(w.iter().filter(|&&b| data.dataset.bags[b].label == 1).count(), 1);
        }
    }

    #[test]
    fn halves_keep_both_classes() {
        let data = gen_mil(&MilSyntheticSpec { n_pos_bags: 9, n_neg_bags: 9, ..MilSyntheticSpec::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = stratified_halves(&data.dataset, &(0..18).collect::<Vec<_>>(), &mut rng);
        assert_eq!(a.len() + b.len(), 18);
        for half in [&a, &b] {
            let pos = half.iter().filter(|&&g| data.dataset.bags[g].label == 1).count();
            assert!((4..=5).contains(&pos), "{pos} positive bags in {half:?}");
        }
    }
}
