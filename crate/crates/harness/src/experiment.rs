//! End-to-end experiment driver: relaxation, rounding and EM, or one of the
//! baselines, followed by metrics.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weaksup::inner::{InnerConfig, InnerTraceRow};
use weaksup::kernel::{classifier_features, compute_gram, reweight, FeatureMap, KernelSpec};
use weaksup::kmeans::kmeans;
use weaksup::outer::{solve_path, OuterConfig, OuterProblem, OuterTraceRow};
use weaksup::problem::{build_reduction, Bag, Features, LabelSpace, Task, WeakDataset, WeightMode};
use weaksup::rounding::{em_refine, spectral_round, EMConfig};
use weaksup::softmax::{Assignment, Classifier};

use crate::error::{HarnessError, Result};
use crate::metrics::{accuracy, accuracy_best_perm, confusion, kmeans_baseline, per_class_accuracy, Metrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Ours,
    OursNoIntercept,
    EmRandom,
    KMeans,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ours => "ours",
            Mode::OursNoIntercept => "ours_no_intercept",
            Mode::EmRandom => "em_random",
            Mode::KMeans => "kmeans",
        })
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(Mode::Ours),
            "ours_no_intercept" => Ok(Mode::OursNoIntercept),
            "em_random" => Ok(Mode::EmRandom),
            "kmeans" => Ok(Mode::KMeans),
            _ => Err(HarnessError::Spec(format!(
                "unknown mode {s:?} (expected ours, ours_no_intercept, em_random or kmeans)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub kernel: KernelSpec,
    /// Relaxation `λ`, solved in this order with warm starts; the last value
    /// is the one rounded.
    pub lambdas: Vec<f64>,
    /// Ridge weight of the EM classifier.
    pub em_lambda: f64,
    pub mode: Mode,
    /// Weight mode used when the protocol re-weights sub-datasets.
    pub weights: WeightMode,
    pub gap_tol: f64,
    pub inner_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Relax on `M` k-means centers instead of the instances (clustering).
    pub prequantize: Option<usize>,
    /// Relative tolerance of kernel factorisations.
    pub factor_tol: f64,
    pub em_max_alt: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Clustering,
            kernel: KernelSpec::Linear,
            lambdas: vec![10.0],
            em_lambda: 1e-2,
            mode: Mode::Ours,
            weights: WeightMode::Uniform,
            gap_tol: 1e-3,
            inner_tol: 1e-9,
            max_iter: 500,
            seed: 0,
            prequantize: None,
            factor_tol: 1e-8,
            em_max_alt: 50,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(HarnessError::Spec("lambda values must be positive and finite".into()));
        }
        if !(self.em_lambda > 0.0) || !(self.gap_tol > 0.0) || !(self.inner_tol > 0.0) || self.max_iter == 0 {
            return Err(HarnessError::Spec("em_lambda, tolerances and max_iter must be positive".into()));
        }
        if self.prequantize.is_some() && self.task != Task::Clustering {
            return Err(HarnessError::Spec("prequantization applies to clustering only".into()));
        }
        self.kernel.validate()?;
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        *self.lambdas.last().unwrap_or(&f64::NAN)
    }
}

/// One `λ` of the relaxation path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub mode: Mode,
    pub task: Task,
    pub lambda: f64,
    pub seed: u64,
    /// Present when ground truth was supplied.
    pub metrics: Option<Metrics>,
    pub predictions: Vec<usize>,
    /// Largest classifier score per instance (k-means: minus the squared
    /// distance to the center).
    pub max_scores: Vec<f64>,
    pub objective: Option<f64>,
    pub gap: Option<f64>,
    pub wall_time_s: f64,
    /// Relaxed solution on the reduced rows.
    pub z: Option<DMatrix<f64>>,
    pub path: Vec<PathPoint>,
    pub outer_trace: Vec<OuterTraceRow>,
    pub inner_trace: Vec<(usize, InnerTraceRow)>,
    pub em_trace: Vec<f64>,
    pub classifier: Option<Classifier>,
    pub feature_map: Option<FeatureMap>,
}

/// Relaxation output: reduced `Z`, gap, value, traces.
struct Relaxed {
    z: DMatrix<f64>,
    labels: Vec<usize>,
    gap: f64,
    path: Vec<PathPoint>,
    outer_trace: Vec<OuterTraceRow>,
    inner_trace: Vec<(usize, InnerTraceRow)>,
}

fn relax(ds: &WeakDataset, cfg: &ExperimentConfig, intercept: bool) -> Result<Relaxed> {
    let gram = compute_gram(ds, &cfg.kernel)?;
    let k = reweight(&gram, &ds.weights)?;
    let (r, cons) = build_reduction(ds, cfg.task)?;
    let prob = OuterProblem::new(&k, r.clone(), cons, ds.latent_count(), cfg.factor_tol)?;
    let outer = OuterConfig {
        gap_tol: cfg.gap_tol,
        max_iter: cfg.max_iter,
        inner: InnerConfig {
            tol: cfg.inner_tol,
            certify: false,
            intercept,
            ..InnerConfig::default()
        },
        ..OuterConfig::default()
    };
    let results = solve_path(&prob, &cfg.lambdas, &outer)?;
    let path = results
        .iter()
        .map(|r| PathPoint {
            lambda: r.lambda,
            value: r.value,
            gap: r.gap,
            iterations: r.iterations,
        })
        .collect();
    let last = results.into_iter().last().unwrap();
    let rounded = spectral_round(last.z.z(), ds.latent_count(), &r, ds, cfg.seed)?;
    Ok(Relaxed {
        z: last.z.z().clone(),
        labels: rounded.labels,
        gap: last.gap,
        path,
        outer_trace: last.trace,
        inner_trace: last.inner_trace,
    })
}

/// Instances whose label is not observed: evaluation set of the
/// transductive semi-supervised protocol.
pub fn unlabeled_instances(ds: &WeakDataset) -> Vec<usize> {
    let feasible = ds.instance_feasible();
    (0..ds.len()).filter(|&n| feasible[n].len() > 1).collect()
}

/// Random feasible hard assignment.
pub fn random_assignment(ds: &WeakDataset, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = ds
        .instance_feasible()
        .iter()
        .map(|f| f[rng.random_range(0..f.len())])
        .collect();
    Assignment::from_labels(&labels, ds.latent_count())
}

fn argmax_rows(s: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    (0..s.nrows())
        .map(|i| {
            let mut best = 0;
            for p in 1..s.ncols() {
                if s[(i, p)] > s[(i, best)] {
                    best = p;
                }
            }
            (best, s[(i, best)])
        })
        .unzip()
}

/// Metrics of `pred` against `truth` under the task's evaluation rule:
/// best-permutation accuracy for clustering and for k-means, face-value
/// accuracy for MIL and on the unlabeled instances for SSL.
pub fn evaluate(ds: &WeakDataset, task: Task, mode: Mode, pred: &[usize], truth: &[usize]) -> Result<Metrics> {
    let accuracy_best = accuracy_best_perm(pred, truth)?;
    let acc = match (task, mode) {
        (Task::Clustering, _) | (_, Mode::KMeans) => accuracy_best,
        (Task::Mil, _) => accuracy(pred, truth)?,
        (Task::Ssl, _) => {
            let idx = unlabeled_instances(ds);
            let p: Vec<usize> = idx.iter().map(|&n| pred[n]).collect();
            let t: Vec<usize> = idx.iter().map(|&n| truth[n]).collect();
            accuracy(&p, &t)?
        }
    };
    Ok(Metrics {
        accuracy_best_perm: accuracy_best,
        accuracy: acc,
        per_class: per_class_accuracy(pred, truth)?,
        confusion: confusion(pred, truth)?,
        objective: None,
        gap: None,
        wall_time_s: 0.0,
    })
}

/// Run one experiment. `truth` (one latent label per instance) enables
/// metrics.
pub fn run_experiment(ds: &WeakDataset, truth: Option<&[usize]>, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    if let Some(t) = truth {
        if t.len() != ds.len() {
            return Err(HarnessError::Spec(format!("{} truth labels for {} instances", t.len(), ds.len())));
        }
    }
    let start = Instant::now();
    let mut out = ExperimentResult {
        mode: cfg.mode,
        task: cfg.task,
        lambda: cfg.lambda(),
        seed: cfg.seed,
        metrics: None,
        predictions: Vec::new(),
        max_scores: Vec::new(),
        objective: None,
        gap: None,
        wall_time_s: 0.0,
        z: None,
        path: Vec::new(),
        outer_trace: Vec::new(),
        inner_trace: Vec::new(),
        em_trace: Vec::new(),
        classifier: None,
        feature_map: None,
    };
    if cfg.mode == Mode::KMeans {
        let km = kmeans_baseline(ds, ds.latent_count(), cfg.seed, 10)?;
        let x = ds.dense_features().unwrap();
        out.max_scores = (0..ds.len())
            .map(|i| -(x.row(i) - km.centers.row(km.labels[i])).norm_squared())
            .collect();
        out.predictions = km.labels;
        out.objective = Some(km.distortion);
    } else {
        let intercept = cfg.mode != Mode::OursNoIntercept;
        let z0 = match cfg.mode {
            Mode::EmRandom => random_assignment(ds, cfg.seed),
            _ => {
                let relaxed = match cfg.prequantize {
                    Some(m) => {
                        let q = prequantize(ds, m, cfg.seed)?;
                        let mut r = relax(&q.dataset, cfg, intercept)?;
                        r.labels = q.members.iter().map(|&c| r.labels[c]).collect();
                        r
                    }
                    None => relax(ds, cfg, intercept)?,
                };
                out.gap = Some(relaxed.gap);
                out.z = Some(relaxed.z);
                out.path = relaxed.path;
                out.outer_trace = relaxed.outer_trace;
                out.inner_trace = relaxed.inner_trace;
                Assignment::from_labels(&relaxed.labels, ds.latent_count())
            }
        };
        let gram = match (&cfg.kernel, &ds.features) {
            (KernelSpec::Linear, Features::Dense(_)) => DMatrix::zeros(0, 0),
            _ => compute_gram(ds, &cfg.kernel)?,
        };
        let feats = classifier_features(ds, &cfg.kernel, &gram, cfg.factor_tol)?;
        let em_cfg = EMConfig {
            lambda: cfg.em_lambda,
            mil_constraints: cfg.task == Task::Mil,
            intercept,
            max_alt: cfg.em_max_alt,
            ..EMConfig::default()
        };
        let em = em_refine(&z0, ds, &feats.train, &em_cfg)?;
        let (pred, best) = argmax_rows(&em.classifier.scores(&feats.train));
        out.predictions = pred;
        out.max_scores = best;
        out.objective = em.trace.last().copied();
        out.em_trace = em.trace;
        out.classifier = Some(em.classifier);
        out.feature_map = Some(feats.map);
    }
    out.wall_time_s = start.elapsed().as_secs_f64();
    if let Some(t) = truth {
        let mut m = evaluate(ds, cfg.task, cfg.mode, &out.predictions, t)?;
        m.objective = out.objective;
        m.gap = out.gap;
        m.wall_time_s = out.wall_time_s;
        out.metrics = Some(m);
    }
    Ok(out)
}

/// Scores and unrestricted argmax labels of a trained run on new points.
pub fn predict_rows(res: &ExperimentResult, x: &DMatrix<f64>) -> Result<(Vec<usize>, Vec<f64>)> {
    let (Some(c), Some(map)) = (&res.classifier, &res.feature_map) else {
        return Err(HarnessError::Spec(format!("mode {} has no classifier", res.mode)));
    };
    let phi = map.map_rows(x)?;
    Ok(argmax_rows(&c.scores(&phi)))
}

/// Centers of a k-means quantization, as a weighted clustering dataset.
#[derive(Clone, Debug)]
pub struct Prequantized {
    /// One instance per center, weights proportional to cluster masses.
    pub dataset: WeakDataset,
    /// Center of every original instance.
    pub members: Vec<usize>,
}

pub fn prequantize(ds: &WeakDataset, m: usize, seed: u64) -> Result<Prequantized> {
    let x = ds
        .dense_features()
        .ok_or_else(|| HarnessError::Spec("prequantization needs explicit features".into()))?;
    let n = x.nrows();
    if m >= n || m < ds.latent_count() {
        return Err(HarnessError::Spec(format!(
            "prequantize needs {} ≤ M < N = {n}, got M = {m}",
            ds.latent_count()
        )));
    }
    let res = kmeans(x, m, 10, 300, seed)?;
    let mut mass = vec![0usize; m];
    for &c in &res.labels {
        mass[c] += 1;
    }
    // Empty centers cannot occur after Lloyd re-seeding, but keep only
    // populated ones to be safe.
    let kept: Vec<usize> = (0..m).filter(|&c| mass[c] > 0).collect();
    let mut new_index = vec![usize::MAX; m];
    for (i, &c) in kept.iter().enumerate() {
        new_index[c] = i;
    }
    let centers = res.centers.select_rows(kept.iter());
    let bags = vec![Bag {
        id: "centers".into(),
        label: 0,
        members: (0..kept.len()).collect(),
    }];
    let mut dataset = WeakDataset::new(
        Features::Dense(centers),
        bags,
        LabelSpace::clustering(ds.latent_count())?,
        WeightMode::Uniform,
    )?;
    for (i, &c) in kept.iter().enumerate() {
        dataset.weights[i] = mass[c] as f64 / n as f64;
    }
    Ok(Prequantized {
        dataset,
        members: res.labels.iter().map(|&c| new_index[c]).collect(),
    })
}
