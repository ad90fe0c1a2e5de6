//! `weaksup`: run relaxation experiments, baselines and evaluation protocols
//! on CSV or generated data and write reports.

mod args;

use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use weaksup::io::{read_dataset, read_precomputed};
use weaksup::kernel::{median_pairwise_distance, KernelSpec};
use weaksup::problem::{Task, WeightMode};
use weaksup_harness::crossval::{crossval, CvResult, Protocol};
use weaksup_harness::experiment::{run_experiment, ExperimentConfig, Mode};
use weaksup_harness::report::{emit_run, write_plot_csv, write_report, ExperimentRecord, Report};
use weaksup_harness::synthetic::{gen_clusters, gen_mil, make_ssl, LabeledData, MilSyntheticSpec, SyntheticSpec};
use weaksup_harness::HarnessError;

use args::{parse_kernel, parse_protocol, parse_synth, parse_weights, Cli, Command, Invalid, KernelArg, ProtocolArg, RunArgs, SynthTask};

/// Failure classes, mapped to exit codes 1 and 2.
enum Failure {
    Validation(String),
    Solver(String),
}

impl From<Invalid> for Failure {
    fn from(e: Invalid) -> Self {
        Failure::Validation(e.0)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_solver_error() {
            Failure::Solver(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<weaksup::Error> for Failure {
    fn from(e: weaksup::Error) -> Self {
        HarnessError::from(e).into()
    }
}

/// Write failures of the output directory are validation errors naming
/// `--out`.
fn out_err(e: HarnessError) -> Failure {
    if e.is_solver_error() {
        Failure::Solver(e.to_string())
    } else {
        Failure::Validation(format!("--out: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver error: {m}");
            ExitCode::from(2)
        }
    }
}

fn task_of(cmd: &Command) -> (Option<Task>, &RunArgs) {
    match cmd {
        Command::Cluster(a) => (Some(Task::Clustering), a),
        Command::Ssl(a) => (Some(Task::Ssl), a),
        Command::Mil(a) => (Some(Task::Mil), a),
        Command::Synth(a) | Command::Crossval(a) => (None, a),
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    let is_crossval = matches!(cmd, Command::Crossval(_));
    let (fixed_task, a) = task_of(&cmd);
    let weights = parse_weights(&a.weights)?;
    let mode: Mode = a.mode.parse().map_err(|e: HarnessError| Failure::Validation(format!("--mode: {e}")))?;
    let protocol = a.protocol.as_deref().map(parse_protocol).transpose()?;
    if protocol.is_some() && !is_crossval {
        return Err(Failure::Validation("--protocol: only valid with the crossval subcommand".into()));
    }
    let synth = a.synth.as_deref().map(parse_synth).transpose()?;
    let task = match (fixed_task, &synth, protocol) {
        (Some(t), _, _) => t,
        (None, _, Some(ProtocolArg::Mil)) => Task::Mil,
        (None, _, Some(ProtocolArg::Ssl(_))) => Task::Ssl,
        (None, Some(s), None) => match s.task {
            Some(SynthTask::Mil) => Task::Mil,
            Some(SynthTask::Ssl) => Task::Ssl,
            _ => Task::Clustering,
        },
        (None, None, None) => {
            return Err(Failure::Validation(
                if is_crossval { "--protocol: required with --data" } else { "--synth: required by the synth subcommand" }.into(),
            ))
        }
    };
    if matches!(cmd, Command::Synth(_)) && synth.is_none() {
        return Err(Failure::Validation("--synth: required by the synth subcommand".into()));
    }
    if a.prequantize.is_some() && task != Task::Clustering {
        return Err(Failure::Validation("--prequantize: only valid for clustering".into()));
    }
    for (flag, v) in [("--em-lambda", a.em_lambda), ("--gap-tol", a.gap_tol), ("--inner-tol", a.inner_tol)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Failure::Validation(format!("{flag}: must be positive, got {v}")));
        }
    }
    if a.max_iter == 0 {
        return Err(Failure::Validation("--max-iter: must be positive".into()));
    }
    let lambdas: Vec<f64> = match (&a.lambda, &a.lambda_grid) {
        (Some(l), _) => vec![*l],
        (None, Some(g)) => g.clone(),
        (None, None) => return Err(Failure::Validation("--lambda or --lambda-grid is required".into())),
    };
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        let flag = if a.lambda.is_some() { "--lambda" } else { "--lambda-grid" };
        return Err(Failure::Validation(format!("{flag}: values must be positive")));
    }

    let data = load(a, task, weights, synth.as_ref())?;
    let kernel = match parse_kernel(&a.kernel)? {
        KernelArg::Ready(k) => k,
        KernelArg::RbfMedian => {
            let x = data
                .dataset
                .dense_features()
                .ok_or_else(|| Failure::Validation("--kernel: rbf needs explicit features".into()))?;
            KernelSpec::Gaussian { width: median_pairwise_distance(x) }
        }
    };
    // A precomputed kernel read from the manifest lives in the dataset.
    let kernel = match kernel {
        KernelSpec::Precomputed { .. } => KernelSpec::Precomputed { path: None },
        k => k,
    };
    let cfg = ExperimentConfig {
        task,
        kernel,
        lambdas: lambdas.clone(),
        em_lambda: a.em_lambda,
        mode,
        weights,
        gap_tol: a.gap_tol,
        inner_tol: a.inner_tol,
        max_iter: a.max_iter,
        seed: a.seed,
        prequantize: a.prequantize,
        ..ExperimentConfig::default()
    };
    let truth = data.truth.as_deref();

    let run_protocol = is_crossval || (a.lambda.is_none() && matches!(task, Task::Mil | Task::Ssl));
    if run_protocol {
        let data = data.labeled().ok_or_else(|| {
            Failure::Validation("--data: evaluation protocols need a truth column (or MIL bag labels)".into())
        })?;
        let protocol = match (task, protocol) {
            (Task::Mil, _) => Protocol::Mil10Split,
            (Task::Ssl, Some(ProtocolArg::Ssl(Some(l)))) => Protocol::SslFixedLabeled(l),
            (Task::Ssl, _) => Protocol::SslFixedLabeled(a.labeled.unwrap_or_else(|| default_labeled(&data))),
            (Task::Clustering, _) => return Err(Failure::Validation("--protocol: clustering has no evaluation protocol".into())),
        };
        let cv = crossval(&data, protocol, &lambdas, &cfg)?;
        emit_cv(&a.out, &cv, &cfg)?;
        println!(
            "{} {}: accuracy {:.4} ± {:.4} over {} splits",
            task,
            mode,
            cv.mean,
            cv.std,
            cv.accuracies.len()
        );
        return Ok(());
    }

    // One run per λ: a single value, or every grid value for clustering.
    let mut records = Vec::new();
    let mut last = None;
    for &lambda in &lambdas {
        let c = ExperimentConfig { lambdas: vec![lambda], ..cfg.clone() };
        let res = run_experiment(&data.dataset, truth, &c)?;
        records.push(ExperimentRecord::from_run(&res));
        let acc = res.metrics.as_ref().map_or("n/a".to_string(), |m| format!("{:.4}", m.accuracy));
        println!("{task} {mode} lambda {lambda}: accuracy {acc}");
        last = Some(res);
    }
    let res = last.expect("at least one lambda");
    emit_run(&a.out, &data.dataset, &res, a.emit_z).map_err(out_err)?;
    write_report(&a.out, &Report { experiments: records }).map_err(out_err)?;
    Ok(())
}

/// Data plus optional truth as read or generated.
struct Loaded {
    dataset: weaksup::problem::WeakDataset,
    truth: Option<Vec<usize>>,
}

impl Loaded {
    /// Labeled view for the protocols: MIL bag labels suffice for bag-level
    /// accuracy, so missing truth is filled with the bag labels.
    fn labeled(&self) -> Option<LabeledData> {
        let truth = match (&self.truth, self.dataset.labels.is_mil()) {
            (Some(t), _) => t.clone(),
            (None, true) => {
                let bag = self.dataset.instance_bags();
                bag.iter().map(|&b| self.dataset.bags[b].label).collect()
            }
            (None, false) => return None,
        };
        Some(LabeledData { dataset: self.dataset.clone(), truth })
    }
}

fn default_labeled(data: &LabeledData) -> usize {
    let unlabeled = data
        .dataset
        .instance_feasible()
        .iter()
        .filter(|f| f.len() > 1)
        .count();
    let given = data.dataset.len() - unlabeled;
    if given >= data.dataset.latent_count() {
        given
    } else {
        2 * data.dataset.latent_count()
    }
}

fn load(a: &RunArgs, task: Task, weights: WeightMode, synth: Option<&args::SynthArgs>) -> Result<Loaded, Failure> {
    if let Some(s) = synth {
        let seed = s.seed.unwrap_or(a.seed);
        return match task {
            Task::Mil => {
                let d = gen_mil(&MilSyntheticSpec {
                    n_pos_bags: s.pos_bags,
                    n_neg_bags: s.neg_bags,
                    bag_size: s.bag_size,
                    witness_rate: s.witness,
                    separation: s.separation,
                    sigma: s.sigma,
                    dim: s.dim,
                    weights,
                    seed,
                })
                .map_err(|e| Failure::Validation(format!("--synth: {e}")))?;
                Ok(Loaded { dataset: d.dataset, truth: Some(d.truth) })
            }
            Task::Clustering | Task::Ssl => {
                let d = gen_clusters(&SyntheticSpec {
                    n_points: s.n,
                    n_clusters: s.k,
                    separation: s.separation,
                    sigma: s.sigma,
                    noise_dims: s.noise_dims,
                    noise_sigma: s.noise_sigma,
                    shape: s.shape,
                    seed,
                })
                .map_err(|e| Failure::Validation(format!("--synth: {e}")))?;
                if task == Task::Ssl {
                    let l = s.labeled.unwrap_or(2 * s.k);
                    let (d, _) = make_ssl(&d, l, seed).map_err(|e| Failure::Validation(format!("--synth: {e}")))?;
                    Ok(Loaded { dataset: d.dataset, truth: Some(d.truth) })
                } else {
                    Ok(Loaded { dataset: d.dataset, truth: Some(d.truth) })
                }
            }
        };
    }
    let path = a.data.as_deref().expect("clap requires --data or --synth");
    if task == Task::Clustering && a.classes.is_none() {
        return Err(Failure::Validation("--classes: required for clustering data read with --data".into()));
    }
    let loaded = match parse_kernel(&a.kernel)? {
        KernelArg::Ready(KernelSpec::Precomputed { path: Some(kp) }) => read_precomputed(&kp, path, task, a.classes, weights),
        _ => read_dataset(path, task, a.classes, weights),
    }
    .map_err(|e| Failure::Validation(format!("--data: {e}")))?;
    if let Some(t) = &loaded.truth {
        if t.iter().any(|&l| l >= loaded.dataset.latent_count()) {
            return Err(Failure::Validation("--data: truth label outside the latent classes".into()));
        }
    }
    Ok(Loaded { dataset: loaded.dataset, truth: loaded.truth })
}

fn emit_cv(dir: &Path, cv: &CvResult, cfg: &ExperimentConfig) -> Result<(), Failure> {
    write_report(dir, &Report { experiments: vec![ExperimentRecord::from_cv(cv, cfg)] }).map_err(out_err)?;
    let rows: Vec<Vec<String>> = cv
        .accuracies
        .iter()
        .zip(&cv.chosen_lambdas)
        .enumerate()
        .map(|(s, (acc, l))| vec![s.to_string(), acc.to_string(), l.to_string()])
        .collect();
    write_plot_csv(&dir.join("splits.csv"), &["split", "accuracy", "lambda"], &rows).map_err(out_err)
}
