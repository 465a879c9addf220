//! Experiment orchestration: builds pools and datasets, drives churn and
//! baseline runs, and writes per-trial metrics, summaries and model
//! snapshots.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use churn_core::churn::{
    ChurnError, ChurnOutcome, ChurnRun, InitialSet, MetricKind, MlpParams, RegressionParams,
    RunData, StepRecord, Termination,
};
use churn_core::data::{
    load_idx, reduce_images, split_dataset, synth_regression, ImageDataset, RegressionDataset,
    SynthConfig,
};
use churn_core::metrics::{export_metrics, write_summary, RunSummary};
use churn_core::models::{
    write_mlp_snapshot, write_regression_snapshot, MlpModel, ModelError, RegressionModel, Targets,
    TrainBatch,
};
use churn_core::pool::{
    column_deviations, deviation_filter, deviation_filter_from_stds, evaluate_design_matrix,
    FeatureDescriptor, FeaturePool,
};
use churn_core::Real;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Budget, ExperimentConfig, ExperimentKind};
use crate::error::CliError;

/// Result of one trial, echoed to stdout and used by tests.
pub struct TrialOutput {
    pub seed: u64,
    pub summary: RunSummary,
    pub metrics_path: PathBuf,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialOutput>, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        CliError::Data(format!("cannot create {}: {e}", cfg.out_dir.display()))
    })?;
    match cfg.experiment {
        ExperimentKind::Regression => regression_trials(cfg),
        ExperimentKind::MnistH20 | ExperimentKind::MnistH5 => mnist_churn_trials(cfg),
        ExperimentKind::BaselineRegression => baseline_regression_trials(cfg),
        ExperimentKind::BaselineMlp => baseline_mlp_trials(cfg),
    }
}

fn synth_dataset(cfg: &ExperimentConfig) -> Result<RegressionDataset<Real>, CliError> {
    let synth = SynthConfig {
        base_features: cfg.base_features,
        degree: cfg.degree,
        support: cfg.synth_support,
        train_n: cfg.synth_train_n,
        test_n: cfg.synth_test_n,
        noise_std: cfg.noise_std,
    };
    Ok(synth_regression::<Real>(&synth, cfg.data_seed)?)
}

fn regression_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialOutput>, CliError> {
    let dataset = synth_dataset(cfg)?;
    let pool = FeaturePool::multinomial(cfg.base_features, cfg.degree)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut outputs = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let churn_cfg = cfg.churn_config(trial);
        let data = RunData {
            train_inputs: dataset.train_inputs.view(),
            train_targets: Targets::Values(dataset.train_targets.view()),
            test_inputs: dataset.test_inputs.view(),
            test_targets: Targets::Values(dataset.test_targets.view()),
            standardize: cfg.standardize,
        };
        let run = ChurnRun::regression(
            &pool,
            churn_cfg,
            RegressionParams {
                learning_rate: cfg.learning_rate,
            },
            data,
            InitialSet::Random,
        )?;
        let outcome = run.run()?;
        outputs.push(write_regression_outputs(cfg, trial, &pool, outcome)?);
    }
    Ok(outputs)
}

/// The reduced image task plus its two-stage filtered feature pool.
pub struct MnistPipeline {
    pub train: ImageDataset<Real>,
    pub test: ImageDataset<Real>,
    /// Stage-1 surviving pixel positions, ascending.
    pub kept_pixels: Vec<usize>,
    /// Derived (square/pair) candidate count before the second filter.
    pub derived_candidates: usize,
    /// Pool: kept raw pixels first, then the surviving derived features.
    pub pool: FeaturePool,
    pub raw_count: usize,
}

/// Load, reduce, split and filter per the image experiment recipe:
/// deviation-filter the pixels on the training split, build square/pair
/// features over the survivors, and deviation-filter those as well.
pub fn build_mnist_pipeline(cfg: &ExperimentConfig) -> Result<MnistPipeline, CliError> {
    let raw = load_idx::<Real>(&cfg.train_images, &cfg.train_labels)?;
    let reduced = reduce_images(&raw, cfg.samples, cfg.data_seed, cfg.reduce)?;
    let (train, test) = split_dataset(&reduced, cfg.train_n, cfg.data_seed)?;
    let dim = train.width * train.height;

    let mut kept_pixels = deviation_filter(train.pixels.view(), cfg.coverage)
        .map_err(|e| CliError::Data(e.to_string()))?;
    kept_pixels.sort_unstable();

    let full = FeaturePool::pixels(&kept_pixels, dim).map_err(|e| CliError::Data(e.to_string()))?;
    let derived = &full.descriptors()[kept_pixels.len()..];

    // second-stage filter over the derived features, stds computed in
    // column chunks to bound memory
    let mut stds: Vec<Real> = Vec::with_capacity(derived.len());
    for chunk in derived.chunks(2048) {
        let cols = evaluate_design_matrix(chunk, train.pixels.view())
            .map_err(|e| CliError::Data(e.to_string()))?;
        stds.extend(
            column_deviations(cols.view()).map_err(|e| CliError::Data(e.to_string()))?,
        );
    }
    let mut kept_derived = deviation_filter_from_stds(&stds, cfg.coverage)
        .map_err(|e| CliError::Data(e.to_string()))?;
    kept_derived.sort_unstable();

    let mut descriptors: Vec<FeatureDescriptor> = kept_pixels
        .iter()
        .map(|&p| FeatureDescriptor::RawPixel(p))
        .collect();
    descriptors.extend(kept_derived.iter().map(|&i| derived[i].clone()));
    let raw_count = kept_pixels.len();
    let pool = FeaturePool::from_descriptors(descriptors, dim)
        .map_err(|e| CliError::Data(e.to_string()))?;

    Ok(MnistPipeline {
        train,
        test,
        kept_pixels,
        derived_candidates: derived.len(),
        pool,
        raw_count,
    })
}

/// Initial active set for the image experiments: every kept raw pixel plus
/// a seeded draw of derived features to fill the remaining slots. Falls
/// back to a uniform draw when the active size cannot hold all raw pixels.
pub fn mnist_initial_set(
    pipeline: &MnistPipeline,
    active_features: usize,
    seed: u64,
) -> Option<Vec<usize>> {
    if active_features < pipeline.raw_count || active_features > pipeline.pool.len() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1); // distinct from the engine's stream 0
    let derived_total = pipeline.pool.len() - pipeline.raw_count;
    let need = active_features - pipeline.raw_count;
    let mut extra: Vec<usize> = rand::seq::index::sample(&mut rng, derived_total, need)
        .iter()
        .map(|i| pipeline.raw_count + i)
        .collect();
    extra.sort_unstable();
    let mut initial: Vec<usize> = (0..pipeline.raw_count).collect();
    initial.extend(extra);
    Some(initial)
}

fn mnist_churn_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialOutput>, CliError> {
    let pipeline = build_mnist_pipeline(cfg)?;
    let mut outputs = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let churn_cfg = cfg.churn_config(trial);
        let initial = mnist_initial_set(&pipeline, cfg.active_features, cfg.trial_seed(trial));
        let initial_set = match &initial {
            Some(list) => InitialSet::Explicit(list),
            None => InitialSet::Random,
        };
        let data = RunData {
            train_inputs: pipeline.train.pixels.view(),
            train_targets: Targets::Labels(&pipeline.train.labels),
            test_inputs: pipeline.test.pixels.view(),
            test_targets: Targets::Labels(&pipeline.test.labels),
            standardize: cfg.standardize,
        };
        let run = ChurnRun::classification(
            &pipeline.pool,
            churn_cfg,
            MlpParams {
                hidden: cfg.hidden,
                classes: 10,
                lambda: cfg.lambda,
                learning_rate: cfg.learning_rate,
            },
            data,
            initial_set,
        )?;
        let outcome = run.run()?;
        outputs.push(write_mlp_outputs(cfg, trial, outcome)?);
    }
    Ok(outputs)
}

/// Iteration chunks for a budgeted baseline run: `period` iterations per
/// metrics snapshot, stopping exactly at an iteration budget or after the
/// period that crosses a wall-clock deadline.
struct BaselineLoop {
    budget: Budget,
    period: usize,
    done: usize,
    started: Instant,
}

impl BaselineLoop {
    fn new(budget: Budget, period: usize) -> Self {
        Self {
            budget,
            period,
            done: 0,
            started: Instant::now(),
        }
    }

    fn next_chunk(&self) -> Option<usize> {
        match self.budget {
            Budget::Iterations(total) => {
                let remaining = total - self.done;
                if remaining == 0 {
                    None
                } else {
                    Some(self.period.min(remaining))
                }
            }
            Budget::WallClockMs(ms) => {
                if self.started.elapsed().as_millis() as u64 >= ms {
                    None
                } else {
                    Some(self.period)
                }
            }
            Budget::Unlimited => Some(self.period),
        }
    }

    fn termination(&self) -> Termination {
        match self.budget {
            Budget::WallClockMs(_) => Termination::WallClockBudget,
            _ => Termination::IterationBudget,
        }
    }
}

fn baseline_regression_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialOutput>, CliError> {
    let dataset = synth_dataset(cfg)?;
    let pool = FeaturePool::multinomial(cfg.base_features, cfg.degree)
        .map_err(|e| CliError::Config(e.to_string()))?;

    // full-pool design matrices, standardized column-wise like the churn arm
    let source = churn_core::churn::DesignSource::new(
        &pool,
        dataset.train_inputs.view(),
        dataset.test_inputs.view(),
        cfg.standardize,
    )?;
    let mut train_design = Array2::<Real>::zeros((dataset.train_inputs.nrows(), pool.len()));
    let mut test_design = Array2::<Real>::zeros((dataset.test_inputs.nrows(), pool.len()));
    for idx in 0..pool.len() {
        let (ctr, cte) = source.column_pair(idx)?;
        train_design.column_mut(idx).assign(&ctr);
        test_design.column_mut(idx).assign(&cte);
    }

    let mut outputs = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let seed = cfg.trial_seed(trial);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model =
            RegressionModel::<Real>::init(pool.len(), cfg.learning_rate, &mut rng)
                .map_err(|e| CliError::Config(e.to_string()))?;
        let train_batch =
            TrainBatch::regression(train_design.view(), dataset.train_targets.view())
                .map_err(|e| CliError::Data(e.to_string()))?;
        let test_batch = TrainBatch::regression(test_design.view(), dataset.test_targets.view())
            .map_err(|e| CliError::Data(e.to_string()))?;

        let mut records: Vec<StepRecord<Real>> = Vec::new();
        let mut driver = BaselineLoop::new(cfg.budget, cfg.period_iters);
        // one trainer session for the whole budget so the normal-equation
        // factors are built once
        let mut trainer = RegressionTrainer::new(&mut model, &train_batch)
            .map_err(|e| CliError::Data(e.to_string()))?;
        while let Some(chunk) = driver.next_chunk() {
            trainer
                .run(chunk)
                .map_err(|e| divergence_at(records.len(), e))?;
            driver.done += chunk;
            let train_loss = trainer
                .model()
                .mse_loss(&train_batch)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let test_loss = trainer
                .model()
                .mse_loss(&test_batch)
                .map_err(|e| CliError::Data(e.to_string()))?;
            push_baseline_record(
                &mut records,
                driver.done,
                train_loss,
                test_loss,
                driver.started.elapsed().as_millis() as u64,
            );
        }
        drop(trainer);
        finish_baseline_records(&mut records, driver.termination());

        let summary = RunSummary::from_records(
            cfg.experiment.as_str(),
            seed,
            MetricKind::Mse,
            driver.termination().as_str(),
            driver.done,
            driver.started.elapsed().as_millis() as u64,
            &records,
        );
        let metrics_path = trial_paths(cfg, seed, &records, &summary)?;
        write_regression_snapshot(&model, pool.descriptors(), &snapshot_path(cfg, seed))
            .map_err(|e| CliError::Data(e.to_string()))?;
        outputs.push(TrialOutput {
            seed,
            summary,
            metrics_path,
        });
    }
    Ok(outputs)
}

fn baseline_mlp_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialOutput>, CliError> {
    // raw reduced pixels only: no feature pool, no deviation filtering
    let raw = load_idx::<Real>(&cfg.train_images, &cfg.train_labels)?;
    let reduced = reduce_images(&raw, cfg.samples, cfg.data_seed, cfg.reduce)?;
    let (train, test) = split_dataset(&reduced, cfg.train_n, cfg.data_seed)?;
    let dim = train.width * train.height;
    let descriptors: Vec<FeatureDescriptor> =
        (0..dim).map(FeatureDescriptor::RawPixel).collect();

    let mut outputs = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let seed = cfg.trial_seed(trial);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = MlpModel::<Real>::init(
            dim,
            cfg.hidden,
            10,
            cfg.lambda,
            cfg.learning_rate,
            &mut rng,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        let train_batch = TrainBatch::classification(train.pixels.view(), &train.labels)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let test_batch = TrainBatch::classification(test.pixels.view(), &test.labels)
            .map_err(|e| CliError::Data(e.to_string()))?;

        let mut records: Vec<StepRecord<Real>> = Vec::new();
        let mut driver = BaselineLoop::new(cfg.budget, cfg.period_iters);
        while let Some(chunk) = driver.next_chunk() {
            model
                .train(&train_batch, chunk)
                .map_err(|e| divergence_at(records.len(), e))?;
            driver.done += chunk;
            push_baseline_record(
                &mut records,
                driver.done,
                model.accuracy(&train_batch).map_err(|e| CliError::Data(e.to_string()))?,
                model.accuracy(&test_batch).map_err(|e| CliError::Data(e.to_string()))?,
                driver.started.elapsed().as_millis() as u64,
            );
        }
        finish_baseline_records(&mut records, driver.termination());

        let summary = RunSummary::from_records(
            cfg.experiment.as_str(),
            seed,
            MetricKind::Accuracy,
            driver.termination().as_str(),
            driver.done,
            driver.started.elapsed().as_millis() as u64,
            &records,
        );
        let metrics_path = trial_paths(cfg, seed, &records, &summary)?;
        write_mlp_snapshot(&model, &descriptors, &snapshot_path(cfg, seed))
            .map_err(|e| CliError::Data(e.to_string()))?;
        outputs.push(TrialOutput {
            seed,
            summary,
            metrics_path,
        });
    }
    Ok(outputs)
}

fn push_baseline_record(
    records: &mut Vec<StepRecord<Real>>,
    cumulative_iterations: usize,
    train_metric: Real,
    test_metric: Real,
    elapsed_ms: u64,
) {
    records.push(StepRecord {
        step: records.len(),
        cumulative_iterations,
        train_metric,
        test_metric,
        current_e: 0,
        candidate_count: 0,
        swapped_out: Vec::new(),
        swapped_in: Vec::new(),
        elapsed_ms,
        termination: None,
    });
}

fn finish_baseline_records(records: &mut [StepRecord<Real>], termination: Termination) {
    if let Some(last) = records.last_mut() {
        last.termination = Some(termination);
    }
}

fn divergence_at(step: usize, e: ModelError) -> CliError {
    match e {
        ModelError::Divergence { iteration } => CliError::Divergence(format!(
            "training diverged at snapshot {step}, iteration {iteration}"
        )),
        other => CliError::Data(other.to_string()),
    }
}

fn write_regression_outputs(
    cfg: &ExperimentConfig,
    trial: usize,
    _pool: &FeaturePool,
    outcome: ChurnOutcome<Real, RegressionModel<Real>>,
) -> Result<TrialOutput, CliError> {
    let seed = cfg.trial_seed(trial);
    let summary = RunSummary::from_records(
        cfg.experiment.as_str(),
        seed,
        outcome.metric_kind,
        outcome.termination.as_str(),
        outcome.total_iterations,
        outcome.elapsed.as_millis() as u64,
        &outcome.records,
    );
    let metrics_path = trial_paths(cfg, seed, &outcome.records, &summary)?;
    write_regression_snapshot(&outcome.model, &outcome.active, &snapshot_path(cfg, seed))
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(TrialOutput {
        seed,
        summary,
        metrics_path,
    })
}

fn write_mlp_outputs(
    cfg: &ExperimentConfig,
    trial: usize,
    outcome: ChurnOutcome<Real, MlpModel<Real>>,
) -> Result<TrialOutput, CliError> {
    let seed = cfg.trial_seed(trial);
    let summary = RunSummary::from_records(
        cfg.experiment.as_str(),
        seed,
        outcome.metric_kind,
        outcome.termination.as_str(),
        outcome.total_iterations,
        outcome.elapsed.as_millis() as u64,
        &outcome.records,
    );
    let metrics_path = trial_paths(cfg, seed, &outcome.records, &summary)?;
    write_mlp_snapshot(&outcome.model, &outcome.active, &snapshot_path(cfg, seed))
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(TrialOutput {
        seed,
        summary,
        metrics_path,
    })
}

fn trial_paths(
    cfg: &ExperimentConfig,
    seed: u64,
    records: &[StepRecord<Real>],
    summary: &RunSummary,
) -> Result<PathBuf, CliError> {
    let metrics_path = cfg.out_dir.join(format!("metrics_seed{seed}.csv"));
    export_metrics(records, &metrics_path)?;
    let summary_path = cfg.out_dir.join(format!("summary_seed{seed}.json"));
    write_summary(summary, &summary_path)?;
    Ok(metrics_path)
}

fn snapshot_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("model_seed{seed}.txt"))
}

impl From<ChurnError> for CliError {
    fn from(e: ChurnError) -> Self {
        match &e {
            ChurnError::Train {
                source: ModelError::Divergence { .. },
                ..
            } => CliError::Divergence(e.to_string()),
            ChurnError::Model(ModelError::Divergence { .. }) => CliError::Divergence(e.to_string()),
            ChurnError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
