//! The churn engine: train for a period, score the active features,
//! eliminate the least useful, redraw replacements from the candidate set
//! and splice weights, until a stop rule fires.
//!
//! Set bookkeeping per step, writing `P` for the pool, `F` for the active
//! set, `Fbar` for all eliminated features and `B` for the best eliminated:
//!
//! 1. train the model for one period, starting from the current weights;
//! 2. score every active feature's usefulness;
//! 3. move the `e` least useful features from `F` to `Fbar`, remembering
//!    their scores;
//! 4. overwrite `B` with the `m` highest-scored members of `Fbar`;
//! 5. recompute the candidate set `C = ((P \ F) \ Fbar) ∪ B`;
//! 6. draw `e` distinct features uniformly from `C`; drawn members of `B`
//!    leave `Fbar` on re-entry;
//! 7. splice weights: retained features keep their weights bit-for-bit,
//!    incoming features get fresh initial weights;
//! 8. advance the step counter and apply the elimination schedule.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::models::{
    MlpModel, ModelError, RegressionModel, Targets, TrainBatch,
};
use crate::pool::{evaluate_column, FeatureDescriptor, FeaturePool, PoolError};
use crate::scalar::Scalar;
use crate::usefulness::{
    mlp_usefulness, rank_for_elimination, regression_usefulness, UsefulnessScore,
};

#[derive(Debug, Error)]
pub enum ChurnError {
    #[error("invalid churn configuration: {0}")]
    Config(String),
    #[error("training failed at churn step {step}: {source}")]
    Train {
        step: usize,
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("cannot draw {wanted} features from {available} candidates")]
    NotEnoughCandidates { wanted: usize, available: usize },
}

/// From this step count on, eliminate this many features per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleStage {
    pub at_step: usize,
    pub eliminations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop when the candidate set is no larger than the elimination count.
    CandidateExhaustion,
    /// Stop when training-set accuracy reaches the threshold.
    TrainAccuracy(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    CandidateExhaustion,
    AccuracyReached,
    MaxSteps,
    IterationBudget,
    WallClockBudget,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::CandidateExhaustion => "candidate-exhaustion",
            Termination::AccuracyReached => "accuracy-reached",
            Termination::MaxSteps => "max-steps",
            Termination::IterationBudget => "iteration-budget",
            Termination::WallClockBudget => "wall-clock-budget",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Mse,
    Accuracy,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

/// All hyperparameters of one churn run.
#[derive(Debug, Clone)]
pub struct ChurnConfig {
    /// Maximum feature degree of the pool this run draws from.
    pub degree: usize,
    /// Active-set size `K`.
    pub active_size: usize,
    /// Gradient-descent iterations per training period `I`.
    pub period_iterations: usize,
    /// Features eliminated per step `e` before any schedule stage applies.
    pub initial_eliminations: usize,
    /// Size `m` of the best-eliminated set kept in candidacy.
    pub best_retained: usize,
    /// Steps at which `e` drops to new values; thresholds strictly
    /// increasing, values strictly decreasing.
    pub schedule: Vec<ScheduleStage>,
    pub stop: StopRule,
    pub seed: u64,
    /// Safety cap on churn steps; defaults to `10 * pool / min(e)`.
    pub max_steps: Option<usize>,
    /// Optional hard cap on total training iterations.
    pub iteration_budget: Option<usize>,
    /// Optional wall-clock cap; checked after each training period.
    pub wall_clock_budget: Option<Duration>,
}

impl ChurnConfig {
    pub fn validate(&self, pool_len: usize) -> Result<(), ChurnError> {
        let fail = |msg: String| Err(ChurnError::Config(msg));
        if self.degree == 0 {
            return fail("degree must be >= 1".into());
        }
        if self.active_size == 0 || self.active_size > pool_len {
            return fail(format!(
                "active size must be in 1..={pool_len}, got {}",
                self.active_size
            ));
        }
        if self.period_iterations == 0 {
            return fail("period iterations must be >= 1".into());
        }
        if self.initial_eliminations == 0 || self.initial_eliminations > self.active_size {
            return fail(format!(
                "eliminations must be in 1..={}, got {}",
                self.active_size, self.initial_eliminations
            ));
        }
        let mut prev = ScheduleStage {
            at_step: 0,
            eliminations: self.initial_eliminations,
        };
        for stage in &self.schedule {
            if stage.at_step <= prev.at_step {
                return fail("schedule steps must be strictly increasing and positive".into());
            }
            if stage.eliminations == 0 || stage.eliminations >= prev.eliminations {
                return fail("schedule elimination counts must be strictly decreasing".into());
            }
            prev = *stage;
        }
        if let StopRule::TrainAccuracy(tau) = self.stop {
            if !(0.0..=1.0).contains(&tau) {
                return fail(format!("accuracy threshold must be in [0, 1], got {tau}"));
            }
        }
        if self.iteration_budget == Some(0) {
            return fail("iteration budget must be >= 1".into());
        }
        Ok(())
    }

    /// Elimination count in effect at churn step `step` (a step function of
    /// the schedule).
    pub fn eliminations_at(&self, step: usize) -> usize {
        let mut e = self.initial_eliminations;
        for stage in &self.schedule {
            if step >= stage.at_step {
                e = stage.eliminations;
            }
        }
        e
    }

    fn min_eliminations(&self) -> usize {
        self.schedule
            .last()
            .map(|s| s.eliminations)
            .unwrap_or(self.initial_eliminations)
    }

    fn default_max_steps(&self, pool_len: usize) -> usize {
        (10 * pool_len / self.min_eliminations()).max(1)
    }
}

/// How the initial active set is chosen.
#[derive(Debug, Clone, Copy)]
pub enum InitialSet<'s> {
    /// Draw `K` distinct features uniformly from the pool.
    Random,
    /// Use this exact feature list (indices into the pool).
    Explicit(&'s [usize]),
}

/// Live set state of a churn run: the active list `F` (positional, aligned
/// with the model weights), the eliminated map `Fbar` with the scores each
/// feature had when eliminated, the step counter and the current
/// elimination count.
#[derive(Debug, Clone)]
pub struct ChurnState<T> {
    active: Vec<usize>,
    eliminated: BTreeMap<usize, T>,
    step: usize,
    current_e: usize,
}

impl<T: Scalar> ChurnState<T> {
    /// Fresh state: the active set is drawn (or adopted), nothing is
    /// eliminated, the step counter is zero.
    pub fn init(
        pool_len: usize,
        config: &ChurnConfig,
        initial: InitialSet<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ChurnError> {
        config.validate(pool_len)?;
        let active = match initial {
            InitialSet::Random => {
                let mut drawn =
                    rand::seq::index::sample(rng, pool_len, config.active_size).into_vec();
                drawn.sort_unstable();
                drawn
            }
            InitialSet::Explicit(list) => {
                if list.len() != config.active_size {
                    return Err(ChurnError::Config(format!(
                        "initial active set has {} features, config wants {}",
                        list.len(),
                        config.active_size
                    )));
                }
                let mut seen = std::collections::HashSet::new();
                for &idx in list {
                    if idx >= pool_len {
                        return Err(ChurnError::Config(format!(
                            "initial feature index {idx} out of pool range {pool_len}"
                        )));
                    }
                    if !seen.insert(idx) {
                        return Err(ChurnError::Config(format!(
                            "duplicate initial feature index {idx}"
                        )));
                    }
                }
                list.to_vec()
            }
        };
        Ok(Self {
            active,
            eliminated: BTreeMap::new(),
            step: 0,
            current_e: config.initial_eliminations,
        })
    }

    /// Active pool indices, in weight-column order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Eliminated pool indices with the usefulness they had on elimination.
    pub fn eliminated(&self) -> &BTreeMap<usize, T> {
        &self.eliminated
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn current_eliminations(&self) -> usize {
        self.current_e
    }

    /// The `m` highest-scored eliminated features (ties broken by ascending
    /// pool index).
    pub fn best_eliminated(&self, m: usize) -> Vec<usize> {
        let mut entries: Vec<(usize, T)> =
            self.eliminated.iter().map(|(&i, &s)| (i, s)).collect();
        entries.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("stored scores are finite")
                .then(a.0.cmp(&b.0))
        });
        entries.truncate(m);
        let mut best: Vec<usize> = entries.into_iter().map(|(i, _)| i).collect();
        best.sort_unstable();
        best
    }

    /// Candidate pool indices `((P \ F) \ Fbar) ∪ B`, ascending.
    pub fn candidates(&self, pool_len: usize, best_retained: usize) -> Vec<usize> {
        let active: std::collections::HashSet<usize> = self.active.iter().copied().collect();
        let mut cands: Vec<usize> = (0..pool_len)
            .filter(|i| !active.contains(i) && !self.eliminated.contains_key(i))
            .collect();
        cands.extend(self.best_eliminated(best_retained));
        cands.sort_unstable();
        cands
    }
}

/// Raw inputs plus the feature pool; produces aligned train/test design
/// columns on demand, optionally standardized by train-column statistics.
pub struct DesignSource<'a, T> {
    pool: &'a FeaturePool,
    train_inputs: ArrayView2<'a, T>,
    test_inputs: ArrayView2<'a, T>,
    standardize: bool,
}

impl<'a, T: Scalar> DesignSource<'a, T> {
    pub fn new(
        pool: &'a FeaturePool,
        train_inputs: ArrayView2<'a, T>,
        test_inputs: ArrayView2<'a, T>,
        standardize: bool,
    ) -> Result<Self, ChurnError> {
        if train_inputs.ncols() != pool.base_dim() || test_inputs.ncols() != pool.base_dim() {
            return Err(ChurnError::Pool(PoolError::DimensionMismatch {
                expected: pool.base_dim(),
                found: if train_inputs.ncols() != pool.base_dim() {
                    train_inputs.ncols()
                } else {
                    test_inputs.ncols()
                },
            }));
        }
        Ok(Self {
            pool,
            train_inputs,
            test_inputs,
            standardize,
        })
    }

    /// Train and test columns for one pool feature. Standardization uses the
    /// train column's mean and sample deviation for both splits, so a
    /// feature's column is identical whenever it (re-)enters the active set.
    pub fn column_pair(&self, pool_index: usize) -> Result<(Array1<T>, Array1<T>), ChurnError> {
        let desc = self.pool.get(pool_index);
        let mut train = evaluate_column(desc, self.train_inputs)?;
        let mut test = evaluate_column(desc, self.test_inputs)?;
        if self.standardize {
            let n = T::from_usize(train.len());
            let mean = train.sum() / n;
            let ss = train
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .fold(T::zero(), |a, b| a + b);
            let sd = (ss / (n - T::one())).sqrt();
            if sd > T::zero() {
                train.mapv_inplace(|v| (v - mean) / sd);
                test.mapv_inplace(|v| (v - mean) / sd);
            }
        }
        Ok((train, test))
    }
}

/// Model-specific pieces of a churn step: training, scoring, weight splice
/// and the reported metric.
pub trait ChurnModel<T: Scalar> {
    fn train(&mut self, batch: &TrainBatch<'_, T>, iterations: usize) -> Result<(), ModelError>;
    fn usefulness(
        &self,
        batch: &TrainBatch<'_, T>,
        index: usize,
    ) -> Result<UsefulnessScore<T>, ModelError>;
    fn splice(&mut self, removed: &[usize], rng: &mut ChaCha8Rng) -> Result<(), ModelError>;
    fn metric(&self, batch: &TrainBatch<'_, T>) -> Result<T, ModelError>;
    fn metric_kind(&self) -> MetricKind;
}

impl<T: Scalar> ChurnModel<T> for RegressionModel<T> {
    fn train(&mut self, batch: &TrainBatch<'_, T>, iterations: usize) -> Result<(), ModelError> {
        RegressionModel::train(self, batch, iterations)
    }

    fn usefulness(
        &self,
        batch: &TrainBatch<'_, T>,
        index: usize,
    ) -> Result<UsefulnessScore<T>, ModelError> {
        regression_usefulness(self, batch, index)
    }

    fn splice(&mut self, removed: &[usize], _rng: &mut ChaCha8Rng) -> Result<(), ModelError> {
        RegressionModel::splice(self, removed)
    }

    fn metric(&self, batch: &TrainBatch<'_, T>) -> Result<T, ModelError> {
        self.mse_loss(batch)
    }

    fn metric_kind(&self) -> MetricKind {
        MetricKind::Mse
    }
}

impl<T: Scalar> ChurnModel<T> for MlpModel<T> {
    fn train(&mut self, batch: &TrainBatch<'_, T>, iterations: usize) -> Result<(), ModelError> {
        MlpModel::train(self, batch, iterations)
    }

    fn usefulness(
        &self,
        _batch: &TrainBatch<'_, T>,
        index: usize,
    ) -> Result<UsefulnessScore<T>, ModelError> {
        mlp_usefulness(self, index)
    }

    fn splice(&mut self, removed: &[usize], rng: &mut ChaCha8Rng) -> Result<(), ModelError> {
        self.splice_columns(removed, rng)
    }

    fn metric(&self, batch: &TrainBatch<'_, T>) -> Result<T, ModelError> {
        self.accuracy(batch)
    }

    fn metric_kind(&self) -> MetricKind {
        MetricKind::Accuracy
    }
}

/// One per-step metrics record. `swapped_out`/`swapped_in` are empty on the
/// final record (the closing training period performs no swap).
#[derive(Debug, Clone)]
pub struct StepRecord<T> {
    pub step: usize,
    pub cumulative_iterations: usize,
    pub train_metric: T,
    pub test_metric: T,
    pub current_e: usize,
    pub candidate_count: usize,
    pub swapped_out: Vec<(FeatureDescriptor, T)>,
    pub swapped_in: Vec<FeatureDescriptor>,
    /// Wall-clock milliseconds since the run started; reported in summaries
    /// but kept out of the metrics CSV so equal-seed runs are byte-identical.
    pub elapsed_ms: u64,
    pub termination: Option<Termination>,
}

/// What a swap phase did: which features left (with their scores), which
/// entered, the weight slots that were respliced (ascending), and how large
/// the candidate set was at draw time.
#[derive(Debug, Clone)]
pub struct SwapInfo<T> {
    pub swapped_out: Vec<(FeatureDescriptor, T)>,
    pub swapped_in: Vec<FeatureDescriptor>,
    pub slots: Vec<usize>,
    pub candidate_count: usize,
}

/// Final result of a churn run.
pub struct ChurnOutcome<T, M> {
    pub model: M,
    pub active: Vec<FeatureDescriptor>,
    pub records: Vec<StepRecord<T>>,
    pub termination: Termination,
    pub total_iterations: usize,
    pub elapsed: Duration,
    pub metric_kind: MetricKind,
}

/// Regression hyperparameters for a churn run.
#[derive(Debug, Clone, Copy)]
pub struct RegressionParams {
    pub learning_rate: f64,
}

/// MLP hyperparameters for a churn run.
#[derive(Debug, Clone, Copy)]
pub struct MlpParams {
    pub hidden: usize,
    pub classes: usize,
    pub lambda: f64,
    pub learning_rate: f64,
}

/// Everything a run needs besides the pool and the config: raw inputs and
/// targets for both splits, plus the standardization flag.
#[derive(Clone, Copy)]
pub struct RunData<'a, T> {
    pub train_inputs: ArrayView2<'a, T>,
    pub train_targets: Targets<'a, T>,
    pub test_inputs: ArrayView2<'a, T>,
    pub test_targets: Targets<'a, T>,
    pub standardize: bool,
}

/// A churn run in progress. Owns the model, the set state, the RNG and the
/// active design matrices; the raw data is borrowed.
pub struct ChurnRun<'a, T: Scalar, M> {
    pool: &'a FeaturePool,
    cfg: ChurnConfig,
    max_steps: usize,
    state: ChurnState<T>,
    model: M,
    rng: ChaCha8Rng,
    source: DesignSource<'a, T>,
    train_targets: Targets<'a, T>,
    test_targets: Targets<'a, T>,
    train_design: Array2<T>,
    test_design: Array2<T>,
    records: Vec<StepRecord<T>>,
    total_iterations: usize,
    started: Instant,
}

impl<'a, T: Scalar> ChurnRun<'a, T, RegressionModel<T>> {
    /// Set up a regression churn run (stop rule: candidate exhaustion).
    pub fn regression(
        pool: &'a FeaturePool,
        cfg: ChurnConfig,
        params: RegressionParams,
        data: RunData<'a, T>,
        initial: InitialSet<'_>,
    ) -> Result<Self, ChurnError> {
        if !matches!(cfg.stop, StopRule::CandidateExhaustion) {
            return Err(ChurnError::Config(
                "regression runs stop on candidate exhaustion".into(),
            ));
        }
        Self::new_inner(pool, cfg, data, initial, |k, rng| {
            RegressionModel::init(k, T::from_f64(params.learning_rate), rng)
        })
    }
}

impl<'a, T: Scalar> ChurnRun<'a, T, MlpModel<T>> {
    /// Set up a classification churn run (stop rule: train accuracy; the
    /// elimination count stays constant, so no schedule is allowed).
    pub fn classification(
        pool: &'a FeaturePool,
        cfg: ChurnConfig,
        params: MlpParams,
        data: RunData<'a, T>,
        initial: InitialSet<'_>,
    ) -> Result<Self, ChurnError> {
        if !matches!(cfg.stop, StopRule::TrainAccuracy(_)) {
            return Err(ChurnError::Config(
                "classification runs stop on a train-accuracy threshold".into(),
            ));
        }
        if !cfg.schedule.is_empty() {
            return Err(ChurnError::Config(
                "classification runs keep the elimination count constant".into(),
            ));
        }
        Self::new_inner(pool, cfg, data, initial, |k, rng| {
            MlpModel::init(
                k,
                params.hidden,
                params.classes,
                T::from_f64(params.lambda),
                T::from_f64(params.learning_rate),
                rng,
            )
        })
    }
}

impl<'a, T: Scalar, M: ChurnModel<T>> ChurnRun<'a, T, M> {
    fn new_inner(
        pool: &'a FeaturePool,
        cfg: ChurnConfig,
        data: RunData<'a, T>,
        initial: InitialSet<'_>,
        build_model: impl FnOnce(usize, &mut ChaCha8Rng) -> Result<M, ModelError>,
    ) -> Result<Self, ChurnError> {
        cfg.validate(pool.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let state = ChurnState::init(pool.len(), &cfg, initial, &mut rng)?;
        let model = build_model(cfg.active_size, &mut rng)?;
        let source = DesignSource::new(pool, data.train_inputs, data.test_inputs, data.standardize)?;

        let k = cfg.active_size;
        let mut train_design = Array2::zeros((data.train_inputs.nrows(), k));
        let mut test_design = Array2::zeros((data.test_inputs.nrows(), k));
        for (slot, &idx) in state.active().iter().enumerate() {
            let (ctr, cte) = source.column_pair(idx)?;
            train_design.column_mut(slot).assign(&ctr);
            test_design.column_mut(slot).assign(&cte);
        }

        let max_steps = cfg.max_steps.unwrap_or_else(|| cfg.default_max_steps(pool.len()));
        Ok(Self {
            pool,
            max_steps,
            state,
            model,
            rng,
            source,
            train_targets: data.train_targets,
            test_targets: data.test_targets,
            train_design,
            test_design,
            records: Vec::new(),
            total_iterations: 0,
            started: Instant::now(),
            cfg,
        })
    }

    pub fn state(&self) -> &ChurnState<T> {
        &self.state
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn config(&self) -> &ChurnConfig {
        &self.cfg
    }

    pub fn records(&self) -> &[StepRecord<T>] {
        &self.records
    }

    pub fn total_iterations(&self) -> usize {
        self.total_iterations
    }

    /// Current candidate set (recomputed, never cached).
    pub fn candidates(&self) -> Vec<usize> {
        self.state.candidates(self.pool.len(), self.cfg.best_retained)
    }

    /// Descriptors of the active set, in weight-column order.
    pub fn active_descriptors(&self) -> Vec<FeatureDescriptor> {
        self.state
            .active()
            .iter()
            .map(|&i| self.pool.get(i).clone())
            .collect()
    }

    /// Train for one period (respecting any iteration budget) and return
    /// the train/test metrics.
    pub fn train_period(&mut self) -> Result<(T, T), ChurnError> {
        let iterations = match self.cfg.iteration_budget {
            Some(budget) => self
                .cfg
                .period_iterations
                .min(budget.saturating_sub(self.total_iterations)),
            None => self.cfg.period_iterations,
        };
        debug_assert!(iterations > 0, "termination checks keep budgets positive");
        let step = self.state.step;
        let train_batch = TrainBatch::new(self.train_design.view(), self.train_targets.reborrow())?;
        self.model
            .train(&train_batch, iterations)
            .map_err(|source| ChurnError::Train { step, source })?;
        self.total_iterations += iterations;
        let train_metric = self.model.metric(&train_batch)?;
        let test_batch = TrainBatch::new(self.test_design.view(), self.test_targets.reborrow())?;
        let test_metric = self.model.metric(&test_batch)?;
        Ok((train_metric, test_metric))
    }

    /// Score, eliminate, redraw and splice. Callers are responsible for the
    /// loop guard; drawing more features than there are candidates is an
    /// error, not a panic.
    pub fn swap_phase(&mut self) -> Result<SwapInfo<T>, ChurnError> {
        let e = self.state.current_e;
        let train_batch = TrainBatch::new(self.train_design.view(), self.train_targets.reborrow())?;
        let scores: Vec<UsefulnessScore<T>> = (0..self.state.active.len())
            .map(|i| self.model.usefulness(&train_batch, i))
            .collect::<Result<_, _>>()?;
        let slots = rank_for_elimination(&scores, e)?;

        let mut swapped_out = Vec::with_capacity(e);
        for &slot in &slots {
            let pool_idx = self.state.active[slot];
            self.state.eliminated.insert(pool_idx, scores[slot].value);
            swapped_out.push((self.pool.get(pool_idx).clone(), scores[slot].value));
        }

        let candidates = self.candidates();
        if candidates.len() < slots.len() {
            return Err(ChurnError::NotEnoughCandidates {
                wanted: slots.len(),
                available: candidates.len(),
            });
        }
        let drawn: Vec<usize> = rand::seq::index::sample(&mut self.rng, candidates.len(), slots.len())
            .iter()
            .map(|i| candidates[i])
            .collect();

        let mut swapped_in = Vec::with_capacity(drawn.len());
        for (&slot, &incoming) in slots.iter().zip(&drawn) {
            self.state.eliminated.remove(&incoming);
            self.state.active[slot] = incoming;
            let (ctr, cte) = self.source.column_pair(incoming)?;
            self.train_design.column_mut(slot).assign(&ctr);
            self.test_design.column_mut(slot).assign(&cte);
            swapped_in.push(self.pool.get(incoming).clone());
        }
        self.model.splice(&slots, &mut self.rng)?;

        self.state.step += 1;
        self.state.current_e = self.cfg.eliminations_at(self.state.step);
        self.debug_check_invariants();

        Ok(SwapInfo {
            swapped_out,
            swapped_in,
            slots,
            candidate_count: candidates.len(),
        })
    }

    /// One full churn step: train a period, then swap. Returns the pushed
    /// metrics record.
    pub fn churn_step(&mut self) -> Result<&StepRecord<T>, ChurnError> {
        let (train_metric, test_metric) = self.train_period()?;
        let e = self.state.current_e;
        let swap = self.swap_phase()?;
        self.push_record(train_metric, test_metric, e, Some(swap), None);
        Ok(self.records.last().expect("record just pushed"))
    }

    /// Drive the run to termination.
    pub fn run(mut self) -> Result<ChurnOutcome<T, M>, ChurnError> {
        loop {
            let (train_metric, test_metric) = self.train_period()?;
            if let Some(reason) = self.check_termination(train_metric) {
                let e = self.state.current_e;
                self.push_record(train_metric, test_metric, e, None, Some(reason));
                let metric_kind = self.model.metric_kind();
                return Ok(ChurnOutcome {
                    active: self.active_descriptors(),
                    model: self.model,
                    records: self.records,
                    termination: reason,
                    total_iterations: self.total_iterations,
                    elapsed: self.started.elapsed(),
                    metric_kind,
                });
            }
            let e = self.state.current_e;
            let swap = self.swap_phase()?;
            self.push_record(train_metric, test_metric, e, Some(swap), None);
        }
    }

    fn check_termination(&self, train_metric: T) -> Option<Termination> {
        if let StopRule::TrainAccuracy(tau) = self.cfg.stop {
            if train_metric.as_f64() >= tau {
                return Some(Termination::AccuracyReached);
            }
        }
        if self.candidates().len() <= self.state.current_e {
            return Some(Termination::CandidateExhaustion);
        }
        if let Some(budget) = self.cfg.iteration_budget {
            if self.total_iterations >= budget {
                return Some(Termination::IterationBudget);
            }
        }
        if let Some(limit) = self.cfg.wall_clock_budget {
            if self.started.elapsed() >= limit {
                return Some(Termination::WallClockBudget);
            }
        }
        if self.state.step >= self.max_steps {
            return Some(Termination::MaxSteps);
        }
        None
    }

    fn push_record(
        &mut self,
        train_metric: T,
        test_metric: T,
        current_e: usize,
        swap: Option<SwapInfo<T>>,
        termination: Option<Termination>,
    ) {
        let (swapped_out, swapped_in, candidate_count) = match swap {
            Some(info) => (info.swapped_out, info.swapped_in, info.candidate_count),
            None => (Vec::new(), Vec::new(), self.candidates().len()),
        };
        self.records.push(StepRecord {
            step: self.records.len(),
            cumulative_iterations: self.total_iterations,
            train_metric,
            test_metric,
            current_e,
            candidate_count,
            swapped_out,
            swapped_in,
            elapsed_ms: self.started.elapsed().as_millis() as u64,
            termination,
        });
    }

    fn debug_check_invariants(&self) {
        #[cfg(debug_assertions)]
        {
            use std::collections::HashSet;
            let active: HashSet<usize> = self.state.active.iter().copied().collect();
            assert_eq!(active.len(), self.state.active.len(), "active set has duplicates");
            assert!(
                active.iter().all(|i| !self.state.eliminated.contains_key(i)),
                "active and eliminated sets overlap"
            );
        }
    }
}
