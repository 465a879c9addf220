//! Flat key-value experiment configs: one `key = value` per line, `#`
//! comments. Parse errors carry line numbers.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use churn_core::churn::{ChurnConfig, ScheduleStage, StopRule};
use churn_core::data::ReduceMethod;

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Regression,
    MnistH20,
    MnistH5,
    BaselineRegression,
    BaselineMlp,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Regression => "regression",
            ExperimentKind::MnistH20 => "mnist-h20",
            ExperimentKind::MnistH5 => "mnist-h5",
            ExperimentKind::BaselineRegression => "baseline-regression",
            ExperimentKind::BaselineMlp => "baseline-mlp",
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(
            self,
            ExperimentKind::MnistH20 | ExperimentKind::MnistH5 | ExperimentKind::BaselineMlp
        )
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regression" => Ok(ExperimentKind::Regression),
            "mnist-h20" => Ok(ExperimentKind::MnistH20),
            "mnist-h5" => Ok(ExperimentKind::MnistH5),
            "baseline-regression" => Ok(ExperimentKind::BaselineRegression),
            "baseline-mlp" => Ok(ExperimentKind::BaselineMlp),
            other => Err(format!(
                "unknown experiment `{other}` (expected regression, mnist-h20, mnist-h5, \
                 baseline-regression or baseline-mlp)"
            )),
        }
    }
}

/// Training budget for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Unlimited,
    Iterations(usize),
    WallClockMs(u64),
}

/// Everything one experiment needs, parsed from a config file plus CLI
/// overrides.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub trials: usize,
    pub budget: Budget,

    // churn hyperparameters
    pub degree: usize,
    pub active_features: usize,
    pub period_iters: usize,
    pub eliminate: usize,
    pub best_retained: usize,
    pub schedule: Vec<ScheduleStage>,
    pub stop_tau: f64,
    pub max_steps: Option<usize>,

    // model hyperparameters
    pub learning_rate: f64,
    pub lambda: f64,
    pub hidden: usize,
    pub standardize: bool,

    // data settings
    pub data_seed: u64,
    pub base_features: usize,
    pub synth_support: usize,
    pub synth_train_n: usize,
    pub synth_test_n: usize,
    pub noise_std: f64,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub samples: usize,
    pub train_n: usize,
    pub reduce: ReduceMethod,
    pub coverage: f64,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(None, format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_pretty(&text)
    }

    pub fn from_str_pretty(text: &str) -> Result<Self, ConfigError> {
        let mut values: HashMap<String, (usize, String)> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(Some(line_no), format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if value.is_empty() {
                return Err(err(Some(line_no), format!("key `{key}` has no value")));
            }
            if values.insert(key.clone(), (line_no, value)).is_some() {
                return Err(err(Some(line_no), format!("duplicate key `{key}`")));
            }
        }
        Self::from_values(values)
    }

    fn from_values(mut values: HashMap<String, (usize, String)>) -> Result<Self, ConfigError> {
        fn take<T: FromStr>(
            values: &mut HashMap<String, (usize, String)>,
            key: &str,
            default: Option<T>,
        ) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            match values.remove(key) {
                Some((line, text)) => text
                    .parse()
                    .map_err(|e| err(Some(line), format!("bad value for `{key}`: {e}"))),
                None => default.ok_or_else(|| err(None, format!("missing required key `{key}`"))),
            }
        }

        let experiment: ExperimentKind = take(&mut values, "experiment", None)?;
        let out_dir: String = take(&mut values, "out_dir", Some("runs/out".to_string()))?;
        let seed = take(&mut values, "seed", Some(0u64))?;
        let trials = take(&mut values, "trials", Some(1usize))?;

        let budget_iters: Option<(usize, String)> = values.remove("budget_iters");
        let budget_ms: Option<(usize, String)> = values.remove("budget_ms");
        let budget = match (budget_iters, budget_ms) {
            (Some(_), Some((line, _))) => {
                return Err(err(
                    Some(line),
                    "set at most one of `budget_iters` and `budget_ms`",
                ))
            }
            (Some((line, text)), None) => Budget::Iterations(
                text.parse()
                    .map_err(|e| err(Some(line), format!("bad value for `budget_iters`: {e}")))?,
            ),
            (None, Some((line, text))) => Budget::WallClockMs(
                text.parse()
                    .map_err(|e| err(Some(line), format!("bad value for `budget_ms`: {e}")))?,
            ),
            (None, None) => Budget::Unlimited,
        };

        let schedule = match values.remove("schedule") {
            Some((line, text)) => parse_schedule(&text).map_err(|m| err(Some(line), m))?,
            None => Vec::new(),
        };

        let reduce = match values.remove("reduce") {
            Some((line, text)) => match text.as_str() {
                "crop" => ReduceMethod::CenterCrop,
                "resize" => ReduceMethod::Bilinear,
                other => {
                    return Err(err(
                        Some(line),
                        format!("bad value for `reduce`: expected crop|resize, got `{other}`"),
                    ))
                }
            },
            None => ReduceMethod::Bilinear,
        };

        let max_steps = match values.remove("max_steps") {
            Some((line, text)) => Some(
                text.parse()
                    .map_err(|e| err(Some(line), format!("bad value for `max_steps`: {e}")))?,
            ),
            None => None,
        };

        let config = Self {
            experiment,
            out_dir: PathBuf::from(out_dir),
            seed,
            trials,
            budget,
            degree: take(&mut values, "degree", Some(default_degree(experiment)))?,
            active_features: take(
                &mut values,
                "active_features",
                Some(default_active(experiment)),
            )?,
            period_iters: take(&mut values, "period_iters", Some(default_period(experiment)))?,
            eliminate: take(&mut values, "eliminate", Some(default_eliminate(experiment)))?,
            best_retained: take(&mut values, "best_retained", Some(3usize))?,
            schedule,
            stop_tau: take(&mut values, "stop_tau", Some(default_tau(experiment)))?,
            max_steps,
            learning_rate: take(
                &mut values,
                "learning_rate",
                Some(default_learning_rate(experiment)),
            )?,
            lambda: take(&mut values, "lambda", Some(default_lambda(experiment)))?,
            hidden: take(&mut values, "hidden", Some(default_hidden(experiment)))?,
            standardize: take(&mut values, "standardize", Some(false))?,
            data_seed: take(&mut values, "data_seed", Some(0u64))?,
            base_features: take(&mut values, "base_features", Some(10usize))?,
            synth_support: take(&mut values, "synth_support", Some(50usize))?,
            synth_train_n: take(&mut values, "synth_train_n", Some(10_000usize))?,
            synth_test_n: take(&mut values, "synth_test_n", Some(2_000usize))?,
            noise_std: take(&mut values, "noise_std", Some(0.0f64))?,
            train_images: PathBuf::from(take(
                &mut values,
                "train_images",
                Some("data/mnist/train-images-idx3-ubyte".to_string()),
            )?),
            train_labels: PathBuf::from(take(
                &mut values,
                "train_labels",
                Some("data/mnist/train-labels-idx1-ubyte".to_string()),
            )?),
            samples: take(&mut values, "samples", Some(5000usize))?,
            train_n: take(&mut values, "train_n", Some(4500usize))?,
            reduce,
            coverage: take(&mut values, "coverage", Some(0.99f64))?,
        };

        if let Some((line, _)) = values.values().next() {
            let keys: Vec<&str> = values.keys().map(String::as_str).collect();
            return Err(err(
                Some(*line),
                format!("unknown key(s): {}", keys.join(", ")),
            ));
        }
        config.validate()?;
        Ok(config)
    }

    /// Re-check constraints after CLI overrides mutate a parsed config.
    pub fn revalidate(&self) -> Result<(), ConfigError> {
        self.validate()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return Err(err(None, "trials must be >= 1"));
        }
        if matches!(self.budget, Budget::Iterations(0) | Budget::WallClockMs(0)) {
            return Err(err(None, "budget must be positive"));
        }
        if self.hidden == 0 && self.experiment.is_classification() {
            return Err(err(None, "hidden must be >= 1 for MLP experiments"));
        }
        if !(0.0..=1.0).contains(&self.stop_tau) {
            return Err(err(None, "stop_tau must lie in [0, 1]"));
        }
        if !(0.0 < self.coverage && self.coverage <= 1.0) {
            return Err(err(None, "coverage must lie in (0, 1]"));
        }
        if self.train_n == 0 || self.train_n >= self.samples {
            return Err(err(None, "train_n must be positive and below samples"));
        }
        if matches!(
            self.experiment,
            ExperimentKind::BaselineRegression | ExperimentKind::BaselineMlp
        ) && matches!(self.budget, Budget::Unlimited)
        {
            return Err(err(
                None,
                "baseline experiments need `budget_iters` or `budget_ms`",
            ));
        }
        Ok(())
    }

    /// The seed of one trial: base seed plus trial index.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed + trial as u64
    }

    /// Engine config for one trial of a churn experiment.
    pub fn churn_config(&self, trial: usize) -> ChurnConfig {
        let stop = if self.experiment.is_classification() {
            StopRule::TrainAccuracy(self.stop_tau)
        } else {
            StopRule::CandidateExhaustion
        };
        let (iteration_budget, wall_clock_budget) = match self.budget {
            Budget::Unlimited => (None, None),
            Budget::Iterations(n) => (Some(n), None),
            Budget::WallClockMs(ms) => (None, Some(Duration::from_millis(ms))),
        };
        ChurnConfig {
            degree: self.degree,
            active_size: self.active_features,
            period_iterations: self.period_iters,
            initial_eliminations: self.eliminate,
            best_retained: self.best_retained,
            schedule: self.schedule.clone(),
            stop,
            seed: self.trial_seed(trial),
            max_steps: self.max_steps,
            iteration_budget,
            wall_clock_budget,
        }
    }
}

fn parse_schedule(text: &str) -> Result<Vec<ScheduleStage>, String> {
    if text == "none" {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|part| {
            let (at, e) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("expected `step:eliminations`, got `{part}`"))?;
            Ok(ScheduleStage {
                at_step: at.trim().parse().map_err(|e| format!("bad step: {e}"))?,
                eliminations: e.trim().parse().map_err(|e| format!("bad count: {e}"))?,
            })
        })
        .collect()
}

fn default_degree(kind: ExperimentKind) -> usize {
    match kind {
        ExperimentKind::Regression | ExperimentKind::BaselineRegression => 5,
        _ => 2,
    }
}

fn default_active(kind: ExperimentKind) -> usize {
    match kind {
        ExperimentKind::Regression | ExperimentKind::BaselineRegression => 50,
        _ => 400,
    }
}

fn default_period(kind: ExperimentKind) -> usize {
    match kind {
        ExperimentKind::Regression | ExperimentKind::BaselineRegression => 50,
        _ => 20,
    }
}

fn default_eliminate(kind: ExperimentKind) -> usize {
    match kind {
        ExperimentKind::Regression | ExperimentKind::BaselineRegression => 10,
        _ => 20,
    }
}

fn default_tau(kind: ExperimentKind) -> f64 {
    match kind {
        ExperimentKind::MnistH5 => 0.97,
        _ => 0.965,
    }
}

fn default_learning_rate(kind: ExperimentKind) -> f64 {
    match kind {
        ExperimentKind::Regression => 0.1,
        ExperimentKind::BaselineRegression => 0.012,
        _ => 3.0,
    }
}

fn default_lambda(kind: ExperimentKind) -> f64 {
    match kind {
        ExperimentKind::MnistH20 => 3.9,
        ExperimentKind::MnistH5 => 2.0,
        ExperimentKind::BaselineMlp => 3.0,
        _ => 0.0,
    }
}

fn default_hidden(kind: ExperimentKind) -> usize {
    match kind {
        ExperimentKind::MnistH5 => 5,
        _ => 20,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_regression_config_uses_paper_defaults() {
        let cfg = ExperimentConfig::from_str_pretty("experiment = regression\n").unwrap();
        assert_eq!(cfg.degree, 5);
        assert_eq!(cfg.active_features, 50);
        assert_eq!(cfg.period_iters, 50);
        assert_eq!(cfg.eliminate, 10);
        assert_eq!(cfg.best_retained, 3);
        assert_eq!(cfg.learning_rate, 0.1);
        assert_eq!(cfg.trials, 1);
    }

    #[test]
    fn baseline_regression_defaults_to_paper_learning_rate() {
        let cfg = ExperimentConfig::from_str_pretty(
            "experiment = baseline-regression\nbudget_iters = 100\n",
        )
        .unwrap();
        assert_eq!(cfg.learning_rate, 0.012);
    }

    #[test]
    fn mnist_defaults_match_experiment_kind() {
        let h20 = ExperimentConfig::from_str_pretty("experiment = mnist-h20\n").unwrap();
        assert_eq!((h20.hidden, h20.lambda, h20.stop_tau), (20, 3.9, 0.965));
        assert_eq!((h20.active_features, h20.period_iters, h20.eliminate), (400, 20, 20));
        let h5 = ExperimentConfig::from_str_pretty("experiment = mnist-h5\n").unwrap();
        assert_eq!((h5.hidden, h5.lambda, h5.stop_tau), (5, 2.0, 0.97));
        let base = ExperimentConfig::from_str_pretty(
            "experiment = baseline-mlp\nbudget_iters = 200\nhidden = 20\nlambda = 3\n",
        )
        .unwrap();
        assert_eq!((base.hidden, base.lambda), (20, 3.0));
    }

    #[test]
    fn schedule_parses_stage_lists() {
        let cfg = ExperimentConfig::from_str_pretty(
            "experiment = regression\nschedule = 100:5, 300:1\n",
        )
        .unwrap();
        assert_eq!(
            cfg.schedule,
            vec![
                ScheduleStage {
                    at_step: 100,
                    eliminations: 5
                },
                ScheduleStage {
                    at_step: 300,
                    eliminations: 1
                }
            ]
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ExperimentConfig::from_str_pretty(
            "experiment = regression\n\n# comment\nactive_features = many\n",
        )
        .unwrap_err();
        assert_eq!(e.line, Some(4));

        let e = ExperimentConfig::from_str_pretty("experiment = regression\nbroken line\n")
            .unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_str_pretty("experiment = regression\nmystery = 3\n")
            .unwrap_err();
        assert!(e.message.contains("mystery"));
    }

    #[test]
    fn budgets_are_mutually_exclusive() {
        let e = ExperimentConfig::from_str_pretty(
            "experiment = regression\nbudget_iters = 10\nbudget_ms = 10\n",
        )
        .unwrap_err();
        assert!(e.message.contains("at most one"));
    }

    #[test]
    fn zero_hidden_is_rejected_for_mlp() {
        let e = ExperimentConfig::from_str_pretty(
            "experiment = baseline-mlp\nbudget_iters = 10\nhidden = 0\n",
        )
        .unwrap_err();
        assert!(e.message.contains("hidden"));
    }

    #[test]
    fn trailing_comments_are_ignored() {
        let cfg = ExperimentConfig::from_str_pretty(
            "experiment = regression # the churn arm\nseed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
    }
}
