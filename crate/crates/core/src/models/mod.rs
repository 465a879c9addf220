//! From-scratch trainable models whose weight layout is positionally aligned
//! with the active feature set.
//!
//! Both models train with full-batch gradient descent and keep their weight
//! shape fixed across feature swaps: column `i` of the weights always
//! corresponds to active feature `i`.

mod mlp;
mod regression;
mod snapshot;

pub use mlp::{MlpGradients, MlpModel};
pub use regression::{RegressionModel, RegressionTrainer};
pub use snapshot::{
    read_mlp_snapshot, read_regression_snapshot, write_mlp_snapshot, write_regression_snapshot,
    SnapshotError,
};

use ndarray::{ArrayView1, ArrayView2};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("batch has no samples")]
    EmptyBatch,
    #[error("batch rows ({rows}) do not match target count ({targets})")]
    TargetMismatch { rows: usize, targets: usize },
    #[error("model expects {expected} features, batch has {found}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("batch targets are {found}, operation needs {expected} targets")]
    WrongTargetKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("training diverged (non-finite loss) at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("invalid model parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("weight index {index} out of range for {len} features")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Training targets: regression observations or class labels.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a, T> {
    Values(ArrayView1<'a, T>),
    Labels(&'a [usize]),
}

impl<T> Targets<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(v) => v.len(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The same targets under a shorter borrow.
    pub fn reborrow(&self) -> Targets<'_, T> {
        match self {
            Targets::Values(v) => Targets::Values(v.view()),
            Targets::Labels(l) => Targets::Labels(l),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Targets::Values(_) => "values",
            Targets::Labels(_) => "labels",
        }
    }
}

/// A design matrix (samples x active features) paired with its targets.
#[derive(Debug, Clone, Copy)]
pub struct TrainBatch<'a, T> {
    design: ArrayView2<'a, T>,
    targets: Targets<'a, T>,
}

impl<'a, T: Scalar> TrainBatch<'a, T> {
    pub fn regression(
        design: ArrayView2<'a, T>,
        values: ArrayView1<'a, T>,
    ) -> Result<Self, ModelError> {
        Self::new(design, Targets::Values(values))
    }

    pub fn classification(
        design: ArrayView2<'a, T>,
        labels: &'a [usize],
    ) -> Result<Self, ModelError> {
        Self::new(design, Targets::Labels(labels))
    }

    pub fn new(design: ArrayView2<'a, T>, targets: Targets<'a, T>) -> Result<Self, ModelError> {
        if design.nrows() == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if design.nrows() != targets.len() {
            return Err(ModelError::TargetMismatch {
                rows: design.nrows(),
                targets: targets.len(),
            });
        }
        Ok(Self { design, targets })
    }

    pub fn design(&self) -> ArrayView2<'a, T> {
        self.design
    }

    pub fn targets(&self) -> Targets<'a, T> {
        self.targets
    }

    /// Sample count.
    pub fn len(&self) -> usize {
        self.design.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty batches
    }

    /// Active feature count.
    pub fn features(&self) -> usize {
        self.design.ncols()
    }

    pub(crate) fn values(&self) -> Result<ArrayView1<'a, T>, ModelError> {
        match self.targets {
            Targets::Values(v) => Ok(v),
            Targets::Labels(_) => Err(ModelError::WrongTargetKind {
                expected: "values",
                found: self.targets.kind(),
            }),
        }
    }

    pub(crate) fn labels(&self) -> Result<&'a [usize], ModelError> {
        match self.targets {
            Targets::Labels(l) => Ok(l),
            Targets::Values(_) => Err(ModelError::WrongTargetKind {
                expected: "labels",
                found: self.targets.kind(),
            }),
        }
    }
}
