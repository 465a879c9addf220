//! Per-feature usefulness scores and elimination ranking.
//!
//! Regression scores a feature by the relative loss change when its weight
//! is zeroed; the MLP scores a feature by the Euclidean norm of its
//! input-weight column. Low scores mark features for elimination.

use crate::models::{MlpModel, ModelError, RegressionModel, TrainBatch};
use crate::scalar::Scalar;

/// A non-negative, finite usefulness value for one active feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsefulnessScore<T> {
    pub feature_index: usize,
    pub value: T,
}

/// `|loss(theta with coordinate i zeroed) - loss(theta)| / |theta[i]|`.
///
/// A zero weight contributes nothing to the predictions, so the numerator is
/// identically zero and the score resolves to 0 ("no effect") rather than
/// 0/0.
pub fn regression_usefulness<T: Scalar>(
    model: &RegressionModel<T>,
    batch: &TrainBatch<'_, T>,
    index: usize,
) -> Result<UsefulnessScore<T>, ModelError> {
    let k = model.feature_count();
    if index >= k {
        return Err(ModelError::IndexOutOfRange { index, len: k });
    }
    let weight = model.theta()[index];
    if weight == T::zero() {
        return Ok(UsefulnessScore {
            feature_index: index,
            value: T::zero(),
        });
    }
    let base_loss = model.mse_loss(batch)?;
    let mut zeroed = model.clone();
    zeroed.splice(&[index])?;
    let zeroed_loss = zeroed.mse_loss(batch)?;
    let value = (zeroed_loss - base_loss).abs() / weight.abs();
    if !value.is_finite() {
        return Err(ModelError::Divergence { iteration: 0 });
    }
    Ok(UsefulnessScore {
        feature_index: index,
        value,
    })
}

/// Euclidean norm of input-weight column `index`.
pub fn mlp_usefulness<T: Scalar>(
    model: &MlpModel<T>,
    index: usize,
) -> Result<UsefulnessScore<T>, ModelError> {
    let k = model.feature_count();
    if index >= k {
        return Err(ModelError::IndexOutOfRange { index, len: k });
    }
    let value = model
        .w_in()
        .column(index)
        .iter()
        .map(|&w| w * w)
        .fold(T::zero(), |a, b| a + b)
        .sqrt();
    Ok(UsefulnessScore {
        feature_index: index,
        value,
    })
}

/// Indices of the `count` lowest-scored features, ties broken by ascending
/// feature index. The result is sorted ascending by feature index.
pub fn rank_for_elimination<T: Scalar>(
    scores: &[UsefulnessScore<T>],
    count: usize,
) -> Result<Vec<usize>, ModelError> {
    if count == 0 || count > scores.len() {
        return Err(ModelError::IndexOutOfRange {
            index: count,
            len: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .value
            .partial_cmp(&scores[b].value)
            .expect("usefulness scores are finite")
            .then(scores[a].feature_index.cmp(&scores[b].feature_index))
    });
    let mut picked: Vec<usize> = order[..count]
        .iter()
        .map(|&i| scores[i].feature_index)
        .collect();
    picked.sort_unstable();
    Ok(picked)
}
