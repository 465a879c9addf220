//! Linear regression trained by full-batch gradient descent on the
//! half-mean-squared-error loss.

use ndarray::Array1;
use rand::distributions::Uniform;
use rand::Rng;

use super::{ModelError, TrainBatch};
use crate::scalar::Scalar;

/// One weight per active feature, in active-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel<T> {
    theta: Array1<T>,
    learning_rate: T,
}

impl<T: Scalar> RegressionModel<T> {
    pub fn new(theta: Array1<T>, learning_rate: T) -> Result<Self, ModelError> {
        if !(learning_rate > T::zero() && learning_rate.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "learning rate must be positive and finite",
            ));
        }
        Ok(Self {
            theta,
            learning_rate,
        })
    }

    /// Fresh model with weights drawn uniformly from (-0.5, 0.5).
    pub fn init<R: Rng>(
        features: usize,
        learning_rate: T,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let half = T::from_f64(0.5);
        let dist = Uniform::new(-half, half);
        let theta = Array1::from_iter((0..features).map(|_| rng.sample(&dist)));
        Self::new(theta, learning_rate)
    }

    pub fn theta(&self) -> &Array1<T> {
        &self.theta
    }

    pub fn learning_rate(&self) -> T {
        self.learning_rate
    }

    pub fn feature_count(&self) -> usize {
        self.theta.len()
    }

    fn check_batch(&self, batch: &TrainBatch<'_, T>) -> Result<(), ModelError> {
        if batch.features() != self.theta.len() {
            return Err(ModelError::FeatureMismatch {
                expected: self.theta.len(),
                found: batch.features(),
            });
        }
        Ok(())
    }

    /// Predicted values, one per batch row.
    pub fn predict(&self, batch: &TrainBatch<'_, T>) -> Result<Array1<T>, ModelError> {
        self.check_batch(batch)?;
        Ok(batch.design().dot(&self.theta))
    }

    /// Half mean squared error: `sum((x.theta - y)^2) / (2 * samples)`.
    pub fn mse_loss(&self, batch: &TrainBatch<'_, T>) -> Result<T, ModelError> {
        self.check_batch(batch)?;
        let y = batch.values()?;
        let residual = batch.design().dot(&self.theta) - &y;
        let m = T::from_usize(batch.len());
        Ok(residual.dot(&residual) / (T::from_f64(2.0) * m))
    }

    /// Loss gradient `x^T (x.theta - y) / samples`.
    pub fn gradient(&self, batch: &TrainBatch<'_, T>) -> Result<Array1<T>, ModelError> {
        self.check_batch(batch)?;
        let y = batch.values()?;
        let residual = batch.design().dot(&self.theta) - &y;
        let m = T::from_usize(batch.len());
        Ok(batch.design().t().dot(&residual) / m)
    }

    /// Run `iterations` full-batch gradient-descent steps, starting from the
    /// current weights. One-shot wrapper around [`RegressionTrainer`].
    pub fn train(
        &mut self,
        batch: &TrainBatch<'_, T>,
        iterations: usize,
    ) -> Result<(), ModelError> {
        let mut trainer = RegressionTrainer::new(self, batch)?;
        trainer.run(iterations)?;
        let final_loss = self.mse_loss(batch)?;
        if !final_loss.is_finite() {
            return Err(ModelError::Divergence {
                iteration: iterations,
            });
        }
        Ok(())
    }

    /// Overwrite the weights at the given positions with zero, leaving every
    /// other coordinate untouched. Used when swapped-in features take over
    /// the slots of eliminated ones.
    pub fn splice(&mut self, removed: &[usize]) -> Result<(), ModelError> {
        for &p in removed {
            if p >= self.theta.len() {
                return Err(ModelError::IndexOutOfRange {
                    index: p,
                    len: self.theta.len(),
                });
            }
        }
        for &p in removed {
            self.theta[p] = T::zero();
        }
        Ok(())
    }
}

/// A gradient-descent session over a fixed design matrix.
///
/// The loss is quadratic in the weights, so the loop iterates on the
/// precomputed normal-equation form (`x^T x`, `x^T y`): each step costs
/// `O(features^2)` instead of `O(samples * features)`, and resuming across
/// calls reuses the factors.
pub struct RegressionTrainer<'m, T> {
    model: &'m mut RegressionModel<T>,
    gram: ndarray::Array2<T>,
    xty: Array1<T>,
    y_sq: T,
    samples: T,
    iterations_done: usize,
}

impl<'m, T: Scalar> RegressionTrainer<'m, T> {
    pub fn new(
        model: &'m mut RegressionModel<T>,
        batch: &TrainBatch<'_, T>,
    ) -> Result<Self, ModelError> {
        model.check_batch(batch)?;
        let y = batch.values()?;
        let x = batch.design();
        Ok(Self {
            gram: x.t().dot(&x),
            xty: x.t().dot(&y),
            y_sq: y.dot(&y),
            samples: T::from_usize(batch.len()),
            model,
            iterations_done: 0,
        })
    }

    /// Current loss in the normal-equation form.
    pub fn loss(&self) -> T {
        let two = T::from_f64(2.0);
        let theta = &self.model.theta;
        let gram_theta = self.gram.dot(theta);
        (theta.dot(&gram_theta) - two * theta.dot(&self.xty) + self.y_sq) / (two * self.samples)
    }

    /// The model being trained (for loss evaluation between chunks).
    pub fn model(&self) -> &RegressionModel<T> {
        self.model
    }

    pub fn iterations_done(&self) -> usize {
        self.iterations_done
    }

    /// Run `iterations` gradient steps; divergence reports the absolute
    /// iteration index across all calls on this trainer.
    pub fn run(&mut self, iterations: usize) -> Result<(), ModelError> {
        if iterations == 0 {
            return Err(ModelError::InvalidParameter("iterations must be >= 1"));
        }
        for _ in 0..iterations {
            let theta = &self.model.theta;
            let gram_theta = self.gram.dot(theta);
            let two = T::from_f64(2.0);
            let loss = (theta.dot(&gram_theta) - two * theta.dot(&self.xty) + self.y_sq)
                / (two * self.samples);
            if !loss.is_finite() {
                return Err(ModelError::Divergence {
                    iteration: self.iterations_done,
                });
            }
            let step = self.model.learning_rate / self.samples;
            self.model
                .theta
                .zip_mut_with(&(&gram_theta - &self.xty), |t, &g| {
                    *t = *t - step * g;
                });
            self.iterations_done += 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_model_zero_targets_zero_loss() {
        let design = array![[1.0, 2.0], [3.0, 4.0]];
        let y = array![0.0, 0.0];
        let batch = TrainBatch::regression(design.view(), y.view()).unwrap();
        let model = RegressionModel::new(array![0.0, 0.0], 0.1).unwrap();
        assert_eq!(model.mse_loss(&batch).unwrap(), 0.0);
    }

    #[test]
    fn single_sample_loss() {
        // prediction 3, target 1 -> (1/2) * 2^2 = 2
        let design = array![[3.0]];
        let y = array![1.0];
        let batch = TrainBatch::regression(design.view(), y.view()).unwrap();
        let model = RegressionModel::new(array![1.0], 0.1).unwrap();
        assert_eq!(model.mse_loss(&batch).unwrap(), 2.0);
    }

    #[test]
    fn loss_decreases_on_solvable_system() {
        let design = array![[1.0], [2.0], [3.0]];
        let y = array![2.0, 4.0, 6.0];
        let batch = TrainBatch::regression(design.view(), y.view()).unwrap();
        let mut model = RegressionModel::new(array![0.0], 0.05).unwrap();
        let mut prev = model.mse_loss(&batch).unwrap();
        for _ in 0..20 {
            model.train(&batch, 1).unwrap();
            let loss = model.mse_loss(&batch).unwrap();
            assert!(loss < prev, "loss should strictly decrease: {loss} vs {prev}");
            prev = loss;
        }
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        // Gradient step factor |1 - lr * x^2| > 1 diverges.
        let design = array![[10.0]];
        let y = array![0.0];
        let batch = TrainBatch::regression(design.view(), y.view()).unwrap();
        let mut model = RegressionModel::new(array![1.0], 10.0).unwrap();
        let err = model.train(&batch, 10_000).unwrap_err();
        assert!(matches!(err, ModelError::Divergence { .. }));
    }

    #[test]
    fn splice_zeroes_only_removed_positions() {
        let mut model = RegressionModel::new(array![1.0, 2.0, 3.0, 4.0], 0.1).unwrap();
        model.splice(&[3]).unwrap();
        assert_eq!(model.theta(), &array![1.0, 2.0, 3.0, 0.0]);
        // removing nothing leaves the model bit-identical
        let before = model.clone();
        model.splice(&[]).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn splice_rejects_out_of_range() {
        let mut model = RegressionModel::new(array![1.0], 0.1).unwrap();
        assert_eq!(
            model.splice(&[1]).unwrap_err(),
            ModelError::IndexOutOfRange { index: 1, len: 1 }
        );
    }

    #[test]
    fn training_rejects_zero_iterations() {
        let design = array![[1.0]];
        let y = array![1.0];
        let batch = TrainBatch::regression(design.view(), y.view()).unwrap();
        let mut model = RegressionModel::new(array![0.0], 0.1).unwrap();
        assert!(matches!(
            model.train(&batch, 0),
            Err(ModelError::InvalidParameter(_))
        ));
    }
}
