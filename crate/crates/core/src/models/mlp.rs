//! One-hidden-layer MLP with sigmoid hidden units and a softmax output,
//! trained by full-batch gradient descent on L2-regularized cross entropy.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::distributions::Uniform;
use rand::Rng;

use super::{ModelError, TrainBatch};
use crate::scalar::Scalar;

/// Input-layer weights are `hidden x features`: column `i` holds the weights
/// of active feature `i`, so feature swaps replace whole columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    w_in: Array2<T>,
    b_in: Array1<T>,
    w_out: Array2<T>,
    b_out: Array1<T>,
    lambda: T,
    learning_rate: T,
}

/// Gradients of all four parameter blocks, same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct MlpGradients<T> {
    pub w_in: Array2<T>,
    pub b_in: Array1<T>,
    pub w_out: Array2<T>,
    pub b_out: Array1<T>,
}

impl<T: Scalar> MlpModel<T> {
    /// Fresh model: weights uniform in `(-r, r)` with `r = 1 / sqrt(fan_in)`,
    /// biases zero.
    pub fn init<R: Rng>(
        features: usize,
        hidden: usize,
        classes: usize,
        lambda: T,
        learning_rate: T,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if features == 0 {
            return Err(ModelError::InvalidParameter("features must be >= 1"));
        }
        if hidden == 0 {
            return Err(ModelError::InvalidParameter("hidden size must be >= 1"));
        }
        if classes < 2 {
            return Err(ModelError::InvalidParameter("need at least 2 classes"));
        }
        if !(lambda >= T::zero() && lambda.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "lambda must be non-negative and finite",
            ));
        }
        if !(learning_rate > T::zero() && learning_rate.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "learning rate must be positive and finite",
            ));
        }
        let w_in = uniform_matrix(hidden, features, features, rng);
        let w_out = uniform_matrix(classes, hidden, hidden, rng);
        Ok(Self {
            w_in,
            b_in: Array1::zeros(hidden),
            w_out,
            b_out: Array1::zeros(classes),
            lambda,
            learning_rate,
        })
    }

    /// Reassemble a model from explicit parameter blocks (snapshot loading).
    pub fn from_parts(
        w_in: Array2<T>,
        b_in: Array1<T>,
        w_out: Array2<T>,
        b_out: Array1<T>,
        lambda: T,
        learning_rate: T,
    ) -> Result<Self, ModelError> {
        if w_in.nrows() != b_in.len()
            || w_out.ncols() != w_in.nrows()
            || w_out.nrows() != b_out.len()
        {
            return Err(ModelError::InvalidParameter(
                "parameter block shapes do not agree",
            ));
        }
        if !(lambda >= T::zero() && lambda.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "lambda must be non-negative and finite",
            ));
        }
        if !(learning_rate > T::zero() && learning_rate.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "learning rate must be positive and finite",
            ));
        }
        Ok(Self {
            w_in,
            b_in,
            w_out,
            b_out,
            lambda,
            learning_rate,
        })
    }

    pub fn w_in(&self) -> &Array2<T> {
        &self.w_in
    }

    pub fn b_in(&self) -> &Array1<T> {
        &self.b_in
    }

    pub fn w_out(&self) -> &Array2<T> {
        &self.w_out
    }

    pub fn b_out(&self) -> &Array1<T> {
        &self.b_out
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn learning_rate(&self) -> T {
        self.learning_rate
    }

    pub fn feature_count(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn classes(&self) -> usize {
        self.w_out.nrows()
    }

    /// Class probabilities for a single feature row.
    pub fn forward(&self, row: ArrayView1<'_, T>) -> Result<Array1<T>, ModelError> {
        if row.len() != self.feature_count() {
            return Err(ModelError::FeatureMismatch {
                expected: self.feature_count(),
                found: row.len(),
            });
        }
        Ok(self.forward_row(row))
    }

    fn forward_row(&self, row: ArrayView1<'_, T>) -> Array1<T> {
        let hidden = (self.w_in.dot(&row) + &self.b_in).mapv(sigmoid);
        let logits = self.w_out.dot(&hidden) + &self.b_out;
        softmax(logits)
    }

    fn check_batch<'b>(&self, batch: &TrainBatch<'b, T>) -> Result<&'b [usize], ModelError> {
        if batch.features() != self.feature_count() {
            return Err(ModelError::FeatureMismatch {
                expected: self.feature_count(),
                found: batch.features(),
            });
        }
        let labels = batch.labels()?;
        for &label in labels {
            if label >= self.classes() {
                return Err(ModelError::LabelOutOfRange {
                    label,
                    classes: self.classes(),
                });
            }
        }
        Ok(labels)
    }

    /// Mean negative log-probability of the true class plus
    /// `lambda / (2 * samples)` times the squared layer weights (biases
    /// excluded).
    pub fn cross_entropy_loss(&self, batch: &TrainBatch<'_, T>) -> Result<T, ModelError> {
        let labels = self.check_batch(batch)?;
        let hidden = (batch.design().dot(&self.w_in.t()) + &self.b_in).mapv(sigmoid);
        let logits = hidden.dot(&self.w_out.t()) + &self.b_out;
        Ok(self.loss_from_logits(&logits, labels, batch.len()))
    }

    fn loss_from_logits(&self, logits: &Array2<T>, labels: &[usize], m: usize) -> T {
        let mut data_term = T::zero();
        for (row, &label) in logits.rows().into_iter().zip(labels) {
            data_term += log_sum_exp(row) - row[label];
        }
        let samples = T::from_usize(m);
        let sq = |w: &Array2<T>| w.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b);
        let penalty = self.lambda / (T::from_f64(2.0) * samples) * (sq(&self.w_in) + sq(&self.w_out));
        data_term / samples + penalty
    }

    /// Loss and the gradients of all four parameter blocks in one pass.
    pub fn loss_and_gradients(
        &self,
        batch: &TrainBatch<'_, T>,
    ) -> Result<(T, MlpGradients<T>), ModelError> {
        let labels = self.check_batch(batch)?;
        let design = batch.design();
        let m = batch.len();
        let m_scalar = T::from_usize(m);

        let hidden = (design.dot(&self.w_in.t()) + &self.b_in).mapv(sigmoid);
        let logits = hidden.dot(&self.w_out.t()) + &self.b_out;
        let loss = self.loss_from_logits(&logits, labels, m);

        // d(loss)/d(logits) = (probabilities - one_hot) / samples
        let mut dlogits = Array2::zeros(logits.raw_dim());
        for (i, (row, &label)) in logits.rows().into_iter().zip(labels).enumerate() {
            let lse = log_sum_exp(row);
            for (c, &z) in row.iter().enumerate() {
                let p = (z - lse).exp();
                dlogits[(i, c)] = if c == label { p - T::one() } else { p } / m_scalar;
            }
        }

        let decay = self.lambda / m_scalar;
        let g_w_out = dlogits.t().dot(&hidden) + &(&self.w_out * decay);
        let g_b_out = dlogits.sum_axis(Axis(0));
        let dhidden = dlogits.dot(&self.w_out);
        let one = T::one();
        let dpre = &dhidden * &hidden.mapv(|a| a * (one - a));
        let g_w_in = dpre.t().dot(&design) + &(&self.w_in * decay);
        let g_b_in = dpre.sum_axis(Axis(0));

        Ok((
            loss,
            MlpGradients {
                w_in: g_w_in,
                b_in: g_b_in,
                w_out: g_w_out,
                b_out: g_b_out,
            },
        ))
    }

    /// Run `iterations` full-batch gradient-descent steps, starting from the
    /// current weights.
    pub fn train(
        &mut self,
        batch: &TrainBatch<'_, T>,
        iterations: usize,
    ) -> Result<(), ModelError> {
        if iterations == 0 {
            return Err(ModelError::InvalidParameter("iterations must be >= 1"));
        }
        for iteration in 0..iterations {
            let (loss, grads) = self.loss_and_gradients(batch)?;
            if !loss.is_finite() {
                return Err(ModelError::Divergence { iteration });
            }
            let lr = self.learning_rate;
            self.w_in.zip_mut_with(&grads.w_in, |w, &g| *w = *w - lr * g);
            self.b_in.zip_mut_with(&grads.b_in, |w, &g| *w = *w - lr * g);
            self.w_out.zip_mut_with(&grads.w_out, |w, &g| *w = *w - lr * g);
            self.b_out.zip_mut_with(&grads.b_out, |w, &g| *w = *w - lr * g);
        }
        let final_loss = self.cross_entropy_loss(batch)?;
        if !final_loss.is_finite() {
            return Err(ModelError::Divergence {
                iteration: iterations,
            });
        }
        Ok(())
    }

    /// Fraction of rows whose highest-probability class equals the label;
    /// argmax ties resolve to the lowest class index.
    pub fn accuracy(&self, batch: &TrainBatch<'_, T>) -> Result<T, ModelError> {
        let labels = self.check_batch(batch)?;
        let mut correct = 0usize;
        for (row, &label) in batch.design().rows().into_iter().zip(labels) {
            let probs = self.forward_row(row);
            if argmax_first(&probs) == label {
                correct += 1;
            }
        }
        Ok(T::from_usize(correct) / T::from_usize(batch.len()))
    }

    /// Overwrite the input-weight columns at the given positions with fresh
    /// draws uniform in `(-r, r)`, `r = 1 / sqrt(features)`. All other
    /// columns and every other parameter block stay untouched.
    pub fn splice_columns<R: Rng>(
        &mut self,
        removed: &[usize],
        rng: &mut R,
    ) -> Result<(), ModelError> {
        let features = self.feature_count();
        for &p in removed {
            if p >= features {
                return Err(ModelError::IndexOutOfRange {
                    index: p,
                    len: features,
                });
            }
        }
        let r = T::one() / T::from_usize(features).sqrt();
        let dist = Uniform::new(-r, r);
        for &p in removed {
            for h in 0..self.hidden_size() {
                self.w_in[(h, p)] = rng.sample(&dist);
            }
        }
        Ok(())
    }
}

fn uniform_matrix<T: Scalar, R: Rng>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Array2<T> {
    let r = T::one() / T::from_usize(fan_in).sqrt();
    let dist = Uniform::new(-r, r);
    let data: Vec<T> = (0..rows * cols).map(|_| rng.sample(&dist)).collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}

fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn log_sum_exp<T: Scalar>(row: ArrayView1<'_, T>) -> T {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum = row.iter().map(|&z| (z - max).exp()).fold(T::zero(), |a, b| a + b);
    max + sum.ln()
}

fn softmax<T: Scalar>(logits: Array1<T>) -> Array1<T> {
    let lse = log_sum_exp(logits.view());
    logits.mapv(|z| (z - lse).exp())
}

fn argmax_first<T: Scalar>(values: &Array1<T>) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::distributions::Uniform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_model(features: usize, hidden: usize, classes: usize) -> MlpModel<f64> {
        MlpModel {
            w_in: Array2::zeros((hidden, features)),
            b_in: Array1::zeros(hidden),
            w_out: Array2::zeros((classes, hidden)),
            b_out: Array1::zeros(classes),
            lambda: 0.0,
            learning_rate: 0.5,
        }
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let model = zero_model(4, 3, 10);
        let row = array![0.3, -0.7, 2.0, 0.0];
        let probs = model.forward(row.view()).unwrap();
        for &p in probs.iter() {
            assert_abs_diff_eq!(p, 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model: MlpModel<f64> = MlpModel::init(5, 4, 3, 0.1, 0.5, &mut rng).unwrap();
        for _ in 0..20 {
            let row = Array1::from_iter((0..5).map(|_| rng.sample(Uniform::new(-3.0, 3.0))));
            let probs = model.forward(row.view()).unwrap();
            assert!((probs.sum() - 1.0).abs() < 1e-9);
            assert!(probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn uniform_prediction_loss_is_ln_classes() {
        let model = zero_model(2, 3, 10);
        let design = array![[1.0, 2.0], [0.5, -1.0]];
        let labels = [3usize, 7];
        let batch = TrainBatch::classification(design.view(), &labels).unwrap();
        let loss = model.cross_entropy_loss(&batch).unwrap();
        assert_abs_diff_eq!(loss, (10.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn lambda_zero_reduces_to_pure_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut regularized = MlpModel::<f64>::init(3, 2, 2, 1.5, 0.5, &mut rng).unwrap();
        let mut plain = regularized.clone();
        plain.lambda = 0.0;
        let design = array![[0.2, 0.4, -0.1], [1.0, -0.5, 0.3]];
        let labels = [0usize, 1];
        let batch = TrainBatch::classification(design.view(), &labels).unwrap();
        let pure = plain.cross_entropy_loss(&batch).unwrap();
        assert!(regularized.cross_entropy_loss(&batch).unwrap() > pure);
        regularized.lambda = 0.0;
        assert_eq!(regularized.cross_entropy_loss(&batch).unwrap(), pure);
    }

    #[test]
    fn separable_toy_set_reaches_full_train_accuracy() {
        let design = array![
            [1.0, 0.0],
            [0.9, 0.1],
            [0.8, 0.0],
            [0.0, 1.0],
            [0.1, 0.9],
            [0.0, 0.8]
        ];
        let labels = [0usize, 0, 0, 1, 1, 1];
        let batch = TrainBatch::classification(design.view(), &labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = MlpModel::<f64>::init(2, 4, 2, 0.0, 2.0, &mut rng).unwrap();
        model.train(&batch, 500).unwrap();
        assert_eq!(model.accuracy(&batch).unwrap(), 1.0);
    }

    #[test]
    fn zero_model_accuracy_equals_first_class_frequency() {
        let design = Array2::<f64>::zeros((10, 2));
        let labels = [0usize, 0, 0, 1, 2, 3, 4, 5, 6, 7];
        let batch = TrainBatch::classification(design.view(), &labels).unwrap();
        let model = zero_model(2, 3, 10);
        // uniform output ties on every class; tie-break picks class 0
        assert_abs_diff_eq!(model.accuracy(&batch).unwrap(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn splice_replaces_only_removed_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = MlpModel::<f64>::init(5, 3, 2, 0.0, 0.5, &mut rng).unwrap();
        let before = model.clone();
        model.splice_columns(&[1, 4], &mut rng).unwrap();
        for col in [0usize, 2, 3] {
            assert_eq!(model.w_in.column(col), before.w_in.column(col));
        }
        assert_ne!(model.w_in.column(1), before.w_in.column(1));
        assert_eq!(model.b_in, before.b_in);
        assert_eq!(model.w_out, before.w_out);
        assert_eq!(model.b_out, before.b_out);
        let bound = 1.0 / (5.0f64).sqrt();
        assert!(model.w_in.column(1).iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let model = zero_model(2, 2, 3);
        let design = array![[1.0, 0.0]];
        let labels = [3usize];
        let batch = TrainBatch::classification(design.view(), &labels).unwrap();
        assert_eq!(
            model.cross_entropy_loss(&batch).unwrap_err(),
            ModelError::LabelOutOfRange {
                label: 3,
                classes: 3
            }
        );
    }

    #[test]
    fn init_validates_hyperparameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MlpModel::<f64>::init(3, 0, 2, 0.0, 0.5, &mut rng).is_err());
        assert!(MlpModel::<f64>::init(3, 2, 1, 0.0, 0.5, &mut rng).is_err());
        assert!(MlpModel::<f64>::init(3, 2, 2, -1.0, 0.5, &mut rng).is_err());
        assert!(MlpModel::<f64>::init(3, 2, 2, 0.0, 0.0, &mut rng).is_err());
    }
}
