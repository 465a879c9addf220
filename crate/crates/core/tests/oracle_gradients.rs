//! Gradient and loss oracles: analytic derivatives against central finite
//! differences, and vectorized losses against scalar reference loops.

use churn_core::models::{MlpModel, RegressionModel, TrainBatch};
use ndarray::{Array1, Array2};
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let dist = Uniform::new(-scale, scale);
    Array2::from_shape_vec(
        (rows, cols),
        (0..rows * cols).map(|_| rng.sample(&dist)).collect(),
    )
    .unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Array1<f64> {
    let dist = Uniform::new(-scale, scale);
    Array1::from_iter((0..len).map(|_| rng.sample(&dist)))
}

/// Relative disagreement of two gradient blocks, measured in the Euclidean
/// norm.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[test]
fn regression_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for instance in 0..20 {
        let m = rng.gen_range(3..25);
        let k = rng.gen_range(1..8);
        let design = random_matrix(&mut rng, m, k, 2.0);
        let y = random_vector(&mut rng, m, 3.0);
        let theta = random_vector(&mut rng, k, 1.5);
        let batch = TrainBatch::regression(design.view(), y.view()).unwrap();
        let model = RegressionModel::new(theta.clone(), 0.1).unwrap();
        let analytic = model.gradient(&batch).unwrap();

        let mut numeric = Array1::<f64>::zeros(k);
        for i in 0..k {
            let h = 1e-5 * theta[i].abs().max(1.0);
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            let loss_plus = RegressionModel::new(plus, 0.1)
                .unwrap()
                .mse_loss(&batch)
                .unwrap();
            let loss_minus = RegressionModel::new(minus, 0.1)
                .unwrap()
                .mse_loss(&batch)
                .unwrap();
            numeric[i] = (loss_plus - loss_minus) / (2.0 * h);
        }
        let err = relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap());
        assert!(
            err <= 1e-6,
            "instance {instance}: relative gradient error {err}"
        );
    }
}

struct MlpInstance {
    model: MlpModel<f64>,
    design: Array2<f64>,
    labels: Vec<usize>,
}

fn random_mlp_instance(rng: &mut ChaCha8Rng, lambda: f64) -> MlpInstance {
    let m = rng.gen_range(4..20);
    let features = rng.gen_range(2..6);
    let hidden = rng.gen_range(2..5);
    let classes = rng.gen_range(2..5);
    let model = MlpModel::init(features, hidden, classes, lambda, 0.5, rng).unwrap();
    let design = random_matrix(rng, m, features, 1.5);
    let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..classes)).collect();
    MlpInstance {
        model,
        design,
        labels,
    }
}

/// Rebuild the model with one parameter entry nudged by `delta`.
fn perturbed(model: &MlpModel<f64>, block: usize, index: (usize, usize), delta: f64) -> MlpModel<f64> {
    let mut w_in = model.w_in().clone();
    let mut b_in = model.b_in().clone();
    let mut w_out = model.w_out().clone();
    let mut b_out = model.b_out().clone();
    match block {
        0 => w_in[index] += delta,
        1 => b_in[index.1] += delta,
        2 => w_out[index] += delta,
        _ => b_out[index.1] += delta,
    }
    MlpModel::from_parts(w_in, b_in, w_out, b_out, model.lambda(), model.learning_rate()).unwrap()
}

#[test]
fn mlp_gradients_match_central_differences_in_all_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for instance in 0..20 {
        let lambda = if instance % 2 == 0 { 0.0 } else { 1.3 };
        let inst = random_mlp_instance(&mut rng, lambda);
        let batch = TrainBatch::classification(inst.design.view(), &inst.labels).unwrap();
        let (_, grads) = inst.model.loss_and_gradients(&batch).unwrap();

        let blocks: [(usize, Vec<(usize, usize)>, Vec<f64>); 4] = [
            (
                0,
                (0..inst.model.hidden_size())
                    .flat_map(|h| (0..inst.model.feature_count()).map(move |k| (h, k)))
                    .collect(),
                grads.w_in.iter().copied().collect(),
            ),
            (
                1,
                (0..inst.model.hidden_size()).map(|h| (0, h)).collect(),
                grads.b_in.iter().copied().collect(),
            ),
            (
                2,
                (0..inst.model.classes())
                    .flat_map(|c| (0..inst.model.hidden_size()).map(move |h| (c, h)))
                    .collect(),
                grads.w_out.iter().copied().collect(),
            ),
            (
                3,
                (0..inst.model.classes()).map(|c| (0, c)).collect(),
                grads.b_out.iter().copied().collect(),
            ),
        ];

        for (block, indices, analytic) in blocks {
            let mut numeric = Vec::with_capacity(indices.len());
            for &index in &indices {
                let h = 1e-5;
                let plus = perturbed(&inst.model, block, index, h)
                    .cross_entropy_loss(&batch)
                    .unwrap();
                let minus = perturbed(&inst.model, block, index, -h)
                    .cross_entropy_loss(&batch)
                    .unwrap();
                numeric.push((plus - minus) / (2.0 * h));
            }
            let err = relative_error(&analytic, &numeric);
            assert!(
                err <= 1e-4,
                "instance {instance} block {block}: relative gradient error {err}"
            );
        }
    }
}

#[test]
fn mse_matches_scalar_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let design = random_matrix(&mut rng, 10, 4, 2.0);
    let y = random_vector(&mut rng, 10, 2.0);
    let theta = random_vector(&mut rng, 4, 1.0);
    let batch = TrainBatch::regression(design.view(), y.view()).unwrap();
    let model = RegressionModel::new(theta.clone(), 0.1).unwrap();

    let mut oracle = 0.0;
    for i in 0..10 {
        let mut pred = 0.0;
        for j in 0..4 {
            pred += theta[j] * design[(i, j)];
        }
        oracle += (pred - y[i]) * (pred - y[i]);
    }
    oracle /= 2.0 * 10.0;

    let loss = model.mse_loss(&batch).unwrap();
    assert!(((loss - oracle) / oracle).abs() <= 1e-12);
}

#[test]
fn cross_entropy_matches_scalar_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let inst = random_mlp_instance(&mut rng, 0.7);
    let batch = TrainBatch::classification(inst.design.view(), &inst.labels).unwrap();
    let loss = inst.model.cross_entropy_loss(&batch).unwrap();

    let m = inst.labels.len();
    let h = inst.model.hidden_size();
    let c = inst.model.classes();
    let k = inst.model.feature_count();
    let mut data = 0.0;
    for i in 0..m {
        let mut hidden = vec![0.0; h];
        for a in 0..h {
            let mut z = inst.model.b_in()[a];
            for b in 0..k {
                z += inst.model.w_in()[(a, b)] * inst.design[(i, b)];
            }
            hidden[a] = 1.0 / (1.0 + (-z).exp());
        }
        let mut logits = vec![0.0; c];
        for o in 0..c {
            let mut z = inst.model.b_out()[o];
            for a in 0..h {
                z += inst.model.w_out()[(o, a)] * hidden[a];
            }
            logits[o] = z;
        }
        let denom: f64 = logits.iter().map(|z| z.exp()).sum();
        let prob = logits[inst.labels[i]].exp() / denom;
        data += -prob.ln();
    }
    data /= m as f64;
    let mut sq = 0.0;
    for w in inst.model.w_in().iter().chain(inst.model.w_out().iter()) {
        sq += w * w;
    }
    let oracle = data + inst.model.lambda() / (2.0 * m as f64) * sq;
    assert!(((loss - oracle) / oracle).abs() <= 1e-12);
}

#[test]
fn forward_matches_two_loop_oracle_on_tiny_instance() {
    let w_in = ndarray::array![[0.5, -0.3, 0.2], [-0.1, 0.4, 0.6]];
    let b_in = ndarray::array![0.05, -0.2];
    let w_out = ndarray::array![[1.0, -0.5], [0.3, 0.8]];
    let b_out = ndarray::array![0.0, 0.1];
    let model = MlpModel::from_parts(w_in, b_in, w_out, b_out, 0.0, 0.5).unwrap();

    let x = [0.7f64, -1.2, 0.4];
    let mut hidden = [0.0f64; 2];
    hidden[0] = 1.0 / (1.0 + (-(0.5 * x[0] - 0.3 * x[1] + 0.2 * x[2] + 0.05)).exp());
    hidden[1] = 1.0 / (1.0 + (-(-0.1 * x[0] + 0.4 * x[1] + 0.6 * x[2] - 0.2)).exp());
    let z0 = 1.0 * hidden[0] - 0.5 * hidden[1];
    let z1 = 0.3 * hidden[0] + 0.8 * hidden[1] + 0.1;
    let denom = z0.exp() + z1.exp();

    let row = ndarray::arr1(&x);
    let probs = model.forward(row.view()).unwrap();
    assert!((probs[0] - z0.exp() / denom).abs() < 1e-12);
    assert!((probs[1] - z1.exp() / denom).abs() < 1e-12);
}

#[test]
fn accuracy_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..10 {
        let inst = random_mlp_instance(&mut rng, 0.0);
        let batch = TrainBatch::classification(inst.design.view(), &inst.labels).unwrap();
        let accuracy = inst.model.accuracy(&batch).unwrap();

        let mut correct = 0usize;
        for (i, &label) in inst.labels.iter().enumerate() {
            let probs = inst.model.forward(inst.design.row(i)).unwrap();
            let mut best = 0;
            for c in 1..probs.len() {
                if probs[c] > probs[best] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        assert_eq!(accuracy, correct as f64 / inst.labels.len() as f64);
    }
}

/// Largest eigenvalue of `design^T design / m` by power iteration.
fn gram_spectral_norm(design: &Array2<f64>) -> f64 {
    let m = design.nrows() as f64;
    let k = design.ncols();
    let mut v = Array1::from_elem(k, 1.0 / (k as f64).sqrt());
    let mut value = 0.0;
    for _ in 0..200 {
        let w = design.t().dot(&design.dot(&v)) / m;
        value = w.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
    }
    value
}

#[test]
fn regression_loss_is_non_increasing_below_the_stability_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..10 {
        let m = rng.gen_range(5..30);
        let k = rng.gen_range(1..6);
        let design = random_matrix(&mut rng, m, k, 3.0);
        let y = random_vector(&mut rng, m, 2.0);
        let batch = TrainBatch::regression(design.view(), y.view()).unwrap();
        let l = gram_spectral_norm(&design);
        let lr = 0.9 / l;
        let mut model =
            RegressionModel::new(random_vector(&mut rng, k, 1.0), lr).unwrap();
        let mut prev = model.mse_loss(&batch).unwrap();
        for _ in 0..50 {
            model.train(&batch, 1).unwrap();
            let loss = model.mse_loss(&batch).unwrap();
            assert!(loss <= prev + 1e-12 * prev.abs().max(1.0));
            prev = loss;
        }
    }
}

#[test]
fn training_preserves_weight_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let inst = random_mlp_instance(&mut rng, 0.4);
    let mut model = inst.model.clone();
    let batch = TrainBatch::classification(inst.design.view(), &inst.labels).unwrap();
    model.train(&batch, 5).unwrap();
    assert_eq!(model.w_in().dim(), inst.model.w_in().dim());
    assert_eq!(model.b_in().len(), inst.model.b_in().len());
    assert_eq!(model.w_out().dim(), inst.model.w_out().dim());
    assert_eq!(model.b_out().len(), inst.model.b_out().len());
}
