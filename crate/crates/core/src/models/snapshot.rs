//! Plain-text model snapshots for run resumption.
//!
//! A snapshot stores the active descriptor strings alongside the weights so
//! the weight-to-feature alignment survives the round trip. Floats use
//! Rust's shortest round-trip formatting, so reloading restores values
//! bit-exactly. Descriptor strings are resolved against a pool on load.
//!
//! Regression layout (tab-separated weight lines):
//!
//! ```text
//! churn-regression v1
//! features 3
//! learning_rate 0.1
//! x1<TAB>0.25
//! ...
//! ```
//!
//! MLP layout: one `feature` line per input column (hidden weights,
//! space-separated), then `bias_in`, one `out` row per class, `bias_out`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use super::{MlpModel, RegressionModel};
use crate::pool::{FeatureDescriptor, FeaturePool};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("snapshot line {line}: descriptor `{descriptor}` not in pool")]
    UnknownDescriptor { line: usize, descriptor: String },
    #[error("invalid model in snapshot: {0}")]
    Model(#[from] super::ModelError),
}

fn parse_err(line: usize, message: impl Into<String>) -> SnapshotError {
    SnapshotError::Parse {
        line,
        message: message.into(),
    }
}

pub fn write_regression_snapshot<T: Scalar>(
    model: &RegressionModel<T>,
    descriptors: &[FeatureDescriptor],
    path: &Path,
) -> Result<(), SnapshotError> {
    assert_eq!(
        model.feature_count(),
        descriptors.len(),
        "descriptor list must align with the weights"
    );
    let mut out = String::new();
    out.push_str("churn-regression v1\n");
    out.push_str(&format!("features {}\n", descriptors.len()));
    out.push_str(&format!("learning_rate {}\n", model.learning_rate()));
    for (desc, w) in descriptors.iter().zip(model.theta().iter()) {
        out.push_str(&format!("{desc}\t{w}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_regression_snapshot<T: Scalar>(
    path: &Path,
    pool: &FeaturePool,
) -> Result<(RegressionModel<T>, Vec<usize>), SnapshotError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    expect_line(&mut lines, "churn-regression v1")?;
    let features = parse_keyed::<usize>(&mut lines, "features")?;
    let learning_rate = T::from_f64(parse_keyed::<f64>(&mut lines, "learning_rate")?);

    let index = descriptor_index(pool);
    let mut theta = Vec::with_capacity(features);
    let mut active = Vec::with_capacity(features);
    for (lineno, line) in lines {
        let (desc, value) = split_weight_line(lineno, line)?;
        let pool_idx = *index
            .get(desc)
            .ok_or_else(|| SnapshotError::UnknownDescriptor {
                line: lineno + 1,
                descriptor: desc.to_string(),
            })?;
        active.push(pool_idx);
        theta.push(parse_float::<T>(lineno, value)?);
    }
    if theta.len() != features {
        return Err(parse_err(
            0,
            format!("expected {} weight lines, found {}", features, theta.len()),
        ));
    }
    let model = RegressionModel::new(Array1::from_vec(theta), learning_rate)?;
    Ok((model, active))
}

pub fn write_mlp_snapshot<T: Scalar>(
    model: &MlpModel<T>,
    descriptors: &[FeatureDescriptor],
    path: &Path,
) -> Result<(), SnapshotError> {
    assert_eq!(
        model.feature_count(),
        descriptors.len(),
        "descriptor list must align with the input columns"
    );
    let mut out = String::new();
    out.push_str("churn-mlp v1\n");
    out.push_str(&format!(
        "features {} hidden {} classes {}\n",
        model.feature_count(),
        model.hidden_size(),
        model.classes()
    ));
    out.push_str(&format!(
        "lambda {} learning_rate {}\n",
        model.lambda(),
        model.learning_rate()
    ));
    for (j, desc) in descriptors.iter().enumerate() {
        let col: Vec<String> = model.w_in().column(j).iter().map(T::to_string).collect();
        out.push_str(&format!("feature {desc}\t{}\n", col.join(" ")));
    }
    out.push_str(&format!("bias_in\t{}\n", join_floats(model.b_in().iter())));
    for row in model.w_out().rows() {
        out.push_str(&format!("out\t{}\n", join_floats(row.iter())));
    }
    out.push_str(&format!("bias_out\t{}\n", join_floats(model.b_out().iter())));
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mlp_snapshot<T: Scalar>(
    path: &Path,
    pool: &FeaturePool,
) -> Result<(MlpModel<T>, Vec<usize>), SnapshotError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    expect_line(&mut lines, "churn-mlp v1")?;

    let (lineno, header) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing dimensions line"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "features" || parts[2] != "hidden" || parts[4] != "classes" {
        return Err(parse_err(lineno + 1, "expected `features N hidden H classes C`"));
    }
    let features: usize = parse_token(lineno, parts[1])?;
    let hidden: usize = parse_token(lineno, parts[3])?;
    let classes: usize = parse_token(lineno, parts[5])?;

    let (lineno, hyper) = lines
        .next()
        .ok_or_else(|| parse_err(3, "missing hyperparameter line"))?;
    let parts: Vec<&str> = hyper.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "lambda" || parts[2] != "learning_rate" {
        return Err(parse_err(lineno + 1, "expected `lambda L learning_rate R`"));
    }
    let lambda = T::from_f64(parse_token::<f64>(lineno, parts[1])?);
    let learning_rate = T::from_f64(parse_token::<f64>(lineno, parts[3])?);

    let index = descriptor_index(pool);
    let mut w_in = Array2::<T>::zeros((hidden, features));
    let mut active = Vec::with_capacity(features);
    for j in 0..features {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, format!("missing feature column {j}")))?;
        let rest = line
            .strip_prefix("feature ")
            .ok_or_else(|| parse_err(lineno + 1, "expected `feature <descriptor>\\t<weights>`"))?;
        let (desc, weights) = split_weight_line(lineno, rest)?;
        let pool_idx = *index
            .get(desc)
            .ok_or_else(|| SnapshotError::UnknownDescriptor {
                line: lineno + 1,
                descriptor: desc.to_string(),
            })?;
        active.push(pool_idx);
        let col = parse_floats::<T>(lineno, weights, hidden)?;
        for (h, v) in col.into_iter().enumerate() {
            w_in[(h, j)] = v;
        }
    }

    let b_in = Array1::from_vec(parse_tagged_floats::<T>(&mut lines, "bias_in", hidden)?);
    let mut w_out = Array2::<T>::zeros((classes, hidden));
    for c in 0..classes {
        let row = parse_tagged_floats::<T>(&mut lines, "out", hidden)?;
        for (h, v) in row.into_iter().enumerate() {
            w_out[(c, h)] = v;
        }
    }
    let b_out = Array1::from_vec(parse_tagged_floats::<T>(&mut lines, "bias_out", classes)?);

    let model = MlpModel::from_parts(w_in, b_in, w_out, b_out, lambda, learning_rate)?;
    Ok((model, active))
}

fn descriptor_index(pool: &FeaturePool) -> HashMap<String, usize> {
    pool.descriptors()
        .iter()
        .enumerate()
        .map(|(i, d)| (d.to_string(), i))
        .collect()
}

fn expect_line<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    expected: &str,
) -> Result<(), SnapshotError> {
    match lines.next() {
        Some((_, line)) if line == expected => Ok(()),
        Some((lineno, line)) => Err(parse_err(
            lineno + 1,
            format!("expected `{expected}`, found `{line}`"),
        )),
        None => Err(parse_err(1, "empty snapshot")),
    }
}

fn parse_keyed<'a, V: std::str::FromStr>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    key: &str,
) -> Result<V, SnapshotError> {
    let (lineno, line) = lines
        .next()
        .ok_or_else(|| parse_err(0, format!("missing `{key}` line")))?;
    let value = line
        .strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| parse_err(lineno + 1, format!("expected `{key} <value>`")))?;
    parse_token(lineno, value)
}

fn parse_token<V: std::str::FromStr>(lineno: usize, token: &str) -> Result<V, SnapshotError> {
    token
        .parse()
        .map_err(|_| parse_err(lineno + 1, format!("cannot parse `{token}`")))
}

fn parse_float<T: Scalar>(lineno: usize, token: &str) -> Result<T, SnapshotError> {
    Ok(T::from_f64(parse_token::<f64>(lineno, token)?))
}

fn parse_floats<T: Scalar>(
    lineno: usize,
    text: &str,
    expected: usize,
) -> Result<Vec<T>, SnapshotError> {
    let values: Result<Vec<T>, _> = text
        .split_whitespace()
        .map(|t| parse_float::<T>(lineno, t))
        .collect();
    let values = values?;
    if values.len() != expected {
        return Err(parse_err(
            lineno + 1,
            format!("expected {} values, found {}", expected, values.len()),
        ));
    }
    Ok(values)
}

fn parse_tagged_floats<'a, T: Scalar>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    tag: &str,
    expected: usize,
) -> Result<Vec<T>, SnapshotError> {
    let (lineno, line) = lines
        .next()
        .ok_or_else(|| parse_err(0, format!("missing `{tag}` line")))?;
    let rest = line
        .strip_prefix(tag)
        .map(|r| r.trim_start_matches('\t'))
        .ok_or_else(|| parse_err(lineno + 1, format!("expected `{tag}` line")))?;
    parse_floats(lineno, rest, expected)
}

fn split_weight_line(lineno: usize, line: &str) -> Result<(&str, &str), SnapshotError> {
    line.split_once('\t')
        .ok_or_else(|| parse_err(lineno + 1, "expected `<descriptor>\\t<weights>`"))
}

fn join_floats<'a, T: Scalar + 'a>(values: impl Iterator<Item = &'a T>) -> String {
    values.map(T::to_string).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn regression_snapshot_round_trips_bit_exactly() {
        let pool = FeaturePool::multinomial(2, 2).unwrap();
        let model =
            RegressionModel::new(array![0.1, -1.0 / 3.0, 2.0f64.sqrt()], 0.012).unwrap();
        let descs: Vec<_> = [0usize, 3, 5].iter().map(|&i| pool.get(i).clone()).collect();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.txt");
        write_regression_snapshot(&model, &descs, &path).unwrap();
        let (loaded, active) = read_regression_snapshot::<f64>(&path, &pool).unwrap();
        assert_eq!(loaded.theta(), model.theta());
        assert_eq!(loaded.learning_rate(), model.learning_rate());
        assert_eq!(active, vec![0, 3, 5]);
    }

    #[test]
    fn mlp_snapshot_round_trips_bit_exactly() {
        let pool = FeaturePool::pixels(&[0, 1, 2], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = MlpModel::<f64>::init(3, 4, 2, 3.9, 0.5, &mut rng).unwrap();
        let descs: Vec<_> = pool.descriptors()[..3].to_vec();
        let dir = tempdir().unwrap();
        let path = dir.path().join("mlp.txt");
        write_mlp_snapshot(&model, &descs, &path).unwrap();
        let (loaded, active) = read_mlp_snapshot::<f64>(&path, &pool).unwrap();
        assert_eq!(loaded.w_in(), model.w_in());
        assert_eq!(loaded.b_in(), model.b_in());
        assert_eq!(loaded.w_out(), model.w_out());
        assert_eq!(loaded.b_out(), model.b_out());
        assert_eq!(active, vec![0, 1, 2]);
    }

    #[test]
    fn unknown_descriptor_is_reported_with_line() {
        let pool = FeaturePool::multinomial(2, 1).unwrap();
        let other = FeaturePool::multinomial(2, 3).unwrap();
        let model = RegressionModel::new(array![1.0], 0.1).unwrap();
        let descs = vec![other.get(9).clone()]; // degree-3 term, absent from `pool`
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.txt");
        write_regression_snapshot(&model, &descs, &path).unwrap();
        match read_regression_snapshot::<f64>(&path, &pool) {
            Err(SnapshotError::UnknownDescriptor { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected UnknownDescriptor, got {other:?}"),
        }
    }
}
