//! Dataset construction: the synthetic polynomial regression task, IDX image
//! parsing, image reduction and train/test splits.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::pool::{evaluate_column, FeatureDescriptor, FeaturePool, PoolError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated IDX payload: expected {expected} bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("requested {requested} samples, only {available} available")]
    NotEnoughSamples {
        requested: usize,
        available: usize,
    },
    #[error("train size {train_n} must be positive and below {total}")]
    BadSplit { train_n: usize, total: usize },
    #[error("label {label} exceeds the 0..=9 digit range")]
    BadLabel { label: usize },
    #[error("images must be larger than the 8-pixel crop border, got {width}x{height}")]
    TooSmallToReduce { width: usize, height: usize },
    #[error(transparent)]
    Pool(#[from] PoolError),
}

/// The synthetic regression task: targets are an exact linear combination of
/// a hidden subset of pool features evaluated on Gaussian inputs.
#[derive(Debug, Clone)]
pub struct RegressionDataset<T> {
    pub train_inputs: Array2<T>,
    pub train_targets: Array1<T>,
    pub test_inputs: Array2<T>,
    pub test_targets: Array1<T>,
    /// The generating features and their coefficients, kept so the ground
    /// truth is always reproducible.
    pub generating: Vec<(FeatureDescriptor, T)>,
}

/// Parameters of the synthetic task.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub base_features: usize,
    pub degree: usize,
    /// How many pool features the target combines.
    pub support: usize,
    pub train_n: usize,
    pub test_n: usize,
    /// Standard deviation of additive Gaussian target noise (0 = noiseless).
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            base_features: 10,
            degree: 5,
            support: 50,
            train_n: 10_000,
            test_n: 2_000,
            noise_std: 0.0,
        }
    }
}

/// Draw the synthetic regression dataset. Fully reproducible from the seed:
/// inputs, generating support, coefficients and noise all come from one
/// seeded generator, in that order.
pub fn synth_regression<T>(config: &SynthConfig, seed: u64) -> Result<RegressionDataset<T>, DataError>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
{
    let pool = FeaturePool::multinomial(config.base_features, config.degree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let total = config.train_n + config.test_n;
    let mut inputs = Array2::<T>::zeros((total, config.base_features));
    for v in inputs.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }

    let mut support = rand::seq::index::sample(&mut rng, pool.len(), config.support).into_vec();
    support.sort_unstable();
    let coef_dist = Uniform::new(T::from_f64(-1.0), T::from_f64(1.0));
    let generating: Vec<(FeatureDescriptor, T)> = support
        .iter()
        .map(|&i| (pool.get(i).clone(), rng.sample(&coef_dist)))
        .collect();

    let mut targets = Array1::<T>::zeros(total);
    for (desc, coef) in &generating {
        let column = evaluate_column(desc, inputs.view())?;
        targets.zip_mut_with(&column, |t, &c| *t = *t + *coef * c);
    }
    if config.noise_std > 0.0 {
        let scale = T::from_f64(config.noise_std);
        for t in targets.iter_mut() {
            let z: T = StandardNormal.sample(&mut rng);
            *t = *t + scale * z;
        }
    }

    let (train_inputs, test_inputs) = split_rows(&inputs, config.train_n);
    let train_targets = targets.slice(ndarray::s![..config.train_n]).to_owned();
    let test_targets = targets.slice(ndarray::s![config.train_n..]).to_owned();
    Ok(RegressionDataset {
        train_inputs,
        train_targets,
        test_inputs,
        test_targets,
        generating,
    })
}

fn split_rows<T: Scalar>(matrix: &Array2<T>, at: usize) -> (Array2<T>, Array2<T>) {
    (
        matrix.slice(ndarray::s![..at, ..]).to_owned(),
        matrix.slice(ndarray::s![at.., ..]).to_owned(),
    )
}

/// Images as flattened intensity rows in `[0, 1]` plus digit labels.
#[derive(Debug, Clone)]
pub struct ImageDataset<T> {
    pub pixels: Array2<T>,
    pub labels: Vec<usize>,
    pub width: usize,
    pub height: usize,
}

impl<T: Scalar> ImageDataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Parse an IDX image/label file pair: big-endian magic and dimensions,
/// unsigned-byte payload. Intensities are scaled to `[0, 1]` by `/ 255`.
pub fn load_idx<T: Scalar>(
    images_path: &Path,
    labels_path: &Path,
) -> Result<ImageDataset<T>, DataError> {
    let images_raw = read_file(images_path)?;
    let labels_raw = read_file(labels_path)?;

    let ipath = images_path.display().to_string();
    let magic = read_be_u32(&images_raw, 0, &ipath)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: ipath,
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(&images_raw, 4, &ipath)? as usize;
    let height = read_be_u32(&images_raw, 8, &ipath)? as usize;
    let width = read_be_u32(&images_raw, 12, &ipath)? as usize;
    let expected = 16 + count * height * width;
    if images_raw.len() != expected {
        return Err(DataError::Truncated {
            path: ipath,
            expected,
            found: images_raw.len(),
        });
    }

    let lpath = labels_path.display().to_string();
    let magic = read_be_u32(&labels_raw, 0, &lpath)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: lpath,
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = read_be_u32(&labels_raw, 4, &lpath)? as usize;
    let expected = 8 + label_count;
    if labels_raw.len() != expected {
        return Err(DataError::Truncated {
            path: lpath,
            expected,
            found: labels_raw.len(),
        });
    }
    if count != label_count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let scale = T::from_f64(255.0);
    let pixels = Array2::from_shape_vec(
        (count, height * width),
        images_raw[16..]
            .iter()
            .map(|&b| T::from_usize(b as usize) / scale)
            .collect(),
    )
    .expect("shape matches payload length");
    let labels: Vec<usize> = labels_raw[8..].iter().map(|&b| b as usize).collect();
    for &label in &labels {
        if label > 9 {
            return Err(DataError::BadLabel { label });
        }
    }
    Ok(ImageDataset {
        pixels,
        labels,
        width,
        height,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            path: path.to_string(),
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// How the image side length is reduced by 8 pixels (e.g. 28 -> 20).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMethod {
    /// Drop a 4-pixel border on every side.
    CenterCrop,
    /// Bilinear resample to the reduced size (pixel-center alignment).
    Bilinear,
}

/// Subsample `n` images (label-stratified, seeded) and shrink each image by
/// 8 pixels per side.
pub fn reduce_images<T: Scalar>(
    raw: &ImageDataset<T>,
    n: usize,
    seed: u64,
    method: ReduceMethod,
) -> Result<ImageDataset<T>, DataError> {
    if n > raw.len() {
        return Err(DataError::NotEnoughSamples {
            requested: n,
            available: raw.len(),
        });
    }
    if raw.width <= 8 || raw.height <= 8 {
        return Err(DataError::TooSmallToReduce {
            width: raw.width,
            height: raw.height,
        });
    }
    let selected = stratified_sample(&raw.labels, n, seed);

    let out_h = raw.height - 8;
    let out_w = raw.width - 8;
    let mut pixels = Array2::<T>::zeros((n, out_h * out_w));
    let mut labels = Vec::with_capacity(n);
    for (row, &src) in selected.iter().enumerate() {
        let image = raw.pixels.row(src);
        let mut out = pixels.row_mut(row);
        match method {
            ReduceMethod::CenterCrop => {
                for r in 0..out_h {
                    for c in 0..out_w {
                        out[r * out_w + c] = image[(r + 4) * raw.width + (c + 4)];
                    }
                }
            }
            ReduceMethod::Bilinear => {
                bilinear_resample(&image, raw.width, raw.height, out_w, out_h, &mut out);
            }
        }
        labels.push(raw.labels[src]);
    }
    Ok(ImageDataset {
        pixels,
        labels,
        width: out_w,
        height: out_h,
    })
}

/// Proportional per-class sample, remainders assigned by largest fraction
/// (ties to the lower class). Selected indices come back in original order.
fn stratified_sample(labels: &[usize], n: usize, seed: u64) -> Vec<usize> {
    let total = labels.len();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, &label) in labels.iter().enumerate() {
        per_class[label].push(i);
    }
    let mut take = [0usize; 10];
    let mut fractions: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (class, members) in per_class.iter().enumerate() {
        let exact = n as f64 * members.len() as f64 / total as f64;
        let floor = exact.floor() as usize;
        take[class] = floor.min(members.len());
        assigned += take[class];
        fractions.push((class, exact - floor as f64));
    }
    fractions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut remaining = n - assigned;
    for &(class, _) in fractions.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if take[class] < per_class[class].len() {
            take[class] += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = Vec::with_capacity(n);
    for (class, members) in per_class.iter().enumerate() {
        if take[class] == members.len() {
            selected.extend_from_slice(members);
        } else if take[class] > 0 {
            let idx = rand::seq::index::sample(&mut rng, members.len(), take[class]);
            selected.extend(idx.iter().map(|i| members[i]));
        }
    }
    selected.sort_unstable();
    selected
}

fn bilinear_resample<T: Scalar>(
    image: &ndarray::ArrayView1<'_, T>,
    in_w: usize,
    in_h: usize,
    out_w: usize,
    out_h: usize,
    out: &mut ndarray::ArrayViewMut1<'_, T>,
) {
    let half = T::from_f64(0.5);
    let one = T::one();
    let scale_r = T::from_usize(in_h) / T::from_usize(out_h);
    let scale_c = T::from_usize(in_w) / T::from_usize(out_w);
    for r in 0..out_h {
        let sr = (T::from_usize(r) + half) * scale_r - half;
        let r0 = sr.floor();
        let fr = sr - r0;
        let r0 = clamp_index(r0, in_h);
        let r1 = (r0 + 1).min(in_h - 1);
        for c in 0..out_w {
            let sc = (T::from_usize(c) + half) * scale_c - half;
            let c0 = sc.floor();
            let fc = sc - c0;
            let c0 = clamp_index(c0, in_w);
            let c1 = (c0 + 1).min(in_w - 1);
            let v = image[r0 * in_w + c0] * (one - fr) * (one - fc)
                + image[r1 * in_w + c0] * fr * (one - fc)
                + image[r0 * in_w + c1] * (one - fr) * fc
                + image[r1 * in_w + c1] * fr * fc;
            out[r * out_w + c] = v;
        }
    }
}

fn clamp_index<T: Scalar>(value: T, len: usize) -> usize {
    if value <= T::zero() {
        0
    } else {
        (value.as_f64() as usize).min(len - 1)
    }
}

/// Seeded shuffle, then split into the first `train_n` and the rest.
pub fn split_dataset<T: Scalar>(
    dataset: &ImageDataset<T>,
    train_n: usize,
    seed: u64,
) -> Result<(ImageDataset<T>, ImageDataset<T>), DataError> {
    let total = dataset.len();
    if train_n == 0 || train_n >= total {
        return Err(DataError::BadSplit { train_n, total });
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let gather = |indices: &[usize]| -> ImageDataset<T> {
        let mut pixels = Array2::<T>::zeros((indices.len(), dataset.pixels.ncols()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &src) in indices.iter().enumerate() {
            pixels.row_mut(row).assign(&dataset.pixels.row(src));
            labels.push(dataset.labels[src]);
        }
        ImageDataset {
            pixels,
            labels,
            width: dataset.width,
            height: dataset.height,
        }
    };
    Ok((gather(&order[..train_n]), gather(&order[train_n..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_synth() -> SynthConfig {
        SynthConfig {
            base_features: 3,
            degree: 2,
            support: 4,
            train_n: 40,
            test_n: 10,
            noise_std: 0.0,
        }
    }

    #[test]
    fn synth_targets_reproduce_from_generating_features() {
        let ds = synth_regression::<f64>(&tiny_synth(), 3).unwrap();
        let mut rebuilt = Array1::<f64>::zeros(ds.train_targets.len());
        for (desc, coef) in &ds.generating {
            let col = evaluate_column(desc, ds.train_inputs.view()).unwrap();
            rebuilt.zip_mut_with(&col, |t, &c| *t += coef * c);
        }
        for (a, b) in rebuilt.iter().zip(ds.train_targets.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn synth_split_sizes_match_config() {
        let ds = synth_regression::<f64>(&tiny_synth(), 0).unwrap();
        assert_eq!(ds.train_inputs.nrows(), 40);
        assert_eq!(ds.test_inputs.nrows(), 10);
        assert_eq!(ds.train_targets.len(), 40);
        assert_eq!(ds.test_targets.len(), 10);
        assert_eq!(ds.generating.len(), 4);
    }

    #[test]
    fn synth_is_seed_reproducible() {
        let a = synth_regression::<f64>(&tiny_synth(), 9).unwrap();
        let b = synth_regression::<f64>(&tiny_synth(), 9).unwrap();
        assert_eq!(a.train_inputs, b.train_inputs);
        assert_eq!(a.train_targets, b.train_targets);
        assert_eq!(a.generating, b.generating);
        let c = synth_regression::<f64>(&tiny_synth(), 10).unwrap();
        assert_ne!(a.train_targets, c.train_targets);
    }

    fn idx_fixture(dir: &Path, images: &[[u8; 4]], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut ibytes = Vec::new();
        ibytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        ibytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
        ibytes.extend_from_slice(&2u32.to_be_bytes());
        ibytes.extend_from_slice(&2u32.to_be_bytes());
        for img in images {
            ibytes.extend_from_slice(img);
        }
        let mut lbytes = Vec::new();
        lbytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        lbytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lbytes.extend_from_slice(labels);
        let ipath = dir.join("images-idx3-ubyte");
        let lpath = dir.join("labels-idx1-ubyte");
        fs::write(&ipath, ibytes).unwrap();
        fs::write(&lpath, lbytes).unwrap();
        (ipath, lpath)
    }

    #[test]
    fn idx_round_trip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let (ipath, lpath) = idx_fixture(dir.path(), &[[0, 128, 255, 64]], &[7]);
        let ds = load_idx::<f64>(&ipath, &lpath).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!((ds.width, ds.height), (2, 2));
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.pixels[(0, 2)], 1.0);
        assert_eq!(ds.pixels[(0, 0)], 0.0);
        assert!((ds.pixels[(0, 1)] - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn idx_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ipath, lpath) = idx_fixture(dir.path(), &[[0, 0, 0, 0]], &[1]);
        let mut bytes = fs::read(&ipath).unwrap();
        bytes[3] = 0x99;
        fs::write(&ipath, bytes).unwrap();
        assert!(matches!(
            load_idx::<f64>(&ipath, &lpath),
            Err(DataError::BadMagic { .. })
        ));
    }

    #[test]
    fn idx_reports_truncation_with_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (ipath, lpath) = idx_fixture(dir.path(), &[[0, 0, 0, 0]], &[1]);
        let bytes = fs::read(&ipath).unwrap();
        fs::write(&ipath, &bytes[..bytes.len() - 2]).unwrap();
        match load_idx::<f64>(&ipath, &lpath) {
            Err(DataError::Truncated {
                expected, found, ..
            }) => {
                assert_eq!(expected, 20);
                assert_eq!(found, 18);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn idx_rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ipath, lpath) = idx_fixture(dir.path(), &[[0, 0, 0, 0]], &[1, 2]);
        assert!(matches!(
            load_idx::<f64>(&ipath, &lpath),
            Err(DataError::CountMismatch {
                images: 1,
                labels: 2
            })
        ));
    }

    fn impulse_dataset(width: usize, height: usize, at: (usize, usize)) -> ImageDataset<f64> {
        let mut pixels = Array2::<f64>::zeros((1, width * height));
        pixels[(0, at.0 * width + at.1)] = 1.0;
        ImageDataset {
            pixels,
            labels: vec![3],
            width,
            height,
        }
    }

    #[test]
    fn crop_maps_output_to_offset_input_pixels() {
        // impulse at input (r, c) = (9, 11) must land at output (5, 7)
        let raw = impulse_dataset(28, 28, (9, 11));
        let reduced = reduce_images(&raw, 1, 0, ReduceMethod::CenterCrop).unwrap();
        assert_eq!((reduced.width, reduced.height), (20, 20));
        for r in 0..20 {
            for c in 0..20 {
                let expected = if (r, c) == (5, 7) { 1.0 } else { 0.0 };
                assert_eq!(reduced.pixels[(0, r * 20 + c)], expected);
            }
        }
        assert_eq!(reduced.labels, vec![3]);
    }

    #[test]
    fn crop_preserves_mass_of_centered_images() {
        let mut raw = impulse_dataset(28, 28, (14, 14));
        raw.pixels[(0, 10 * 28 + 10)] = 0.5;
        let before: f64 = raw.pixels.row(0).sum();
        let reduced = reduce_images(&raw, 1, 0, ReduceMethod::CenterCrop).unwrap();
        let after: f64 = reduced.pixels.row(0).sum();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn bilinear_preserves_constant_images() {
        let mut raw = impulse_dataset(28, 28, (0, 0));
        raw.pixels.fill(0.25);
        let reduced = reduce_images(&raw, 1, 0, ReduceMethod::Bilinear).unwrap();
        for &v in reduced.pixels.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn reduce_rejects_oversized_requests() {
        let raw = impulse_dataset(28, 28, (0, 0));
        assert!(matches!(
            reduce_images(&raw, 2, 0, ReduceMethod::CenterCrop),
            Err(DataError::NotEnoughSamples { .. })
        ));
    }

    fn labeled_dataset(labels: Vec<usize>) -> ImageDataset<f64> {
        let n = labels.len();
        let mut pixels = Array2::<f64>::zeros((n, 9));
        for i in 0..n {
            pixels[(i, 0)] = i as f64;
        }
        ImageDataset {
            pixels,
            labels,
            width: 3,
            height: 3,
        }
    }

    #[test]
    fn stratified_subsample_keeps_class_proportions() {
        let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let ds = labeled_dataset(labels);
        let selected = stratified_sample(&ds.labels, 50, 1);
        assert_eq!(selected.len(), 50);
        let mut counts = [0usize; 10];
        for &i in &selected {
            counts[ds.labels[i]] += 1;
        }
        for class in 0..5 {
            assert_eq!(counts[class], 10);
        }
        // full-size request returns every index in original order
        let all = stratified_sample(&ds.labels, 100, 1);
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let ds = labeled_dataset(labels);
        let (train, test) = split_dataset(&ds, 15, 4).unwrap();
        assert_eq!(train.len(), 15);
        assert_eq!(test.len(), 5);
        let mut seen: Vec<f64> = train
            .pixels
            .column(0)
            .iter()
            .chain(test.pixels.column(0).iter())
            .copied()
            .collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, (0..20).map(|i| i as f64).collect::<Vec<_>>());

        let (train2, _) = split_dataset(&ds, 15, 4).unwrap();
        assert_eq!(train.pixels, train2.pixels);
        assert_eq!(train.labels, train2.labels);
    }

    #[test]
    fn split_rejects_bad_sizes() {
        let ds = labeled_dataset(vec![0, 1, 0, 1]);
        assert!(matches!(
            split_dataset(&ds, 0, 0),
            Err(DataError::BadSplit { .. })
        ));
        assert!(matches!(
            split_dataset(&ds, 4, 0),
            Err(DataError::BadSplit { .. })
        ));
    }
}
