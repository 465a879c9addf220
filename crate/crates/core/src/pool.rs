//! Feature pools: the universe of candidate features the churn engine draws
//! from.
//!
//! Two pool families are supported: all multinomial terms over a set of base
//! features up to a maximum degree (regression), and raw-pixel /
//! pixel-square / pixel-pair intensity features with deviation filtering
//! (image classification).

use std::collections::HashSet;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("base feature count and degree must both be at least 1")]
    EmptyBasis,
    #[error("pixel position list is empty")]
    NoPixels,
    #[error("duplicate pixel position {0}")]
    DuplicatePixel(usize),
    #[error("pixel position {position} out of range for {dim} inputs")]
    PixelOutOfRange { position: usize, dim: usize },
    #[error("sample has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("deviation filter needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("coverage must lie in (0, 1], got {0}")]
    BadCoverage(f64),
    #[error("duplicate descriptor {0}")]
    DuplicateDescriptor(String),
}

/// Symbolic identity of one pool feature.
///
/// Descriptors are value-comparable and hashable; a pool never contains two
/// equal descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureDescriptor {
    /// The constant feature, value 1.
    Bias,
    /// Product of base coordinates raised to the given exponents
    /// (one exponent per coordinate, total degree at least 1).
    Multinomial(Vec<u32>),
    /// A single pixel intensity.
    RawPixel(usize),
    /// The square of a pixel intensity.
    PixelSquare(usize),
    /// The product of two distinct pixel intensities; positions are stored
    /// in canonical order (first < second).
    PixelPair(usize, usize),
}

impl FeatureDescriptor {
    /// Polynomial degree of the feature (bias is 0, a pixel pair is 2, ...).
    pub fn degree(&self) -> usize {
        match self {
            FeatureDescriptor::Bias => 0,
            FeatureDescriptor::Multinomial(exps) => {
                exps.iter().map(|&e| e as usize).sum()
            }
            FeatureDescriptor::RawPixel(_) => 1,
            FeatureDescriptor::PixelSquare(_) | FeatureDescriptor::PixelPair(_, _) => 2,
        }
    }

    fn check_dim(&self, dim: usize) -> Result<(), PoolError> {
        match self {
            FeatureDescriptor::Bias => Ok(()),
            FeatureDescriptor::Multinomial(exps) => {
                if exps.len() == dim {
                    Ok(())
                } else {
                    Err(PoolError::DimensionMismatch {
                        expected: exps.len(),
                        found: dim,
                    })
                }
            }
            FeatureDescriptor::RawPixel(i) | FeatureDescriptor::PixelSquare(i) => {
                if *i < dim {
                    Ok(())
                } else {
                    Err(PoolError::PixelOutOfRange { position: *i, dim })
                }
            }
            FeatureDescriptor::PixelPair(a, b) => {
                let hi = (*a).max(*b);
                if hi < dim {
                    Ok(())
                } else {
                    Err(PoolError::PixelOutOfRange { position: hi, dim })
                }
            }
        }
    }

    fn evaluate_unchecked<T: Scalar>(&self, sample: ArrayView1<'_, T>) -> T {
        match self {
            FeatureDescriptor::Bias => T::one(),
            FeatureDescriptor::Multinomial(exps) => {
                let mut acc = T::one();
                for (value, &exp) in sample.iter().zip(exps) {
                    if exp > 0 {
                        acc = acc * value.powi(exp as i32);
                    }
                }
                acc
            }
            FeatureDescriptor::RawPixel(i) => sample[*i],
            FeatureDescriptor::PixelSquare(i) => sample[*i] * sample[*i],
            FeatureDescriptor::PixelPair(a, b) => sample[*a] * sample[*b],
        }
    }
}

/// Descriptor strings are the serialized form used in metric CSVs and model
/// snapshots: `1`, `x1^2*x3`, `px(4)`, `px(4)^2`, `px(4,9)`.
impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureDescriptor::Bias => write!(f, "1"),
            FeatureDescriptor::Multinomial(exps) => {
                let mut first = true;
                for (idx, &exp) in exps.iter().enumerate() {
                    if exp == 0 {
                        continue;
                    }
                    if !first {
                        write!(f, "*")?;
                    }
                    first = false;
                    if exp == 1 {
                        write!(f, "x{}", idx + 1)?;
                    } else {
                        write!(f, "x{}^{}", idx + 1, exp)?;
                    }
                }
                if first {
                    write!(f, "1")?;
                }
                Ok(())
            }
            FeatureDescriptor::RawPixel(i) => write!(f, "px({i})"),
            FeatureDescriptor::PixelSquare(i) => write!(f, "px({i})^2"),
            FeatureDescriptor::PixelPair(a, b) => write!(f, "px({a},{b})"),
        }
    }
}

/// An ordered, duplicate-free list of feature descriptors over inputs of a
/// fixed dimension.
///
/// The order is deterministic for a given construction, so feature indices
/// are stable identifiers across a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePool {
    descriptors: Vec<FeatureDescriptor>,
    base_dim: usize,
}

impl FeaturePool {
    /// All monomials `x1^a1 * ... * xn^an` with `0 <= sum(a) <= degree`,
    /// bias included, in graded lexicographic order (by total degree, then
    /// by exponent vector). The pool has `C(n + d, d)` entries.
    pub fn multinomial(base_features: usize, degree: usize) -> Result<Self, PoolError> {
        if base_features == 0 || degree == 0 {
            return Err(PoolError::EmptyBasis);
        }
        let mut descriptors = vec![FeatureDescriptor::Bias];
        let mut exps = vec![0u32; base_features];
        for total in 1..=degree {
            push_terms(&mut descriptors, &mut exps, 0, total as u32);
        }
        Ok(Self {
            descriptors,
            base_dim: base_features,
        })
    }

    /// Raw intensity, squared intensity and all pairwise intensity products
    /// over the given pixel positions, in that order. Pair features follow
    /// the order of `kept_pixels`.
    pub fn pixels(kept_pixels: &[usize], base_dim: usize) -> Result<Self, PoolError> {
        if kept_pixels.is_empty() {
            return Err(PoolError::NoPixels);
        }
        let mut seen = HashSet::new();
        for &p in kept_pixels {
            if p >= base_dim {
                return Err(PoolError::PixelOutOfRange {
                    position: p,
                    dim: base_dim,
                });
            }
            if !seen.insert(p) {
                return Err(PoolError::DuplicatePixel(p));
            }
        }
        let n = kept_pixels.len();
        let mut descriptors = Vec::with_capacity(2 * n + n * (n - 1) / 2);
        descriptors.extend(kept_pixels.iter().map(|&p| FeatureDescriptor::RawPixel(p)));
        descriptors.extend(kept_pixels.iter().map(|&p| FeatureDescriptor::PixelSquare(p)));
        for (i, &a) in kept_pixels.iter().enumerate() {
            for &b in &kept_pixels[i + 1..] {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                descriptors.push(FeatureDescriptor::PixelPair(lo, hi));
            }
        }
        Ok(Self {
            descriptors,
            base_dim,
        })
    }

    /// Build a pool from an explicit descriptor list, rejecting duplicates.
    pub fn from_descriptors(
        descriptors: Vec<FeatureDescriptor>,
        base_dim: usize,
    ) -> Result<Self, PoolError> {
        let mut seen = HashSet::new();
        for d in &descriptors {
            d.check_dim(base_dim)?;
            if !seen.insert(d.clone()) {
                return Err(PoolError::DuplicateDescriptor(d.to_string()));
            }
        }
        Ok(Self {
            descriptors,
            base_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    pub fn get(&self, index: usize) -> &FeatureDescriptor {
        &self.descriptors[index]
    }

    /// Count of descriptors per polynomial degree, indexed by degree.
    pub fn degree_histogram(&self) -> Vec<usize> {
        let max = self
            .descriptors
            .iter()
            .map(FeatureDescriptor::degree)
            .max()
            .unwrap_or(0);
        let mut hist = vec![0usize; max + 1];
        for d in &self.descriptors {
            hist[d.degree()] += 1;
        }
        hist
    }
}

fn push_terms(
    out: &mut Vec<FeatureDescriptor>,
    exps: &mut Vec<u32>,
    coord: usize,
    remaining: u32,
) {
    if coord + 1 == exps.len() {
        exps[coord] = remaining;
        out.push(FeatureDescriptor::Multinomial(exps.clone()));
        exps[coord] = 0;
        return;
    }
    for e in 0..=remaining {
        exps[coord] = e;
        push_terms(out, exps, coord + 1, remaining - e);
    }
    exps[coord] = 0;
}

/// Value of one feature on one raw input sample.
pub fn evaluate_feature<T: Scalar>(
    descriptor: &FeatureDescriptor,
    sample: ArrayView1<'_, T>,
) -> Result<T, PoolError> {
    descriptor.check_dim(sample.len())?;
    Ok(descriptor.evaluate_unchecked(sample))
}

/// One feature evaluated over every sample row.
pub fn evaluate_column<T: Scalar>(
    descriptor: &FeatureDescriptor,
    samples: ArrayView2<'_, T>,
) -> Result<Array1<T>, PoolError> {
    descriptor.check_dim(samples.ncols())?;
    Ok(Array1::from_iter(
        samples
            .rows()
            .into_iter()
            .map(|row| descriptor.evaluate_unchecked(row)),
    ))
}

/// Dense design matrix: entry `(i, j)` is feature `j` evaluated on sample
/// `i`. Column order follows the descriptor list exactly.
pub fn evaluate_design_matrix<T: Scalar>(
    descriptors: &[FeatureDescriptor],
    samples: ArrayView2<'_, T>,
) -> Result<Array2<T>, PoolError> {
    for d in descriptors {
        d.check_dim(samples.ncols())?;
    }
    let mut design = Array2::zeros((samples.nrows(), descriptors.len()));
    for (j, d) in descriptors.iter().enumerate() {
        for (i, row) in samples.rows().into_iter().enumerate() {
            design[(i, j)] = d.evaluate_unchecked(row);
        }
    }
    Ok(design)
}

/// Sample standard deviation (divisor `N - 1`) of every column.
pub fn column_deviations<T: Scalar>(columns: ArrayView2<'_, T>) -> Result<Vec<T>, PoolError> {
    let n = columns.nrows();
    if n < 2 {
        return Err(PoolError::TooFewSamples(n));
    }
    let denom = T::from_usize(n);
    let denom_var = T::from_usize(n - 1);
    Ok(columns
        .columns()
        .into_iter()
        .map(|col| {
            let mean = col.sum() / denom;
            let ss = col
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .fold(T::zero(), |a, b| a + b);
            (ss / denom_var).sqrt()
        })
        .collect())
}

/// Keep the highest-deviation columns covering the requested fraction of the
/// total deviation.
///
/// Columns are sorted by deviation descending (ties broken by ascending
/// position) and the minimal prefix whose deviation sum reaches
/// `coverage * total` is returned, in that sorted order.
pub fn deviation_filter<T: Scalar>(
    columns: ArrayView2<'_, T>,
    coverage: T,
) -> Result<Vec<usize>, PoolError> {
    let stds = column_deviations(columns)?;
    deviation_filter_from_stds(&stds, coverage)
}

/// The selection half of [`deviation_filter`], reusable when column
/// deviations are computed in streaming fashion.
pub fn deviation_filter_from_stds<T: Scalar>(
    stds: &[T],
    coverage: T,
) -> Result<Vec<usize>, PoolError> {
    if coverage <= T::zero() || coverage > T::one() {
        return Err(PoolError::BadCoverage(coverage.as_f64()));
    }
    let mut order: Vec<usize> = (0..stds.len()).collect();
    order.sort_by(|&a, &b| {
        stds[b]
            .partial_cmp(&stds[a])
            .expect("finite deviations")
            .then(a.cmp(&b))
    });
    // Total accumulated in sorted order so the full prefix sum reaches it
    // exactly.
    let total = order.iter().fold(T::zero(), |acc, &i| acc + stds[i]);
    if total == T::zero() {
        return Ok(Vec::new());
    }
    let target = coverage * total;
    let mut cum = T::zero();
    let mut kept = Vec::new();
    for &i in &order {
        cum = cum + stds[i];
        kept.push(i);
        if cum >= target {
            break;
        }
    }
    Ok(kept)
}
