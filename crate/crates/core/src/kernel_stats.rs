//! Two-sample distribution-gap statistics.
//!
//! The squared maximum mean discrepancy between samples `X = {x_i}` and
//! `Y = {y_j}` under an RBF kernel `k`:
//!
//! ```text
//! MMD²(X, Y) = 1/n_s² Σ_ij k(x_i, x_j) + 1/n_t² Σ_ij k(y_i, y_j) − 2/(n_s n_t) Σ_ij k(x_i, y_j)
//! ```
//!
//! The feature map of the kernel is never materialized; everything goes
//! through `k`. Kernel sums are computed row by row (rows may run on the
//! rayon pool) and then reduced sequentially in row order, so results do not
//! depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pooled sample count above which the median heuristic works on an evenly
/// spaced subsample instead of all pairs.
pub const MEDIAN_MAX_POINTS: usize = 2000;

/// What a feature matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    ImageHigh,
    ImageLow,
    QuestionSemantic,
    QuestionSyntax,
    Generic,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::ImageHigh => 0,
            Modality::ImageLow => 1,
            Modality::QuestionSemantic => 2,
            Modality::QuestionSyntax => 3,
            Modality::Generic => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Modality::ImageHigh,
            1 => Modality::ImageLow,
            2 => Modality::QuestionSemantic,
            3 => Modality::QuestionSyntax,
            4 => Modality::Generic,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::ImageHigh => "image_high",
            Modality::ImageLow => "image_low",
            Modality::QuestionSemantic => "question_semantic",
            Modality::QuestionSyntax => "question_syntax",
            Modality::Generic => "generic",
        }
    }
}

/// `n × d` matrix of per-sample embeddings, row-major, single-precision
/// storage. Arithmetic on it is carried out in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
    pub modality: Modality,
    pub provenance: String,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f32>, modality: Modality) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("feature matrix rows"));
        }
        if d == 0 {
            return Err(Error::Empty("feature matrix columns"));
        }
        if values.len() != n * d {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{d} = {} values", n * d),
                got: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Self { n, d, values, modality, provenance: String::new() })
    }

    /// Builds a matrix from `f64` rows, rounding to single precision.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], modality: Modality) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch(d, r.len()));
            }
            values.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(rows.len(), d, values, modality)
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.d)
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    /// Returns the rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidParameter(format!("row {i} out of range {}", self.n)));
            }
            values.extend_from_slice(self.row(i));
        }
        Ok(Self::new(indices.len(), self.d, values, self.modality)?.with_provenance(self.provenance.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance over the pooled two samples.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { kind: KernelKind::Rbf, bandwidth: Bandwidth::Median }
    }
}

impl KernelConfig {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidBandwidth(sigma));
        }
        Ok(Self { kind: KernelKind::Rbf, bandwidth: Bandwidth::Fixed(sigma) })
    }

    pub fn median() -> Self {
        Self::default()
    }

    /// The concrete σ used for the pair `(x, y)`.
    pub fn resolve(&self, x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => Ok(s),
            Bandwidth::Fixed(s) => Err(Error::InvalidBandwidth(s)),
            Bandwidth::Median => median_bandwidth(x, y),
        }
    }
}

/// `exp(−‖x−y‖² / (2σ²))`.
pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(x.len(), y.len()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidBandwidth(sigma));
    }
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-sq / (2.0 * sigma * sigma)).exp())
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&u, &v) in a.iter().zip(b) {
        let t = u as f64 - v as f64;
        acc += t * t;
    }
    acc
}

fn check_dims(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<()> {
    if x.d != y.d {
        return Err(Error::DimensionMismatch(x.d, y.d));
    }
    Ok(())
}

fn median_of(mut values: Vec<f64>) -> f64 {
    let m = values.len();
    let upper = m / 2;
    let (_, hi, _) = values.select_nth_unstable_by(upper, f64::total_cmp);
    let hi = *hi;
    if m % 2 == 1 {
        hi
    } else {
        let lo = values[..upper].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Median of the pairwise Euclidean distances (`i < j`) over the pooled
/// samples. Falls back to 1.0 when the median is zero.
///
/// Pools larger than [`MEDIAN_MAX_POINTS`] are reduced to an evenly spaced
/// subsample first.
pub fn median_bandwidth(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    check_dims(x, y)?;
    let total = x.n + y.n;
    if total < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: total });
    }
    let pooled = |i: usize| if i < x.n { x.row(i) } else { y.row(i - x.n) };
    let picked: Vec<&[f32]> = if total <= MEDIAN_MAX_POINTS {
        (0..total).map(pooled).collect()
    } else {
        (0..MEDIAN_MAX_POINTS).map(|k| pooled(k * total / MEDIAN_MAX_POINTS)).collect()
    };
    let dists: Vec<f64> = picked
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, a)| picked[i + 1..].iter().map(move |b| sq_dist(a, b).sqrt()))
        .collect();
    let med = median_of(dists);
    Ok(if med > 0.0 { med } else { 1.0 })
}

/// Σ_ij k(a_i, a_j) over all ordered pairs, diagonal included.
fn self_kernel_sum(a: &FeatureMatrix, gamma: f64, skip_diagonal: bool) -> f64 {
    let partial: Vec<f64> = (0..a.n)
        .into_par_iter()
        .map(|i| {
            let ri = a.row(i);
            let mut s = 0.0;
            for j in (i + 1)..a.n {
                s += (-gamma * sq_dist(ri, a.row(j))).exp();
            }
            s
        })
        .collect();
    let off: f64 = partial.iter().sum();
    let diag = if skip_diagonal { 0.0 } else { a.n as f64 };
    2.0 * off + diag
}

fn cross_kernel_sum(a: &FeatureMatrix, b: &FeatureMatrix, gamma: f64) -> f64 {
    let partial: Vec<f64> = (0..a.n)
        .into_par_iter()
        .map(|i| {
            let ri = a.row(i);
            b.rows().map(|rj| (-gamma * sq_dist(ri, rj)).exp()).sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

fn gamma_for(sigma: f64) -> f64 {
    1.0 / (2.0 * sigma * sigma)
}

/// Biased (V-statistic) squared MMD, exactly the three-sum expansion.
/// Rounding residue within `1e-12` below zero is clamped to zero.
pub fn mmd_squared_biased(x: &FeatureMatrix, y: &FeatureMatrix, k: &KernelConfig) -> Result<f64> {
    check_dims(x, y)?;
    let sigma = k.resolve(x, y)?;
    mmd_squared_biased_with_sigma(x, y, sigma)
}

pub(crate) fn mmd_squared_biased_with_sigma(x: &FeatureMatrix, y: &FeatureMatrix, sigma: f64) -> Result<f64> {
    check_dims(x, y)?;
    let gamma = gamma_for(sigma);
    let (ns, nt) = (x.n as f64, y.n as f64);
    let kxx = self_kernel_sum(x, gamma, false);
    let kyy = self_kernel_sum(y, gamma, false);
    let kxy = cross_kernel_sum(x, y, gamma);
    let v = kxx / (ns * ns) + kyy / (nt * nt) - 2.0 * kxy / (ns * nt);
    Ok(if v < 0.0 && v > -1e-12 { 0.0 } else { v })
}

/// Unbiased (U-statistic) squared MMD; may be slightly negative.
pub fn mmd_squared_unbiased(x: &FeatureMatrix, y: &FeatureMatrix, k: &KernelConfig) -> Result<f64> {
    check_dims(x, y)?;
    let smaller = x.n.min(y.n);
    if smaller < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: smaller });
    }
    let sigma = k.resolve(x, y)?;
    let gamma = gamma_for(sigma);
    let (ns, nt) = (x.n as f64, y.n as f64);
    let kxx = self_kernel_sum(x, gamma, true);
    let kyy = self_kernel_sum(y, gamma, true);
    let kxy = cross_kernel_sum(x, y, gamma);
    Ok(kxx / (ns * (ns - 1.0)) + kyy / (nt * (nt - 1.0)) - 2.0 * kxy / (ns * nt))
}

/// First and second raw moments of a sample: mean vector and `(1/n) Σ x xᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub second: Vec<f64>,
}

impl Moments {
    pub fn of_rows<'a, I>(rows: I, d: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        let mut n = 0usize;
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch(d, r.len()));
            }
            n += 1;
            for a in 0..d {
                mean[a] += r[a];
                let row = &mut second[a * d..(a + 1) * d];
                for (s, &rb) in row.iter_mut().zip(r) {
                    *s += r[a] * rb;
                }
            }
        }
        if n == 0 {
            return Err(Error::Empty("moment sample"));
        }
        let inv = 1.0 / n as f64;
        mean.iter_mut().for_each(|v| *v *= inv);
        second.iter_mut().for_each(|v| *v *= inv);
        Ok(Self { mean, second })
    }

    /// `‖m₁ − m₁'‖² + ‖m₂ − m₂'‖_F²`.
    pub fn distance(&self, other: &Moments) -> f64 {
        let m: f64 = self.mean.iter().zip(&other.mean).map(|(a, b)| (a - b) * (a - b)).sum();
        let s: f64 = self.second.iter().zip(&other.second).map(|(a, b)| (a - b) * (a - b)).sum();
        m + s
    }
}

/// Squared distance between first and second raw moments of two samples.
pub fn moment_distance(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    check_dims(x, y)?;
    let rx: Vec<Vec<f64>> = (0..x.n).map(|i| x.row_f64(i)).collect();
    let ry: Vec<Vec<f64>> = (0..y.n).map(|i| y.row_f64(i)).collect();
    let mx = Moments::of_rows(rx.iter().map(|r| r.as_slice()), x.d)?;
    let my = Moments::of_rows(ry.iter().map(|r| r.as_slice()), y.d)?;
    Ok(mx.distance(&my))
}

/// Standardizes both samples with the pooled per-column mean and standard
/// deviation. Columns with zero spread are only centered.
pub fn zscore_pooled(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<(FeatureMatrix, FeatureMatrix)> {
    check_dims(x, y)?;
    let d = x.d;
    let total = (x.n + y.n) as f64;
    let mut mean = vec![0.0f64; d];
    for r in x.rows().chain(y.rows()) {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut var = vec![0.0f64; d];
    for r in x.rows().chain(y.rows()) {
        for ((s, &v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / total).sqrt()).collect();
    let apply = |a: &FeatureMatrix| -> Result<FeatureMatrix> {
        let values = a
            .rows()
            .flat_map(|r| {
                r.iter().enumerate().map(|(j, &v)| {
                    let c = v as f64 - mean[j];
                    (if std[j] > 0.0 { c / std[j] } else { c }) as f32
                })
            })
            .collect();
        Ok(FeatureMatrix::new(a.n, d, values, a.modality)?.with_provenance(a.provenance.clone()))
    };
    Ok((apply(x)?, apply(y)?))
}
