//! Datasets of (image feature, question, optional answer) samples.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel_stats::{FeatureMatrix, Modality};
use crate::text_syntax::QuestionRecord;

/// Lowercase and trim, the only answer normalization applied.
pub fn normalize_answer(a: &str) -> String {
    a.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Vec<f32>,
    pub question: QuestionRecord,
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub name: String,
    pub domain_tag: String,
    dim: usize,
    samples: Vec<Sample>,
    token_vocab: Vec<String>,
}

impl ToyDataset {
    /// Validates uniform feature dimension, finiteness and that either every
    /// sample or none carries an answer.
    pub fn new(
        name: impl Into<String>,
        domain_tag: impl Into<String>,
        dim: usize,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("feature dimension must be positive".into()));
        }
        let labeled = samples.first().map(|s| s.answer.is_some());
        for s in &samples {
            if s.image.len() != dim {
                return Err(Error::DimensionMismatch(dim, s.image.len()));
            }
            if s.image.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("image features"));
            }
            if Some(s.answer.is_some()) != labeled {
                return Err(Error::InvalidParameter("dataset mixes labeled and unlabeled samples".into()));
            }
        }
        let token_vocab = samples
            .iter()
            .flat_map(|s| s.question.tokens.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self { name: name.into(), domain_tag: domain_tag.into(), dim, samples, token_vocab })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Sorted distinct question tokens.
    pub fn token_vocab(&self) -> &[String] {
        &self.token_vocab
    }

    pub fn is_labeled(&self) -> bool {
        self.samples.first().is_some_and(|s| s.answer.is_some())
    }

    pub fn answers(&self) -> Option<Vec<&str>> {
        self.samples.iter().map(|s| s.answer.as_deref()).collect()
    }

    pub fn image_matrix(&self) -> Result<FeatureMatrix> {
        let values = self.samples.iter().flat_map(|s| s.image.iter().copied()).collect();
        Ok(FeatureMatrix::new(self.len(), self.dim, values, Modality::ImageHigh)?.with_provenance(self.name.clone()))
    }

    pub fn questions(&self) -> Vec<QuestionRecord> {
        self.samples.iter().map(|s| s.question.clone()).collect()
    }

    /// Copy with every answer removed.
    pub fn without_labels(&self) -> ToyDataset {
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|s| s.answer = None);
        out
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<ToyDataset> {
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            samples.push(
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidParameter(format!("sample {i} out of range")))?,
            );
        }
        ToyDataset::new(name, self.domain_tag.clone(), self.dim, samples)
    }

    /// `[0, at)` and `[at, len)`.
    pub fn split_at(&self, at: usize) -> Result<(ToyDataset, ToyDataset)> {
        let at = at.min(self.len());
        let first: Vec<usize> = (0..at).collect();
        let second: Vec<usize> = (at..self.len()).collect();
        Ok((self.subset(&first, format!("{}_a", self.name))?, self.subset(&second, format!("{}_b", self.name))?))
    }

    /// Read-only view without access to answers.
    pub fn unlabeled(&self) -> UnlabeledView<'_> {
        UnlabeledView { ds: self }
    }

    pub(crate) fn map_samples(&self, tag: String, f: impl Fn(usize, &Sample) -> Result<Sample>) -> Result<ToyDataset> {
        let samples = self.samples.iter().enumerate().map(|(i, s)| f(i, s)).collect::<Result<Vec<_>>>()?;
        ToyDataset::new(self.name.clone(), tag, self.dim, samples)
    }
}

/// Images and questions of a dataset; answers are not reachable through it.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledView<'a> {
    ds: &'a ToyDataset,
}

impl<'a> UnlabeledView<'a> {
    pub fn len(&self) -> usize {
        self.ds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ds.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.ds.dim
    }

    pub fn image(&self, i: usize) -> &'a [f32] {
        &self.ds.samples[i].image
    }

    pub fn tokens(&self, i: usize) -> &'a [String] {
        &self.ds.samples[i].question.tokens
    }

    pub fn image_matrix(&self) -> Result<FeatureMatrix> {
        self.ds.image_matrix()
    }
}

/// Seeded disjoint partitions; split `k` holds `floor(fractions[k] · n)` samples.
pub fn split_dataset(ds: &ToyDataset, fractions: &[f64], seed: u64) -> Result<Vec<ToyDataset>> {
    if fractions.is_empty() {
        return Err(Error::InvalidParameter("no split fractions".into()));
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::InvalidParameter(format!("fractions must be in (0, 1]: {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!("fractions sum to {total} > 1")));
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut start = 0;
    let mut out = Vec::with_capacity(fractions.len());
    for (k, &f) in fractions.iter().enumerate() {
        let size = ((f * n as f64).floor() as usize).min(n - start);
        out.push(ds.subset(&order[start..start + size], format!("{}_split{k}", ds.name))?);
        start += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> ToyDataset {
        let samples = (0..n)
            .map(|i| Sample {
                image: vec![i as f32, 1.0],
                question: QuestionRecord::new(format!("what is {i}?")),
                answer: Some(format!("a{}", i % 3)),
            })
            .collect();
        ToyDataset::new("tiny", "src", 2, samples).unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = tiny(1000);
        let parts = split_dataset(&ds, &[0.1], 4).unwrap();
        assert_eq!(parts[0].len(), 100);
        let parts = split_dataset(&ds, &[0.25, 0.5, 0.25], 4).unwrap();
        let mut seen = BTreeSet::new();
        for p in &parts {
            for s in p.samples() {
                assert!(seen.insert(s.image[0] as i64));
            }
        }
        assert_eq!(seen.len(), 1000);
    }

    #[test]
    fn full_split_is_a_permutation() {
        let ds = tiny(37);
        let p = split_dataset(&ds, &[1.0], 1).unwrap().remove(0);
        let mut a: Vec<i64> = p.samples().iter().map(|s| s.image[0] as i64).collect();
        a.sort();
        assert_eq!(a, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_seeded() {
        let ds = tiny(50);
        assert_eq!(split_dataset(&ds, &[0.3], 9).unwrap(), split_dataset(&ds, &[0.3], 9).unwrap());
        assert_ne!(split_dataset(&ds, &[0.3], 9).unwrap(), split_dataset(&ds, &[0.3], 10).unwrap());
    }

    #[test]
    fn bad_fractions() {
        let ds = tiny(10);
        assert!(split_dataset(&ds, &[], 0).is_err());
        assert!(split_dataset(&ds, &[0.0], 0).is_err());
        assert!(split_dataset(&ds, &[0.6, 0.6], 0).is_err());
    }

    #[test]
    fn mixed_labels_rejected() {
        let mut s = tiny(2).samples().to_vec();
        s[1].answer = None;
        assert!(ToyDataset::new("x", "y", 2, s).is_err());
    }

    #[test]
    fn vocab_is_sorted_unique() {
        let ds = tiny(3);
        assert_eq!(ds.token_vocab(), &["0", "1", "2", "?", "is", "what"]);
    }
}
