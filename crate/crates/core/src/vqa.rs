//! Two-stream open-ended VQA classifier: an image MLP and mean-pooled
//! question embeddings, concatenated into a softmax fusion head over the
//! top-K answers.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ToyDataset;
use crate::error::{Error, Result};
use crate::nn::{backward, forward, load_model, save_model, Activation, Activations, Gradients, Matrix, MlpModel};

pub const UNK_TOKEN: &str = "<unk>";

/// Top-K answers; ids `0..K`, with `K` reserved for "not in vocabulary".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerVocabulary {
    answers: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl AnswerVocabulary {
    pub fn from_answers(answers: Vec<String>) -> Result<Self> {
        if answers.is_empty() {
            return Err(Error::Empty("answer vocabulary"));
        }
        let index: HashMap<String, usize> = answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        if index.len() != answers.len() {
            return Err(Error::InvalidParameter("duplicate answers in vocabulary".into()));
        }
        Ok(Self { answers, index })
    }

    pub fn size(&self) -> usize {
        self.answers.len()
    }

    pub fn unknown_id(&self) -> usize {
        self.answers.len()
    }

    pub fn id(&self, answer: &str) -> usize {
        self.index.get(answer).copied().unwrap_or(self.unknown_id())
    }

    pub fn answer(&self, id: usize) -> Option<&str> {
        self.answers.get(id).map(String::as_str)
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }
}

/// Counts answers pooled over `datasets` and keeps the `k` most frequent,
/// ties broken lexicographically.
pub fn build_shared_vocab(datasets: &[&ToyDataset], k: usize) -> Result<AnswerVocabulary> {
    if k == 0 {
        return Err(Error::InvalidParameter("vocabulary size must be positive".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for ds in datasets {
        for a in ds.answers().into_iter().flatten() {
            *counts.entry(a).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Unlabeled);
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    AnswerVocabulary::from_answers(ranked.into_iter().take(k).map(|(a, _)| a.to_string()).collect())
}

/// Question tokens; id 0 is [`UNK_TOKEN`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TokenVocabulary {
    pub fn from_tokens(tokens: &[String]) -> Self {
        let mut all = vec![UNK_TOKEN.to_string()];
        all.extend(tokens.iter().filter(|t| t.as_str() != UNK_TOKEN).cloned());
        all.dedup();
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens: all, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index.get(t).copied().unwrap_or(0)).collect()
    }

    fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqaArch {
    pub encoder_hidden: usize,
    pub encoder_out: usize,
    pub embed_dim: usize,
    pub fusion_hidden: usize,
}

impl Default for VqaArch {
    fn default() -> Self {
        Self { encoder_hidden: 64, encoder_out: 32, embed_dim: 16, fusion_hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqaModel {
    pub answers: AnswerVocabulary,
    pub tokens: TokenVocabulary,
    /// Frozen feature extractor applied to raw image features (two-stage
    /// adaptation only).
    pub extractor: Option<MlpModel>,
    pub image_encoder: MlpModel,
    /// `vocab × e`, mean-pooled over a question's tokens.
    pub question_embedding: Matrix,
    pub fusion_head: MlpModel,
}

pub(crate) struct VqaForward {
    pub enc: Activations,
    pub pooled: Matrix,
    pub fusion: Activations,
    pub token_ids: Vec<Vec<usize>>,
}

pub(crate) struct VqaGrads {
    pub encoder: Gradients,
    pub embedding: Matrix,
    pub fusion: Gradients,
}

impl VqaModel {
    pub fn seeded<R: Rng + ?Sized>(
        image_dim: usize,
        answers: AnswerVocabulary,
        tokens: TokenVocabulary,
        arch: VqaArch,
        rng: &mut R,
    ) -> Result<Self> {
        let image_encoder = MlpModel::seeded(
            &[image_dim, arch.encoder_hidden, arch.encoder_out],
            Activation::Relu,
            Activation::Relu,
            rng,
        )?;
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let emb: Vec<f64> = (0..tokens.size() * arch.embed_dim).map(|_| normal.sample(rng) as f32 as f64).collect();
        let question_embedding = Matrix::from_vec(tokens.size(), arch.embed_dim, emb)?;
        let fusion_head = MlpModel::seeded(
            &[arch.encoder_out + arch.embed_dim, arch.fusion_hidden, answers.size()],
            Activation::Relu,
            Activation::SoftmaxOut,
            rng,
        )?;
        Ok(Self { answers, tokens, extractor: None, image_encoder, question_embedding, fusion_head })
    }

    pub fn image_dim(&self) -> usize {
        self.extractor.as_ref().map_or(self.image_encoder.in_dim(), MlpModel::in_dim)
    }

    pub fn is_finite(&self) -> bool {
        self.image_encoder.is_finite()
            && self.fusion_head.is_finite()
            && self.question_embedding.is_finite()
            && self.extractor.as_ref().is_none_or(MlpModel::is_finite)
    }

    pub fn params_bitwise_eq(&self, other: &VqaModel) -> bool {
        let ext = match (&self.extractor, &other.extractor) {
            (None, None) => true,
            (Some(a), Some(b)) => a.params_bitwise_eq(b),
            _ => false,
        };
        ext && self.image_encoder.params_bitwise_eq(&other.image_encoder)
            && self.fusion_head.params_bitwise_eq(&other.fusion_head)
            && self.question_embedding.data.len() == other.question_embedding.data.len()
            && self
                .question_embedding
                .data
                .iter()
                .zip(&other.question_embedding.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.answers == other.answers
            && self.tokens == other.tokens
    }

    /// Raw features → encoder input (through the extractor when present).
    pub fn adapt_images(&self, raw: &Matrix) -> Result<Matrix> {
        match &self.extractor {
            Some(e) => e.infer(raw),
            None => Ok(raw.clone()),
        }
    }

    fn pool(&self, token_ids: &[Vec<usize>]) -> Result<Matrix> {
        let e = self.question_embedding.cols;
        let mut out = Matrix::zeros(token_ids.len(), e);
        for (i, ids) in token_ids.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let row = out.row_mut(i);
            for &t in ids {
                if t >= self.tokens.size() {
                    return Err(Error::UnknownToken { id: t, size: self.tokens.size() });
                }
                row.iter_mut().zip(self.question_embedding.row(t)).for_each(|(r, v)| *r += v);
            }
            let inv = 1.0 / ids.len() as f64;
            row.iter_mut().for_each(|r| *r *= inv);
        }
        Ok(out)
    }

    /// `images` are encoder inputs (already adapted).
    pub(crate) fn forward_batch(&self, images: &Matrix, token_ids: Vec<Vec<usize>>) -> Result<VqaForward> {
        if images.rows != token_ids.len() {
            return Err(Error::DimensionMismatch(images.rows, token_ids.len()));
        }
        let enc = forward(&self.image_encoder, images)?;
        let pooled = self.pool(&token_ids)?;
        let fused = enc.output().hstack(&pooled)?;
        let fusion = forward(&self.fusion_head, &fused)?;
        Ok(VqaForward { enc, pooled, fusion, token_ids })
    }

    /// `extra_enc_grad` is added to the gradient arriving at the image
    /// encoder output (the adaptation attachment point).
    pub(crate) fn backward_batch(
        &self,
        fwd: &VqaForward,
        grad_probs: &Matrix,
        extra_enc_grad: Option<&Matrix>,
    ) -> Result<VqaGrads> {
        let fusion = backward(&self.fusion_head, &fwd.fusion, grad_probs)?;
        let (mut g_enc, g_q) = fusion.input.split_cols(self.image_encoder.out_dim());
        if let Some(extra) = extra_enc_grad {
            g_enc.add_assign(extra);
        }
        let encoder = backward(&self.image_encoder, &fwd.enc, &g_enc)?;
        let mut embedding = Matrix::zeros(self.question_embedding.rows, self.question_embedding.cols);
        for (i, ids) in fwd.token_ids.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let inv = 1.0 / ids.len() as f64;
            for &t in ids {
                embedding.row_mut(t).iter_mut().zip(g_q.row(i)).for_each(|(e, g)| *e += g * inv);
            }
        }
        debug_assert_eq!(fwd.pooled.cols, g_q.cols);
        Ok(VqaGrads { encoder, embedding, fusion })
    }

    /// Answer distributions for raw image features and tokenized questions.
    pub fn predict_batch(&self, raw_images: &Matrix, token_ids: Vec<Vec<usize>>) -> Result<Matrix> {
        let x = self.adapt_images(raw_images)?;
        Ok(self.forward_batch(&x, token_ids)?.fusion.into_output())
    }

    pub fn predict(&self, image_feat: &[f64], token_ids: &[usize]) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(1, image_feat.len(), image_feat.to_vec())?;
        if x.cols != self.image_dim() {
            return Err(Error::DimensionMismatch(self.image_dim(), x.cols));
        }
        Ok(self.predict_batch(&x, vec![token_ids.to_vec()])?.data)
    }

    /// Argmax answer id per sample of `ds` (ties → lowest id).
    pub fn predict_ids(&self, ds: &ToyDataset) -> Result<Vec<usize>> {
        if ds.dim() != self.image_dim() {
            return Err(Error::DimensionMismatch(self.image_dim(), ds.dim()));
        }
        const CHUNK: usize = 256;
        let samples = ds.samples();
        let chunks: Vec<Result<Vec<usize>>> = samples
            .par_chunks(CHUNK)
            .map(|chunk| {
                let rows: Vec<Vec<f64>> = chunk.iter().map(|s| s.image.iter().map(|&v| v as f64).collect()).collect();
                let ids = chunk.iter().map(|s| self.tokens.encode(&s.question.tokens)).collect();
                let probs = self.predict_batch(&Matrix::from_rows(&rows)?, ids)?;
                Ok((0..probs.rows).map(|i| argmax(probs.row(i))).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_model(&self.image_encoder, dir.join(ENCODER_FILE))?;
        save_model(&self.fusion_head, dir.join(FUSION_FILE))?;
        let emb = MlpModel::from_layers(vec![crate::nn::Layer::new(
            self.question_embedding.clone(),
            vec![0.0; self.question_embedding.rows],
            Activation::Identity,
        )?])?;
        save_model(&emb, dir.join(EMBEDDING_FILE))?;
        match &self.extractor {
            Some(e) => save_model(e, dir.join(EXTRACTOR_FILE))?,
            None => {
                if dir.join(EXTRACTOR_FILE).exists() {
                    fs::remove_file(dir.join(EXTRACTOR_FILE))?;
                }
            }
        }
        let vocab = VocabFile { answers: self.answers.answers.clone(), tokens: self.tokens.tokens.clone() };
        fs::write(dir.join(VOCAB_FILE), serde_json::to_vec_pretty(&vocab)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        for part in [ENCODER_FILE, FUSION_FILE, EMBEDDING_FILE, VOCAB_FILE] {
            if !dir.join(part).is_file() {
                return Err(Error::MissingComponent(dir.join(part)));
            }
        }
        let vocab: VocabFile = serde_json::from_slice(&fs::read(dir.join(VOCAB_FILE))?)?;
        let answers = AnswerVocabulary::from_answers(vocab.answers)?;
        let mut tokens = TokenVocabulary { tokens: vocab.tokens, index: HashMap::new() };
        tokens.reindex();
        let emb = load_model(dir.join(EMBEDDING_FILE))?;
        let question_embedding = emb.layers.into_iter().next().map(|l| l.weights).ok_or(Error::Empty("embedding"))?;
        let extractor =
            if dir.join(EXTRACTOR_FILE).is_file() { Some(load_model(dir.join(EXTRACTOR_FILE))?) } else { None };
        let model = Self {
            answers,
            tokens,
            extractor,
            image_encoder: load_model(dir.join(ENCODER_FILE))?,
            question_embedding,
            fusion_head: load_model(dir.join(FUSION_FILE))?,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let shape_err = |what: &str| Error::ShapeMismatch { expected: what.into(), got: "checkpoint".into() };
        if self.question_embedding.rows != self.tokens.size() {
            return Err(shape_err("embedding rows = token vocabulary size"));
        }
        if self.fusion_head.in_dim() != self.image_encoder.out_dim() + self.question_embedding.cols {
            return Err(shape_err("fusion input = encoder output + embedding width"));
        }
        if self.fusion_head.out_dim() != self.answers.size() {
            return Err(shape_err("fusion output = answer vocabulary size"));
        }
        if let Some(e) = &self.extractor {
            if e.out_dim() != self.image_encoder.in_dim() {
                return Err(shape_err("extractor output = encoder input"));
            }
        }
        Ok(())
    }
}

pub const ENCODER_FILE: &str = "image_encoder.slm";
pub const FUSION_FILE: &str = "fusion_head.slm";
pub const EMBEDDING_FILE: &str = "embedding.slm";
pub const EXTRACTOR_FILE: &str = "extractor.slm";
pub const VOCAB_FILE: &str = "vocab.json";

#[derive(Serialize, Deserialize)]
struct VocabFile {
    answers: Vec<String>,
    tokens: Vec<String>,
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy; answers outside the model's vocabulary never count.
pub fn evaluate_accuracy(model: &VqaModel, ds: &ToyDataset) -> Result<f64> {
    let answers = ds.answers().ok_or(Error::Unlabeled)?;
    if answers.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let preds = model.predict_ids(ds)?;
    let unk = model.answers.unknown_id();
    let correct = preds
        .iter()
        .zip(answers)
        .filter(|(p, a)| {
            let y = model.answers.id(a);
            y != unk && **p == y
        })
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Transfer accuracy divided by the target-trained accuracy.
pub fn normalized_transfer(transfer_acc: f64, target_trained_acc: f64) -> Result<f64> {
    if target_trained_acc.is_nan() || target_trained_acc <= 0.0 {
        return Err(Error::InvalidParameter(format!("target-trained accuracy must be > 0, got {target_trained_acc}")));
    }
    Ok(transfer_acc / target_trained_acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransferResult {
    pub source_acc: Option<f64>,
    pub target_direct: Option<f64>,
    pub target_dann1: Option<f64>,
    pub target_mm: Option<f64>,
    pub target_dann2: Option<f64>,
    pub target_sup10_scratch: Option<f64>,
    pub target_sup10_finetune: Option<f64>,
    pub target_full: Option<f64>,
}
