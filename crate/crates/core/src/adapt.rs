//! Training regimes: source-only, one-stage DANN, one-stage moment
//! matching, two-stage DANN and target-supervised baselines.
//!
//! Every regime minimizes `L_ce(source) + λ(p) · L_fd`, with `λ(p)` held
//! fixed within an epoch. Target data enters the unsupervised regimes only
//! through an [`UnlabeledView`].

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, ToyDataset, UnlabeledView};
use crate::error::{Error, Result};
use crate::kernel_stats::Moments;
use crate::nn::GrlNode;
use crate::nn::{
    backward, forward, loss_eval, Activation, Layer, LossKind, LossTarget, Matrix, MlpModel, Sgd, TrainConfig,
};
use crate::shift::mix_seed;
use crate::vqa::{build_shared_vocab, evaluate_accuracy, TokenVocabulary, VqaArch, VqaModel};

/// Answer vocabulary size (top-K answers of the labeled training data).
pub const DEFAULT_ANSWER_K: usize = 1000;
pub const DOMAIN_HEAD_HIDDEN: usize = 32;
/// Domain loss below this for [`COLLAPSE_EPOCHS`] consecutive epochs counts
/// as a collapsed adversarial game.
pub const COLLAPSE_LOSS: f64 = 1e-4;
pub const COLLAPSE_EPOCHS: usize = 3;

const STREAM_VQA_INIT: u64 = 0;
const STREAM_HEAD_INIT: u64 = 1;
const STREAM_SRC_SHUFFLE: u64 = 2;
const STREAM_TGT_SHUFFLE: u64 = 3;
const STREAM_STAGE1_SHUFFLE: u64 = 4;
const STREAM_SUBSAMPLE: u64 = 5;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ce: f64,
    pub l_fd: f64,
    pub lambda: f64,
    pub l_total: f64,
    pub domain_acc: Option<f64>,
    pub src_acc: f64,
}

/// Stage-1 record of the two-stage regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorRecord {
    pub epoch: usize,
    pub l_mse: f64,
    pub l_fd: f64,
    pub lambda: f64,
    pub l_total: f64,
    pub domain_acc: f64,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub model: VqaModel,
    /// Frozen stage-1 extractor (two-stage only; also installed in `model`).
    pub extractor: Option<MlpModel>,
    pub domain_head: Option<MlpModel>,
    pub history: Vec<EpochRecord>,
    pub extractor_history: Vec<ExtractorRecord>,
}

#[derive(Debug, Clone, Copy)]
pub enum SupervisedInit<'a> {
    Scratch,
    FromSource(&'a VqaModel),
}

pub fn write_history<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Source data in trainer form: raw features, token ids, answer ids.
struct Prepared {
    x: Matrix,
    tokens: Vec<Vec<usize>>,
    labels: Vec<usize>,
}

impl Prepared {
    /// Samples whose answer falls outside the vocabulary carry no training
    /// signal and are dropped.
    fn new(ds: &ToyDataset, model: &VqaModel) -> Result<Self> {
        let answers = ds.answers().ok_or(Error::Unlabeled)?;
        let mut rows = Vec::new();
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        for (s, a) in ds.samples().iter().zip(answers) {
            let y = model.answers.id(a);
            if y == model.answers.unknown_id() {
                continue;
            }
            rows.push(s.image.iter().map(|&v| v as f64).collect::<Vec<_>>());
            tokens.push(model.tokens.encode(&s.question.tokens));
            labels.push(y);
        }
        if rows.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let x = model.adapt_images(&Matrix::from_rows(&rows)?)?;
        Ok(Self { x, tokens, labels })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }
}

fn view_matrix(v: &UnlabeledView<'_>) -> Result<Matrix> {
    Ok(Matrix::from(&v.image_matrix()?))
}

fn fresh_model(src: &ToyDataset, image_dim: usize, cfg: &TrainConfig) -> Result<VqaModel> {
    let answers = build_shared_vocab(&[src], DEFAULT_ANSWER_K)?;
    let tokens = TokenVocabulary::from_tokens(src.token_vocab());
    VqaModel::seeded(image_dim, answers, tokens, VqaArch::default(), &mut stream(cfg.seed, STREAM_VQA_INIT))
}

fn domain_head(dim: usize, cfg: &TrainConfig) -> Result<MlpModel> {
    MlpModel::seeded(
        &[dim, DOMAIN_HEAD_HIDDEN, 1],
        Activation::Relu,
        Activation::SigmoidOut,
        &mut stream(cfg.seed, STREAM_HEAD_INIT),
    )
}

fn check_source(src: &ToyDataset) -> Result<()> {
    if !src.is_labeled() {
        return Err(Error::Unlabeled);
    }
    Ok(())
}

fn check_target(src: &ToyDataset, tgt: &UnlabeledView<'_>) -> Result<()> {
    if tgt.dim() != src.dim() {
        return Err(Error::DimensionMismatch(src.dim(), tgt.dim()));
    }
    if tgt.is_empty() {
        return Err(Error::Empty("target domain"));
    }
    Ok(())
}

fn batches(n: usize, bs: usize) -> Result<usize> {
    let nb = n / bs;
    if nb == 0 {
        return Err(Error::TooFewSamples { needed: bs, got: n });
    }
    Ok(nb)
}

/// Maps non-finite failures inside training to a collapse.
fn collapse_on_nonfinite<T>(r: Result<T>, epoch: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(what) => Error::Collapsed { epoch, reason: format!("non-finite {what}") },
        other => other,
    })
}

fn row_labels(ns: usize, nt: usize) -> Vec<f64> {
    let mut d = vec![0.0; ns];
    d.resize(ns + nt, 1.0);
    d
}

fn binary_acc(probs: &Matrix, labels: &[f64]) -> f64 {
    let hits = probs.data.iter().zip(labels).filter(|(p, y)| (**p > 0.5) == (**y > 0.5)).count();
    hits as f64 / labels.len() as f64
}

/// Gradients of the moment distance with respect to each row of `zs` and `zt`.
fn moment_grad(zs: &Matrix, zt: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    let d = zs.cols;
    let ms = Moments::of_rows((0..zs.rows).map(|i| zs.row(i)), d)?;
    let mt = Moments::of_rows((0..zt.rows).map(|i| zt.row(i)), d)?;
    let value = ms.distance(&mt);
    let dm: Vec<f64> = ms.mean.iter().zip(&mt.mean).map(|(a, b)| a - b).collect();
    let dd: Vec<f64> = ms.second.iter().zip(&mt.second).map(|(a, b)| a - b).collect();
    let grad = |z: &Matrix, sign: f64| {
        let scale = sign * 2.0 / z.rows as f64;
        let mut g = Matrix::zeros(z.rows, d);
        for i in 0..z.rows {
            let zi = z.row(i);
            let gi = g.row_mut(i);
            for a in 0..d {
                let dz: f64 = (0..d).map(|b| dd[a * d + b] * zi[b]).sum();
                gi[a] = scale * (dm[a] + 2.0 * dz);
            }
        }
        g
    };
    Ok((value, grad(zs, 1.0), grad(zt, -1.0)))
}

enum FdMode {
    None,
    Dann(MlpModel),
    MomentMatching,
}

struct VqaOpt {
    encoder: Sgd,
    fusion: Sgd,
    embedding: Sgd,
}

impl VqaOpt {
    fn new(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            encoder: Sgd::new(cfg.learning_rate, cfg.momentum)?,
            fusion: Sgd::new(cfg.learning_rate, cfg.momentum)?,
            embedding: Sgd::new(cfg.learning_rate, cfg.momentum)?,
        })
    }
}

/// Shared loop. Source batches come from one shuffle stream and target
/// batches from another, so the source trajectory does not depend on
/// whether a target domain is present.
fn train_loop(
    model: &mut VqaModel,
    eval_src: &ToyDataset,
    src: &Prepared,
    tgt: Option<&Matrix>,
    mut mode: FdMode,
    cfg: &TrainConfig,
) -> Result<(Vec<EpochRecord>, Option<MlpModel>)> {
    cfg.validate()?;
    let bs = cfg.batch_size;
    let nb = batches(src.len(), bs)?;
    let mut src_rng = stream(cfg.seed, STREAM_SRC_SHUFFLE);
    let mut tgt_rng = stream(cfg.seed, STREAM_TGT_SHUFFLE);
    let mut opt = VqaOpt::new(cfg)?;
    let mut head_opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut low_fd_run = 0;
    let mut src_perm: Vec<usize> = (0..src.len()).collect();
    let mut tgt_perm: Vec<usize> = tgt.map(|t| (0..t.rows).collect()).unwrap_or_default();

    for epoch in 0..cfg.epochs {
        let lambda = match mode {
            FdMode::None => 0.0,
            _ => cfg.lambda_at(epoch as f64 / cfg.epochs as f64),
        };
        let grl = GrlNode::new(lambda)?;
        src_perm.shuffle(&mut src_rng);
        if tgt.is_some() {
            tgt_perm.shuffle(&mut tgt_rng);
        }
        let (mut sum_ce, mut sum_fd, mut sum_total, mut sum_dacc) = (0.0, 0.0, 0.0, 0.0);
        for b in 0..nb {
            let idx = &src_perm[b * bs..(b + 1) * bs];
            let xs = src.x.select_rows(idx);
            let toks = idx.iter().map(|&i| src.tokens[i].clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| src.labels[i]).collect();
            let fwd = collapse_on_nonfinite(model.forward_batch(&xs, toks), epoch)?;
            let (l_ce, g_probs) = loss_eval(LossKind::CrossEntropy, fwd.fusion.output(), LossTarget::Classes(&labels))?;

            let mut extra: Option<Matrix> = None;
            let mut tgt_enc_grads = None;
            let mut l_fd = 0.0;
            if let (Some(t), false) = (tgt, matches!(mode, FdMode::None)) {
                let tidx: Vec<usize> = (0..bs).map(|j| tgt_perm[(b * bs + j) % tgt_perm.len()]).collect();
                let xt = t.select_rows(&tidx);
                let enc_t = collapse_on_nonfinite(forward(&model.image_encoder, &xt), epoch)?;
                let zs = fwd.enc.output();
                let zt = enc_t.output();
                match &mut mode {
                    FdMode::Dann(head) => {
                        let z = grl.forward(&zs.vstack(zt)?);
                        let dl = row_labels(bs, bs);
                        let dacts = collapse_on_nonfinite(forward(head, &z), epoch)?;
                        let (ld, gd) = loss_eval(LossKind::Bce, dacts.output(), LossTarget::Binary(&dl))?;
                        sum_dacc += binary_acc(dacts.output(), &dl);
                        l_fd = ld;
                        // The head minimizes its own BCE at unit weight; only the
                        // reversed gradient into the encoder carries lambda.
                        if lambda > 0.0 {
                            let hg = backward(head, &dacts, &gd)?;
                            let gz = grl.backward(&hg.input);
                            let src_rows: Vec<usize> = (0..bs).collect();
                            let tgt_rows: Vec<usize> = (bs..2 * bs).collect();
                            extra = Some(gz.select_rows(&src_rows));
                            tgt_enc_grads = Some(backward(&model.image_encoder, &enc_t, &gz.select_rows(&tgt_rows))?);
                            head_opt.step(head, &hg)?;
                        }
                    }
                    FdMode::MomentMatching => {
                        let (v, mut gs, mut gt) = moment_grad(zs, zt)?;
                        l_fd = v;
                        if lambda > 0.0 {
                            gs.scale(lambda);
                            gt.scale(lambda);
                            extra = Some(gs);
                            tgt_enc_grads = Some(backward(&model.image_encoder, &enc_t, &gt)?);
                        }
                    }
                    FdMode::None => unreachable!(),
                }
            }

            let mut grads = model.backward_batch(&fwd, &g_probs, extra.as_ref())?;
            if let Some(tg) = &tgt_enc_grads {
                grads.encoder.accumulate(tg);
            }
            opt.encoder.step(&mut model.image_encoder, &grads.encoder)?;
            opt.fusion.step(&mut model.fusion_head, &grads.fusion)?;
            opt.embedding.step_slice(&mut model.question_embedding.data, &grads.embedding.data)?;

            let total = l_ce + lambda * l_fd;
            if !total.is_finite() {
                return Err(Error::Collapsed { epoch, reason: "non-finite loss".into() });
            }
            sum_ce += l_ce;
            sum_fd += l_fd;
            sum_total += total;
        }
        let inv = 1.0 / nb as f64;
        let rec = EpochRecord {
            epoch,
            l_ce: sum_ce * inv,
            l_fd: sum_fd * inv,
            lambda,
            l_total: sum_total * inv,
            domain_acc: matches!(mode, FdMode::Dann(_)).then_some(sum_dacc * inv),
            src_acc: collapse_on_nonfinite(evaluate_accuracy(model, eval_src), epoch)?,
        };
        if matches!(mode, FdMode::Dann(_)) && lambda > 0.0 {
            low_fd_run = if rec.l_fd < COLLAPSE_LOSS { low_fd_run + 1 } else { 0 };
            if low_fd_run >= COLLAPSE_EPOCHS {
                return Err(Error::Collapsed { epoch, reason: "domain loss collapsed to zero".into() });
            }
        }
        history.push(rec);
    }
    if !model.is_finite() {
        return Err(Error::Collapsed { epoch: cfg.epochs, reason: "non-finite parameters".into() });
    }
    let head = match mode {
        FdMode::Dann(h) => Some(h),
        _ => None,
    };
    Ok((history, head))
}

/// Cross-entropy on the labeled source only.
pub fn train_source_only(src: &ToyDataset, cfg: &TrainConfig) -> Result<AdaptOutcome> {
    check_source(src)?;
    let mut model = fresh_model(src, src.dim(), cfg)?;
    let prep = Prepared::new(src, &model)?;
    let (history, _) = train_loop(&mut model, src, &prep, None, FdMode::None, cfg)?;
    Ok(AdaptOutcome { model, extractor: None, domain_head: None, history, extractor_history: Vec::new() })
}

/// Joint training with a domain classifier fed the image-encoder output
/// through a gradient reversal layer.
pub fn train_one_stage_dann(src: &ToyDataset, tgt: UnlabeledView<'_>, cfg: &TrainConfig) -> Result<AdaptOutcome> {
    check_source(src)?;
    check_target(src, &tgt)?;
    let mut model = fresh_model(src, src.dim(), cfg)?;
    let head = domain_head(model.image_encoder.out_dim(), cfg)?;
    let prep = Prepared::new(src, &model)?;
    let xt = view_matrix(&tgt)?;
    let (history, head) = train_loop(&mut model, src, &prep, Some(&xt), FdMode::Dann(head), cfg)?;
    Ok(AdaptOutcome { model, extractor: None, domain_head: head, history, extractor_history: Vec::new() })
}

/// Joint training with the moment distance between source and target
/// image-encoder outputs.
pub fn train_one_stage_mm(src: &ToyDataset, tgt: UnlabeledView<'_>, cfg: &TrainConfig) -> Result<AdaptOutcome> {
    check_source(src)?;
    check_target(src, &tgt)?;
    let mut model = fresh_model(src, src.dim(), cfg)?;
    let prep = Prepared::new(src, &model)?;
    let xt = view_matrix(&tgt)?;
    let (history, _) = train_loop(&mut model, src, &prep, Some(&xt), FdMode::MomentMatching, cfg)?;
    Ok(AdaptOutcome { model, extractor: None, domain_head: None, history, extractor_history: Vec::new() })
}

/// `d → 2d → 2d → d` network that computes the identity at initialization:
/// `[I; −I]`, relu, `I`, relu, `[I, −I]`.
pub fn identity_extractor(d: usize) -> Result<MlpModel> {
    let mut w1 = Matrix::zeros(2 * d, d);
    let mut w3 = Matrix::zeros(d, 2 * d);
    for i in 0..d {
        w1.row_mut(i)[i] = 1.0;
        w1.row_mut(d + i)[i] = -1.0;
        w3.row_mut(i)[i] = 1.0;
        w3.row_mut(i)[d + i] = -1.0;
    }
    MlpModel::from_layers(vec![
        Layer::new(w1, vec![0.0; 2 * d], Activation::Relu)?,
        Layer::new(Matrix::identity(2 * d), vec![0.0; 2 * d], Activation::Relu)?,
        Layer::new(w3, vec![0.0; d], Activation::Identity)?,
    ])
}

/// Stage 1: `MSE(E(x_src), x_src) + λ · BCE(D(GRL(E(x))))` over both domains.
pub fn train_extractor(
    src: &Matrix,
    tgt: &Matrix,
    cfg: &TrainConfig,
) -> Result<(MlpModel, MlpModel, Vec<ExtractorRecord>)> {
    cfg.validate()?;
    if src.cols != tgt.cols {
        return Err(Error::DimensionMismatch(src.cols, tgt.cols));
    }
    let d = src.cols;
    let bs = cfg.batch_size;
    let nb = batches(src.rows, bs)?;
    if tgt.rows == 0 {
        return Err(Error::Empty("target domain"));
    }
    let mut ext = identity_extractor(d)?;
    let mut head = domain_head(d, cfg)?;
    let mut ext_opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut head_opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut src_rng = stream(cfg.seed, STREAM_STAGE1_SHUFFLE);
    let mut tgt_rng = stream(cfg.seed, STREAM_TGT_SHUFFLE);
    let grl = GrlNode::new(1.0)?;
    let mut src_perm: Vec<usize> = (0..src.rows).collect();
    let mut tgt_perm: Vec<usize> = (0..tgt.rows).collect();
    let dl = row_labels(bs, bs);
    let src_rows: Vec<usize> = (0..bs).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut low_fd_run = 0;

    for epoch in 0..cfg.epochs {
        let lambda = cfg.lambda_at(epoch as f64 / cfg.epochs as f64);
        src_perm.shuffle(&mut src_rng);
        tgt_perm.shuffle(&mut tgt_rng);
        let (mut s_mse, mut s_fd, mut s_total, mut s_acc) = (0.0, 0.0, 0.0, 0.0);
        for b in 0..nb {
            let xs = src.select_rows(&src_perm[b * bs..(b + 1) * bs]);
            let tidx: Vec<usize> = (0..bs).map(|j| tgt_perm[(b * bs + j) % tgt_perm.len()]).collect();
            let x = xs.vstack(&tgt.select_rows(&tidx))?;
            let acts = collapse_on_nonfinite(forward(&ext, &x), epoch)?;
            let e = acts.output();
            let (l_mse, g_mse) = loss_eval(LossKind::Mse, &e.select_rows(&src_rows), LossTarget::Dense(&xs))?;
            let dacts = collapse_on_nonfinite(forward(&head, &grl.forward(e)), epoch)?;
            let (ld, mut gd) = loss_eval(LossKind::Bce, dacts.output(), LossTarget::Binary(&dl))?;
            s_acc += binary_acc(dacts.output(), &dl);
            let mut g_e = Matrix::zeros(2 * bs, d);
            g_e.data[..bs * d].copy_from_slice(&g_mse.data);
            // Both players see the weighted sum MSE + lambda * BCE.
            if lambda > 0.0 {
                gd.scale(lambda);
                let hg = backward(&head, &dacts, &gd)?;
                g_e.add_assign(&grl.backward(&hg.input));
                head_opt.step(&mut head, &hg)?;
            }
            let eg = backward(&ext, &acts, &g_e)?;
            ext_opt.step(&mut ext, &eg)?;
            let total = l_mse + lambda * ld;
            if !total.is_finite() {
                return Err(Error::Collapsed { epoch, reason: "non-finite loss".into() });
            }
            s_mse += l_mse;
            s_fd += ld;
            s_total += total;
        }
        let inv = 1.0 / nb as f64;
        let rec = ExtractorRecord {
            epoch,
            l_mse: s_mse * inv,
            l_fd: s_fd * inv,
            lambda,
            l_total: s_total * inv,
            domain_acc: s_acc * inv,
        };
        if lambda > 0.0 {
            low_fd_run = if rec.l_fd < COLLAPSE_LOSS { low_fd_run + 1 } else { 0 };
            if low_fd_run >= COLLAPSE_EPOCHS {
                return Err(Error::Collapsed { epoch, reason: "domain loss collapsed to zero".into() });
            }
        }
        history.push(rec);
    }
    ext.freeze_all();
    Ok((ext, head, history))
}

/// Stage 1 trains the extractor; stage 2 trains the VQA model on extracted
/// source features with the extractor frozen.
pub fn train_two_stage_dann(src: &ToyDataset, tgt: UnlabeledView<'_>, cfg: &TrainConfig) -> Result<AdaptOutcome> {
    check_source(src)?;
    check_target(src, &tgt)?;
    let xs = Matrix::from(&src.image_matrix()?);
    let xt = view_matrix(&tgt)?;
    let (ext, head, extractor_history) = train_extractor(&xs, &xt, cfg)?;
    let mut model = fresh_model(src, ext.out_dim(), cfg)?;
    model.extractor = Some(ext.clone());
    let prep = Prepared::new(src, &model)?;
    let (history, _) = train_loop(&mut model, src, &prep, None, FdMode::None, cfg)?;
    Ok(AdaptOutcome { model, extractor: Some(ext), domain_head: Some(head), history, extractor_history })
}

/// Trains on a seeded `fraction` of the labeled target, from scratch or
/// continuing from a source-trained model.
pub fn train_supervised_target(
    tgt: &ToyDataset,
    fraction: f64,
    init: SupervisedInit<'_>,
    cfg: &TrainConfig,
) -> Result<AdaptOutcome> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must be in (0, 1], got {fraction}")));
    }
    check_source(tgt)?;
    let sub = if fraction == 1.0 {
        tgt.clone()
    } else {
        split_dataset(tgt, &[fraction], mix_seed(cfg.seed, STREAM_SUBSAMPLE))?.remove(0)
    };
    if sub.is_empty() {
        return Err(Error::Empty("target subsample"));
    }
    let mut model = match init {
        SupervisedInit::Scratch => fresh_model(&sub, sub.dim(), cfg)?,
        SupervisedInit::FromSource(m) => {
            if m.image_dim() != sub.dim() {
                return Err(Error::DimensionMismatch(m.image_dim(), sub.dim()));
            }
            m.clone()
        }
    };
    let prep = Prepared::new(&sub, &model)?;
    let (history, _) = train_loop(&mut model, &sub, &prep, None, FdMode::None, cfg)?;
    Ok(AdaptOutcome { model, extractor: None, domain_head: None, history, extractor_history: Vec::new() })
}
