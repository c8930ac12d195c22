//! Seeded two-domain VQA-style benchmark.
//!
//! Each sample has a latent attribute `c` (a color/shape combination). Its
//! image feature is drawn from `N(μ_c, noise²·I)` and its question from one
//! of the templates; the answer follows from `(template, c)`. The target
//! domain is an independent draw passed through a [`ShiftSpec`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Sample, ToyDataset};
use crate::error::{Error, Result};
use crate::shift::{make_shifted_dataset, AdainParams, ShiftSpec};
use crate::text_syntax::QuestionRecord;

pub const COLORS: [&str; 4] = ["red", "green", "blue", "yellow"];
pub const SHAPES: [&str; 4] = ["cube", "sphere", "cylinder", "cone"];
pub const MAX_CLASSES: usize = COLORS.len() * SHAPES.len();

/// Seed of the default style statistics (fixed across benchmark seeds, like
/// a single style image).
pub const DEFAULT_STYLE_SEED: u64 = 0x5715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionTemplate {
    /// "what color ..." → color of the attribute.
    ColorQuery,
    /// "what shape ..." → shape of the attribute.
    ShapeQuery,
    /// "is the object <color> ?" → yes/no.
    ColorCheck,
    /// "is there an object ..." → always "yes"; answerable from the question alone.
    Existence,
}

impl QuestionTemplate {
    pub const ALL: [QuestionTemplate; 4] = [
        QuestionTemplate::ColorQuery,
        QuestionTemplate::ShapeQuery,
        QuestionTemplate::ColorCheck,
        QuestionTemplate::Existence,
    ];

    fn phrasings(self) -> &'static [&'static str] {
        match self {
            QuestionTemplate::ColorQuery => &[
                "What color is the object?",
                "Which color does the object have?",
                "What is the color of the thing in the image?",
            ],
            QuestionTemplate::ShapeQuery => {
                &["What shape is the object?", "What is the shape of the thing?", "Which shape is shown in the image?"]
            }
            QuestionTemplate::ColorCheck => &["Is the object {color}?", "Is the thing in the image {color}?"],
            QuestionTemplate::Existence => &["Is there an object in the image?", "Is anything shown in the image?"],
        }
    }
}

/// The declared answer rule: `(template, attribute, queried color) → answer`.
pub fn answer_for(template: QuestionTemplate, attribute: usize, queried_color: usize) -> String {
    let color = attribute % COLORS.len();
    let shape = (attribute / COLORS.len()) % SHAPES.len();
    match template {
        QuestionTemplate::ColorQuery => COLORS[color].to_string(),
        QuestionTemplate::ShapeQuery => SHAPES[shape].to_string(),
        QuestionTemplate::ColorCheck => if queried_color == color { "yes" } else { "no" }.to_string(),
        QuestionTemplate::Existence => "yes".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub n_train: usize,
    pub n_eval: usize,
    pub image_dim: usize,
    pub classes: usize,
    /// Scale of the class means.
    pub class_separation: f64,
    pub noise_std: f64,
    pub templates: Vec<QuestionTemplate>,
    pub shift: ShiftSpec,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self::with_alpha(1.0, 0)
    }
}

impl BenchmarkSpec {
    /// Default sizes with the default image style at strength `alpha`.
    pub fn with_alpha(alpha: f64, seed: u64) -> Self {
        let image_dim = 32;
        Self {
            n_train: 2000,
            n_eval: 500,
            image_dim,
            classes: 8,
            class_separation: 1.0,
            noise_std: 0.6,
            templates: QuestionTemplate::ALL.to_vec(),
            shift: ShiftSpec::image_only(default_style(image_dim, alpha).expect("valid default style")),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_eval == 0 || self.image_dim == 0 {
            return Err(Error::InvalidParameter("benchmark sizes must be positive".into()));
        }
        if self.classes == 0 || self.classes > MAX_CLASSES {
            return Err(Error::InvalidParameter(format!("classes must be in 1..={MAX_CLASSES}")));
        }
        if self.templates.is_empty() {
            return Err(Error::InvalidParameter("no question templates".into()));
        }
        if !(self.class_separation > 0.0 && self.noise_std >= 0.0) {
            return Err(Error::InvalidParameter("bad class separation or noise".into()));
        }
        self.shift.validate()?;
        if let Some(p) = &self.shift.image_shift {
            if p.style_mean.len() != self.image_dim {
                return Err(Error::DimensionMismatch(self.image_dim, p.style_mean.len()));
            }
        }
        Ok(())
    }
}

/// The default image style: per-coordinate offsets and mildly varied scales.
pub fn default_style(dim: usize, alpha: f64) -> Result<AdainParams> {
    seeded_style(dim, DEFAULT_STYLE_SEED, alpha)
}

/// Same shape of style as [`default_style`], drawn from another seed.
pub fn seeded_style(dim: usize, style_seed: u64, alpha: f64) -> Result<AdainParams> {
    AdainParams::synthetic_style(dim, style_seed, 1.5, 1.0, 0.35, alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub source_train: ToyDataset,
    pub source_eval: ToyDataset,
    pub target_train: ToyDataset,
    pub target_eval: ToyDataset,
}

fn class_means(spec: &BenchmarkSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..spec.classes)
        .map(|_| {
            (0..spec.image_dim)
                .map(|_| spec.class_separation * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect()
        })
        .collect()
}

fn draw_domain(
    spec: &BenchmarkSpec,
    means: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
    name: &str,
    tag: &str,
) -> Result<ToyDataset> {
    let n = spec.n_train + spec.n_eval;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let attr = rng.random_range(0..spec.classes);
        let template = spec.templates[rng.random_range(0..spec.templates.len())];
        let phr = template.phrasings();
        let text = phr[rng.random_range(0..phr.len())];
        // ColorCheck asks about the true color half of the time.
        let true_color = attr % COLORS.len();
        let queried = if rng.random::<bool>() { true_color } else { rng.random_range(0..COLORS.len()) };
        let raw = text.replace("{color}", COLORS[queried]);
        let image = means[attr]
            .iter()
            .map(|&m| {
                let e: f64 = StandardNormal.sample(rng);
                (m + spec.noise_std * e) as f32
            })
            .collect();
        samples.push(Sample {
            image,
            question: QuestionRecord::new(raw),
            answer: Some(answer_for(template, attr, queried)),
        });
    }
    ToyDataset::new(name, tag, spec.image_dim, samples)
}

/// Deterministic given `spec`. Both domains are drawn with the same
/// generator on separate streams; the target draw is then shifted. Target
/// answers are kept for evaluation only.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let means = class_means(spec, &mut rng);
    let mut src_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    src_rng.set_stream(1);
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    tgt_rng.set_stream(2);
    let source = draw_domain(spec, &means, &mut src_rng, "source", "source")?;
    let target_raw = draw_domain(spec, &means, &mut tgt_rng, "target", "target")?;
    let target = make_shifted_dataset(&target_raw, &spec.shift)?;
    let (mut source_train, mut source_eval) = source.split_at(spec.n_train)?;
    let (mut target_train, mut target_eval) = target.split_at(spec.n_train)?;
    source_train.name = "source_train".into();
    source_eval.name = "source_eval".into();
    target_train.name = "target_train".into();
    target_eval.name = "target_eval".into();
    Ok(Benchmark { source_train, source_eval, target_train, target_eval })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(alpha: f64) -> BenchmarkSpec {
        BenchmarkSpec { n_train: 60, n_eval: 20, ..BenchmarkSpec::with_alpha(alpha, 3) }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_benchmark(&small(1.0)).unwrap(), generate_benchmark(&small(1.0)).unwrap());
        let other = BenchmarkSpec { seed: 4, ..small(1.0) };
        assert_ne!(generate_benchmark(&small(1.0)).unwrap(), generate_benchmark(&other).unwrap());
    }

    #[test]
    fn sizes_and_labels() {
        let b = generate_benchmark(&small(0.5)).unwrap();
        assert_eq!(b.source_train.len(), 60);
        assert_eq!(b.target_eval.len(), 20);
        assert!(b.target_train.is_labeled());
        assert_eq!(b.source_train.dim(), 32);
    }

    #[test]
    fn image_only_shift_leaves_question_generation_alone() {
        let shifted = generate_benchmark(&small(1.0)).unwrap();
        let unshifted = generate_benchmark(&small(0.0)).unwrap();
        assert_eq!(shifted.target_train.questions(), unshifted.target_train.questions());
        assert_eq!(shifted.target_train.answers(), unshifted.target_train.answers());
        // alpha = 0 leaves features as drawn
        assert_ne!(shifted.target_train.samples()[0].image, unshifted.target_train.samples()[0].image);
    }

    #[test]
    fn answer_rule() {
        assert_eq!(answer_for(QuestionTemplate::ColorQuery, 5, 0), "green");
        assert_eq!(answer_for(QuestionTemplate::ShapeQuery, 5, 0), "sphere");
        assert_eq!(answer_for(QuestionTemplate::ColorCheck, 5, 1), "yes");
        assert_eq!(answer_for(QuestionTemplate::ColorCheck, 5, 2), "no");
        assert_eq!(answer_for(QuestionTemplate::Existence, 0, 0), "yes");
    }

    #[test]
    fn invalid_spec() {
        assert!(generate_benchmark(&BenchmarkSpec { templates: vec![], ..small(1.0) }).is_err());
        assert!(generate_benchmark(&BenchmarkSpec { classes: 17, ..small(1.0) }).is_err());
        assert!(generate_benchmark(&BenchmarkSpec { shift: ShiftSpec::default(), ..small(1.0) }).is_err());
    }
}
