//! Synthetic shifts that touch one modality at a time.

pub mod adain;
pub mod color;
pub mod perturb;

use serde::{Deserialize, Serialize};

use crate::data::{Sample, ToyDataset};
use crate::error::{Error, Result};
use crate::text_syntax::QuestionRecord;

pub use adain::{adain_shift, AdainParams};
pub use color::{luminance_merge, rgb_to_yuv, yuv_to_rgb, RgbImage, YuvPlanes};
pub use perturb::{perturb_question, PerturbParams};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub image_shift: Option<AdainParams>,
    pub question_shift: Option<PerturbParams>,
}

impl ShiftSpec {
    pub fn image_only(p: AdainParams) -> Self {
        Self { image_shift: Some(p), question_shift: None }
    }

    pub fn question_only(p: PerturbParams) -> Self {
        Self { image_shift: None, question_shift: Some(p) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_shift.is_none() && self.question_shift.is_none() {
            return Err(Error::InvalidParameter("shift spec has neither an image nor a question shift".into()));
        }
        if let Some(p) = &self.image_shift {
            p.validate()?;
        }
        if let Some(p) = &self.question_shift {
            p.validate()?;
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(p) = &self.image_shift {
            parts.push(format!("adain(a={})", p.alpha));
        }
        if let Some(p) = &self.question_shift {
            parts.push(format!("perturb(p={},seed={})", p.swap_adjacent_prob, p.seed));
        }
        parts.join("+")
    }
}

/// splitmix64 finalizer; derives independent per-sample seeds.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// New dataset with the image features and/or questions transformed;
/// answers are copied verbatim and `ds` is left untouched.
pub fn make_shifted_dataset(ds: &ToyDataset, spec: &ShiftSpec) -> Result<ToyDataset> {
    spec.validate()?;
    if let Some(p) = &spec.image_shift {
        if p.style_mean.len() != ds.dim() {
            return Err(Error::DimensionMismatch(ds.dim(), p.style_mean.len()));
        }
    }
    let tag = format!("{}+{}", ds.domain_tag, spec.describe());
    ds.map_samples(tag, |i, s| {
        let image = match &spec.image_shift {
            Some(p) => {
                let x: Vec<f64> = s.image.iter().map(|&v| v as f64).collect();
                adain_shift(&x, p)?.into_iter().map(|v| v as f32).collect()
            }
            None => s.image.clone(),
        };
        let question = match &spec.question_shift {
            Some(p) => {
                let local = PerturbParams { seed: mix_seed(p.seed, i as u64), ..p.clone() };
                QuestionRecord::from_tokens(perturb_question(&s.question.tokens, &local))
            }
            None => s.question.clone(),
        };
        Ok(Sample { image, question, answer: s.answer.clone() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds() -> ToyDataset {
        let samples = (0..20)
            .map(|i| Sample {
                image: (0..4).map(|j| ((i * 7 + j * 3) % 11) as f32 - 5.0).collect(),
                question: QuestionRecord::new("What color is the object in the image?"),
                answer: Some(["red", "blue"][i % 2].to_string()),
            })
            .collect();
        ToyDataset::new("d", "src", 4, samples).unwrap()
    }

    #[test]
    fn image_only_keeps_questions_and_answers() {
        let d = ds();
        let spec = ShiftSpec::image_only(AdainParams::new(vec![1.0; 4], vec![2.0; 4], 1.0).unwrap());
        let s = make_shifted_dataset(&d, &spec).unwrap();
        for (a, b) in d.samples().iter().zip(s.samples()) {
            assert_eq!(a.question, b.question);
            assert_eq!(a.answer, b.answer);
        }
        assert_ne!(d.samples()[0].image, s.samples()[0].image);
        assert_eq!(s.domain_tag, "src+adain(a=1)");
    }

    #[test]
    fn question_only_keeps_images() {
        let d = ds();
        let s = make_shifted_dataset(&d, &ShiftSpec::question_only(PerturbParams::default_paraphrase(5))).unwrap();
        for (a, b) in d.samples().iter().zip(s.samples()) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.answer, b.answer);
        }
        assert!(s.samples()[0].question.tokens.contains(&"colour".to_string()));
    }

    #[test]
    fn empty_spec_rejected() {
        assert!(make_shifted_dataset(&ds(), &ShiftSpec::default()).is_err());
    }

    #[test]
    fn per_sample_seeds_differ() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_eq!(mix_seed(1, 5), mix_seed(1, 5));
    }
}
