use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text_syntax::tokenize;

/// Rule-based question rewrite: token substitutions followed by seeded
/// adjacent swaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    pub substitutions: BTreeMap<String, String>,
    pub swap_adjacent_prob: f64,
    pub seed: u64,
}

fn is_valid_token(t: &str) -> bool {
    let toks = tokenize(t);
    toks.len() == 1 && toks[0] == t
}

impl PerturbParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.swap_adjacent_prob) {
            return Err(Error::InvalidParameter(format!(
                "swap probability must be in [0, 1], got {}",
                self.swap_adjacent_prob
            )));
        }
        for (k, v) in &self.substitutions {
            if !is_valid_token(k) || !is_valid_token(v) {
                return Err(Error::InvalidParameter(format!("substitution {k:?} -> {v:?} is not token to token")));
            }
        }
        Ok(())
    }

    /// A mild paraphrase-like rule set over common question vocabulary.
    pub fn default_paraphrase(seed: u64) -> Self {
        let subs = [
            ("what", "which"),
            ("color", "colour"),
            ("object", "item"),
            ("thing", "item"),
            ("shape", "form"),
            ("image", "picture"),
        ];
        Self {
            substitutions: subs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            swap_adjacent_prob: 0.1,
            seed,
        }
    }
}

/// Applies substitutions token-wise, then walks adjacent pairs left to right
/// and swaps each with probability `swap_adjacent_prob` (a swapped token is
/// not swapped again). Deterministic given `(tokens, p)`.
pub fn perturb_question(tokens: &[String], p: &PerturbParams) -> Vec<String> {
    let mut out: Vec<String> =
        tokens.iter().map(|t| p.substitutions.get(t).cloned().unwrap_or_else(|| t.clone())).collect();
    if p.swap_adjacent_prob > 0.0 && out.len() >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let mut i = 0;
        while i + 1 < out.len() {
            if rng.random::<f64>() < p.swap_adjacent_prob {
                out.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn identity_when_empty() {
        let p = PerturbParams { substitutions: BTreeMap::new(), swap_adjacent_prob: 0.0, seed: 1 };
        let q = toks("what color is the cat ?");
        assert_eq!(perturb_question(&q, &p), q);
    }

    #[test]
    fn substitution() {
        let p = PerturbParams {
            substitutions: [("color".to_string(), "colour".to_string())].into(),
            swap_adjacent_prob: 0.0,
            seed: 0,
        };
        assert_eq!(perturb_question(&toks("what color is the cat"), &p), toks("what colour is the cat"));
    }

    #[test]
    fn deterministic_and_length_preserving() {
        let p = PerturbParams { swap_adjacent_prob: 0.5, ..PerturbParams::default_paraphrase(17) };
        let q = toks("what color is the object in the image ?");
        let a = perturb_question(&q, &p);
        assert_eq!(a, perturb_question(&q, &p));
        assert_eq!(a.len(), q.len());
        let mut sa = a.clone();
        let mut sq: Vec<String> = q.iter().map(|t| p.substitutions.get(t).cloned().unwrap_or(t.clone())).collect();
        sa.sort();
        sq.sort();
        assert_eq!(sa, sq);
    }

    #[test]
    fn full_swap_probability_swaps_pairs() {
        let p = PerturbParams { substitutions: BTreeMap::new(), swap_adjacent_prob: 1.0, seed: 3 };
        assert_eq!(perturb_question(&toks("a b c d e"), &p), toks("b a d c e"));
    }

    #[test]
    fn validation() {
        let mut p = PerturbParams::default_paraphrase(0);
        assert!(p.validate().is_ok());
        p.substitutions.insert("cat".into(), "big cat".into());
        assert!(p.validate().is_err());
        let q = PerturbParams { swap_adjacent_prob: 1.5, ..PerturbParams::default_paraphrase(0) };
        assert!(q.validate().is_err());
    }
}
