//! Tokenization and a fixed 20-dimensional low-level syntactic featurizer
//! for questions.
//!
//! The closed-class word lists below are frozen as version
//! [`SYNTAX_FEATURES_VERSION`]; changing any list or feature definition must
//! bump the version.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel_stats::{FeatureMatrix, Modality};

pub const SYNTAX_FEATURES_VERSION: u32 = 1;
pub const SYNTAX_FEATURE_COUNT: usize = 20;

pub const PUNCTUATION: &[char] = &['?', '.', ',', '!', '\'', ';', ':', '"'];

pub const WH_WORDS: &[&str] = &["what", "which", "who", "whom", "whose", "where", "when", "why", "how"];

pub const CONJUNCTIONS: &[&str] =
    &["and", "or", "but", "nor", "so", "yet", "because", "although", "though", "while", "if", "unless", "whereas"];

pub const PRONOUNS: &[&str] = &[
    "i",
    "me",
    "my",
    "mine",
    "you",
    "your",
    "yours",
    "he",
    "him",
    "his",
    "she",
    "her",
    "hers",
    "it",
    "its",
    "we",
    "us",
    "our",
    "ours",
    "they",
    "them",
    "their",
    "theirs",
    "myself",
    "yourself",
    "itself",
    "themselves",
    "someone",
    "something",
    "anyone",
    "anything",
    "everyone",
    "everything",
];

pub const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "of", "to", "for", "with", "from", "by", "about", "above", "below", "under", "over", "behind",
    "between", "near", "into", "onto", "through", "across", "beside", "next", "inside", "outside", "left", "right",
    "front", "around", "after", "before", "during", "without", "along",
];

pub const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "each", "every", "some", "any", "another", "both", "either",
    "all",
];

pub const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "do", "does", "did", "have", "has", "had", "can", "could",
    "will", "would", "shall", "should", "may", "might", "must",
];

pub const NEGATIONS: &[&str] = &["not", "no", "never", "none", "nothing", "nobody", "nowhere", "neither", "cannot"];

/// Frequent function words (superset-style list, used for the stopword ratio).
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "am", "do", "does", "did", "have", "has", "had", "of",
    "in", "on", "at", "to", "for", "with", "from", "by", "and", "or", "but", "if", "this", "that", "these", "those",
    "it", "its", "there", "what", "which", "who", "how", "where", "when", "why", "any", "some", "all", "can", "could",
    "will", "would", "not", "no", "as", "than", "then", "so",
];

pub const FEATURE_NAMES: [&str; SYNTAX_FEATURE_COUNT] = [
    "token_count",
    "char_count",
    "mean_token_len",
    "wh_count",
    "conjunction_count",
    "pronoun_count",
    "preposition_count",
    "determiner_count",
    "auxiliary_count",
    "negation_count",
    "digit_token_count",
    "punct_token_count",
    "comma_count",
    "unique_token_ratio",
    "capitalized_word_count",
    "question_mark_flag",
    "er_est_suffix_count",
    "ing_suffix_count",
    "max_token_len",
    "stopword_ratio",
];

fn is_punct(c: char) -> bool {
    PUNCTUATION.contains(&c)
}

/// Lowercases, splits on whitespace and peels leading/trailing punctuation
/// marks off into their own tokens.
pub fn tokenize(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in raw.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let start = chars.iter().take_while(|c| is_punct(**c)).count();
        if start == chars.len() {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let end = chars.len() - chars.iter().rev().take_while(|c| is_punct(**c)).count();
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect::<String>().to_lowercase());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl QuestionRecord {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        Self { raw, tokens }
    }

    /// Record whose raw text is the tokens joined by single spaces.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        Self { raw: tokens.join(" "), tokens }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntaxFeatureSet {
    pub values: [f64; SYNTAX_FEATURE_COUNT],
}

impl SyntaxFeatureSet {
    pub fn feature_names() -> &'static [&'static str; SYNTAX_FEATURE_COUNT] {
        &FEATURE_NAMES
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

fn count_in(tokens: &[String], list: &[&str]) -> usize {
    tokens.iter().filter(|t| list.contains(&t.as_str())).count()
}

fn is_alpha_word(t: &str) -> bool {
    !t.is_empty() && t.chars().all(|c| c.is_alphabetic())
}

pub fn syntax_features(q: &QuestionRecord) -> SyntaxFeatureSet {
    let toks = &q.tokens;
    let n = toks.len();
    let lens: Vec<usize> = toks.iter().map(|t| t.chars().count()).collect();
    let ratio = |num: usize| if n == 0 { 0.0 } else { num as f64 / n as f64 };

    let negations =
        toks.iter().filter(|t| NEGATIONS.contains(&t.as_str()) || (t.len() > 3 && t.ends_with("n't"))).count();
    let digit_tokens = toks.iter().filter(|t| !t.is_empty() && t.chars().all(|c| c.is_ascii_digit())).count();
    let punct_tokens = toks.iter().filter(|t| t.chars().count() == 1 && t.chars().all(is_punct)).count();
    let commas = toks.iter().filter(|t| t.as_str() == ",").count();
    let unique: HashSet<&String> = toks.iter().collect();
    let capitalized = q
        .raw
        .split_whitespace()
        .filter(|w| w.chars().find(|c| !is_punct(*c)).is_some_and(|c| c.is_uppercase()))
        .count();
    let er_est = toks
        .iter()
        .filter(|t| is_alpha_word(t) && t.chars().count() >= 4 && (t.ends_with("er") || t.ends_with("est")))
        .count();
    let ing = toks.iter().filter(|t| is_alpha_word(t) && t.chars().count() >= 5 && t.ends_with("ing")).count();

    let values = [
        n as f64,
        q.raw.chars().count() as f64,
        if n == 0 { 0.0 } else { lens.iter().sum::<usize>() as f64 / n as f64 },
        count_in(toks, WH_WORDS) as f64,
        count_in(toks, CONJUNCTIONS) as f64,
        count_in(toks, PRONOUNS) as f64,
        count_in(toks, PREPOSITIONS) as f64,
        count_in(toks, DETERMINERS) as f64,
        count_in(toks, AUXILIARIES) as f64,
        negations as f64,
        digit_tokens as f64,
        punct_tokens as f64,
        commas as f64,
        ratio(unique.len()),
        capitalized as f64,
        if q.raw.contains('?') { 1.0 } else { 0.0 },
        er_est as f64,
        ing as f64,
        lens.iter().copied().max().unwrap_or(0) as f64,
        ratio(count_in(toks, STOPWORDS)),
    ];
    SyntaxFeatureSet { values }
}

/// Stacks [`syntax_features`] of every question into an `n × 20` matrix.
pub fn corpus_syntax_matrix(questions: &[QuestionRecord]) -> Result<FeatureMatrix> {
    if questions.is_empty() {
        return Err(Error::Empty("question corpus"));
    }
    let rows: Vec<[f64; SYNTAX_FEATURE_COUNT]> = questions.iter().map(|q| syntax_features(q).values).collect();
    FeatureMatrix::from_rows(&rows, Modality::QuestionSyntax)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("What color is the cat?"), vec!["what", "color", "is", "the", "cat", "?"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("what color"), vec!["what", "color"]);
    }

    #[test]
    fn tokenize_peels_both_sides() {
        assert_eq!(tokenize("\"Hi,\" she said!?"), vec!["\"", "hi", ",", "\"", "she", "said", "!", "?"]);
        assert_eq!(tokenize("don't ?!"), vec!["don't", "?", "!"]);
    }

    #[test]
    fn tokenize_is_idempotent_on_joined_tokens() {
        let t = tokenize("Is the RED cube, left of it?");
        assert_eq!(tokenize(&t.join(" ")), t);
    }

    #[test]
    fn cat_question_features() {
        let f = syntax_features(&QuestionRecord::new("What color is the cat?"));
        assert_eq!(f.get("token_count"), Some(6.0));
        assert_eq!(f.get("wh_count"), Some(1.0));
        assert_eq!(f.get("determiner_count"), Some(1.0));
        assert_eq!(f.get("question_mark_flag"), Some(1.0));
        assert_eq!(f.get("auxiliary_count"), Some(1.0));
        assert_eq!(f.get("char_count"), Some(22.0));
        assert_eq!(f.get("capitalized_word_count"), Some(1.0));
    }

    #[test]
    fn empty_question_is_all_zero() {
        let f = syntax_features(&QuestionRecord::new(""));
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn case_only_changes_capitalization_feature() {
        let a = syntax_features(&QuestionRecord::new("Is The Dog Running Near Bigger Trees?"));
        let b = syntax_features(&QuestionRecord::new("is the dog running near bigger trees?"));
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            if *name == "capitalized_word_count" {
                assert_ne!(a.values[i], b.values[i]);
            } else {
                assert_eq!(a.values[i], b.values[i], "{name}");
            }
        }
    }

    #[test]
    fn corpus_shape_and_errors() {
        let qs: Vec<_> = ["a?", "b c", "d"].iter().map(|s| QuestionRecord::new(*s)).collect();
        let m = corpus_syntax_matrix(&qs).unwrap();
        assert_eq!((m.n(), m.d()), (3, 20));
        assert_eq!(m.modality, Modality::QuestionSyntax);
        assert!(matches!(corpus_syntax_matrix(&[]), Err(Error::Empty(_))));
    }
}
