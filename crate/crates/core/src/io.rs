//! On-disk formats.
//!
//! Feature files (`.fmat`), little-endian:
//!
//! ```text
//! "FMAT" | version u32 | n u64 | d u64 | modality u8 | n·d f32
//! ```
//!
//! A dataset bundle is a directory holding `features.fmat`,
//! `questions.jsonl` (one `{"q": ..., "a": ...}` object per line, `"a"`
//! optional) and `meta.json` (`name`, `domain_tag`, `vocab`).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{normalize_answer, Sample, ToyDataset};
use crate::error::{Error, Result};
use crate::kernel_stats::{FeatureMatrix, Modality};
use crate::text_syntax::QuestionRecord;

pub const FMAT_MAGIC: &[u8; 4] = b"FMAT";
pub const FMAT_VERSION: u32 = 1;
const FMAT_HEADER: usize = 4 + 4 + 8 + 8 + 1;

pub const FEATURES_FILE: &str = "features.fmat";
pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const META_FILE: &str = "meta.json";

pub fn encode_features(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(FMAT_HEADER + 4 * m.values().len());
    out.extend_from_slice(FMAT_MAGIC);
    out.extend_from_slice(&FMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.n() as u64).to_le_bytes());
    out.extend_from_slice(&(m.d() as u64).to_le_bytes());
    out.push(m.modality.code());
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(buf: &[u8]) -> Result<FeatureMatrix> {
    if buf.len() < 4 || &buf[..4] != FMAT_MAGIC {
        return Err(Error::BadMagic("feature file".into()));
    }
    if buf.len() < FMAT_HEADER {
        return Err(Error::TruncatedPayload { expected: FMAT_HEADER, found: buf.len() });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != FMAT_VERSION {
        return Err(Error::VersionMismatch { expected: FMAT_VERSION, found: version });
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(buf[16..24].try_into().expect("8 bytes")) as usize;
    let modality = Modality::from_code(buf[24])
        .ok_or_else(|| Error::MalformedRecord { line: 0, reason: format!("unknown modality code {}", buf[24]) })?;
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(FMAT_HEADER))
        .ok_or_else(|| Error::MalformedRecord { line: 0, reason: "header sizes overflow".into() })?;
    if buf.len() != expected {
        return Err(Error::TruncatedPayload { expected, found: buf.len() });
    }
    let values =
        buf[FMAT_HEADER..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    FeatureMatrix::new(n, d, values, modality)
}

pub fn save_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_features(m))?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let m = decode_features(&fs::read(path)?)?;
    Ok(m.with_provenance(path.display().to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionLine {
    pub q: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
}

/// Reads a line-oriented question file. Blank lines are skipped; answers
/// are normalized.
pub fn read_questions(path: impl AsRef<Path>) -> Result<Vec<QuestionLine>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: QuestionLine =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord { line: i + 1, reason: e.to_string() })?;
        rec.a = rec.a.map(|a| normalize_answer(&a));
        out.push(rec);
    }
    Ok(out)
}

pub fn write_questions(lines: &[QuestionLine], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleMeta {
    name: String,
    domain_tag: String,
    vocab: Vec<String>,
}

pub fn save_bundle(ds: &ToyDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    if ds.is_empty() {
        return Err(Error::Empty("dataset bundle"));
    }
    save_features(&ds.image_matrix()?, dir.join(FEATURES_FILE))?;
    let lines: Vec<QuestionLine> =
        ds.samples().iter().map(|s| QuestionLine { q: s.question.raw.clone(), a: s.answer.clone() }).collect();
    write_questions(&lines, dir.join(QUESTIONS_FILE))?;
    let meta =
        BundleMeta { name: ds.name.clone(), domain_tag: ds.domain_tag.clone(), vocab: ds.token_vocab().to_vec() };
    fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<ToyDataset> {
    let dir = dir.as_ref();
    for part in [FEATURES_FILE, QUESTIONS_FILE, META_FILE] {
        if !dir.join(part).is_file() {
            return Err(Error::MissingComponent(dir.join(part)));
        }
    }
    let feats = load_features(dir.join(FEATURES_FILE))?;
    let questions = read_questions(dir.join(QUESTIONS_FILE))?;
    if questions.len() != feats.n() {
        return Err(Error::RowCountMismatch { features: feats.n(), questions: questions.len() });
    }
    let meta: BundleMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)?;
    let samples = questions
        .into_iter()
        .enumerate()
        .map(|(i, q)| Sample { image: feats.row(i).to_vec(), question: QuestionRecord::new(q.q), answer: q.a })
        .collect();
    let ds = ToyDataset::new(meta.name, meta.domain_tag, feats.d(), samples)
        .map_err(|e| Error::MalformedRecord { line: 0, reason: e.to_string() })?;
    if ds.token_vocab() != meta.vocab.as_slice() {
        return Err(Error::MalformedRecord { line: 0, reason: "meta.json vocabulary disagrees with questions".into() });
    }
    Ok(ds)
}
