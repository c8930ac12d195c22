//! Gap measurement across datasets and the regime comparison matrix.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    train_one_stage_dann, train_one_stage_mm, train_source_only, train_supervised_target, train_two_stage_dann,
    write_history, AdaptOutcome, SupervisedInit,
};
use crate::data::ToyDataset;
use crate::error::{Error, Result};
use crate::kernel_stats::{median_bandwidth, mmd_squared_biased, FeatureMatrix, KernelConfig};
use crate::nn::TrainConfig;
use crate::vqa::{evaluate_accuracy, normalized_transfer, TransferResult};

/// Per-dataset subsample cap for gap measurement.
pub const DEFAULT_GAP_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub dataset_a: String,
    pub dataset_b: String,
    pub representation: String,
    pub mmd_squared: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GapReport {
    pub entries: Vec<GapEntry>,
}

impl GapReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("dataset_a\tdataset_b\trepresentation\tmmd_squared\tbandwidth\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                e.dataset_a, e.dataset_b, e.representation, e.mmd_squared, e.bandwidth
            );
        }
        s
    }

    pub fn get(&self, a: &str, b: &str, representation: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| {
                e.representation == representation
                    && ((e.dataset_a == a && e.dataset_b == b) || (e.dataset_a == b && e.dataset_b == a))
            })
            .map(|e| e.mmd_squared)
    }
}

/// One named dataset in one representation.
#[derive(Debug, Clone)]
pub struct GapInput {
    pub dataset: String,
    pub representation: String,
    pub features: FeatureMatrix,
}

/// Seeded subsample of at most `cap` rows. The row choice depends only on
/// `(n, cap, seed)`, so identical inputs yield identical subsamples.
pub fn subsample(m: &FeatureMatrix, cap: usize, seed: u64) -> Result<FeatureMatrix> {
    if m.n() <= cap {
        return Ok(m.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, m.n(), cap).into_vec();
    idx.sort_unstable();
    m.select_rows(&idx)
}

/// Biased MMD² with median-heuristic bandwidth for every pair of datasets
/// sharing a representation. Pairs are emitted in input order (`a` before `b`).
pub fn measure_gaps(inputs: &[GapInput], cap: usize, seed: u64) -> Result<GapReport> {
    if cap == 0 {
        return Err(Error::InvalidParameter("subsample cap must be positive".into()));
    }
    let mut reps: Vec<&str> = Vec::new();
    for i in inputs {
        if !reps.contains(&i.representation.as_str()) {
            reps.push(&i.representation);
        }
    }
    let sampled: Vec<FeatureMatrix> =
        inputs.iter().map(|i| subsample(&i.features, cap, seed)).collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for rep in reps {
        let members: Vec<usize> = (0..inputs.len()).filter(|&k| inputs[k].representation == rep).collect();
        if let Some(&first) = members.first() {
            let d = inputs[first].features.d();
            if let Some(&bad) = members.iter().find(|&&k| inputs[k].features.d() != d) {
                return Err(Error::DimensionMismatch(d, inputs[bad].features.d()));
            }
        }
        for (p, &a) in members.iter().enumerate() {
            for &b in &members[p + 1..] {
                pairs.push((a, b));
            }
        }
    }
    let entries = pairs
        .into_iter()
        .map(|(a, b)| {
            let sigma = median_bandwidth(&sampled[a], &sampled[b])?;
            let mmd = mmd_squared_biased(&sampled[a], &sampled[b], &KernelConfig::rbf(sigma)?)?;
            Ok(GapEntry {
                dataset_a: inputs[a].dataset.clone(),
                dataset_b: inputs[b].dataset.clone(),
                representation: inputs[a].representation.clone(),
                mmd_squared: mmd,
                bandwidth: sigma,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GapReport { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Direct,
    Dann1,
    Mm,
    Dann2,
    Sup10Scratch,
    Sup10Finetune,
    Full,
}

impl Regime {
    pub const ALL: [Regime; 7] = [
        Regime::Direct,
        Regime::Dann1,
        Regime::Mm,
        Regime::Dann2,
        Regime::Sup10Scratch,
        Regime::Sup10Finetune,
        Regime::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Direct => "direct",
            Regime::Dann1 => "dann1",
            Regime::Mm => "mm",
            Regime::Dann2 => "dann2",
            Regime::Sup10Scratch => "sup10_scratch",
            Regime::Sup10Finetune => "sup10_finetune",
            Regime::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown regime {s:?}")))
    }

    /// Comma-separated list, e.g. `direct,full`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let r = Regime::parse(part)?;
            if !out.contains(&r) {
                out.push(r);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidParameter("no regimes selected".into()));
        }
        Ok(out)
    }
}

/// The four splits a matrix run consumes. Target training labels are only
/// read by the supervised regimes.
#[derive(Debug, Clone)]
pub struct MatrixData {
    pub source: String,
    pub target: String,
    pub source_train: ToyDataset,
    pub source_eval: ToyDataset,
    pub target_train: ToyDataset,
    pub target_eval: ToyDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    pub train: TrainConfig,
    pub regimes: Vec<Regime>,
    pub supervised_fraction: f64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub history_dir: Option<PathBuf>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            regimes: Regime::ALL.to_vec(),
            supervised_fraction: 0.1,
            jobs: 1,
            history_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source: String,
    pub target: String,
    pub regime: Regime,
    /// `"ok"` or the collapse/failure message.
    pub status: String,
    pub source_acc: Option<f64>,
    pub target_acc: Option<f64>,
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    pub result: TransferResult,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

impl ReportTable {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("source\ttarget\tregime\tstatus\tsource_acc\ttarget_acc\tnormalized\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.source,
                r.target,
                r.regime.as_str(),
                r.status,
                fmt_opt(r.source_acc),
                fmt_opt(r.target_acc),
                fmt_opt(r.normalized)
            );
        }
        s
    }

    pub fn row(&self, regime: Regime) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.regime == regime)
    }

    /// Rows rounded the same way as the TSV form.
    pub fn rounded(&self) -> ReportTable {
        let round = |v: Option<f64>| v.map(|x| format!("{x:.6}").parse::<f64>().expect("formatted float"));
        let mut t = self.clone();
        for r in &mut t.rows {
            r.source_acc = round(r.source_acc);
            r.target_acc = round(r.target_acc);
            r.normalized = round(r.normalized);
        }
        t
    }
}

/// A finished regime: its outcome and the accuracy on the target evaluation split.
pub struct RegimeRun {
    pub regime: Regime,
    pub outcome: Result<(AdaptOutcome, f64)>,
}

fn run_regime(
    regime: Regime,
    data: &MatrixData,
    cfg: &MatrixConfig,
    direct: Option<&AdaptOutcome>,
) -> Result<(AdaptOutcome, f64)> {
    let t = &cfg.train;
    let tgt = data.target_train.unlabeled();
    let out = match regime {
        Regime::Direct => train_source_only(&data.source_train, t)?,
        Regime::Dann1 => train_one_stage_dann(&data.source_train, tgt, t)?,
        Regime::Mm => train_one_stage_mm(&data.source_train, tgt, t)?,
        Regime::Dann2 => train_two_stage_dann(&data.source_train, tgt, t)?,
        Regime::Sup10Scratch => {
            train_supervised_target(&data.target_train, cfg.supervised_fraction, SupervisedInit::Scratch, t)?
        }
        Regime::Sup10Finetune => {
            let src = direct.ok_or_else(|| Error::InvalidParameter("finetuning needs the source model".into()))?;
            train_supervised_target(
                &data.target_train,
                cfg.supervised_fraction,
                SupervisedInit::FromSource(&src.model),
                t,
            )?
        }
        Regime::Full => train_supervised_target(&data.target_train, 1.0, SupervisedInit::Scratch, t)?,
    };
    let acc = evaluate_accuracy(&out.model, &data.target_eval)?;
    Ok((out, acc))
}

/// Runs the selected regimes with a shared seed. Failed or collapsed
/// regimes are reported in their row; the remaining rows are unaffected.
pub fn run_matrix(data: &MatrixData, cfg: &MatrixConfig) -> Result<(ReportTable, Vec<RegimeRun>)> {
    cfg.train.validate()?;
    if cfg.regimes.is_empty() {
        return Err(Error::InvalidParameter("no regimes selected".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let wants = |r: Regime| cfg.regimes.contains(&r);
    let need_direct = wants(Regime::Direct) || wants(Regime::Sup10Finetune);
    let direct = if need_direct { Some(pool.install(|| run_regime(Regime::Direct, data, cfg, None))) } else { None };
    let direct_model = direct.as_ref().and_then(|d| d.as_ref().ok()).map(|(o, _)| o);
    let source_acc = direct_model.map(|o| evaluate_accuracy(&o.model, &data.source_eval)).transpose()?;

    let rest: Vec<Regime> = cfg.regimes.iter().copied().filter(|r| *r != Regime::Direct).collect();
    let mut runs: Vec<RegimeRun> = pool.install(|| {
        rest.par_iter().map(|&r| RegimeRun { regime: r, outcome: run_regime(r, data, cfg, direct_model) }).collect()
    });
    if let (Some(d), true) = (direct, wants(Regime::Direct)) {
        runs.insert(0, RegimeRun { regime: Regime::Direct, outcome: d });
    }
    runs.sort_by_key(|r| Regime::ALL.iter().position(|x| *x == r.regime));

    if let Some(dir) = &cfg.history_dir {
        std::fs::create_dir_all(dir)?;
        for run in &runs {
            if let Ok((out, _)) = &run.outcome {
                write_history(&out.history, dir.join(format!("{}.history.jsonl", run.regime.as_str())))?;
                if !out.extractor_history.is_empty() {
                    write_history(
                        &out.extractor_history,
                        dir.join(format!("{}.stage1.history.jsonl", run.regime.as_str())),
                    )?;
                }
            }
        }
    }

    let acc_of = |r: Regime| runs.iter().find(|x| x.regime == r).and_then(|x| x.outcome.as_ref().ok()).map(|(_, a)| *a);
    let result = TransferResult {
        source_acc,
        target_direct: acc_of(Regime::Direct),
        target_dann1: acc_of(Regime::Dann1),
        target_mm: acc_of(Regime::Mm),
        target_dann2: acc_of(Regime::Dann2),
        target_sup10_scratch: acc_of(Regime::Sup10Scratch),
        target_sup10_finetune: acc_of(Regime::Sup10Finetune),
        target_full: acc_of(Regime::Full),
    };
    let full = result.target_full;
    let rows = runs
        .iter()
        .map(|run| {
            let (status, acc) = match &run.outcome {
                Ok((_, a)) => ("ok".to_string(), Some(*a)),
                Err(e) => (e.to_string(), None),
            };
            let normalized = match (acc, full) {
                (Some(a), Some(f)) => normalized_transfer(a, f).ok(),
                _ => None,
            };
            ReportRow {
                source: data.source.clone(),
                target: data.target.clone(),
                regime: run.regime,
                status,
                source_acc,
                target_acc: acc,
                normalized,
            }
        })
        .collect();
    Ok((ReportTable { rows, result }, runs))
}
