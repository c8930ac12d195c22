use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use shiftlab::adapt::{
    train_one_stage_dann, train_one_stage_mm, train_source_only, train_two_stage_dann, write_history, AdaptOutcome,
};
use shiftlab::benchmark::{seeded_style, DEFAULT_STYLE_SEED};
use shiftlab::experiment::{measure_gaps, run_matrix, GapInput, MatrixConfig, MatrixData, Regime, DEFAULT_GAP_CAP};
use shiftlab::io::{load_bundle, load_features, read_questions, save_bundle};
use shiftlab::shift::color::{load_ppm, luminance_merge, save_ppm};
use shiftlab::{
    corpus_syntax_matrix, evaluate_accuracy, generate_benchmark, make_shifted_dataset, BenchmarkSpec, PerturbParams,
    QuestionRecord, ToyDataset, VqaModel,
};

use crate::config::{write_manifest, FileConfig};
use crate::{
    BenchCommand, BenchGenArgs, BenchSpecArgs, Cli, Command, GapCommand, GapMeasureArgs, Method, ReportCommand,
    ReportMatrixArgs, ShiftCommand, ShiftLumaArgs, ShiftMakeArgs, UsageError, VqaAdaptArgs, VqaCommand, VqaEvalArgs,
    VqaTrainArgs,
};

pub const SPLITS: [&str; 4] = ["source_train", "source_eval", "target_train", "target_eval"];

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed;
    match cli.command {
        Command::Gap(GapCommand::Measure(a)) => gap_measure(&file, seed, a),
        Command::Shift(ShiftCommand::Make(a)) => shift_make(&file, seed, a),
        Command::Shift(ShiftCommand::Luma(a)) => shift_luma(a),
        Command::Bench(BenchCommand::Gen(a)) => bench_gen(&file, seed, a),
        Command::Vqa(VqaCommand::Train(a)) => vqa_train(&file, seed, a),
        Command::Vqa(VqaCommand::Adapt(a)) => vqa_adapt(&file, seed, a),
        Command::Vqa(VqaCommand::Eval(a)) => vqa_eval(a),
        Command::Report(ReportCommand::Matrix(a)) => report_matrix(&file, seed, a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn bundle(path: &Path) -> Result<ToyDataset> {
    load_bundle(path).with_context(|| format!("loading bundle {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().or_else(|| path.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn gap_measure(file: &FileConfig, seed: Option<u64>, a: GapMeasureArgs) -> Result<()> {
    let total = a.features.len() + a.questions.len() + a.bundles.len();
    if total < 2 {
        return Err(usage("gap measure needs at least two datasets"));
    }
    let cap = a.cap.or(file.gap_cap).unwrap_or(DEFAULT_GAP_CAP);
    let seed = file.seed(seed, 0);
    let mut names: Vec<String> = Vec::new();
    let mut unique = |path: &Path| {
        let base = stem(path);
        let name = if names.contains(&base) { path.display().to_string() } else { base };
        names.push(name.clone());
        name
    };
    let mut inputs = Vec::new();
    for p in &a.features {
        let m = load_features(p).with_context(|| format!("loading features {}", p.display()))?;
        inputs.push(GapInput { dataset: unique(p), representation: m.modality.as_str().to_string(), features: m });
    }
    for p in &a.questions {
        let lines = read_questions(p).with_context(|| format!("loading questions {}", p.display()))?;
        let records: Vec<QuestionRecord> = lines.into_iter().map(|l| QuestionRecord::new(l.q)).collect();
        inputs.push(GapInput {
            dataset: unique(p),
            representation: "syntax".into(),
            features: corpus_syntax_matrix(&records)?,
        });
    }
    for p in &a.bundles {
        let ds = bundle(p)?;
        let name = unique(p);
        inputs.push(GapInput { dataset: name.clone(), representation: "image".into(), features: ds.image_matrix()? });
        inputs.push(GapInput {
            dataset: name,
            representation: "syntax".into(),
            features: corpus_syntax_matrix(&ds.questions())?,
        });
    }
    let report = measure_gaps(&inputs, cap, seed)?;
    create_dir(&a.out_dir)?;
    fs::write(a.out_dir.join("gaps.tsv"), report.to_tsv())?;
    fs::write(a.out_dir.join("gaps.json"), serde_json::to_vec_pretty(&report)?)?;
    write_manifest(
        &a.out_dir,
        Some(seed),
        &json!({ "cap": cap, "features": a.features, "questions": a.questions, "bundles": a.bundles }),
    )?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn shift_make(file: &FileConfig, seed: Option<u64>, a: ShiftMakeArgs) -> Result<()> {
    let ds = bundle(&a.input)?;
    let mut spec = file.shift.clone().unwrap_or_default();
    if a.alpha.is_some() || a.style_seed.is_some() {
        let alpha = a.alpha.or(spec.image_shift.as_ref().map(|p| p.alpha)).unwrap_or(1.0);
        spec.image_shift = Some(seeded_style(ds.dim(), a.style_seed.unwrap_or(DEFAULT_STYLE_SEED), alpha)?);
    }
    if let Some(p) = a.perturb_prob {
        let q = spec.question_shift.get_or_insert_with(|| PerturbParams::default_paraphrase(0));
        q.swap_adjacent_prob = p;
    }
    if let (Some(s), Some(q)) = (seed, spec.question_shift.as_mut()) {
        q.seed = s;
    }
    if spec.image_shift.is_none() && spec.question_shift.is_none() {
        return Err(usage("nothing to shift: pass --alpha, --perturb-prob or a shift section in --config"));
    }
    let shifted = make_shifted_dataset(&ds, &spec)?;
    save_bundle(&shifted, &a.out)?;
    write_manifest(&a.out, seed, &json!({ "input": a.input, "shift": spec }))?;
    println!("wrote {} samples ({}) to {}", shifted.len(), spec.describe(), a.out.display());
    Ok(())
}

fn shift_luma(a: ShiftLumaArgs) -> Result<()> {
    let stylized = load_ppm(&a.stylized).with_context(|| format!("reading {}", a.stylized.display()))?;
    let original = load_ppm(&a.original).with_context(|| format!("reading {}", a.original.display()))?;
    let merged = luminance_merge(&stylized, &original)?;
    save_ppm(&merged, &a.out)?;
    write_manifest(&a.out, None, &json!({ "stylized": a.stylized, "original": a.original }))?;
    println!("wrote {}x{} image to {}", merged.width(), merged.height(), a.out.display());
    Ok(())
}

fn resolve_bench(file: &FileConfig, seed: Option<u64>, a: &BenchSpecArgs) -> Result<BenchmarkSpec> {
    let mut spec = file.benchmark.clone().unwrap_or_default();
    spec.seed = file.seed(seed, spec.seed);
    if let Some(v) = a.n_train {
        spec.n_train = v;
    }
    if let Some(v) = a.n_eval {
        spec.n_eval = v;
    }
    if let Some(v) = a.classes {
        spec.classes = v;
    }
    if let Some(v) = a.noise_std {
        spec.noise_std = v;
    }
    if let Some(v) = a.image_dim {
        spec.image_dim = v;
    }
    if a.alpha.is_some() || a.image_dim.is_some() {
        let alpha = a.alpha.or(spec.shift.image_shift.as_ref().map(|p| p.alpha)).unwrap_or(1.0);
        spec.shift.image_shift = Some(seeded_style(spec.image_dim, DEFAULT_STYLE_SEED, alpha)?);
    }
    Ok(spec)
}

fn bench_gen(file: &FileConfig, seed: Option<u64>, a: BenchGenArgs) -> Result<()> {
    let spec = resolve_bench(file, seed, &a.spec)?;
    let b = generate_benchmark(&spec)?;
    create_dir(&a.out_dir)?;
    for (name, ds) in SPLITS.iter().zip([&b.source_train, &b.source_eval, &b.target_train, &b.target_eval]) {
        save_bundle(ds, a.out_dir.join(name))?;
    }
    write_manifest(&a.out_dir, Some(spec.seed), &json!({ "benchmark": spec }))?;
    println!("wrote {} to {}", SPLITS.join(", "), a.out_dir.display());
    Ok(())
}

fn save_outcome(out: &AdaptOutcome, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    out.model.save(dir)?;
    write_history(&out.history, dir.join("history.jsonl"))?;
    if !out.extractor_history.is_empty() {
        write_history(&out.extractor_history, dir.join("stage1.history.jsonl"))?;
    }
    Ok(())
}

fn vqa_train(file: &FileConfig, seed: Option<u64>, a: VqaTrainArgs) -> Result<()> {
    let cfg = a.train_args.resolve(file, seed);
    let src = bundle(&a.train)?;
    let out = train_source_only(&src, &cfg)?;
    save_outcome(&out, &a.model_out)?;
    let eval = match &a.eval {
        Some(p) => Some(evaluate_accuracy(&out.model, &bundle(p)?)?),
        None => None,
    };
    write_manifest(&a.model_out, Some(cfg.seed), &json!({ "train": cfg, "train_data": a.train, "eval_data": a.eval }))?;
    let train_acc = out.history.last().map(|h| h.src_acc);
    println!("{}", json!({ "train_acc": train_acc, "eval_acc": eval }));
    Ok(())
}

fn vqa_adapt(file: &FileConfig, seed: Option<u64>, a: VqaAdaptArgs) -> Result<()> {
    let cfg = a.train_args.resolve(file, seed);
    let src = bundle(&a.source)?;
    let tgt = match (&a.target, a.method) {
        (Some(p), _) => Some(bundle(p)?),
        (None, Method::Direct) => None,
        (None, _) => return Err(usage("--target is required for dann1, mm and dann2")),
    };
    let view = || tgt.as_ref().map(|t| t.unlabeled()).expect("target present");
    let (name, out) = match a.method {
        Method::Direct => ("direct", train_source_only(&src, &cfg)?),
        Method::Dann1 => ("dann1", train_one_stage_dann(&src, view(), &cfg)?),
        Method::Mm => ("mm", train_one_stage_mm(&src, view(), &cfg)?),
        Method::Dann2 => ("dann2", train_two_stage_dann(&src, view(), &cfg)?),
    };
    save_outcome(&out, &a.model_out)?;
    write_manifest(
        &a.model_out,
        Some(cfg.seed),
        &json!({ "method": name, "train": cfg, "source": a.source, "target": a.target }),
    )?;
    let last = out.history.last();
    println!(
        "{}",
        json!({
            "method": name,
            "epochs": out.history.len(),
            "l_ce": last.map(|h| h.l_ce),
            "l_fd": last.map(|h| h.l_fd),
            "domain_acc": last.and_then(|h| h.domain_acc),
            "src_acc": last.map(|h| h.src_acc),
        })
    );
    Ok(())
}

fn vqa_eval(a: VqaEvalArgs) -> Result<()> {
    let model = VqaModel::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let ds = bundle(&a.data)?;
    let acc = evaluate_accuracy(&model, &ds)?;
    let result = json!({ "model": a.model, "data": a.data, "n": ds.len(), "accuracy": acc });
    fs::write(&a.out, serde_json::to_vec_pretty(&result)?)?;
    write_manifest(&a.out, None, &json!({ "model": a.model, "data": a.data }))?;
    println!("{result}");
    Ok(())
}

fn matrix_data(file: &FileConfig, seed: Option<u64>, a: &ReportMatrixArgs) -> Result<(MatrixData, serde_json::Value)> {
    if let Some(dir) = &a.bench_dir {
        let [st, se, tt, te] = SPLITS.map(|s| bundle(&dir.join(s)));
        let (st, se, tt, te) = (st?, se?, tt?, te?);
        let data = MatrixData {
            source: st.domain_tag.clone(),
            target: tt.domain_tag.clone(),
            source_train: st,
            source_eval: se,
            target_train: tt,
            target_eval: te,
        };
        return Ok((data, json!({ "bench_dir": dir })));
    }
    let spec = resolve_bench(file, seed, &a.spec)?;
    let b = generate_benchmark(&spec)?;
    let data = MatrixData {
        source: "source".into(),
        target: "target".into(),
        source_train: b.source_train,
        source_eval: b.source_eval,
        target_train: b.target_train,
        target_eval: b.target_eval,
    };
    Ok((data, json!({ "benchmark": spec })))
}

fn report_matrix(file: &FileConfig, seed: Option<u64>, a: ReportMatrixArgs) -> Result<()> {
    let regimes = match &a.regimes {
        Some(s) => Regime::parse_list(s).map_err(|e| usage(e.to_string()))?,
        None => file.regimes.clone().unwrap_or_else(|| Regime::ALL.to_vec()),
    };
    let (data, source) = matrix_data(file, seed, &a)?;
    create_dir(&a.out_dir)?;
    let history: PathBuf = a.out_dir.join("history");
    create_dir(&history)?;
    let cfg = MatrixConfig {
        train: a.train_args.resolve(file, seed),
        regimes,
        supervised_fraction: a.supervised_fraction.or(file.supervised_fraction).unwrap_or(0.1),
        jobs: a.jobs.or(file.jobs).unwrap_or(1),
        history_dir: Some(history),
    };
    let (table, runs) = run_matrix(&data, &cfg)?;
    for r in &runs {
        if let Err(e) = &r.outcome {
            eprintln!("{}: {e}", r.regime.as_str());
        }
    }
    let tsv = table.to_tsv();
    fs::write(a.out_dir.join("report.tsv"), &tsv)?;
    fs::write(a.out_dir.join("report.json"), serde_json::to_vec_pretty(&table.rounded())?)?;
    write_manifest(&a.out_dir, Some(cfg.train.seed), &json!({ "data": source, "matrix": cfg }))?;
    print!("{tsv}");
    Ok(())
}
