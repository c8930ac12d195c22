use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use shiftlab::io::{load_bundle, save_bundle, save_features};
use shiftlab::kernel_stats::{FeatureMatrix, Modality};
use shiftlab::shift::color::{save_ppm, RgbImage};

fn shiftlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftlab")).args(args).env_remove("SHIFTLAB_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = shiftlab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    shiftlab(args).status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_bench(dir: &Path) {
    ok(&["bench", "gen", "--out-dir", s(dir), "--n-train", "96", "--n-eval", "40"]);
}

fn features(path: &Path, n: usize, d: usize, offset: f32) {
    let v: Vec<f32> = (0..n * d).map(|i| ((i * 37 % 101) as f32) / 50.0 + offset).collect();
    save_features(&FeatureMatrix::new(n, d, v, Modality::ImageLow).unwrap(), path).unwrap();
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["vqa", "adapt", "--method", "nope", "--source", "x", "--model-out", "y"]), 2);
}

#[test]
fn bench_gen_is_deterministic_on_disk() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    small_bench(&a);
    small_bench(&b);
    for split in ["source_train", "target_eval"] {
        for file in ["features.fmat", "questions.jsonl", "meta.json"] {
            assert_eq!(fs::read(a.join(split).join(file)).unwrap(), fs::read(b.join(split).join(file)).unwrap());
        }
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["tool"], "shiftlab");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config"]["benchmark"]["n_train"], 96);
}

#[test]
fn seed_precedence() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 5}"#).unwrap();
    let run = |dir: &str, extra: &[&str], env: Option<&str>| {
        let out_dir = t.path().join(dir);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_shiftlab"));
        cmd.args(["bench", "gen", "--n-train", "20", "--n-eval", "5", "--out-dir", s(&out_dir)]).args(extra);
        cmd.env_remove("SHIFTLAB_SEED");
        if let Some(v) = env {
            cmd.env("SHIFTLAB_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        json(&out_dir.join("manifest.json"))["seed"].as_u64().unwrap()
    };
    assert_eq!(run("d", &[], None), 0);
    assert_eq!(run("c", &["--config", s(&cfg)], None), 5);
    assert_eq!(run("e", &["--config", s(&cfg)], Some("7")), 7);
    assert_eq!(run("f", &["--seed", "9"], Some("7")), 9);
}

#[test]
fn bad_config_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("cfg.json");
    fs::write(&cfg, r#"{"sed": 5}"#).unwrap();
    assert_eq!(code(&["--config", s(&cfg), "bench", "gen", "--out-dir", s(&t.path().join("o"))]), 2);
}

#[test]
fn gap_of_identical_files_is_zero() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a.fmat"), t.path().join("b.fmat"));
    features(&a, 30, 4, 0.0);
    fs::copy(&a, &b).unwrap();
    let out = t.path().join("gaps");
    ok(&["gap", "measure", "--features", s(&a), s(&b), "--out-dir", s(&out)]);
    let report = json(&out.join("gaps.json"));
    let entries = report["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert!(entries[0]["mmd_squared"].as_f64().unwrap().abs() <= 1e-12);
    assert_eq!(entries[0]["representation"], "image_low");
    assert!(out.join("gaps.tsv").exists() && out.join("manifest.json").exists());
}

#[test]
fn gap_pairs_per_representation() {
    let t = tempfile::tempdir().unwrap();
    let b = t.path().join("b");
    small_bench(&b);
    let out = t.path().join("gaps");
    let stdout = ok(&[
        "gap",
        "measure",
        "--bundles",
        s(&b.join("source_train")),
        s(&b.join("target_train")),
        s(&b.join("target_eval")),
        "--out-dir",
        s(&out),
    ]);
    let report = json(&out.join("gaps.json"));
    let entries = report["entries"].as_array().unwrap();
    for rep in ["image", "syntax"] {
        assert_eq!(entries.iter().filter(|e| e["representation"] == rep).count(), 3);
    }
    assert!(entries.iter().all(|e| e["mmd_squared"].as_f64().unwrap() >= 0.0));
    assert_eq!(stdout.lines().count(), 7);
}

#[test]
fn gap_errors() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a.fmat"), t.path().join("b.fmat"));
    features(&a, 10, 4, 0.0);
    features(&b, 10, 3, 0.0);
    let out = s(&t.path().join("o")).to_string();
    assert_eq!(code(&["gap", "measure", "--features", s(&a), "--out-dir", &out]), 2);
    assert_eq!(code(&["gap", "measure", "--features", s(&a), s(&b), "--out-dir", &out]), 3);
    fs::write(&b, b"XXXX0000").unwrap();
    assert_eq!(code(&["gap", "measure", "--features", s(&a), s(&b), "--out-dir", &out]), 3);
}

#[test]
fn train_adapt_eval_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let b = t.path().join("b");
    small_bench(&b);
    let (src, tgt, eval) = (b.join("source_train"), b.join("target_train"), b.join("target_eval"));
    let m = t.path().join("m");
    ok(&[
        "vqa",
        "train",
        "--train",
        s(&src),
        "--eval",
        s(&b.join("source_eval")),
        "--model-out",
        s(&m),
        "--epochs",
        "2",
    ]);
    assert_eq!(fs::read_to_string(m.join("history.jsonl")).unwrap().lines().count(), 2);

    let d2 = t.path().join("d2");
    ok(&[
        "vqa",
        "adapt",
        "--method",
        "dann2",
        "--source",
        s(&src),
        "--target",
        s(&tgt),
        "--model-out",
        s(&d2),
        "--epochs",
        "2",
    ]);
    assert!(d2.join("extractor.slm").exists() && d2.join("stage1.history.jsonl").exists());
    let res = t.path().join("eval.json");
    let stdout = ok(&["vqa", "eval", "--model", s(&d2), "--data", s(&eval), "--out", s(&res)]);
    let v: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(v, json(&res));
    assert_eq!(v["n"], 40);
    assert!(t.path().join("eval.json.manifest.json").exists());
    assert_eq!(
        code(&["vqa", "adapt", "--method", "mm", "--source", s(&src), "--model-out", s(&t.path().join("x"))]),
        2
    );
}

#[test]
fn target_labels_never_reach_adaptation() {
    let t = tempfile::tempdir().unwrap();
    let b = t.path().join("b");
    small_bench(&b);
    let stripped = t.path().join("stripped");
    save_bundle(&load_bundle(b.join("target_train")).unwrap().without_labels(), &stripped).unwrap();
    for method in ["dann1", "mm", "dann2"] {
        let (x, y) = (t.path().join(format!("{method}_l")), t.path().join(format!("{method}_u")));
        for (tgt, out) in [(b.join("target_train"), &x), (stripped.clone(), &y)] {
            ok(&[
                "vqa",
                "adapt",
                "--method",
                method,
                "--source",
                s(&b.join("source_train")),
                "--target",
                s(&tgt),
                "--model-out",
                s(out),
                "--epochs",
                "2",
            ]);
        }
        for file in ["image_encoder.slm", "fusion_head.slm", "embedding.slm", "history.jsonl"] {
            assert_eq!(fs::read(x.join(file)).unwrap(), fs::read(y.join(file)).unwrap(), "{method} {file}");
        }
    }
    assert_eq!(
        code(&[
            "vqa",
            "eval",
            "--model",
            s(&t.path().join("mm_l")),
            "--data",
            s(&stripped),
            "--out",
            s(&t.path().join("e.json"))
        ]),
        3
    );
}

#[test]
fn collapse_exit_code() {
    let t = tempfile::tempdir().unwrap();
    let b = t.path().join("b");
    small_bench(&b);
    let (src, tgt, m) = (b.join("source_train"), b.join("target_train"), t.path().join("m"));
    let args = [
        "vqa",
        "adapt",
        "--method",
        "mm",
        "--source",
        s(&src),
        "--target",
        s(&tgt),
        "--model-out",
        s(&m),
        "--epochs",
        "5",
        "--learning-rate",
        "1000",
        "--lambda-fd",
        "10",
    ];
    assert_eq!(code(&args), 4);
}

#[test]
fn flags_override_config() {
    let t = tempfile::tempdir().unwrap();
    let b = t.path().join("b");
    small_bench(&b);
    let cfg = t.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"epochs": 1, "learning_rate": 0.02}}"#).unwrap();
    let (m1, m2) = (t.path().join("m1"), t.path().join("m2"));
    ok(&["--config", s(&cfg), "vqa", "train", "--train", s(&b.join("source_train")), "--model-out", s(&m1)]);
    ok(&[
        "--config",
        s(&cfg),
        "vqa",
        "train",
        "--train",
        s(&b.join("source_train")),
        "--model-out",
        s(&m2),
        "--epochs",
        "3",
    ]);
    assert_eq!(fs::read_to_string(m1.join("history.jsonl")).unwrap().lines().count(), 1);
    assert_eq!(fs::read_to_string(m2.join("history.jsonl")).unwrap().lines().count(), 3);
    let man = json(&m2.join("manifest.json"));
    assert_eq!(man["config"]["train"]["epochs"], 3);
    assert_eq!(man["config"]["train"]["learning_rate"], 0.02);
}

#[test]
fn report_matrix_filter_and_forms_agree() {
    let t = tempfile::tempdir().unwrap();
    let b = t.path().join("b");
    small_bench(&b);
    let out = t.path().join("r");
    let args = [
        "report",
        "matrix",
        "--bench-dir",
        s(&b),
        "--regimes",
        "direct,full",
        "--epochs",
        "2",
        "--jobs",
        "2",
        "--out-dir",
        s(&out),
    ];
    let stdout = ok(&args);
    let tsv = fs::read_to_string(out.join("report.tsv")).unwrap();
    assert_eq!(stdout, tsv);
    let rows: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    let report = json(&out.join("report.json"));
    for (line, row) in rows.iter().zip(report["rows"].as_array().unwrap()) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[2], row["regime"]);
        for (k, key) in [(4, "source_acc"), (5, "target_acc"), (6, "normalized")] {
            assert_eq!(cols[k].parse::<f64>().unwrap(), row[key].as_f64().unwrap());
        }
    }
    assert!(out.join("history/direct.history.jsonl").exists());
    assert!(out.join("history/full.history.jsonl").exists());
    assert_eq!(json(&out.join("manifest.json"))["config"]["matrix"]["regimes"], serde_json::json!(["direct", "full"]));
}

#[test]
fn shift_make_image_only() {
    let t = tempfile::tempdir().unwrap();
    let b = t.path().join("b");
    small_bench(&b);
    let out = t.path().join("shifted");
    ok(&["shift", "make", "--input", s(&b.join("source_eval")), "--out", s(&out), "--alpha", "0.5"]);
    let (x, y) = (load_bundle(b.join("source_eval")).unwrap(), load_bundle(&out).unwrap());
    assert_eq!(x.questions(), y.questions());
    assert_eq!(x.answers(), y.answers());
    assert_ne!(x.samples()[0].image, y.samples()[0].image);
    assert!(out.join("manifest.json").exists());
    assert_eq!(code(&["shift", "make", "--input", s(&b.join("source_eval")), "--out", s(&t.path().join("n"))]), 2);
}

#[test]
fn shift_luma_on_ppm() {
    let t = tempfile::tempdir().unwrap();
    let px = |seed: u32| (0..16u32).map(|i| [(i * 13 + seed) as u8, (i * 29 + seed) as u8, (i * 7) as u8]).collect();
    save_ppm(&RgbImage::new(4, 4, px(40)).unwrap(), t.path().join("s.ppm")).unwrap();
    save_ppm(&RgbImage::new(4, 4, px(3)).unwrap(), t.path().join("o.ppm")).unwrap();
    let out = t.path().join("m.ppm");
    ok(&[
        "shift",
        "luma",
        "--stylized",
        s(&t.path().join("s.ppm")),
        "--original",
        s(&t.path().join("o.ppm")),
        "--out",
        s(&out),
    ]);
    assert!(fs::read(&out).unwrap().starts_with(b"P6"));
    assert!(t.path().join("m.ppm.manifest.json").exists());
}
