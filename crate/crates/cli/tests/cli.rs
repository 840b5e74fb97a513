use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;
use vistk::config::PipelineConfig;
use vistk_core::eval::EvalReport;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn fixture_str(name: &str) -> String {
    fixture(name).to_str().unwrap().to_string()
}

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn vistk(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = vistk::run(std::iter::once("vistk").chain(args.iter().copied()), &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn binary(args: &[&str]) -> Output {
    let o = Command::new(env!("CARGO_BIN_EXE_vistk")).args(args).output().unwrap();
    Output {
        code: o.status.code().unwrap(),
        stdout: String::from_utf8(o.stdout).unwrap(),
        stderr: String::from_utf8(o.stderr).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let o = vistk(args);
    assert_eq!(o.code, 0, "vistk {args:?} failed: {}", o.stderr);
    o.stdout
}

/// Writes `toml` as `dir/pipeline.toml` and returns its path.
fn write_config(dir: &Path, toml: &str) -> String {
    let p = dir.join("pipeline.toml");
    fs::write(&p, toml).unwrap();
    p.to_str().unwrap().to_string()
}

fn small_pipeline(dir: &Path) -> String {
    write_config(dir, &fs::read_to_string(fixture("pipeline.toml")).unwrap())
}

fn track_count(path: &Path) -> usize {
    let v: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    v["annotations"].as_array().unwrap().len()
}

#[test]
fn stats_video_table() {
    let out = ok(&["stats", &fixture_str("ytvis_small.json")]);
    assert_eq!(out, fs::read_to_string(fixture("stats_ytvis.txt")).unwrap());
}

#[test]
fn stats_image_table() {
    let out = ok(&["stats", &fixture_str("coco_small.json")]);
    assert_eq!(out, fs::read_to_string(fixture("stats_coco.txt")).unwrap());
}

#[test]
fn stats_box_table() {
    let out = ok(&["stats", "--boxes", &fixture_str("imagenet_bbox_small.json")]);
    assert_eq!(out, fs::read_to_string(fixture("stats_boxes.txt")).unwrap());
}

#[test]
fn stats_empty_dataset_is_all_zero() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("empty.json");
    fs::write(&p, r#"{"videos": [], "categories": [], "annotations": []}"#).unwrap();
    let out = ok(&["stats", p.to_str().unwrap()]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2, "{out}");
    assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["Total", "(0)", "0", "0"]);
}

#[test]
fn catmap_table() {
    let out = ok(&[
        "catmap",
        "--videos",
        &fixture_str("ytvis_small.json"),
        "--pixel",
        &fixture_str("coco_small.json"),
        "--box",
        &fixture_str("imagenet_bbox_small.json"),
        "--aliases",
        &fixture_str("aliases.txt"),
    ]);
    assert_eq!(out, fs::read_to_string(fixture("catmap.txt")).unwrap());
}

#[test]
fn eval_table_and_report() {
    let dir = TempDir::new().unwrap();
    let out = ok(&[
        "eval",
        "--pred",
        &fixture_str("eval_pred.json"),
        "--gt",
        &fixture_str("eval_gt.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out, fs::read_to_string(fixture("eval_report.txt")).unwrap());
    let report: EvalReport = serde_json::from_slice(&fs::read(dir.path().join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report.render_table(), out);
}

#[test]
fn eval_against_itself_is_perfect() {
    let dir = TempDir::new().unwrap();
    let gt = fixture_str("eval_gt.json");
    let out = ok(&["eval", "--pred", &gt, "--gt", &gt, "--out", dir.path().to_str().unwrap()]);
    for line in out.lines().skip(1) {
        let cells: Vec<&str> = line.split_whitespace().skip(1).collect();
        assert_eq!(cells, ["100.0"; 5], "{line}");
    }
}

#[test]
fn eval_of_empty_predictions_is_zero() {
    let dir = TempDir::new().unwrap();
    let mut pred: serde_json::Value = serde_json::from_slice(&fs::read(fixture("eval_gt.json")).unwrap()).unwrap();
    pred["annotations"] = serde_json::json!([]);
    let p = dir.path().join("pred.json");
    fs::write(&p, pred.to_string()).unwrap();
    let out = ok(&[
        "eval",
        "--pred",
        p.to_str().unwrap(),
        "--gt",
        &fixture_str("eval_gt.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let all = out.lines().last().unwrap();
    assert_eq!(all.split_whitespace().collect::<Vec<_>>(), ["all", "0.0", "0.0", "0.0", "0.0", "0.0"]);
}

#[test]
fn eval_rejects_mismatched_categories() {
    let dir = TempDir::new().unwrap();
    let mut pred: serde_json::Value = serde_json::from_slice(&fs::read(fixture("eval_pred.json")).unwrap()).unwrap();
    pred["categories"][0]["name"] = serde_json::json!("cat");
    let p = dir.path().join("pred.json");
    fs::write(&p, pred.to_string()).unwrap();
    let o = vistk(&[
        "eval",
        "--pred",
        p.to_str().unwrap(),
        "--gt",
        &fixture_str("eval_gt.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.starts_with("error: "), "{}", o.stderr);
    assert!(!dir.path().join("eval_report.json").exists());
}

#[test]
fn default_config_golden() {
    let golden = fs::read_to_string(fixture("default_config.toml")).unwrap();
    assert_eq!(PipelineConfig::default().to_toml(), golden);
    assert_eq!(PipelineConfig::from_toml(&golden).unwrap(), PipelineConfig::default());
    assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
}

#[test]
fn config_roundtrips_through_toml() {
    let base = PipelineConfig::from_toml(&fs::read_to_string(fixture("pipeline.toml")).unwrap()).unwrap();
    assert_eq!(base.seed, 11);
    assert_eq!(base.synth.videos, 4);
    let mut variants = vec![PipelineConfig::default(), base.clone()];
    let mut v = base.clone();
    v.filter.score_threshold = 0.123456789;
    v.loss.focal_gamma = 1.5;
    v.selfcheck.rle_golden = Some("golden.json".into());
    v.synth.corruption.miss_rate = 0.3;
    variants.push(v);
    for cfg in variants {
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(PipelineConfig::from_toml("[filter]\ntopk = 3\n").is_err());
    assert!(PipelineConfig::from_toml("sed = 3\n").is_err());
    assert!(PipelineConfig::from_toml("[filter]\nscore_threshold = 1.5\n").is_err());
    assert!(PipelineConfig::from_toml("[loss]\nfocal_alpha = -0.1\n").is_err());
    assert!(PipelineConfig::from_toml("[selfcheck]\ntolerance = 0.0\n").is_err());

    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[tracker]\nbogus = true\n");
    let o = binary(&["--config", &cfg, "gen"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("bogus"), "{}", o.stderr);
}

#[test]
fn relative_paths_resolve_against_config_dir() {
    let dir = TempDir::new().unwrap();
    let sub = dir.path().join("nested");
    fs::create_dir(&sub).unwrap();
    let cfg = small_pipeline(&sub);
    ok(&["--config", &cfg, "gen"]);
    assert!(sub.join("data/ground_truth.json").exists());
    assert!(sub.join("data/detections.json").exists());
    assert!(sub.join("out/ledger.json").exists());

    let loaded = PipelineConfig::load(Path::new(&cfg)).unwrap();
    assert_eq!(loaded.paths.out_dir, sub.join("out"));
}

#[test]
fn flags_override_config() {
    let dir = TempDir::new().unwrap();
    let cfg = small_pipeline(dir.path());
    let a = ok(&["--config", &cfg, "gen"]);
    assert!(a.starts_with("seed 11:"), "{a}");
    let other = dir.path().join("elsewhere");
    let b = ok(&["--config", &cfg, "--seed", "5", "--out", other.to_str().unwrap(), "gen"]);
    assert!(b.starts_with("seed 5:"), "{b}");
    assert!(other.join("ledger.json").exists());
}

#[test]
fn clean_corpus_curates_to_ground_truth() {
    let dir = TempDir::new().unwrap();
    // single-object videos: nothing occludes, every detection is exact
    let cfg = write_config(dir.path(), "seed = 3\n[synth]\nvideos = 6\nlength = 10\nobjects_per_video = 1\n");
    ok(&["--config", &cfg, "gen"]);
    ok(&["--config", &cfg, "curate"]);
    let gt = track_count(&dir.path().join("data/ground_truth.json"));
    assert_eq!(gt, 6);
    assert_eq!(track_count(&dir.path().join("out/pseudo_labels.json")), gt);
    let out = ok(&["--config", &cfg, "eval"]);
    let all = out.lines().last().unwrap();
    assert_eq!(all.split_whitespace().collect::<Vec<_>>(), ["all", "100.0", "100.0", "100.0", "100.0", "100.0"]);
}

#[test]
fn full_threshold_drops_every_track() {
    let dir = TempDir::new().unwrap();
    let cfg = small_pipeline(dir.path());
    ok(&["--config", &cfg, "gen"]);
    let cfg_text = fs::read_to_string(&cfg).unwrap().replace("score_threshold = 0.2", "score_threshold = 1.0");
    let cfg = write_config(dir.path(), &cfg_text);
    let out = ok(&["--config", &cfg, "curate"]);
    assert!(out.contains("kept 0 of"), "{out}");
    assert_eq!(track_count(&dir.path().join("out/pseudo_labels.json")), 0);
}

#[test]
fn singleton_sweep_matches_curate_then_eval() {
    let dir = TempDir::new().unwrap();
    let cfg = small_pipeline(dir.path());
    ok(&["--config", &cfg, "gen"]);
    ok(&["--config", &cfg, "curate"]);
    let table = ok(&["--config", &cfg, "eval"]);
    let report: EvalReport = serde_json::from_slice(&fs::read(dir.path().join("out/eval_report.json")).unwrap()).unwrap();

    for (param, value) in [("K", "4"), ("tau", "0.2")] {
        ok(&["--config", &cfg, "sweep", "--param", param, "--values", value]);
        let sweep: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(format!("out/sweep_{param}.json"))).unwrap()).unwrap();
        let rows = sweep["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 1);
        let row: EvalReport = serde_json::from_value(rows[0]["report"].clone()).unwrap();
        assert_eq!(row, report, "{param}");
        assert_eq!(row.render_table(), table);
    }
}

#[test]
fn sweep_rejects_bad_values() {
    let dir = TempDir::new().unwrap();
    let cfg = small_pipeline(dir.path());
    ok(&["--config", &cfg, "gen"]);
    for values in ["", "1,x", "-1"] {
        let o = vistk(&["--config", &cfg, "sweep", "--param", "K", "--values", values]);
        assert_eq!(o.code, 2, "{values:?}: {}", o.stdout);
    }
    let o = vistk(&["--config", &cfg, "sweep", "--param", "tau", "--values", "0.5,1.5"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("1.5"), "{}", o.stderr);
    let o = vistk(&["--config", &cfg, "sweep", "--param", "tau"]);
    assert_eq!(o.code, 2);
}

#[test]
fn sweep_table_has_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let cfg = small_pipeline(dir.path());
    ok(&["--config", &cfg, "gen"]);
    let out = ok(&["--config", &cfg, "sweep", "--param", "k", "--values", "0,2,4"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("K "));
    for (line, k) in lines[1..].iter().zip(["0", "2", "4"]) {
        assert_eq!(line.split_whitespace().next(), Some(k));
    }
}

fn pipeline_outputs(dir: &Path, jobs: &str) -> Vec<(String, Vec<u8>)> {
    let cfg = small_pipeline(dir);
    for cmd in [
        vec!["gen"],
        vec!["curate"],
        vec!["eval"],
        vec!["sweep", "--param", "K", "--values", "0,1,2,3"],
        vec!["sweep", "--param", "tau", "--values", "0,0.5"],
    ] {
        let mut args = vec!["--config", cfg.as_str(), "--jobs", jobs];
        args.extend(cmd);
        ok(&args);
    }
    let mut files = Vec::new();
    for sub in ["data", "out"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            files.push((rel, fs::read(&p).unwrap()));
        }
    }
    files
}

#[test]
fn reruns_are_byte_identical_for_any_thread_count() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let first = pipeline_outputs(a.path(), "1");
    let second = pipeline_outputs(b.path(), "4");
    assert_eq!(first.len(), 8);
    for ((na, fa), (nb, fb)) in first.iter().zip(&second) {
        assert_eq!(na, nb);
        assert!(fa == fb, "{na} differs between runs");
    }
}

#[test]
fn missing_input_exits_2() {
    let o = binary(&["stats", "no/such/file.json"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.starts_with("error: reading no/such/file.json"), "{}", o.stderr);
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(binary(&["frobnicate"]).code, 2);
    assert_eq!(binary(&["stats"]).code, 2);
    assert_eq!(binary(&["--jobs", "many", "gen"]).code, 2);
    let help = binary(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("selfcheck"));
}

#[test]
fn selfcheck_passes() {
    let o = binary(&["selfcheck", "--instances", "20"]);
    assert_eq!(o.code, 0, "{}", o.stdout);
    let names: Vec<&str> = o.stdout.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(
        names,
        ["dice", "focal", "boxinst-projection", "boxinst-pairwise", "rle-golden", "rle-exhaustive-3x3"]
    );
    assert!(o.stdout.lines().all(|l| l.split_whitespace().nth(1) == Some("PASS")));
}

#[test]
fn selfcheck_reports_corrupted_golden() {
    let dir = TempDir::new().unwrap();
    let mut cases: serde_json::Value = serde_json::from_str(vistk_core::selfcheck::BUILTIN_RLE_GOLDEN).unwrap();
    let victim = cases[3]["name"].as_str().unwrap().to_string();
    let counts = cases[3]["counts"].as_str().unwrap().to_string();
    cases[3]["counts"] = serde_json::json!(format!("{counts}1"));
    let p = dir.path().join("golden.json");
    fs::write(&p, cases.to_string()).unwrap();
    let o = binary(&["selfcheck", "--instances", "2", "--golden", p.to_str().unwrap()]);
    assert_eq!(o.code, 1);
    let line = o.stdout.lines().find(|l| l.starts_with("rle-golden")).unwrap();
    assert!(line.contains("FAIL") && line.contains(&victim), "{line}");
}

#[test]
fn selfcheck_tolerance_flag_is_honored() {
    let o = binary(&["selfcheck", "--instances", "5", "--tolerance", "1e-300"]);
    assert_eq!(o.code, 1, "{}", o.stdout);
    assert!(o.stdout.contains("tol 1e-300"), "{}", o.stdout);
}
