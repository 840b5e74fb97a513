use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::Serialize;
use vistk_core::curate::{assemble, curate, propagate_all, FilterConfig, RawDetectionFile};
use vistk_core::dataset::{
    build_category_map, image_stats, parse_alias_rules, parse_image_dataset, parse_video_dataset,
    serialize_video_dataset, video_stats, AnnotationSource, Category, ImageCorpus, VideoDataset,
};
use vistk_core::eval::{evaluate, EvalReport};
use vistk_core::selfcheck::{
    check_kernel, check_rle_exhaustive, check_rle_golden, parse_rle_golden, Kernel, BUILTIN_RLE_GOLDEN,
};
use vistk_core::synth::generate_corpus;

use crate::config::PipelineConfig;
use crate::{Cli, Command, SweepParam};

pub const PSEUDO_LABELS: &str = "pseudo_labels.json";
pub const CURATION_SUMMARY: &str = "curation_summary.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const LEDGER: &str = "ledger.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// A check ran and did not pass.
    Failed,
}

/// Config from `--config` (or defaults relative to the working directory)
/// with the flag overrides applied.
pub fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<Status> {
    match &cli.command {
        Command::Stats { path, boxes } => cmd_stats(path, *boxes, out),
        Command::Catmap {
            videos,
            pixel,
            boxes,
            aliases,
        } => cmd_catmap(videos, pixel, boxes, aliases.as_deref(), out),
        Command::Gen => cmd_gen(&load_config(cli)?, out),
        Command::Curate => cmd_curate(&load_config(cli)?, out),
        Command::Eval { pred, gt } => cmd_eval(&load_config(cli)?, pred.as_deref(), gt.as_deref(), out),
        Command::Sweep { param, values } => cmd_sweep(&load_config(cli)?, *param, values, out),
        Command::Selfcheck {
            tolerance,
            instances,
            golden,
        } => {
            let mut cfg = load_config(cli)?;
            if let Some(t) = tolerance {
                ensure!(*t > 0.0, "--tolerance must be positive");
                cfg.selfcheck.tolerance = *t;
            }
            if let Some(n) = instances {
                cfg.selfcheck.instances = *n;
            }
            if let Some(g) = golden {
                cfg.selfcheck.rle_golden = Some(g.clone());
            }
            cmd_selfcheck(&cfg, out)
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_video_dataset(path: &Path) -> Result<VideoDataset> {
    parse_video_dataset(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_image_dataset(path: &Path, source: AnnotationSource) -> Result<ImageCorpus> {
    parse_image_dataset(&read(path)?, source).with_context(|| format!("parsing {}", path.display()))
}

fn load_detections(path: &Path) -> Result<RawDetectionFile> {
    RawDetectionFile::from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn is_video_dataset(bytes: &[u8]) -> bool {
    serde_json::from_slice::<serde_json::Value>(bytes)
        .map(|v| v.get("videos").is_some())
        .unwrap_or(false)
}

pub fn cmd_stats(path: &Path, boxes: bool, out: &mut dyn Write) -> Result<Status> {
    let bytes = read(path)?;
    let ctx = || format!("parsing {}", path.display());
    if is_video_dataset(&bytes) {
        let ds = parse_video_dataset(&bytes).with_context(ctx)?;
        write!(out, "{}", video_stats(&ds).render_table())?;
    } else {
        let source = if boxes { AnnotationSource::BoxOnly } else { AnnotationSource::Pixel };
        let corpus = parse_image_dataset(&bytes, source).with_context(ctx)?;
        write!(out, "{}", image_stats(&corpus).render_table())?;
        for w in &corpus.warnings {
            writeln!(out, "warning: {w}")?;
        }
    }
    Ok(Status::Ok)
}

fn source_name(s: AnnotationSource) -> &'static str {
    match s {
        AnnotationSource::Pixel => "pixel",
        AnnotationSource::BoxOnly => "box",
    }
}

pub fn cmd_catmap(
    videos: &Path,
    pixel: &Path,
    boxes: &Path,
    aliases: Option<&Path>,
    out: &mut dyn Write,
) -> Result<Status> {
    let video = load_video_dataset(videos)?;
    let pixel = load_image_dataset(pixel, AnnotationSource::Pixel)?;
    let boxed = load_image_dataset(boxes, AnnotationSource::BoxOnly)?;
    let rules = match aliases {
        Some(p) => {
            let text = String::from_utf8(read(p)?).with_context(|| format!("{} is not UTF-8", p.display()))?;
            parse_alias_rules(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Vec::new(),
    };
    let map = build_category_map(&video.categories, &pixel.categories, &boxed.categories, &rules)?;

    let name_of = |cats: &[Category], id: u64| cats.iter().find(|c| c.id == id).map_or_else(|| id.to_string(), |c| c.name.clone());
    let rows: Vec<(String, &str, String)> = video
        .categories
        .iter()
        .filter_map(|vc| {
            let m = map.entries.get(&vc.id)?;
            let cats = match m.source {
                AnnotationSource::Pixel => &pixel.categories,
                AnnotationSource::BoxOnly => &boxed.categories,
            };
            let names: Vec<String> = m.image_category_ids.iter().map(|&id| name_of(cats, id)).collect();
            Some((vc.name.clone(), source_name(m.source), names.join(", ")))
        })
        .collect();
    let w = rows.iter().map(|r| r.0.chars().count()).chain(["Video class".len()]).max().unwrap_or(0);
    writeln!(out, "{:<w$}  {:<6}  Image classes", "Video class", "Source")?;
    for (name, source, images) in &rows {
        writeln!(out, "{name:<w$}  {source:<6}  {images}")?;
    }
    for source in [AnnotationSource::Pixel, AnnotationSource::BoxOnly] {
        let (m, n) = map.coverage(source);
        writeln!(out, "{} coverage: {m} image classes -> {n} video classes", source_name(source))?;
    }
    Ok(Status::Ok)
}

pub fn cmd_gen(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<Status> {
    let spec = cfg.corpus_spec();
    let corpus = generate_corpus(&spec);
    write_file(&cfg.paths.ground_truth, &serialize_video_dataset(&corpus.ground_truth)?)?;
    write_file(&cfg.paths.detections, &corpus.detections.to_json())?;
    let ledger = serde_json::to_string_pretty(&corpus.ledger)? + "\n";
    write_file(&cfg.paths.out_dir.join(LEDGER), &ledger)?;
    let detections: usize = corpus.detections.videos.iter().map(|v| v.detection_count()).sum();
    writeln!(
        out,
        "seed {}: {} videos, {} ground-truth tracks, {} detections",
        spec.seed,
        corpus.ground_truth.videos.len(),
        corpus.ground_truth.tracks.len(),
        detections
    )?;
    writeln!(
        out,
        "missed {} of {} object-frames, {} spurious tracks",
        corpus.ledger.dropped, corpus.ledger.object_frames, corpus.ledger.spurious_tracks
    )?;
    Ok(Status::Ok)
}

pub fn cmd_curate(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<Status> {
    let raw = load_detections(&cfg.paths.detections)?;
    let (ds, summary) = curate(&raw, &cfg.tracker, &cfg.filter)?;
    write_file(&cfg.paths.out_dir.join(PSEUDO_LABELS), &serialize_video_dataset(&ds)?)?;
    write_file(
        &cfg.paths.out_dir.join(CURATION_SUMMARY),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    write!(out, "{}", summary.render_table())?;
    Ok(Status::Ok)
}

pub fn cmd_eval(cfg: &PipelineConfig, pred: Option<&Path>, gt: Option<&Path>, out: &mut dyn Write) -> Result<Status> {
    let pred_path = pred.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.out_dir.join(PSEUDO_LABELS));
    let gt_path = gt.unwrap_or(&cfg.paths.ground_truth);
    let preds = load_video_dataset(&pred_path)?;
    let gts = load_video_dataset(gt_path)?;
    let report = evaluate(&preds, &gts, &cfg.eval)?;
    write_file(&cfg.paths.out_dir.join(EVAL_REPORT), &report.to_json())?;
    write!(out, "{}", report.render_table())?;
    Ok(Status::Ok)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub kept: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub param: &'static str,
    pub base_filter: FilterConfig,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn render_table(&self) -> String {
        let Some(first) = self.rows.first() else {
            return String::new();
        };
        let labels: Vec<String> = self.rows.iter().map(|r| r.value.to_string()).collect();
        let w = labels.iter().map(String::len).chain([self.param.len(), 5]).max().unwrap_or(5);
        let mut s = format!("{:<w$}", self.param);
        for h in first.report.metric_header() {
            s += &format!(" {h:>6}");
        }
        s.push('\n');
        for (label, row) in labels.iter().zip(&self.rows) {
            s += &format!("{label:<w$}");
            for c in row.report.metric_cells() {
                s += &format!(" {c:>6}");
            }
            s.push('\n');
        }
        s
    }

    /// AP of each row, in row order.
    pub fn ap(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.report.ap).collect()
    }
}

fn parse_sweep_values(param: SweepParam, values: &[String]) -> Result<Vec<f64>> {
    let values: Vec<&str> = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    ensure!(!values.is_empty(), "--values needs at least one value");
    values
        .iter()
        .map(|v| match param {
            SweepParam::K => v
                .parse::<usize>()
                .map(|k| k as f64)
                .with_context(|| format!("K value {v:?} is not a non-negative integer")),
            SweepParam::Tau => {
                let t: f64 = v.parse().with_context(|| format!("tau value {v:?} is not a number"))?;
                ensure!((0.0..=1.0).contains(&t), "tau value {v} is outside [0, 1]");
                Ok(t)
            }
        })
        .collect()
}

/// Propagation runs once; only the filters and the evaluation are repeated.
pub fn run_sweep(cfg: &PipelineConfig, param: SweepParam, values: &[String]) -> Result<SweepResult> {
    let values = parse_sweep_values(param, values)?;
    let raw = load_detections(&cfg.paths.detections)?;
    raw.validate()?;
    let gts = load_video_dataset(&cfg.paths.ground_truth)?;
    let propagated = propagate_all(&raw, &cfg.tracker)?;
    let rows = values
        .iter()
        .map(|&value| {
            let mut filter = cfg.filter;
            match param {
                SweepParam::K => filter.top_k = value as usize,
                SweepParam::Tau => filter.score_threshold = value,
            }
            let (ds, summary) = assemble(&propagated, &raw.categories, &cfg.tracker, &filter);
            let report = evaluate(&ds, &gts, &cfg.eval)?;
            Ok(SweepRow {
                value,
                kept: summary.total_kept,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        param: param.label(),
        base_filter: cfg.filter,
        rows,
    })
}

pub fn sweep_file(param: SweepParam) -> String {
    format!("sweep_{}.json", param.label())
}

pub fn cmd_sweep(cfg: &PipelineConfig, param: SweepParam, values: &[String], out: &mut dyn Write) -> Result<Status> {
    let result = run_sweep(cfg, param, values)?;
    write_file(
        &cfg.paths.out_dir.join(sweep_file(param)),
        &(serde_json::to_string_pretty(&result)? + "\n"),
    )?;
    write!(out, "{}", result.render_table())?;
    Ok(Status::Ok)
}

pub fn cmd_selfcheck(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<Status> {
    let sc = &cfg.selfcheck;
    let mut all_passed = true;
    let mut line = |out: &mut dyn Write, name: &str, passed: bool, detail: String| -> Result<()> {
        all_passed &= passed;
        writeln!(out, "{name:<20} {:<4}  {detail}", if passed { "PASS" } else { "FAIL" })?;
        Ok(())
    };
    for kernel in Kernel::ALL {
        let r = check_kernel(kernel, sc.instances, cfg.seed, sc.step, sc.tolerance, &cfg.loss);
        let detail = format!(
            "{} instances, {} entries checked, {} skipped, {} over tolerance, max rel err {:.2e} (tol {:e})",
            r.instances, r.checked, r.skipped, r.failures, r.max_rel_error, r.tolerance
        );
        line(out, kernel.name(), r.passed(), detail)?;
    }
    let golden_text = match &sc.rle_golden {
        Some(p) => String::from_utf8(read(p)?).with_context(|| format!("{} is not UTF-8", p.display()))?,
        None => BUILTIN_RLE_GOLDEN.to_string(),
    };
    let golden = parse_rle_golden(&golden_text).and_then(|cases| check_rle_golden(&cases));
    match golden {
        Ok(n) => line(out, "rle-golden", true, format!("{n} cases"))?,
        Err(e) => line(out, "rle-golden", false, e)?,
    }
    match check_rle_exhaustive() {
        Ok(n) => line(out, "rle-exhaustive-3x3", true, format!("{n} masks"))?,
        Err(e) => line(out, "rle-exhaustive-3x3", false, e)?,
    }
    Ok(if all_passed { Status::Ok } else { Status::Failed })
}

/// Output files a pipeline run leaves in the output directory.
pub fn artifact_paths(cfg: &PipelineConfig) -> Vec<PathBuf> {
    [PSEUDO_LABELS, CURATION_SUMMARY, EVAL_REPORT]
        .iter()
        .map(|f| cfg.paths.out_dir.join(f))
        .collect()
}
