//! Video instance segmentation metrics.
//!
//! Conventions:
//!
//! * Track overlap is spatio-temporal IoU: per-frame intersections summed over
//!   the video, divided by summed unions. An absent mask is an empty mask.
//! * Predictions are ranked by mean per-frame score, ties by track id. With
//!   [`ScoreMode::Uniform`] every prediction scores 1.0, which turns AP into a
//!   set-quality measure for pseudo-labels that carry no useful confidence.
//! * Matching is greedy within each (video, category): each prediction in rank
//!   order takes the unmatched ground truth with the highest IoU at or above
//!   the threshold, ties to the lower gt track id. It is redone per threshold.
//! * The precision/recall curve has one point per distinct score, so the
//!   metrics do not depend on how equal scores are ordered. Precision is made
//!   monotone from the right and sampled at `recall_points` evenly spaced
//!   recall levels; a level beyond the reached recall contributes 0.
//! * AP is not capped in detections per video. AR@k keeps the k best-ranked
//!   predictions per (video, category) and reports recall.
//! * Categories without ground truth are left out of every mean. When no
//!   category has ground truth all aggregates are 0.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{InstanceTrack, VideoDataset};
use crate::error::EvalError;
use crate::mask::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Rank by each track's mean score.
    #[default]
    Model,
    /// Treat all predictions as equally confident.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub max_dets_for_ar: Vec<usize>,
    pub recall_points: usize,
    pub score_mode: ScoreMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            max_dets_for_ar: vec![1, 10],
            recall_points: 101,
            score_mode: ScoreMode::Model,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_thresholds.is_empty() {
            return Err(EvalError::Config("no IoU thresholds".into()));
        }
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(EvalError::Config("IoU thresholds must lie in (0, 1)".into()));
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Config("IoU thresholds must be strictly increasing".into()));
        }
        if self.recall_points < 2 {
            return Err(EvalError::Config("recall_points must be at least 2".into()));
        }
        if self.max_dets_for_ar.contains(&0) {
            return Err(EvalError::Config("AR detection caps must be positive".into()));
        }
        Ok(())
    }

    fn threshold_index(&self, value: f64) -> Option<usize> {
        self.iou_thresholds.iter().position(|t| (t - value).abs() < 1e-9)
    }
}

fn check_pair(pred: &InstanceTrack, gt: &InstanceTrack) -> Result<(), EvalError> {
    if pred.video_id != gt.video_id {
        return Err(EvalError::VideoMismatch(format!(
            "track {} is in video {}, track {} in video {}",
            pred.track_id, pred.video_id, gt.track_id, gt.video_id
        )));
    }
    if pred.len() != gt.len() {
        return Err(EvalError::VideoMismatch(format!(
            "tracks {} and {} span {} and {} frames",
            pred.track_id,
            gt.track_id,
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Spatio-temporal IoU of two tracks of the same video.
pub fn st_iou(pred: &InstanceTrack, gt: &InstanceTrack) -> Result<f64, EvalError> {
    check_pair(pred, gt)?;
    let (a, b) = (pred.decoded_masks()?, gt.decoded_masks()?);
    st_iou_masks(&a, &b)
}

fn st_iou_masks(a: &[Option<BinaryMask>], b: &[Option<BinaryMask>]) -> Result<f64, EvalError> {
    let (mut inter, mut union) = (0u64, 0u64);
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (Some(x), Some(y)) => {
                inter += x.intersection_area(y)?;
                union += x.union_area(y)?;
            }
            (Some(m), None) | (None, Some(m)) => union += m.area(),
            (None, None) => {}
        }
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Result of matching one set of predictions against one set of ground
/// truths. Indices refer to the input slices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// Predictions in rank order.
    pub order: Vec<usize>,
    /// Matched gt index per prediction.
    pub pred_to_gt: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
}

impl Matching {
    pub fn true_positives(&self) -> usize {
        self.pred_to_gt.iter().flatten().count()
    }

    pub fn false_positives(&self) -> usize {
        self.pred_to_gt.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_matched.iter().filter(|m| !**m).count()
    }
}

fn rank_order(scores: &[f64], ids: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    order
}

/// Greedy matching on a precomputed IoU matrix (`ious[p][g]`) for tracks that
/// already share video and category.
fn greedy(order: &[usize], ious: &[Vec<f64>], gt_ids: &[u64], n_gt: usize, thr: f64) -> (Vec<Option<usize>>, Vec<bool>) {
    let mut pred_to_gt = vec![None; ious.len()];
    let mut gt_matched = vec![false; n_gt];
    for &p in order {
        let mut best: Option<usize> = None;
        for g in 0..n_gt {
            if gt_matched[g] || ious[p][g] < thr {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => ious[p][g] > ious[p][b] || (ious[p][g] == ious[p][b] && gt_ids[g] < gt_ids[b]),
            };
            if better {
                best = Some(g);
            }
        }
        if let Some(g) = best {
            gt_matched[g] = true;
            pred_to_gt[p] = Some(g);
        }
    }
    (pred_to_gt, gt_matched)
}

/// Greedy matching by mean score. Predictions only match ground truths of
/// their own category and video.
pub fn match_greedy(preds: &[InstanceTrack], gts: &[InstanceTrack], iou_thr: f64) -> Result<Matching, EvalError> {
    let scores: Vec<f64> = preds.iter().map(InstanceTrack::mean_score).collect();
    let ids: Vec<u64> = preds.iter().map(|t| t.track_id).collect();
    let order = rank_order(&scores, &ids);
    let gdec = gts.iter().map(InstanceTrack::decoded_masks).collect::<Result<Vec<_>, _>>()?;
    let mut ious = Vec::with_capacity(preds.len());
    for p in preds {
        let pm = p.decoded_masks()?;
        let mut row = Vec::with_capacity(gts.len());
        for (g, gm) in gts.iter().zip(&gdec) {
            if p.video_id != g.video_id || p.category_id != g.category_id {
                row.push(f64::NEG_INFINITY);
            } else {
                check_pair(p, g)?;
                row.push(st_iou_masks(&pm, gm)?);
            }
        }
        ious.push(row);
    }
    let gt_ids: Vec<u64> = gts.iter().map(|t| t.track_id).collect();
    let (pred_to_gt, gt_matched) = greedy(&order, &ious, &gt_ids, gts.len(), iou_thr);
    Ok(Matching {
        order,
        pred_to_gt,
        gt_matched,
    })
}

/// One ranked prediction after matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredMatch {
    pub score: f64,
    pub true_positive: bool,
}

/// Interpolated average precision. `None` when there is no ground truth.
pub fn average_precision(matches: &[ScoredMatch], num_gt: usize, recall_points: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    // one PR point per distinct score
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, m) in sorted.iter().enumerate() {
        if m.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        if i + 1 == sorted.len() || sorted[i + 1].score != m.score {
            recall.push(tp as f64 / num_gt as f64);
            precision.push(tp as f64 / (tp + fp) as f64);
        }
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let steps = (recall_points - 1) as f64;
    let mut total = 0.0;
    let mut j = 0;
    for k in 0..recall_points {
        let r = k as f64 / steps;
        while j < recall.len() && recall[j] < r {
            j += 1;
        }
        if j < recall.len() {
            total += precision[j];
        }
    }
    Some(total / recall_points as f64)
}

/// Match counts at one IoU threshold, over all categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    pub iou_threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category_id: u64,
    pub name: String,
    pub num_gt: usize,
    pub num_pred: usize,
    /// AP at each IoU threshold; empty when the category has no ground truth.
    pub ap_per_threshold: Vec<f64>,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ar: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_thresholds: Vec<f64>,
    pub score_mode: ScoreMode,
    pub categories_evaluated: usize,
    pub ap: f64,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ar: BTreeMap<usize, f64>,
    pub per_category: Vec<CategoryReport>,
    pub diagnostics: Vec<ThresholdCounts>,
}

pub fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

fn pct_opt(v: Option<f64>) -> String {
    v.map(pct).unwrap_or_else(|| "-".into())
}

impl EvalReport {
    /// Column titles matching [`EvalReport::metric_cells`].
    pub fn metric_header(&self) -> Vec<String> {
        let mut h = vec!["AP".to_string(), "AP50".into(), "AP75".into()];
        h.extend(self.ar.keys().map(|k| format!("AR{k}")));
        h
    }

    pub fn metric_cells(&self) -> Vec<String> {
        let mut c = vec![pct(self.ap), pct_opt(self.ap50), pct_opt(self.ap75)];
        c.extend(self.ar.values().map(|v| pct(*v)));
        c
    }

    /// Fixed-width table, values in percent.
    pub fn render_table(&self) -> String {
        let name_w = self
            .per_category
            .iter()
            .map(|c| c.name.chars().count())
            .chain(["Category".len()])
            .max()
            .unwrap_or(8);
        let row = |name: &str, cells: &[String]| {
            let mut s = format!("{name:<name_w$}");
            for c in cells {
                s += &format!(" {c:>6}");
            }
            s.push('\n');
            s
        };
        let mut out = row("Category", &self.metric_header());
        for c in &self.per_category {
            if c.ap.is_none() {
                continue;
            }
            let mut cells = vec![pct_opt(c.ap), pct_opt(c.ap50), pct_opt(c.ap75)];
            cells.extend(c.ar.values().map(|v| pct(*v)));
            out += &row(&c.name, &cells);
        }
        out += &row("all", &self.metric_cells());
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes") + "\n"
    }
}

struct Group {
    category_id: u64,
    scores: Vec<f64>,
    order: Vec<usize>,
    /// per threshold: is the prediction matched, and how many gts are matched
    matched: Vec<Vec<bool>>,
    num_gt: usize,
}

fn check_tables(preds: &VideoDataset, gts: &VideoDataset) -> Result<(), EvalError> {
    let a: BTreeSet<(u64, &str)> = preds.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    let b: BTreeSet<(u64, &str)> = gts.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    if a != b {
        let only_pred: Vec<String> = a.difference(&b).map(|(i, n)| format!("{i}:{n}")).collect();
        let only_gt: Vec<String> = b.difference(&a).map(|(i, n)| format!("{i}:{n}")).collect();
        return Err(EvalError::CategoryTableMismatch(format!(
            "only in predictions [{}], only in ground truth [{}]",
            only_pred.join(", "),
            only_gt.join(", ")
        )));
    }
    for t in &preds.tracks {
        let Some(v) = gts.video(t.video_id) else {
            return Err(EvalError::VideoMismatch(format!(
                "prediction {} refers to video {} which has no ground truth",
                t.track_id, t.video_id
            )));
        };
        if t.len() != v.length {
            return Err(EvalError::VideoMismatch(format!(
                "prediction {} spans {} frames, video {} has {}",
                t.track_id,
                t.len(),
                v.id,
                v.length
            )));
        }
        if let Some(m) = t.frame_masks.iter().flatten().find(|m| m.size != (v.height, v.width)) {
            return Err(EvalError::VideoMismatch(format!(
                "prediction {} has a {}x{} mask in a {}x{} video",
                t.track_id,
                m.height(),
                m.width(),
                v.height,
                v.width
            )));
        }
        if !gts.categories.iter().any(|c| c.id == t.category_id) {
            return Err(EvalError::CategoryTableMismatch(format!(
                "prediction {} uses unknown category {}",
                t.track_id, t.category_id
            )));
        }
    }
    Ok(())
}

pub fn evaluate(preds: &VideoDataset, gts: &VideoDataset, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    check_tables(preds, gts)?;

    let mut keys: BTreeMap<(u64, u64), (Vec<&InstanceTrack>, Vec<&InstanceTrack>)> = BTreeMap::new();
    for t in &preds.tracks {
        keys.entry((t.video_id, t.category_id)).or_default().0.push(t);
    }
    for t in &gts.tracks {
        keys.entry((t.video_id, t.category_id)).or_default().1.push(t);
    }
    let work: Vec<_> = keys.into_iter().collect();
    let groups = work
        .par_iter()
        .map(|((_, cat), (ps, gs))| -> Result<Group, EvalError> {
            let pm = ps.iter().map(|t| t.decoded_masks()).collect::<Result<Vec<_>, _>>()?;
            let gm = gs.iter().map(|t| t.decoded_masks()).collect::<Result<Vec<_>, _>>()?;
            let mut ious = vec![vec![0.0; gs.len()]; ps.len()];
            for (i, a) in pm.iter().enumerate() {
                for (j, b) in gm.iter().enumerate() {
                    ious[i][j] = st_iou_masks(a, b)?;
                }
            }
            let scores: Vec<f64> = ps
                .iter()
                .map(|t| match cfg.score_mode {
                    ScoreMode::Model => t.mean_score(),
                    ScoreMode::Uniform => 1.0,
                })
                .collect();
            let ids: Vec<u64> = ps.iter().map(|t| t.track_id).collect();
            let gt_ids: Vec<u64> = gs.iter().map(|t| t.track_id).collect();
            let order = rank_order(&scores, &ids);
            let matched = cfg
                .iou_thresholds
                .iter()
                .map(|&thr| {
                    let (p2g, _) = greedy(&order, &ious, &gt_ids, gs.len(), thr);
                    p2g.iter().map(Option::is_some).collect()
                })
                .collect();
            Ok(Group {
                category_id: *cat,
                scores,
                order,
                matched,
                num_gt: gs.len(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let n_thr = cfg.iou_thresholds.len();
    let mut diagnostics: Vec<ThresholdCounts> = cfg
        .iou_thresholds
        .iter()
        .map(|&t| ThresholdCounts {
            iou_threshold: t,
            tp: 0,
            fp: 0,
            fn_: 0,
        })
        .collect();
    let mut by_cat: HashMap<u64, Vec<&Group>> = HashMap::new();
    for g in &groups {
        by_cat.entry(g.category_id).or_default().push(g);
        for (ti, d) in diagnostics.iter_mut().enumerate() {
            let tp = g.matched[ti].iter().filter(|m| **m).count();
            d.tp += tp;
            d.fp += g.scores.len() - tp;
            d.fn_ += g.num_gt - tp;
        }
    }

    let i50 = cfg.threshold_index(0.5);
    let i75 = cfg.threshold_index(0.75);
    let mut categories = gts.categories.clone();
    categories.sort_by_key(|c| c.id);
    let mut per_category = Vec::new();
    for c in &categories {
        let gs = by_cat.get(&c.id).map(Vec::as_slice).unwrap_or(&[]);
        let num_gt: usize = gs.iter().map(|g| g.num_gt).sum();
        let num_pred: usize = gs.iter().map(|g| g.scores.len()).sum();
        let mut report = CategoryReport {
            category_id: c.id,
            name: c.name.clone(),
            num_gt,
            num_pred,
            ap_per_threshold: Vec::new(),
            ap: None,
            ap50: None,
            ap75: None,
            ar: BTreeMap::new(),
        };
        if num_gt > 0 {
            for ti in 0..n_thr {
                let matches: Vec<ScoredMatch> = gs
                    .iter()
                    .flat_map(|g| {
                        g.scores.iter().zip(&g.matched[ti]).map(|(&score, &tp)| ScoredMatch {
                            score,
                            true_positive: tp,
                        })
                    })
                    .collect();
                report
                    .ap_per_threshold
                    .push(average_precision(&matches, num_gt, cfg.recall_points).expect("has gt"));
            }
            report.ap = Some(report.ap_per_threshold.iter().sum::<f64>() / n_thr as f64);
            report.ap50 = i50.map(|i| report.ap_per_threshold[i]);
            report.ap75 = i75.map(|i| report.ap_per_threshold[i]);
            for &k in &cfg.max_dets_for_ar {
                let mut recall_sum = 0.0;
                for ti in 0..n_thr {
                    let tp: usize = gs
                        .iter()
                        .map(|g| g.order.iter().take(k).filter(|&&p| g.matched[ti][p]).count())
                        .sum();
                    recall_sum += tp as f64 / num_gt as f64;
                }
                report.ar.insert(k, recall_sum / n_thr as f64);
            }
        }
        per_category.push(report);
    }

    let evaluated: Vec<&CategoryReport> = per_category.iter().filter(|c| c.ap.is_some()).collect();
    let n = evaluated.len();
    let mean = |f: &dyn Fn(&CategoryReport) -> Option<f64>| -> Option<f64> {
        if n == 0 {
            return Some(0.0);
        }
        let vals: Option<Vec<f64>> = evaluated.iter().map(|c| f(c)).collect();
        vals.map(|v| v.iter().sum::<f64>() / n as f64)
    };
    let ar = cfg
        .max_dets_for_ar
        .iter()
        .map(|&k| (k, mean(&|c| c.ar.get(&k).copied()).unwrap_or(0.0)))
        .collect();
    Ok(EvalReport {
        iou_thresholds: cfg.iou_thresholds.clone(),
        score_mode: cfg.score_mode,
        categories_evaluated: n,
        ap: mean(&|c| c.ap).unwrap_or(0.0),
        ap50: i50.and(mean(&|c| c.ap50)),
        ap75: i75.and(mean(&|c| c.ap75)),
        ar,
        per_category,
        diagnostics,
    })
}

/// Mean over visible ground-truth object-frames of the best IoU with any
/// predicted mask of the same category in that frame; 0 where none overlaps.
/// Ignores identity, so raw per-frame detections and linked tracks are
/// measured the same way.
pub fn mean_frame_iou(preds: &VideoDataset, gts: &VideoDataset) -> Result<f64, EvalError> {
    check_tables(preds, gts)?;
    let mut by_frame: HashMap<(u64, usize, u64), Vec<BinaryMask>> = HashMap::new();
    for t in &preds.tracks {
        for (f, m) in t.decoded_masks()?.into_iter().enumerate() {
            if let Some(m) = m {
                by_frame.entry((t.video_id, f, t.category_id)).or_default().push(m);
            }
        }
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for g in &gts.tracks {
        for (f, m) in g.decoded_masks()?.into_iter().enumerate() {
            let Some(m) = m else { continue };
            n += 1;
            let best = by_frame
                .get(&(g.video_id, f, g.category_id))
                .into_iter()
                .flatten()
                .map(|p| crate::mask::mask_iou(p, &m))
                .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))?;
            sum += best;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}
