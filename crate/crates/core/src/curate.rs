//! Turns raw per-frame detections into curated pseudo-label tracks.
//!
//! The pipeline for one video is
//! link → keyframe → bidirectional propagation → duplicate suppression →
//! score threshold → per-video top-K. Videos are independent and are
//! processed in parallel; track ids are assigned afterwards in video order so
//! the output does not depend on scheduling.
//!
//! Propagation is a deterministic IoU tracker: from the keyframe it walks to
//! each end of the video, adopting the same-category raw mask with the best
//! IoU against the current mask, or coasting the last adopted mask along the
//! estimated centroid velocity for a bounded number of frames. Coasted frames
//! carry no score, so a track's mean score only reflects model output.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Category, InstanceTrack, VideoDataset, VideoInfo};
use crate::error::CurationError;
use crate::mask::{mask_iou, rle_decode, rle_encode, BinaryMask, RleMask};

/// One per-frame detection from an external segmenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub category_id: u64,
    pub score: f64,
    pub segmentation: RleMask,
}

/// All detections for one video, indexed by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDetectionSet {
    pub video_id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub file_names: Vec<String>,
    /// Free-form note on where the detections came from.
    #[serde(default)]
    pub provenance: String,
    pub frames: Vec<Vec<Detection>>,
}

impl RawDetectionSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn video_info(&self) -> VideoInfo {
        VideoInfo {
            id: self.video_id,
            width: self.width,
            height: self.height,
            length: self.frames.len(),
            file_names: self.file_names.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        let bad = |message: String| CurationError::InvalidDetections {
            video_id: self.video_id,
            message,
        };
        if !self.file_names.is_empty() && self.file_names.len() != self.frames.len() {
            return Err(bad(format!(
                "{} file names for {} frames",
                self.file_names.len(),
                self.frames.len()
            )));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            for (j, d) in frame.iter().enumerate() {
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(bad(format!("frames[{t}][{j}].score {} outside [0, 1]", d.score)));
                }
                if d.segmentation.size != (self.height, self.width) {
                    return Err(bad(format!(
                        "frames[{t}][{j}].segmentation is {}x{}, video is {}x{}",
                        d.segmentation.height(),
                        d.segmentation.width(),
                        self.height,
                        self.width
                    )));
                }
                d.segmentation.runs().map_err(|e| bad(format!("frames[{t}][{j}].segmentation: {e}")))?;
            }
        }
        Ok(())
    }
}

/// On-disk raw detections: a category table plus one set per video.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDetectionFile {
    pub categories: Vec<Category>,
    pub videos: Vec<RawDetectionSet>,
}

impl RawDetectionFile {
    pub fn from_json(bytes: &[u8]) -> Result<Self, CurationError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let file: Self = serde_path_to_error::deserialize(de).map_err(|e| CurationError::InvalidDetections {
            video_id: 0,
            message: format!("{}: {}", e.path(), e.inner()),
        })?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("raw detections always serialize")
    }

    /// Every detection as a one-frame track, for measuring raw detections
    /// with the dataset metrics.
    pub fn to_frame_tracks(&self) -> VideoDataset {
        let mut ds = VideoDataset {
            videos: self.videos.iter().map(RawDetectionSet::video_info).collect(),
            categories: self.categories.clone(),
            tracks: Vec::new(),
        };
        for v in &self.videos {
            for (f, dets) in v.frames.iter().enumerate() {
                for d in dets {
                    let mut t = InstanceTrack::new(ds.tracks.len() as u64 + 1, v.video_id, d.category_id, v.len());
                    t.frame_masks[f] = Some(d.segmentation.clone());
                    t.frame_scores[f] = Some(d.score);
                    ds.tracks.push(t);
                }
            }
        }
        ds
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        let mut seen = std::collections::HashSet::new();
        for v in &self.videos {
            if !seen.insert(v.video_id) {
                return Err(CurationError::InvalidDetections {
                    video_id: v.video_id,
                    message: "duplicate video id".into(),
                });
            }
            v.validate()?;
            for (t, frame) in v.frames.iter().enumerate() {
                for (j, d) in frame.iter().enumerate() {
                    if !self.categories.iter().any(|c| c.id == d.category_id) {
                        return Err(CurationError::InvalidDetections {
                            video_id: v.video_id,
                            message: format!("frames[{t}][{j}].category_id {} is not in the category table", d.category_id),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionModel {
    None,
    #[default]
    ConstantVelocityCentroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub iou_match_threshold: f64,
    pub max_coast_frames: usize,
    pub motion_model: MotionModel,
    /// Minimum score for an unmatched detection to start a new track.
    pub score_floor: f64,
    /// Drop a propagated track whose spatio-temporal IoU with a
    /// higher-scoring track of the same category reaches `duplicate_iou`.
    pub suppress_duplicates: bool,
    pub duplicate_iou: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_match_threshold: 0.3,
            max_coast_frames: 4,
            motion_model: MotionModel::ConstantVelocityCentroid,
            score_floor: 0.05,
            suppress_duplicates: true,
            duplicate_iou: 0.6,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.iou_match_threshold > 0.0 && self.iou_match_threshold < 1.0) {
            return Err(format!("iou_match_threshold {} must lie in (0, 1)", self.iou_match_threshold));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(format!("score_floor {} must lie in [0, 1]", self.score_floor));
        }
        if !(self.duplicate_iou > 0.0 && self.duplicate_iou <= 1.0) {
            return Err(format!("duplicate_iou {} must lie in (0, 1]", self.duplicate_iou));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Tracks kept per video; 0 keeps all.
    pub top_k: usize,
    /// Minimum mean score, inclusive.
    pub score_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            top_k: 4,
            score_threshold: 0.2,
        }
    }
}

impl FilterConfig {
    /// Keeps everything.
    pub fn disabled() -> Self {
        Self {
            top_k: 0,
            score_threshold: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(format!("score_threshold {} must lie in [0, 1]", self.score_threshold));
        }
        Ok(())
    }
}

struct Candidate {
    category_id: u64,
    score: f64,
    mask: BinaryMask,
}

/// Raw detections with masks decoded once.
pub struct DecodedDetections {
    video: VideoInfo,
    frames: Vec<Vec<Candidate>>,
}

impl DecodedDetections {
    pub fn new(raw: &RawDetectionSet) -> Result<Self, CurationError> {
        raw.validate()?;
        let frames = raw
            .frames
            .iter()
            .map(|f| {
                f.iter()
                    .map(|d| {
                        Ok(Candidate {
                            category_id: d.category_id,
                            score: d.score,
                            mask: rle_decode(&d.segmentation)?,
                        })
                    })
                    .collect::<Result<Vec<_>, CurationError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            video: raw.video_info(),
            frames,
        })
    }
}

fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    mask_iou(a, b).expect("masks share the video geometry")
}

/// Greedy frame-to-frame association.
///
/// At each frame every live track (same category, last seen at most
/// `max_coast_frames + 1` frames ago) is paired with every detection; pairs
/// with IoU against the track's last mask at or above the match threshold are
/// taken in order of IoU, then detection score, then detection index, then
/// track age. Unmatched detections scoring at least `score_floor` start new
/// tracks. Track ids count up from 1 in creation order.
pub fn link_detections(raw: &RawDetectionSet, cfg: &TrackerConfig) -> Result<Vec<InstanceTrack>, CurationError> {
    let decoded = DecodedDetections::new(raw)?;
    Ok(link_decoded(&decoded, cfg))
}

fn link_decoded(dec: &DecodedDetections, cfg: &TrackerConfig) -> Vec<InstanceTrack> {
    struct Live<'a> {
        track: InstanceTrack,
        last_frame: usize,
        last_mask: &'a BinaryMask,
    }
    let length = dec.frames.len();
    let mut live: Vec<Live> = Vec::new();
    for (t, frame) in dec.frames.iter().enumerate() {
        let mut pairs = Vec::new();
        for (ti, l) in live.iter().enumerate() {
            if t - l.last_frame > cfg.max_coast_frames + 1 {
                continue;
            }
            for (di, d) in frame.iter().enumerate() {
                if d.category_id != l.track.category_id {
                    continue;
                }
                let v = iou(l.last_mask, &d.mask);
                if v >= cfg.iou_match_threshold {
                    pairs.push((v, d.score, di, ti));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.total_cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let mut det_used = vec![false; frame.len()];
        let mut track_used = vec![false; live.len()];
        for (_, _, di, ti) in pairs {
            if det_used[di] || track_used[ti] {
                continue;
            }
            det_used[di] = true;
            track_used[ti] = true;
            let l = &mut live[ti];
            l.track.frame_masks[t] = Some(rle_encode(&frame[di].mask));
            l.track.frame_scores[t] = Some(frame[di].score);
            l.last_frame = t;
            l.last_mask = &frame[di].mask;
        }
        for (di, d) in frame.iter().enumerate() {
            if det_used[di] || d.score < cfg.score_floor {
                continue;
            }
            let mut track = InstanceTrack::new(live.len() as u64 + 1, dec.video.id, d.category_id, length);
            track.frame_masks[t] = Some(rle_encode(&d.mask));
            track.frame_scores[t] = Some(d.score);
            live.push(Live {
                track,
                last_frame: t,
                last_mask: &d.mask,
            });
        }
    }
    live.into_iter().map(|l| l.track).collect()
}

/// Frame with the highest score; ties go to the earliest frame.
pub fn select_keyframe(track: &InstanceTrack) -> Result<usize, CurationError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in track.frame_scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i).ok_or(CurationError::NoScoredFrames(track.track_id))
}

/// Re-tracks `track` from its keyframe toward both ends of the video and
/// merges the two passes with the keyframe mask.
pub fn propagate_bidirectional(
    track: &InstanceTrack,
    raw: &RawDetectionSet,
    cfg: &TrackerConfig,
) -> Result<InstanceTrack, CurationError> {
    let decoded = DecodedDetections::new(raw)?;
    propagate_decoded(track, &decoded, cfg)
}

fn propagate_decoded(
    track: &InstanceTrack,
    dec: &DecodedDetections,
    cfg: &TrackerConfig,
) -> Result<InstanceTrack, CurationError> {
    let key = select_keyframe(track)?;
    let missing = CurationError::MissingKeyframeMask {
        track_id: track.track_id,
        frame: key,
    };
    let key_mask = rle_decode(track.frame_masks.get(key).and_then(Option::as_ref).ok_or(missing)?)?;
    let length = track.len();
    let mut out = InstanceTrack::new(track.track_id, track.video_id, track.category_id, length);
    out.frame_masks[key] = track.frame_masks[key].clone();
    out.frame_scores[key] = track.frame_scores[key];

    // initial velocity from the keyframe and the nearest other own mask
    let neighbour = track
        .present_frames()
        .filter(|&f| f != key)
        .min_by_key(|&f| (f.abs_diff(key), f));
    let velocity = match (cfg.motion_model, neighbour) {
        (MotionModel::ConstantVelocityCentroid, Some(f)) => {
            let m = rle_decode(track.frame_masks[f].as_ref().expect("present"))?;
            centroid_velocity((key, &key_mask), (f, &m)).unwrap_or((0.0, 0.0))
        }
        _ => (0.0, 0.0),
    };

    for step in [-1i64, 1] {
        let mut adopted = (key, key_mask.clone());
        let mut current = key_mask.clone();
        let mut v = velocity;
        let mut coast = 0;
        let mut t = key as i64 + step;
        while t >= 0 && (t as usize) < length {
            let f = t as usize;
            let best = dec.frames[f]
                .iter()
                .filter(|c| c.category_id == track.category_id)
                .map(|c| (iou(&current, &c.mask), c))
                .enumerate()
                .max_by(|(ia, (va, ca)), (ib, (vb, cb))| {
                    va.total_cmp(vb).then(ca.score.total_cmp(&cb.score)).then(ib.cmp(ia))
                });
            match best {
                Some((_, (value, cand))) if value >= cfg.iou_match_threshold => {
                    if cfg.motion_model == MotionModel::ConstantVelocityCentroid {
                        if let Some(nv) = centroid_velocity((adopted.0, &adopted.1), (f, &cand.mask)) {
                            v = nv;
                        }
                    }
                    out.frame_masks[f] = Some(rle_encode(&cand.mask));
                    out.frame_scores[f] = track.frame_scores[f].or(Some(cand.score));
                    current = cand.mask.clone();
                    adopted = (f, cand.mask.clone());
                    coast = 0;
                }
                _ if coast < cfg.max_coast_frames => {
                    coast += 1;
                    let dt = f as f64 - adopted.0 as f64;
                    let moved = adopted.1.translate((v.0 * dt).round() as i64, (v.1 * dt).round() as i64);
                    if !moved.is_empty() {
                        out.frame_masks[f] = Some(rle_encode(&moved));
                    }
                    current = moved;
                }
                _ => break,
            }
            t += step;
        }
    }
    Ok(out)
}

/// Per-frame centroid displacement between two masks; `None` when either is
/// empty or they share a frame.
fn centroid_velocity(a: (usize, &BinaryMask), b: (usize, &BinaryMask)) -> Option<(f64, f64)> {
    let (ca, cb) = (a.1.centroid()?, b.1.centroid()?);
    let dt = b.0 as f64 - a.0 as f64;
    (dt != 0.0).then(|| ((cb.0 - ca.0) / dt, (cb.1 - ca.1) / dt))
}

fn ranking(a: &InstanceTrack, b: &InstanceTrack) -> std::cmp::Ordering {
    b.mean_score().total_cmp(&a.mean_score()).then(a.track_id.cmp(&b.track_id))
}

/// Keeps the `k` best tracks of each video by mean score (ties to the lower
/// track id). `k == 0` keeps everything. Input order is preserved.
pub fn filter_topk(tracks: Vec<InstanceTrack>, k: usize) -> Vec<InstanceTrack> {
    if k == 0 {
        return tracks;
    }
    let mut by_video: BTreeMap<u64, Vec<&InstanceTrack>> = BTreeMap::new();
    for t in &tracks {
        by_video.entry(t.video_id).or_default().push(t);
    }
    let mut keep = std::collections::HashSet::new();
    for list in by_video.values_mut() {
        list.sort_by(|a, b| ranking(a, b));
        keep.extend(list.iter().take(k).map(|t| (t.video_id, t.track_id)));
    }
    tracks
        .into_iter()
        .filter(|t| keep.contains(&(t.video_id, t.track_id)))
        .collect()
}

/// Keeps tracks whose mean score is at least `tau`.
pub fn filter_pscore(tracks: Vec<InstanceTrack>, tau: f64) -> Vec<InstanceTrack> {
    tracks.into_iter().filter(|t| t.mean_score() >= tau).collect()
}

fn st_iou_decoded(a: &[Option<BinaryMask>], b: &[Option<BinaryMask>]) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (Some(x), Some(y)) => {
                inter += x.intersection_area(y).expect("same geometry");
                union += x.union_area(y).expect("same geometry");
            }
            (Some(m), None) | (None, Some(m)) => union += m.area(),
            (None, None) => {}
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Drops tracks that overlap a better-ranked track of the same category.
fn suppress_duplicates(tracks: Vec<InstanceTrack>, threshold: f64) -> Result<Vec<InstanceTrack>, CurationError> {
    let decoded = tracks
        .iter()
        .map(InstanceTrack::decoded_masks)
        .collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| ranking(&tracks[a], &tracks[b]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let dup = kept.iter().any(|&j| {
            tracks[j].category_id == tracks[i].category_id && st_iou_decoded(&decoded[i], &decoded[j]) >= threshold
        });
        if !dup {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    let keep: std::collections::HashSet<usize> = kept.into_iter().collect();
    Ok(tracks
        .into_iter()
        .enumerate()
        .filter_map(|(i, t)| keep.contains(&i).then_some(t))
        .collect())
}

/// Track counts after each stage for one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoCuration {
    pub video_id: u64,
    pub raw_detections: usize,
    pub linked: usize,
    pub after_dedup: usize,
    pub after_pscore: usize,
    pub after_topk: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub tracker: TrackerConfig,
    pub filter: FilterConfig,
    pub videos: Vec<VideoCuration>,
    pub total_linked: usize,
    pub total_kept: usize,
}

impl CurationSummary {
    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "Video", "Dets", "Linked", "Dedup", "PScore", "TopK"
        );
        for v in &self.videos {
            s += &format!(
                "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
                v.video_id, v.raw_detections, v.linked, v.after_dedup, v.after_pscore, v.after_topk
            );
        }
        s += &format!(
            "kept {} of {} linked tracks (K={}, tau={})\n",
            self.total_kept, self.total_linked, self.filter.top_k, self.filter.score_threshold
        );
        s
    }
}

/// Tracks surviving each stage, before the filters, for one video.
pub struct PropagatedVideo {
    pub video: VideoInfo,
    pub raw_detections: usize,
    pub linked: usize,
    pub tracks: Vec<InstanceTrack>,
}

/// Link, propagate and de-duplicate one video.
pub fn propagate_video(raw: &RawDetectionSet, cfg: &TrackerConfig) -> Result<PropagatedVideo, CurationError> {
    let dec = DecodedDetections::new(raw)?;
    let linked = link_decoded(&dec, cfg);
    let n_linked = linked.len();
    let mut tracks = linked
        .iter()
        .map(|t| propagate_decoded(t, &dec, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    if cfg.suppress_duplicates {
        tracks = suppress_duplicates(tracks, cfg.duplicate_iou)?;
    }
    Ok(PropagatedVideo {
        video: dec.video,
        raw_detections: raw.detection_count(),
        linked: n_linked,
        tracks,
    })
}

/// Applies the score filters to already propagated videos and assembles
/// the pseudo-label dataset. Lets sweeps reuse the expensive stage.
pub fn assemble(
    propagated: &[PropagatedVideo],
    categories: &[Category],
    tracker: &TrackerConfig,
    filter: &FilterConfig,
) -> (VideoDataset, CurationSummary) {
    let mut ds = VideoDataset {
        videos: Vec::with_capacity(propagated.len()),
        categories: categories.to_vec(),
        tracks: Vec::new(),
    };
    let mut videos = Vec::with_capacity(propagated.len());
    let mut next_id = 1u64;
    for p in propagated {
        let after_dedup = p.tracks.len();
        let scored = filter_pscore(p.tracks.clone(), filter.score_threshold);
        let after_pscore = scored.len();
        let kept = filter_topk(scored, filter.top_k);
        videos.push(VideoCuration {
            video_id: p.video.id,
            raw_detections: p.raw_detections,
            linked: p.linked,
            after_dedup,
            after_pscore,
            after_topk: kept.len(),
        });
        for mut t in kept {
            t.track_id = next_id;
            next_id += 1;
            ds.tracks.push(t);
        }
        ds.videos.push(p.video.clone());
    }
    let summary = CurationSummary {
        tracker: tracker.clone(),
        filter: *filter,
        total_linked: videos.iter().map(|v| v.linked).sum(),
        total_kept: ds.tracks.len(),
        videos,
    };
    (ds, summary)
}

/// Full pipeline over every video of a raw detection file.
pub fn curate(
    raw: &RawDetectionFile,
    tracker: &TrackerConfig,
    filter: &FilterConfig,
) -> Result<(VideoDataset, CurationSummary), CurationError> {
    raw.validate()?;
    let propagated = propagate_all(raw, tracker)?;
    Ok(assemble(&propagated, &raw.categories, tracker, filter))
}

pub fn propagate_all(raw: &RawDetectionFile, tracker: &TrackerConfig) -> Result<Vec<PropagatedVideo>, CurationError> {
    raw.videos.par_iter().map(|v| propagate_video(v, tracker)).collect()
}
