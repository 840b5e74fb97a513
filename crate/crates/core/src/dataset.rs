//! Image and video annotation datasets.
//!
//! Three document families are understood:
//!
//! * COCO-style image datasets (`images`, `annotations`, `categories`), either
//!   with pixel annotations (polygons or RLE) or box-only. For box-only corpora
//!   every mask is dropped at parse time, even if the file carries one.
//! * YTVIS-style video datasets (`videos`, `annotations` with one
//!   `segmentations` entry per frame, `categories`). Pseudo-label files extend
//!   each annotation with an optional per-frame `scores` array.
//! * Alias rule files, one `video_name = image_name[, image_name...]` per line.
//!
//! Unknown image/category/video ids are fatal. Image files missing on disk are
//! only collected as warnings.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, MaskError};
use crate::mask::{mask_to_box, rle_decode, rle_encode, BinaryMask, PixelBox, RleMask};

/// Which kind of annotation an image corpus provides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationSource {
    Pixel,
    BoxOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercategory: Option<String>,
}

impl Category {
    pub fn new(id: u64, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            supercategory: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation {
    pub id: u64,
    pub category_id: u64,
    pub bbox: PixelBox,
    pub mask: Option<RleMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub image_id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<ImageAnnotation>,
}

/// A parsed image dataset together with the non-fatal issues found while
/// reading it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageCorpus {
    pub source: AnnotationSource,
    pub samples: Vec<ImageSample>,
    pub categories: Vec<Category>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions<'a> {
    /// When set, every `file_name` is looked up under this directory and
    /// missing files are reported as warnings.
    pub image_root: Option<&'a Path>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub length: usize,
    #[serde(default)]
    pub file_names: Vec<String>,
}

/// One object instance across a whole video.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTrack {
    pub track_id: u64,
    pub video_id: u64,
    pub category_id: u64,
    pub frame_masks: Vec<Option<RleMask>>,
    pub frame_scores: Vec<Option<f64>>,
}

impl InstanceTrack {
    pub fn new(track_id: u64, video_id: u64, category_id: u64, length: usize) -> Self {
        Self {
            track_id,
            video_id,
            category_id,
            frame_masks: vec![None; length],
            frame_scores: vec![None; length],
        }
    }

    pub fn len(&self) -> usize {
        self.frame_masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_masks.is_empty()
    }

    /// Mean over frames that carry a score; 0 when none do.
    pub fn mean_score(&self) -> f64 {
        let (sum, n) = self
            .frame_scores
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn present_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.frame_masks
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.as_ref().map(|_| i))
    }

    /// Decodes every present mask.
    pub fn decoded_masks(&self) -> Result<Vec<Option<BinaryMask>>, MaskError> {
        self.frame_masks
            .iter()
            .map(|m| m.as_ref().map(rle_decode).transpose())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VideoDataset {
    pub videos: Vec<VideoInfo>,
    pub categories: Vec<Category>,
    pub tracks: Vec<InstanceTrack>,
}

impl VideoDataset {
    pub fn video(&self, id: u64) -> Option<&VideoInfo> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn tracks_in_video(&self, video_id: u64) -> impl Iterator<Item = &InstanceTrack> {
        self.tracks.iter().filter(move |t| t.video_id == video_id)
    }

    /// Checks every structural invariant: unique ids, resolvable references,
    /// per-frame array lengths, mask geometry and score ranges.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut videos = HashMap::new();
        for v in &self.videos {
            if videos.insert(v.id, v).is_some() {
                return Err(DatasetError::DuplicateId { kind: "video", id: v.id });
            }
        }
        let mut cats = HashSet::new();
        for c in &self.categories {
            if !cats.insert(c.id) {
                return Err(DatasetError::DuplicateId { kind: "category", id: c.id });
            }
        }
        let mut ids = HashSet::new();
        for (i, t) in self.tracks.iter().enumerate() {
            let path = format!("tracks[{i}]");
            if !ids.insert(t.track_id) {
                return Err(DatasetError::DuplicateId { kind: "track", id: t.track_id });
            }
            let video = videos.get(&t.video_id).ok_or(DatasetError::DanglingReference {
                path: format!("{path}.video_id"),
                kind: "video",
                id: t.video_id,
            })?;
            if !cats.contains(&t.category_id) {
                return Err(DatasetError::DanglingReference {
                    path: format!("{path}.category_id"),
                    kind: "category",
                    id: t.category_id,
                });
            }
            for (field, len) in [("frame_masks", t.frame_masks.len()), ("frame_scores", t.frame_scores.len())] {
                if len != video.length {
                    return Err(DatasetError::LengthMismatch {
                        path: format!("{path}.{field}"),
                        expected: video.length,
                        actual: len,
                    });
                }
            }
            for (f, m) in t.frame_masks.iter().enumerate() {
                if let Some(m) = m {
                    check_rle(m, video.height, video.width, &format!("{path}.frame_masks[{f}]"))?;
                }
            }
            for (f, s) in t.frame_scores.iter().enumerate() {
                if let Some(s) = s {
                    if !(0.0..=1.0).contains(s) {
                        return Err(DatasetError::Schema {
                            path: format!("{path}.frame_scores[{f}]"),
                            message: format!("score {s} outside [0, 1]"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_rle(rle: &RleMask, height: u32, width: u32, path: &str) -> Result<(), DatasetError> {
    if rle.size != (height, width) {
        return Err(DatasetError::Mask {
            path: path.to_string(),
            source: MaskError::DimensionMismatch {
                left: rle.size,
                right: (height, width),
            },
        });
    }
    rle.runs().map_err(|source| DatasetError::Mask {
        path: path.to_string(),
        source,
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// wire structs

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle(RawRle),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawRle {
    size: [u32; 2],
    counts: RawCounts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawCounts {
    Packed(String),
    Runs(Vec<u32>),
}

#[derive(Debug, Deserialize)]
struct CocoDocument {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<Category>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
    #[serde(default)]
    file_name: String,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    segmentation: Option<RawSegmentation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct YtvisDocument {
    videos: Vec<YtvisVideo>,
    categories: Vec<Category>,
    annotations: Vec<YtvisAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct YtvisVideo {
    id: u64,
    width: u32,
    height: u32,
    #[serde(default)]
    length: Option<usize>,
    #[serde(default)]
    file_names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct YtvisAnnotation {
    id: u64,
    video_id: u64,
    category_id: u64,
    #[serde(default)]
    iscrowd: u8,
    segmentations: Vec<Option<RawSegmentation>>,
    #[serde(default, skip_deserializing)]
    areas: Vec<Option<u64>>,
    #[serde(default, skip_deserializing)]
    bboxes: Vec<Option<[u32; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<Option<f64>>>,
}

fn parse_document<'de, T: Deserialize<'de>>(bytes: &'de [u8]) -> Result<T, DatasetError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        DatasetError::Schema {
            path: if path == "." { "$".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })
}

fn segmentation_to_rle(
    seg: &RawSegmentation,
    height: u32,
    width: u32,
    path: &str,
) -> Result<RleMask, DatasetError> {
    let rle = match seg {
        RawSegmentation::Polygons(polys) => {
            for (i, p) in polys.iter().enumerate() {
                if p.len() < 6 || p.len() % 2 != 0 || p.iter().any(|v| !v.is_finite()) {
                    return Err(DatasetError::Schema {
                        path: format!("{path}[{i}]"),
                        message: "polygon needs an even number (>= 6) of finite coordinates".into(),
                    });
                }
            }
            rle_encode(&rasterize_polygons(polys, height, width))
        }
        RawSegmentation::Rle(raw) => {
            let size = (raw.size[0], raw.size[1]);
            match &raw.counts {
                RawCounts::Packed(s) => RleMask {
                    size,
                    counts: s.clone(),
                },
                RawCounts::Runs(runs) => RleMask::from_runs(size.0, size.1, runs),
            }
        }
    };
    check_rle(&rle, height, width, path)?;
    Ok(rle)
}

/// Rasterizes polygons given as flat `[x0, y0, x1, y1, ...]` lists. A pixel is
/// set when its center lies inside any polygon (even-odd rule per polygon).
pub fn rasterize_polygons(polygons: &[Vec<f64>], height: u32, width: u32) -> BinaryMask {
    let mut mask = BinaryMask::new(height, width);
    for poly in polygons {
        let pts: Vec<(f64, f64)> = poly.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        if pts.len() < 3 {
            continue;
        }
        let mut xs = Vec::new();
        for r in 0..height {
            let y = r as f64 + 0.5;
            xs.clear();
            for i in 0..pts.len() {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[(i + 1) % pts.len()];
                if (y0 <= y && y < y1) || (y1 <= y && y < y0) {
                    xs.push(x0 + (y - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                // columns whose center c + 0.5 falls in [span[0], span[1])
                let c0 = (span[0] - 0.5).ceil().max(0.0);
                let c1 = (span[1] - 0.5).ceil().min(width as f64);
                let mut c = c0;
                while c < c1 {
                    mask.set(r, c as u32, true);
                    c += 1.0;
                }
            }
        }
    }
    mask
}

/// Parses a COCO-style image dataset.
pub fn parse_image_dataset(bytes: &[u8], source: AnnotationSource) -> Result<ImageCorpus, DatasetError> {
    parse_image_dataset_with(bytes, source, &ParseOptions::default())
}

pub fn parse_image_dataset_with(
    bytes: &[u8],
    source: AnnotationSource,
    options: &ParseOptions<'_>,
) -> Result<ImageCorpus, DatasetError> {
    let doc: CocoDocument = parse_document(bytes)?;
    let mut warnings = Vec::new();

    let mut cat_ids = HashSet::new();
    for c in &doc.categories {
        if !cat_ids.insert(c.id) {
            return Err(DatasetError::DuplicateId { kind: "category", id: c.id });
        }
    }

    let mut samples = Vec::with_capacity(doc.images.len());
    let mut by_id = HashMap::new();
    for (i, img) in doc.images.iter().enumerate() {
        if by_id.insert(img.id, samples.len()).is_some() {
            return Err(DatasetError::DuplicateId { kind: "image", id: img.id });
        }
        if let Some(root) = options.image_root {
            if !root.join(&img.file_name).is_file() {
                warnings.push(format!("images[{i}].file_name: {:?} not found under {}", img.file_name, root.display()));
            }
        }
        samples.push(ImageSample {
            image_id: img.id,
            file_name: img.file_name.clone(),
            width: img.width,
            height: img.height,
            annotations: Vec::new(),
        });
    }

    let mut ann_ids = HashSet::new();
    for (i, ann) in doc.annotations.iter().enumerate() {
        let path = format!("annotations[{i}]");
        if !ann_ids.insert(ann.id) {
            return Err(DatasetError::DuplicateId { kind: "annotation", id: ann.id });
        }
        let &slot = by_id.get(&ann.image_id).ok_or(DatasetError::DanglingReference {
            path: format!("{path}.image_id"),
            kind: "image",
            id: ann.image_id,
        })?;
        if !cat_ids.contains(&ann.category_id) {
            return Err(DatasetError::DanglingReference {
                path: format!("{path}.category_id"),
                kind: "category",
                id: ann.category_id,
            });
        }
        let (height, width) = (samples[slot].height, samples[slot].width);

        let mask = match (&ann.segmentation, source) {
            (Some(seg), AnnotationSource::Pixel) => {
                Some(segmentation_to_rle(seg, height, width, &format!("{path}.segmentation"))?)
            }
            _ => None,
        };

        let bbox = match ann.bbox {
            Some(b) => pixel_box_from_float(b, height, width, &format!("{path}.bbox"), &mut warnings)?,
            None => match &mask {
                Some(m) => mask_to_box(&rle_decode(m).map_err(|source| DatasetError::Mask {
                    path: format!("{path}.segmentation"),
                    source,
                })?),
                None => {
                    return Err(DatasetError::Schema {
                        path: format!("{path}.bbox"),
                        message: "missing bbox and no mask to derive it from".into(),
                    })
                }
            },
        };

        samples[slot].annotations.push(ImageAnnotation {
            id: ann.id,
            category_id: ann.category_id,
            bbox,
            mask,
        });
    }

    Ok(ImageCorpus {
        source,
        samples,
        categories: doc.categories,
        warnings,
    })
}

/// Converts a float `[x, y, w, h]` box to the enclosing pixel box, clipped to
/// the image. Clipping is reported as a warning.
fn pixel_box_from_float(
    b: [f64; 4],
    height: u32,
    width: u32,
    path: &str,
    warnings: &mut Vec<String>,
) -> Result<PixelBox, DatasetError> {
    let [x, y, w, h] = b;
    if b.iter().any(|v| !v.is_finite()) || w < 0.0 || h < 0.0 {
        return Err(DatasetError::Schema {
            path: path.to_string(),
            message: format!("invalid box {b:?}"),
        });
    }
    let x0 = x.floor().clamp(0.0, width as f64);
    let y0 = y.floor().clamp(0.0, height as f64);
    let x1 = (x + w).ceil().clamp(x0, width as f64);
    let y1 = (y + h).ceil().clamp(y0, height as f64);
    if x < 0.0 || y < 0.0 || x + w > width as f64 || y + h > height as f64 {
        warnings.push(format!("{path}: box {b:?} clipped to the {width}x{height} image"));
    }
    Ok(PixelBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
}

/// Parses a YTVIS-style video dataset (ground truth or pseudo-labels).
pub fn parse_video_dataset(bytes: &[u8]) -> Result<VideoDataset, DatasetError> {
    let doc: YtvisDocument = parse_document(bytes)?;

    let mut videos = Vec::with_capacity(doc.videos.len());
    for (i, v) in doc.videos.iter().enumerate() {
        let length = match v.length {
            Some(len) => {
                if !v.file_names.is_empty() && v.file_names.len() != len {
                    return Err(DatasetError::LengthMismatch {
                        path: format!("videos[{i}].file_names"),
                        expected: len,
                        actual: v.file_names.len(),
                    });
                }
                len
            }
            None => v.file_names.len(),
        };
        videos.push(VideoInfo {
            id: v.id,
            width: v.width,
            height: v.height,
            length,
            file_names: v.file_names.clone(),
        });
    }
    let by_id: HashMap<u64, &VideoInfo> = videos.iter().map(|v| (v.id, v)).collect();
    let cat_ids: HashSet<u64> = doc.categories.iter().map(|c| c.id).collect();

    let mut tracks = Vec::with_capacity(doc.annotations.len());
    for (i, ann) in doc.annotations.iter().enumerate() {
        let path = format!("annotations[{i}]");
        let video = by_id.get(&ann.video_id).ok_or(DatasetError::DanglingReference {
            path: format!("{path}.video_id"),
            kind: "video",
            id: ann.video_id,
        })?;
        if !cat_ids.contains(&ann.category_id) {
            return Err(DatasetError::DanglingReference {
                path: format!("{path}.category_id"),
                kind: "category",
                id: ann.category_id,
            });
        }
        if ann.segmentations.len() != video.length {
            return Err(DatasetError::LengthMismatch {
                path: format!("{path}.segmentations"),
                expected: video.length,
                actual: ann.segmentations.len(),
            });
        }
        let frame_masks = ann
            .segmentations
            .iter()
            .enumerate()
            .map(|(f, seg)| {
                seg.as_ref()
                    .map(|s| segmentation_to_rle(s, video.height, video.width, &format!("{path}.segmentations[{f}]")))
                    .transpose()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let frame_scores = match &ann.scores {
            Some(scores) => {
                if scores.len() != video.length {
                    return Err(DatasetError::LengthMismatch {
                        path: format!("{path}.scores"),
                        expected: video.length,
                        actual: scores.len(),
                    });
                }
                scores.clone()
            }
            None => vec![None; video.length],
        };
        tracks.push(InstanceTrack {
            track_id: ann.id,
            video_id: ann.video_id,
            category_id: ann.category_id,
            frame_masks,
            frame_scores,
        });
    }

    let ds = VideoDataset {
        videos,
        categories: doc.categories,
        tracks,
    };
    ds.validate().map_err(|e| match e {
        // report track positions with the document's own field names
        DatasetError::Schema { path, message } => DatasetError::Schema {
            path: path.replace("tracks", "annotations").replace("frame_scores", "scores"),
            message,
        },
        other => other,
    })?;
    Ok(ds)
}

/// Serializes a video dataset as YTVIS-style JSON with compressed RLE
/// segmentations. `scores` is only written for tracks that carry any score.
pub fn serialize_video_dataset(ds: &VideoDataset) -> Result<String, MaskError> {
    let videos = ds
        .videos
        .iter()
        .map(|v| YtvisVideo {
            id: v.id,
            width: v.width,
            height: v.height,
            length: Some(v.length),
            file_names: v.file_names.clone(),
        })
        .collect();
    let annotations = ds
        .tracks
        .iter()
        .map(|t| {
            let mut areas = Vec::with_capacity(t.len());
            let mut bboxes = Vec::with_capacity(t.len());
            for m in &t.frame_masks {
                match m {
                    Some(rle) => {
                        let decoded = rle_decode(rle)?;
                        let b = mask_to_box(&decoded);
                        areas.push(Some(decoded.area()));
                        bboxes.push(Some([b.x, b.y, b.w, b.h]));
                    }
                    None => {
                        areas.push(None);
                        bboxes.push(None);
                    }
                }
            }
            let has_scores = t.frame_scores.iter().any(Option::is_some);
            Ok(YtvisAnnotation {
                id: t.track_id,
                video_id: t.video_id,
                category_id: t.category_id,
                iscrowd: 0,
                segmentations: t
                    .frame_masks
                    .iter()
                    .map(|m| {
                        m.as_ref().map(|r| {
                            RawSegmentation::Rle(RawRle {
                                size: [r.size.0, r.size.1],
                                counts: RawCounts::Packed(r.counts.clone()),
                            })
                        })
                    })
                    .collect(),
                areas,
                bboxes,
                scores: has_scores.then(|| t.frame_scores.clone()),
            })
        })
        .collect::<Result<Vec<_>, MaskError>>()?;
    let doc = YtvisDocument {
        videos,
        categories: ds.categories.clone(),
        annotations,
    };
    Ok(serde_json::to_string(&doc).expect("dataset serialization is infallible"))
}

// ---------------------------------------------------------------------------
// category map

/// `video_name = image_name[, image_name...]`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasRule {
    pub video_name: String,
    pub image_names: Vec<String>,
}

pub fn parse_alias_rules(text: &str) -> Result<Vec<AliasRule>, DatasetError> {
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (lhs, rhs) = line.split_once('=').ok_or(DatasetError::AliasSyntax {
            line: i + 1,
            message: "expected `video_name = image_name[, ...]`".into(),
        })?;
        let video_name = lhs.trim().to_string();
        let image_names: Vec<String> = rhs.split(',').map(|s| s.trim().to_string()).collect();
        if video_name.is_empty() || image_names.iter().any(String::is_empty) {
            return Err(DatasetError::AliasSyntax {
                line: i + 1,
                message: "empty category name".into(),
            });
        }
        rules.push(AliasRule {
            video_name,
            image_names,
        });
    }
    Ok(rules)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMatch {
    pub source: AnnotationSource,
    pub image_category_ids: BTreeSet<u64>,
}

/// Video category id -> the image categories that supply its training data.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryMap {
    pub entries: BTreeMap<u64, CategoryMatch>,
}

impl CategoryMap {
    /// `(image categories, video categories)` matched through one corpus,
    /// i.e. the `m / n` class counts.
    pub fn coverage(&self, source: AnnotationSource) -> (usize, usize) {
        let mut image_ids = BTreeSet::new();
        let mut videos = 0;
        for m in self.entries.values().filter(|m| m.source == source) {
            image_ids.extend(m.image_category_ids.iter().copied());
            videos += 1;
        }
        (image_ids.len(), videos)
    }

    /// Rewrites a corpus to video category ids. Annotations of unmapped
    /// categories are dropped; an image category serving several video
    /// categories yields one annotation per target. Images left without
    /// annotations are dropped.
    pub fn relabel(&self, corpus: &ImageCorpus) -> Vec<ImageSample> {
        let mut targets: HashMap<u64, Vec<u64>> = HashMap::new();
        for (&video_cat, m) in &self.entries {
            if m.source == corpus.source {
                for &img_cat in &m.image_category_ids {
                    targets.entry(img_cat).or_default().push(video_cat);
                }
            }
        }
        corpus
            .samples
            .iter()
            .filter_map(|s| {
                let annotations: Vec<ImageAnnotation> = s
                    .annotations
                    .iter()
                    .flat_map(|a| {
                        targets.get(&a.category_id).into_iter().flatten().map(move |&vc| ImageAnnotation {
                            category_id: vc,
                            ..a.clone()
                        })
                    })
                    .collect();
                (!annotations.is_empty()).then(|| ImageSample {
                    annotations,
                    ..s.clone()
                })
            })
            .collect()
    }
}

fn ids_by_name(cats: &[Category]) -> HashMap<String, BTreeSet<u64>> {
    let mut out: HashMap<String, BTreeSet<u64>> = HashMap::new();
    for c in cats {
        out.entry(c.name.to_lowercase()).or_default().insert(c.id);
    }
    out
}

fn resolve(names: &[String], table: &HashMap<String, BTreeSet<u64>>) -> Option<BTreeSet<u64>> {
    let mut ids = BTreeSet::new();
    for n in names {
        ids.extend(table.get(&n.to_lowercase())?.iter().copied());
    }
    Some(ids)
}

/// Matches each video category to image categories. Alias rules override the
/// default case-insensitive name match; a rule or name must resolve entirely
/// within one corpus, and the pixel-annotated corpus wins when both could.
pub fn build_category_map(
    video_categories: &[Category],
    pixel_categories: &[Category],
    box_categories: &[Category],
    aliases: &[AliasRule],
) -> Result<CategoryMap, DatasetError> {
    let pixel = ids_by_name(pixel_categories);
    let boxed = ids_by_name(box_categories);
    let alias_by_name: HashMap<String, &AliasRule> =
        aliases.iter().map(|a| (a.video_name.to_lowercase(), a)).collect();

    let mut map = CategoryMap::default();
    let mut uncovered = Vec::new();
    for vc in video_categories {
        let names = match alias_by_name.get(&vc.name.to_lowercase()) {
            Some(rule) => rule.image_names.clone(),
            None => vec![vc.name.clone()],
        };
        let hit = resolve(&names, &pixel)
            .map(|ids| (AnnotationSource::Pixel, ids))
            .or_else(|| resolve(&names, &boxed).map(|ids| (AnnotationSource::BoxOnly, ids)));
        match hit {
            Some((source, image_category_ids)) => {
                map.entries.insert(
                    vc.id,
                    CategoryMatch {
                        source,
                        image_category_ids,
                    },
                );
            }
            None => uncovered.push(vc.name.clone()),
        }
    }
    if uncovered.is_empty() {
        Ok(map)
    } else {
        Err(DatasetError::UncoveredCategory(uncovered))
    }
}

// ---------------------------------------------------------------------------
// statistics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsUnit {
    Images,
    Videos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryStats {
    pub category_id: u64,
    pub name: String,
    /// Images (or videos) containing at least one annotation of the category.
    pub units: usize,
    pub annotations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub unit: StatsUnit,
    pub rows: Vec<CategoryStats>,
    /// Categories with at least one annotation.
    pub classes: usize,
    /// Images (or videos) with at least one annotation.
    pub units: usize,
    pub annotations: usize,
}

fn collect_stats<'a>(
    unit: StatsUnit,
    categories: &[Category],
    pairs: impl Iterator<Item = (u64, u64)> + 'a,
) -> DatasetStats {
    let mut per_cat: BTreeMap<u64, (BTreeSet<u64>, usize)> = BTreeMap::new();
    let mut units = BTreeSet::new();
    let mut total = 0;
    for (unit_id, cat) in pairs {
        let e = per_cat.entry(cat).or_default();
        e.0.insert(unit_id);
        e.1 += 1;
        units.insert(unit_id);
        total += 1;
    }
    let rows: Vec<CategoryStats> = categories
        .iter()
        .map(|c| {
            let (u, a) = per_cat.get(&c.id).map(|(s, a)| (s.len(), *a)).unwrap_or((0, 0));
            CategoryStats {
                category_id: c.id,
                name: c.name.clone(),
                units: u,
                annotations: a,
            }
        })
        .collect();
    DatasetStats {
        unit,
        classes: rows.iter().filter(|r| r.annotations > 0).count(),
        rows,
        units: units.len(),
        annotations: total,
    }
}

pub fn image_stats(corpus: &ImageCorpus) -> DatasetStats {
    collect_stats(
        StatsUnit::Images,
        &corpus.categories,
        corpus
            .samples
            .iter()
            .flat_map(|s| s.annotations.iter().map(move |a| (s.image_id, a.category_id))),
    )
}

pub fn video_stats(ds: &VideoDataset) -> DatasetStats {
    collect_stats(
        StatsUnit::Videos,
        &ds.categories,
        ds.tracks.iter().map(|t| (t.video_id, t.category_id)),
    )
}

impl DatasetStats {
    /// Fixed-width text table: one row per category, then the totals.
    pub fn render_table(&self) -> String {
        let unit = match self.unit {
            StatsUnit::Images => "Images",
            StatsUnit::Videos => "Videos",
        };
        let total = format!("Total ({})", self.classes);
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.chars().count())
            .chain([5, total.len()])
            .max()
            .unwrap_or(5);
        let mut out = format!("{:<name_w$}  {:>8}  {:>8}\n", "Class", unit, "Anno");
        for r in &self.rows {
            out.push_str(&format!("{:<name_w$}  {:>8}  {:>8}\n", r.name, r.units, r.annotations));
        }
        out.push_str(&format!(
            "{:<name_w$}  {:>8}  {:>8}\n",
            total,
            self.units,
            self.annotations
        ));
        out
    }
}
