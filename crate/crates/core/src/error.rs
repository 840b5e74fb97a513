use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskError {
    #[error("malformed RLE: {0}")]
    MalformedRle(String),
    #[error("mask dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("pixel buffer has {actual} entries, expected {expected}")]
    DataLength { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("dangling reference at {path}: no {kind} with id {id}")]
    DanglingReference { path: String, kind: &'static str, id: u64 },
    #[error("length mismatch at {path}: {actual} entries for a video of length {expected}")]
    LengthMismatch { path: String, expected: usize, actual: usize },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("invalid mask at {path}: {source}")]
    Mask {
        path: String,
        #[source]
        source: MaskError,
    },
    #[error("video categories not covered by any image corpus or alias rule: {}", .0.join(", "))]
    UncoveredCategory(Vec<String>),
    #[error("alias rules line {line}: {message}")]
    AliasSyntax { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("grid dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("box {bbox:?} exceeds the {height}x{width} grid")]
    BoxOutOfBounds {
        bbox: crate::mask::PixelBox,
        height: u32,
        width: u32,
    },
    #[error("no loss policy for {kind:?} annotations at {stage:?}")]
    InvalidCombination {
        kind: crate::loss::AnnotationKind,
        stage: crate::loss::TrainingStage,
    },
    #[error("probability values must lie in [0, 1]")]
    OutOfRange,
    #[error("invalid loss setting: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurationError {
    #[error("track {0} has no scored frames")]
    NoScoredFrames(u64),
    #[error("track {track_id} has no mask on its keyframe {frame}")]
    MissingKeyframeMask { track_id: u64, frame: usize },
    #[error("raw detections for video {video_id}: {message}")]
    InvalidDetections { video_id: u64, message: String },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("tracks belong to different videos or frame geometry: {0}")]
    VideoMismatch(String),
    #[error("category tables differ: {0}")]
    CategoryTableMismatch(String),
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}
