use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("unknown scene kind `{0}`")]
    UnknownSceneKind(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("no prompt point lands on a valid source pixel")]
    NoUsablePrompts,
    #[error("source depth at prompt pixel ({x}, {y}) is not positive")]
    NonPositiveSourceAtPrompt { x: usize, y: usize },
    #[error("grid has no valid pixels")]
    NoValidPixels,
    #[error("prediction and ground truth share no valid pixel")]
    EmptyOverlap,
    #[error("map has no valid pixels")]
    EmptyMask,
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("non-positive focal length or width")]
    NonPositiveFocal,
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
    #[error("focal estimation needs at least {required} usable points, found {found}")]
    InsufficientPoints { found: usize, required: usize },
    #[error("rays are degenerate; focal length is unconstrained")]
    DegenerateRays,
    #[error("unknown loss `{0}`")]
    UnknownLoss(String),
}
