use thiserror::Error;

use crate::priors::NoisePrior;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {face} repeats a vertex index")]
    RepeatedFaceIndex { face: usize },
    #[error("face {face} has a color component outside [0, 1]")]
    ColorOutOfRange { face: usize },
    #[error("expected {expected} face colors, got {got}")]
    ColorCount { expected: usize, got: usize },
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("invalid smoothing parameters: {0}")]
    InvalidSmoothing(&'static str),
    #[error("the {0} prior has no smooth potential gradient")]
    UnsupportedPrior(NoisePrior),
    #[error("no closed form for simplex smoothing under the {0} prior")]
    NoClosedForm(NoisePrior),
    #[error("every score is -inf")]
    AllScoresInfinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("render needs {required} bytes of sample storage but the budget is {budget}")]
    MemoryBudget { required: u64, budget: u64 },
    #[error("backward pass does not match the forward pass (scene, parameters or seed changed)")]
    ForwardMismatch,
    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),
    #[error("missing loss part for nonzero weight: {0}")]
    MissingLossPart(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
