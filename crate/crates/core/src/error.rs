use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("expected {expected} channel(s), got {actual}")]
    ChannelCount { expected: usize, actual: usize },

    #[error("image dimensions must be non-zero, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },

    #[error("sample buffer has length {actual}, expected {expected}")]
    BufferLength { expected: usize, actual: usize },

    #[error("sample {value} at index {index} is outside [0, 1]")]
    SampleOutOfRange { index: usize, value: f64 },

    #[error("dimension mismatch: {what} ({left} vs {right})")]
    DimensionMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("size mismatch: {left_width}x{left_height} vs {right_width}x{right_height}")]
    SizeMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },

    #[error("image of {width}x{height} is smaller than a 3x3 window")]
    ImageTooSmall { width: usize, height: usize },

    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("illumination {value} at index {index} is below the floor {floor}")]
    IlluminationBelowFloor { index: usize, value: f64, floor: f64 },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("negative loss input {name} = {value}")]
    NegativeLoss { name: &'static str, value: f64 },
}
