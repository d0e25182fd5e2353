use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length {len} is not divisible by factor {factor}")]
    Divisibility { len: usize, factor: usize },

    #[error("input length {len} is not a positive multiple of the total resampling factor {factor}")]
    Alignment { len: usize, factor: usize },

    #[error("chunk length {len} is not a positive multiple of the total resampling factor {factor}")]
    ChunkAlignment { len: usize, factor: usize },

    #[error("matrix is not diagonalizable (eigenvector condition number {condition:.3e})")]
    NonDiagonalizable { condition: f64 },

    #[error("contraction cost overflows the integer range")]
    Overflow,

    #[error("invalid network config: {0}")]
    Config(String),

    #[error("corrupt weight file: {0}")]
    CorruptFile(String),

    #[error("unsupported weight file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),

    /// Ratio of the working rate to the requested rate; only 1, 2 and 4 are supported.
    #[error("unsupported resampling factor {0}")]
    UnsupportedFactor(f64),

    #[error("clean signal power {0:.3e} is below the silence floor")]
    SilentClean(f64),

    #[error("noise signal has zero power")]
    SilentNoise,

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
