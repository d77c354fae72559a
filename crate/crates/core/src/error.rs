use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A layer's input width does not match the previous layer's output.
    #[error("layer {layer}: expected in_dim {expected}, got {got}")]
    LayerMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {what} at s = {s}, h = {h}")]
    NonFinite { what: &'static str, s: f64, h: f64 },

    #[error("non-finite {0}")]
    NonFiniteInput(&'static str),

    #[error("step size {h:e} fell below h_min at s = {s}")]
    StepTooSmall { s: f64, h: f64 },

    #[error("maximum of {max_steps} steps exceeded at s = {s}")]
    MaxSteps { s: f64, max_steps: usize },

    #[error("sample {sample}, {phase} pass: {source}")]
    Sample {
        sample: usize,
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite gradient for sample {sample} in block {block}")]
    NonFiniteGradient { sample: usize, block: &'static str },
}

impl Error {
    /// Attaches the sample index and solver phase to a lower-level failure.
    pub fn in_sample(self, sample: usize, phase: &'static str) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            e => Error::Sample {
                sample,
                phase,
                source: Box::new(e),
            },
        }
    }

    /// True when the error comes from the numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::NonFiniteInput(_)
            | Error::StepTooSmall { .. }
            | Error::MaxSteps { .. }
            | Error::NonFiniteGradient { .. } => true,
            Error::Sample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
