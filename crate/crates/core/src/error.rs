use thiserror::Error;

use crate::spinops::Subspace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operator is not Hermitian (max |A - A^dagger| = {deviation:e})")]
    NonHermitian { deviation: f64 },

    #[error("sequence acts in the {sequence:?} subspace but the Hamiltonian lives in {hamiltonian:?}")]
    SubspaceMismatch {
        sequence: Subspace,
        hamiltonian: Subspace,
    },

    #[error("segment {index} leaves the {subspace:?} subspace: {reason}")]
    MixedSubspace {
        index: usize,
        subspace: Subspace,
        reason: String,
    },

    #[error("nominal scaling factor is zero; block durations are undefined")]
    UndefinedDuration,

    #[error("block duration {duration:e} s is not an integer number of slices of {slice:e} s")]
    Digitization { duration: f64, slice: f64 },

    #[error("powder average not converged: {coarse} at n={n} vs {fine} at n={n2}")]
    NonConvergentPowder {
        n: usize,
        n2: usize,
        coarse: f64,
        fine: f64,
    },

    #[error("unknown {what} '{name}'")]
    Unknown { what: &'static str, name: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }
}
