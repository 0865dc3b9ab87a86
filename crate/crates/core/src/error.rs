use thiserror::Error;

use crate::data::DataError;
use crate::linalg::LinalgError;
use crate::persist::PersistError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error(
        "component {component} collapsed after exhausting its reinitialization budget: {source}"
    )]
    ComponentCollapse {
        component: usize,
        #[source]
        source: LinalgError,
    },
    #[error("component {component} has vanishing responsibility mass {mass:e}")]
    DeadComponent { component: usize, mass: f64 },
    #[error("moment matrix for component {component} is singular: {source}")]
    SingularMoment {
        component: usize,
        #[source]
        source: LinalgError,
    },
    #[error("sample {sample} has zero likelihood under every component")]
    ZeroLikelihood { sample: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Linalg(_)
            | Error::ComponentCollapse { .. }
            | Error::DeadComponent { .. }
            | Error::SingularMoment { .. }
            | Error::ZeroLikelihood { .. } => true,
            Error::Trial { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
