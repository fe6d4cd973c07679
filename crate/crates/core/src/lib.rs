//! Curriculum friction, leakage-safe student features, double machine
//! learning for academic lag, macro shocks and trajectory archetypes.

pub mod analysis;
pub mod archetype;
pub mod curriculum;
pub mod datalayer;
pub mod dml;
pub mod io;
pub mod macroshock;
pub mod stats;
pub mod synth;

pub use archetype::ArchetypeError;
pub use curriculum::{CourseCode, CurriculumDag, CurriculumError};
pub use datalayer::{DataError, FeatureMatrix, StudentRecord};
pub use dml::{DmlError, DmlEstimate};
pub use io::IoError;
pub use macroshock::{MacroError, MacroSeries};
pub use synth::{SynthConfig, SynthError};

use thiserror::Error;

/// Any pipeline failure, with a stable process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dml(#[from] DmlError),
    #[error(transparent)]
    Macro(#[from] MacroError),
    #[error(transparent)]
    Archetype(#[from] ArchetypeError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// 2 input, 3 leakage, 4 degenerate estimation, 5 clustering failure.
    pub fn exit_code(&self) -> i32 {
        fn data(e: &DataError) -> i32 {
            match e {
                DataError::LeakageViolation(_) => 3,
                _ => 2,
            }
        }
        fn dml(e: &DmlError) -> i32 {
            match e {
                DmlError::DegenerateTreatment { .. } | DmlError::SingularSystem | DmlError::CollinearBasis => 4,
                _ => 2,
            }
        }
        match self {
            Error::Io(IoError::Data(e)) | Error::Data(e) => data(e),
            Error::Dml(e) | Error::Macro(MacroError::Dml(e)) => dml(e),
            Error::Archetype(_) => 5,
            _ => 2,
        }
    }
}
