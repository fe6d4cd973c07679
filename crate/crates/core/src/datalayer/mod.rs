//! Longitudinal student records, the observation-time cutoff and the
//! leakage-aware feature matrix.

mod features;
mod records;

pub use features::{
    build_features, validate_leakage, ColumnDecl, FeatureColumn, FeatureConfig, FeatureConstructor, FeatureMatrix,
    FeatureMeta, FeatureSpec, ImputationNote, Layer, LeakageViolation, RecordView, Role, OUTCOME_HORIZON,
};
pub use records::{
    derive_lag, derive_velocity, label_dropout, AcademicCalendar, DropoutLabel, EnrollmentAttempt,
    ObservationWindow, Outcome, StudentId, StudentRecord,
};

use thiserror::Error;

use crate::macroshock::MacroError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("unknown outcome token {0:?}; expected pass|fail|withdraw|libre")]
    BadOutcome(String),
    #[error("invalid attempt for student {student_id}: {reason}")]
    InvalidAttempt { student_id: StudentId, reason: String },
    #[error("observation window must cover at least one semester")]
    BadWindow,
    #[error("ZeroExpected: no plan courses scheduled up to semester {0}")]
    ZeroExpected(u32),
    #[error("EmptyCohort: no student records")]
    EmptyCohort,
    #[error("LeakageViolation: {}", describe(.0))]
    LeakageViolation(Vec<LeakageViolation>),
    #[error("unknown feature spec {0:?}")]
    BadFeatureSpec(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("attempt references student {0} missing from the student table")]
    OrphanAttempt(StudentId),
    #[error(transparent)]
    Macro(#[from] MacroError),
}

fn describe(v: &[LeakageViolation]) -> String {
    v.iter()
        .map(|l| format!("{} (observed at semester {}, VOT {})", l.column, l.observation_semester, l.vot))
        .collect::<Vec<_>>()
        .join(", ")
}
