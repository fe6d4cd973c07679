//! Prerequisite graph of a programme and per-course friction metrics.

mod dag;
mod friction;
pub mod reference;

pub use dag::{Course, CourseCode, CurriculumDag};
pub use friction::{compute_ifc, rank_friction, FrictionEntry, FrictionTable, FrictionWeights, OutcomeCounts};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurriculumError {
    #[error("prerequisite cycle detected: {}", format_cycle(.0))]
    CycleDetected(Vec<CourseCode>),
    #[error("unknown course code {0}")]
    UnknownCourse(CourseCode),
    #[error("duplicate course code {0}")]
    DuplicateCode(CourseCode),
    #[error("curriculum has no courses")]
    Empty,
    #[error("course {code} has nominal semester {semester}; semesters start at 1")]
    BadSemester { code: CourseCode, semester: u32 },
    #[error("course {0} is not placed in exactly one plan semester")]
    PlanMismatch(CourseCode),
    #[error("NoAttempts: course {0} has no recorded attempts")]
    NoAttempts(CourseCode),
}

fn format_cycle(cycle: &[CourseCode]) -> String {
    cycle
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}
