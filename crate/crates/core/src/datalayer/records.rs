use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::curriculum::{CourseCode, CurriculumDag};

pub type StudentId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
    Withdraw,
    Libre,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::Pass, Outcome::Fail, Outcome::Withdraw, Outcome::Libre];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Withdraw => "withdraw",
            Outcome::Libre => "libre",
        }
    }

    /// Pass and fail are the only outcomes that carry a grade.
    pub fn is_graded(self) -> bool {
        matches!(self, Outcome::Pass | Outcome::Fail)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| DataError::BadOutcome(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentAttempt {
    pub student_id: StudentId,
    pub course_code: CourseCode,
    /// 1-based semester counted from the student's entry.
    pub semester_index: u32,
    pub outcome: Outcome,
    pub grade: Option<f64>,
}

impl EnrollmentAttempt {
    pub fn new(
        student_id: StudentId,
        course_code: CourseCode,
        semester_index: u32,
        outcome: Outcome,
        grade: Option<f64>,
    ) -> Self {
        Self {
            student_id,
            course_code,
            semester_index,
            outcome,
            grade,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.semester_index == 0 {
            return Err(DataError::InvalidAttempt {
                student_id: self.student_id,
                reason: "semester index must be >= 1".into(),
            });
        }
        match self.grade {
            Some(_) if !self.outcome.is_graded() => Err(DataError::InvalidAttempt {
                student_id: self.student_id,
                reason: format!("{} attempt at course {} carries a grade", self.outcome, self.course_code),
            }),
            Some(g) if !(0.0..=10.0).contains(&g) => Err(DataError::InvalidAttempt {
                student_id: self.student_id,
                reason: format!("grade {g} outside [0, 10]"),
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student_id: StudentId,
    pub cohort_year: i32,
    pub age_at_entry: f64,
    pub attempts: Vec<EnrollmentAttempt>,
    pub last_active_semester: u32,
    pub graduated: bool,
}

impl StudentRecord {
    /// Sorts attempts by semester (stable) and checks the record invariants.
    pub fn new(
        student_id: StudentId,
        cohort_year: i32,
        age_at_entry: f64,
        mut attempts: Vec<EnrollmentAttempt>,
        last_active_semester: u32,
        graduated: bool,
    ) -> Result<Self, DataError> {
        attempts.sort_by_key(|a| a.semester_index);
        for a in &attempts {
            a.validate()?;
            if a.student_id != student_id {
                return Err(DataError::InvalidAttempt {
                    student_id,
                    reason: format!("attempt belongs to student {}", a.student_id),
                });
            }
        }
        if let Some(last) = attempts.last() {
            if last.semester_index != last_active_semester {
                return Err(DataError::InvalidAttempt {
                    student_id,
                    reason: format!(
                        "last_active_semester {last_active_semester} differs from last attempt semester {}",
                        last.semester_index
                    ),
                });
            }
        }
        Ok(Self {
            student_id,
            cohort_year,
            age_at_entry,
            attempts,
            last_active_semester,
            graduated,
        })
    }

    /// Distinct courses passed in semesters `1..=through`.
    pub fn completed_through(&self, through: u32) -> usize {
        let mut passed: Vec<CourseCode> = self
            .attempts
            .iter()
            .filter(|a| a.semester_index <= through && a.outcome == Outcome::Pass)
            .map(|a| a.course_code)
            .collect();
        passed.sort_unstable();
        passed.dedup();
        passed.len()
    }
}

/// Value-of-observation-time cutoff: nothing after `vot_semesters` may feed a predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub vot_semesters: u32,
}

impl Default for ObservationWindow {
    fn default() -> Self {
        Self { vot_semesters: 3 }
    }
}

impl ObservationWindow {
    pub fn new(vot_semesters: u32) -> Result<Self, DataError> {
        if vot_semesters == 0 {
            return Err(DataError::BadWindow);
        }
        Ok(Self { vot_semesters })
    }
}

/// Courses behind the nominal plan at the cutoff, clamped at zero.
pub fn derive_lag(record: &StudentRecord, dag: &CurriculumDag, window: ObservationWindow) -> u32 {
    let expected = dag.expected_courses(window.vot_semesters);
    let completed = record.completed_through(window.vot_semesters);
    expected.saturating_sub(completed) as u32
}

/// Completed over expected courses at the cutoff; may exceed one.
pub fn derive_velocity(
    record: &StudentRecord,
    dag: &CurriculumDag,
    window: ObservationWindow,
) -> Result<f64, DataError> {
    let expected = dag.expected_courses(window.vot_semesters);
    if expected == 0 {
        return Err(DataError::ZeroExpected(window.vot_semesters));
    }
    Ok(record.completed_through(window.vot_semesters) as f64 / expected as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropoutLabel {
    Persisted,
    DroppedOut,
    Censored,
}

impl DropoutLabel {
    /// Numeric outcome; censored students have none.
    pub fn value(self) -> Option<f64> {
        match self {
            DropoutLabel::Persisted => Some(0.0),
            DropoutLabel::DroppedOut => Some(1.0),
            DropoutLabel::Censored => None,
        }
    }
}

/// Dropout after `grace_semesters` of inactivity without graduating.
///
/// `data_end_semester` is the last semester covered by the data, on the
/// student's own (entry-relative) clock.
pub fn label_dropout(record: &StudentRecord, grace_semesters: u32, data_end_semester: i64) -> DropoutLabel {
    if record.graduated {
        return DropoutLabel::Persisted;
    }
    let gap = data_end_semester - record.last_active_semester as i64;
    if gap >= grace_semesters.max(1) as i64 {
        DropoutLabel::DroppedOut
    } else {
        DropoutLabel::Censored
    }
}

/// Maps cohort-relative semesters onto the absolute macro calendar.
///
/// Absolute semester `2 * (cohort_year - base_year) + relative` assumes one
/// intake per year in the first term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcademicCalendar {
    pub base_year: i32,
}

impl Default for AcademicCalendar {
    fn default() -> Self {
        Self { base_year: 2000 }
    }
}

impl AcademicCalendar {
    pub fn absolute(&self, cohort_year: i32, relative: i64) -> i64 {
        2 * (cohort_year - self.base_year) as i64 + relative
    }

    pub fn relative(&self, cohort_year: i32, absolute: i64) -> i64 {
        absolute - 2 * (cohort_year - self.base_year) as i64
    }
}
