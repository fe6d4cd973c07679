use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::records::{
    derive_lag, derive_velocity, label_dropout, AcademicCalendar, DropoutLabel, EnrollmentAttempt, ObservationWindow,
    Outcome, StudentId, StudentRecord,
};
use super::DataError;
use crate::curriculum::{CourseCode, CurriculumDag, FrictionWeights, OutcomeCounts};
use crate::macroshock::{MacroPoint, MacroSeries};

/// Observation semester of anything derived from the final outcome.
pub const OUTCOME_HORIZON: i64 = i64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    N1,
    N2,
    N3,
    N4,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Layer {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "N1" => Ok(Layer::N1),
            "N2" => Ok(Layer::N2),
            "N3" => Ok(Layer::N3),
            "N4" => Ok(Layer::N4),
            other => Err(DataError::BadFeatureSpec(other.to_string())),
        }
    }
}

/// How a column is used downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Enters nuisance models as a control.
    Control,
    /// Mechanical component of the treatment (pass/fail tallies); used for
    /// profiling and clustering but never as a control.
    Descriptive,
    Treatment,
    Moderator,
    Outcome,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Control => "control",
            Role::Descriptive => "descriptive",
            Role::Treatment => "treatment",
            Role::Moderator => "moderator",
            Role::Outcome => "outcome",
        }
    }
}

impl FromStr for Role {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Role::Control, Role::Descriptive, Role::Treatment, Role::Moderator, Role::Outcome]
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| DataError::BadFeatureSpec(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub layer: Layer,
    /// Entry-relative semester at which the value becomes knowable.
    pub observation_semester: i64,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub meta: FeatureMeta,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub column: String,
    pub observation_semester: i64,
    pub vot: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationNote {
    pub column: String,
    pub imputed_rows: usize,
}

/// Column a constructor promises to emit.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDecl {
    pub name: String,
    pub layer: Layer,
    pub role: Role,
    pub observation_semester: i64,
}

/// Read-only view of one student handed to feature constructors.
///
/// Every accessor records the latest semester it exposes, so the
/// observation semester of a column is at least as late as anything its
/// constructor actually read.
pub struct RecordView<'a> {
    record: &'a StudentRecord,
    ctx: &'a BuildContext<'a>,
    touched: Cell<i64>,
}

impl<'a> RecordView<'a> {
    fn new(record: &'a StudentRecord, ctx: &'a BuildContext<'a>) -> Self {
        Self {
            record,
            ctx,
            touched: Cell::new(0),
        }
    }

    fn touch(&self, semester: i64) {
        if semester > self.touched.get() {
            self.touched.set(semester);
        }
    }

    pub fn student_id(&self) -> StudentId {
        self.record.student_id
    }

    pub fn cohort_year(&self) -> i32 {
        self.record.cohort_year
    }

    pub fn age_at_entry(&self) -> f64 {
        self.record.age_at_entry
    }

    pub fn window(&self) -> ObservationWindow {
        self.ctx.window
    }

    /// Attempts in semesters `1..=through`.
    pub fn attempts_through(&self, through: i64) -> impl Iterator<Item = &'a EnrollmentAttempt> {
        self.touch(through);
        self.record
            .attempts
            .iter()
            .filter(move |a| (a.semester_index as i64) <= through)
    }

    pub fn attempts_in(&self, semester: i64) -> impl Iterator<Item = &'a EnrollmentAttempt> {
        self.touch(semester);
        self.record
            .attempts
            .iter()
            .filter(move |a| a.semester_index as i64 == semester)
    }

    /// The whole attempt history; observable only once the last attempt happened.
    pub fn all_attempts(&self) -> &'a [EnrollmentAttempt] {
        self.touch(self.record.attempts.last().map_or(0, |a| a.semester_index as i64));
        &self.record.attempts
    }

    pub fn last_active_semester(&self) -> u32 {
        self.touch(OUTCOME_HORIZON);
        self.record.last_active_semester
    }

    pub fn graduated(&self) -> bool {
        self.touch(OUTCOME_HORIZON);
        self.record.graduated
    }

    /// Macro series value at an entry-relative semester.
    pub fn macro_at(&self, relative: i64) -> Result<MacroPoint, DataError> {
        self.touch(relative);
        let series = self.ctx.macro_series.ok_or(DataError::UnknownColumn("macro series".into()))?;
        let abs = self.ctx.calendar.absolute(self.record.cohort_year, relative);
        Ok(series.get(abs)?)
    }

    /// Course friction estimated from all students' attempts inside the window.
    pub fn course_ifc(&self, code: CourseCode) -> Option<f64> {
        self.ctx.ifc.get(&code).copied()
    }
}

/// Source of one or more feature columns.
pub trait FeatureConstructor: Send + Sync {
    fn columns(&self, window: ObservationWindow, cohorts: &[i32]) -> Vec<ColumnDecl>;
    /// Writes one value per declared column; `NaN` marks a missing value.
    fn compute(&self, view: &RecordView<'_>, out: &mut [f64]) -> Result<(), DataError>;
}

/// Built-in feature families. Horizons are entry-relative semesters; macro
/// lags count semesters back from the cutoff (negative means later).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSpec {
    AgeAtEntry,
    CohortDummies,
    CohortTrend,
    TermLoad { semester: i64 },
    TermGradeMean { semester: i64 },
    GradeMean { through: i64 },
    MeanIfc { through: i64 },
    FailCount { through: i64 },
    WithdrawCount { through: i64 },
    LibresShare { through: i64 },
    AttemptCount { through: i64 },
    RepeatedAttempts { through: i64 },
    StrikeExposure { lag: i64 },
    Inflation { lag: i64 },
    StrikeInflation { lag: i64 },
}

impl FeatureSpec {
    /// The standard roster for a cutoff.
    pub fn defaults(window: ObservationWindow) -> Vec<FeatureSpec> {
        let v = window.vot_semesters as i64;
        vec![
            FeatureSpec::AgeAtEntry,
            FeatureSpec::CohortDummies,
            FeatureSpec::CohortTrend,
            FeatureSpec::TermLoad { semester: 1 },
            FeatureSpec::TermGradeMean { semester: 1 },
            FeatureSpec::GradeMean { through: v },
            FeatureSpec::MeanIfc { through: v },
            FeatureSpec::FailCount { through: v },
            FeatureSpec::WithdrawCount { through: v },
            FeatureSpec::LibresShare { through: v },
            FeatureSpec::AttemptCount { through: v },
            FeatureSpec::RepeatedAttempts { through: v },
            FeatureSpec::StrikeExposure { lag: 1 },
            FeatureSpec::StrikeExposure { lag: 2 },
            FeatureSpec::StrikeExposure { lag: 3 },
            FeatureSpec::Inflation { lag: 0 },
            FeatureSpec::StrikeInflation { lag: 2 },
        ]
    }

    /// Same roster without the macro layer, for data with no macro series.
    pub fn defaults_without_macro(window: ObservationWindow) -> Vec<FeatureSpec> {
        Self::defaults(window).into_iter().filter(|s| !s.needs_macro()).collect()
    }

    pub fn needs_macro(&self) -> bool {
        matches!(
            self,
            FeatureSpec::StrikeExposure { .. } | FeatureSpec::Inflation { .. } | FeatureSpec::StrikeInflation { .. }
        )
    }

    pub fn layer(&self) -> Layer {
        use FeatureSpec::*;
        match self {
            AgeAtEntry | CohortDummies | CohortTrend => Layer::N1,
            TermLoad { .. } | TermGradeMean { .. } => Layer::N2,
            GradeMean { .. } | MeanIfc { .. } | FailCount { .. } | WithdrawCount { .. } | LibresShare { .. }
            | AttemptCount { .. } | RepeatedAttempts { .. } => Layer::N3,
            StrikeExposure { .. } | Inflation { .. } | StrikeInflation { .. } => Layer::N4,
        }
    }

    fn role(&self) -> Role {
        use FeatureSpec::*;
        match self {
            FailCount { .. } | WithdrawCount { .. } | LibresShare { .. } | AttemptCount { .. }
            | RepeatedAttempts { .. } => Role::Descriptive,
            _ => Role::Control,
        }
    }

    fn lag_suffix(lag: i64) -> String {
        if lag >= 0 {
            format!("lag{lag}")
        } else {
            format!("lead{}", -lag)
        }
    }

    pub fn strike_column(lag: i64) -> String {
        format!("strike_{}", Self::lag_suffix(lag))
    }

    pub fn inflation_column(lag: i64) -> String {
        if lag == 0 {
            "inflation".to_string()
        } else {
            format!("inflation_{}", Self::lag_suffix(lag))
        }
    }

    pub fn interaction_column(lag: i64) -> String {
        format!("{}_x_inflation", Self::strike_column(lag))
    }

    fn base_name(&self) -> String {
        use FeatureSpec::*;
        match *self {
            AgeAtEntry => "age_at_entry".into(),
            CohortDummies => "cohort".into(),
            CohortTrend => "cohort_trend".into(),
            TermLoad { semester } => format!("load_s{semester}"),
            TermGradeMean { semester } => format!("grade_mean_s{semester}"),
            GradeMean { through } => format!("grade_mean_t{through}"),
            MeanIfc { through } => format!("mean_ifc_t{through}"),
            FailCount { through } => format!("fails_t{through}"),
            WithdrawCount { through } => format!("withdrawals_t{through}"),
            LibresShare { through } => format!("libres_share_t{through}"),
            AttemptCount { through } => format!("attempts_t{through}"),
            RepeatedAttempts { through } => format!("repeated_attempts_t{through}"),
            StrikeExposure { lag } => Self::strike_column(lag),
            Inflation { lag } => Self::inflation_column(lag),
            StrikeInflation { lag } => Self::interaction_column(lag),
        }
    }

    fn declared_observation(&self, window: ObservationWindow) -> i64 {
        use FeatureSpec::*;
        let v = window.vot_semesters as i64;
        match *self {
            AgeAtEntry | CohortDummies | CohortTrend => 0,
            TermLoad { semester } | TermGradeMean { semester } => semester,
            GradeMean { through }
            | MeanIfc { through }
            | FailCount { through }
            | WithdrawCount { through }
            | LibresShare { through }
            | AttemptCount { through }
            | RepeatedAttempts { through } => through,
            StrikeExposure { lag } | Inflation { lag } => v - lag,
            StrikeInflation { lag } => (v - lag).max(v),
        }
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use FeatureSpec::*;
        match *self {
            AgeAtEntry => f.write_str("age_at_entry"),
            CohortDummies => f.write_str("cohort_dummies"),
            CohortTrend => f.write_str("cohort_trend"),
            TermLoad { semester } => write!(f, "term_load:{semester}"),
            TermGradeMean { semester } => write!(f, "term_grade_mean:{semester}"),
            GradeMean { through } => write!(f, "grade_mean:{through}"),
            MeanIfc { through } => write!(f, "mean_ifc:{through}"),
            FailCount { through } => write!(f, "fail_count:{through}"),
            WithdrawCount { through } => write!(f, "withdraw_count:{through}"),
            LibresShare { through } => write!(f, "libres_share:{through}"),
            AttemptCount { through } => write!(f, "attempt_count:{through}"),
            RepeatedAttempts { through } => write!(f, "repeated_attempts:{through}"),
            StrikeExposure { lag } => write!(f, "strike:{lag}"),
            Inflation { lag } => write!(f, "inflation:{lag}"),
            StrikeInflation { lag } => write!(f, "strike_x_inflation:{lag}"),
        }
    }
}

impl FromStr for FeatureSpec {
    type Err = DataError;

    /// Parses `kind` or `kind:param`, the inverse of `Display`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::BadFeatureSpec(s.to_string());
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k.trim(), Some(p.trim().parse::<i64>().map_err(|_| bad())?)),
            None => (s.trim(), None),
        };
        let p = || param.ok_or_else(bad);
        use FeatureSpec::*;
        Ok(match kind {
            "age_at_entry" => AgeAtEntry,
            "cohort_dummies" => CohortDummies,
            "cohort_trend" => CohortTrend,
            "term_load" => TermLoad { semester: p()? },
            "term_grade_mean" => TermGradeMean { semester: p()? },
            "grade_mean" => GradeMean { through: p()? },
            "mean_ifc" => MeanIfc { through: p()? },
            "fail_count" => FailCount { through: p()? },
            "withdraw_count" => WithdrawCount { through: p()? },
            "libres_share" => LibresShare { through: p()? },
            "attempt_count" => AttemptCount { through: p()? },
            "repeated_attempts" => RepeatedAttempts { through: p()? },
            "strike" => StrikeExposure { lag: p()? },
            "inflation" => Inflation { lag: p()? },
            "strike_x_inflation" => StrikeInflation { lag: p()? },
            _ => return Err(bad()),
        })
    }
}

fn mean_or_nan(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl FeatureConstructor for FeatureSpec {
    fn columns(&self, window: ObservationWindow, cohorts: &[i32]) -> Vec<ColumnDecl> {
        let decl = |name: String| ColumnDecl {
            name,
            layer: self.layer(),
            role: self.role(),
            observation_semester: self.declared_observation(window),
        };
        match self {
            FeatureSpec::CohortDummies => cohorts.iter().skip(1).map(|y| decl(format!("cohort_{y}"))).collect(),
            _ => vec![decl(self.base_name())],
        }
    }

    fn compute(&self, view: &RecordView<'_>, out: &mut [f64]) -> Result<(), DataError> {
        use FeatureSpec::*;
        let v = view.window().vot_semesters as i64;
        match *self {
            AgeAtEntry => out[0] = view.age_at_entry(),
            CohortDummies => {
                let cohorts = &view.ctx.cohorts;
                for (slot, year) in out.iter_mut().zip(cohorts.iter().skip(1)) {
                    *slot = if *year == view.cohort_year() { 1.0 } else { 0.0 };
                }
            }
            CohortTrend => out[0] = (view.cohort_year() - view.ctx.cohorts[0]) as f64,
            TermLoad { semester } => out[0] = view.attempts_in(semester).count() as f64,
            TermGradeMean { semester } => out[0] = mean_or_nan(view.attempts_in(semester).filter_map(|a| a.grade)),
            GradeMean { through } => out[0] = mean_or_nan(view.attempts_through(through).filter_map(|a| a.grade)),
            MeanIfc { through } => {
                let codes: BTreeSet<CourseCode> = view.attempts_through(through).map(|a| a.course_code).collect();
                out[0] = mean_or_nan(codes.into_iter().filter_map(|c| view.course_ifc(c)));
            }
            FailCount { through } => {
                out[0] = view.attempts_through(through).filter(|a| a.outcome == Outcome::Fail).count() as f64
            }
            WithdrawCount { through } => {
                out[0] = view.attempts_through(through).filter(|a| a.outcome == Outcome::Withdraw).count() as f64
            }
            LibresShare { through } => {
                let (libre, n) = view
                    .attempts_through(through)
                    .fold((0usize, 0usize), |(l, n), a| (l + (a.outcome == Outcome::Libre) as usize, n + 1));
                out[0] = if n == 0 { 0.0 } else { libre as f64 / n as f64 };
            }
            AttemptCount { through } => out[0] = view.attempts_through(through).count() as f64,
            RepeatedAttempts { through } => {
                let mut per_course: BTreeMap<CourseCode, usize> = BTreeMap::new();
                for a in view.attempts_through(through) {
                    *per_course.entry(a.course_code).or_default() += 1;
                }
                out[0] = per_course.values().map(|&k| k.saturating_sub(1)).sum::<usize>() as f64;
            }
            StrikeExposure { lag } => out[0] = view.macro_at(v - lag)?.strike_intensity,
            Inflation { lag } => out[0] = view.macro_at(v - lag)?.inflation,
            StrikeInflation { lag } => {
                // lagged strike, inflation at the cutoff
                out[0] = view.macro_at(v - lag)?.strike_intensity * view.macro_at(v)?.inflation;
            }
        }
        Ok(())
    }
}

/// Everything `build_features` needs beyond the records.
#[derive(Clone)]
pub struct FeatureConfig {
    pub window: ObservationWindow,
    pub grace_semesters: u32,
    /// Last absolute semester covered by the data; defaults to the latest activity.
    pub data_end: Option<i64>,
    pub calendar: AcademicCalendar,
    pub specs: Vec<FeatureSpec>,
    /// Divide strike intensity by the series maximum.
    pub normalize_strikes: bool,
    pub friction_weights: FrictionWeights,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let window = ObservationWindow::default();
        Self {
            window,
            grace_semesters: 4,
            data_end: None,
            calendar: AcademicCalendar::default(),
            specs: FeatureSpec::defaults(window),
            normalize_strikes: true,
            friction_weights: FrictionWeights::default(),
        }
    }
}

impl FeatureConfig {
    pub fn with_window(window: ObservationWindow) -> Self {
        Self {
            window,
            specs: FeatureSpec::defaults(window),
            ..Self::default()
        }
    }
}

pub struct BuildContext<'a> {
    window: ObservationWindow,
    calendar: AcademicCalendar,
    macro_series: Option<&'a MacroSeries>,
    cohorts: Vec<i32>,
    ifc: BTreeMap<CourseCode, f64>,
}

/// Leakage-tagged design matrix: one row per student, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub student_ids: Vec<StudentId>,
    pub cohort_years: Vec<i32>,
    pub columns: Vec<FeatureColumn>,
    pub dropout: Vec<DropoutLabel>,
    pub vot: u32,
    pub imputations: Vec<ImputationNote>,
}

pub const LAG_COLUMN: &str = "lag";
pub const VELOCITY_COLUMN: &str = "velocity";
pub const DROPOUT_COLUMN: &str = "dropout";

/// Builds the feature matrix and rejects it if any predictor is observed after the cutoff.
pub fn build_features(
    records: &[StudentRecord],
    dag: &CurriculumDag,
    macro_series: Option<&MacroSeries>,
    config: &FeatureConfig,
) -> Result<FeatureMatrix, DataError> {
    let constructors: Vec<&dyn FeatureConstructor> =
        config.specs.iter().map(|s| s as &dyn FeatureConstructor).collect();
    build_features_with(records, dag, macro_series, config, &constructors)
}

impl FeatureMatrix {
    /// Like [`build_features`] with arbitrary constructors.
    pub fn build(
        records: &[StudentRecord],
        dag: &CurriculumDag,
        macro_series: Option<&MacroSeries>,
        config: &FeatureConfig,
        constructors: &[&dyn FeatureConstructor],
    ) -> Result<FeatureMatrix, DataError> {
        build_features_with(records, dag, macro_series, config, constructors)
    }
}

fn build_features_with(
    records: &[StudentRecord],
    dag: &CurriculumDag,
    macro_series: Option<&MacroSeries>,
    config: &FeatureConfig,
    constructors: &[&dyn FeatureConstructor],
) -> Result<FeatureMatrix, DataError> {
    if records.is_empty() {
        return Err(DataError::EmptyCohort);
    }
    let window = config.window;
    let mut order: Vec<&StudentRecord> = records.iter().collect();
    order.sort_by_key(|r| r.student_id);

    let cohorts: Vec<i32> = order.iter().map(|r| r.cohort_year).collect::<BTreeSet<_>>().into_iter().collect();
    let in_window = order
        .iter()
        .flat_map(|r| r.attempts.iter())
        .filter(|a| a.semester_index <= window.vot_semesters);
    let ifc = OutcomeCounts::tally(in_window)
        .into_iter()
        .filter_map(|(c, counts)| config.friction_weights.ifc(&counts).map(|v| (c, v)))
        .collect();
    let normalized;
    let macro_series = match macro_series {
        Some(s) if config.normalize_strikes => {
            normalized = s.normalized();
            Some(&normalized)
        }
        other => other,
    };
    let ctx = BuildContext {
        window,
        calendar: config.calendar,
        macro_series,
        cohorts: cohorts.clone(),
        ifc,
    };

    let n = order.len();
    let mut columns = Vec::new();
    for ctor in constructors {
        let decls = ctor.columns(window, &cohorts);
        let mut values = vec![vec![0.0; n]; decls.len()];
        let mut buf = vec![0.0; decls.len()];
        let mut touched = 0i64;
        for (i, record) in order.iter().enumerate() {
            let view = RecordView::new(record, &ctx);
            buf.iter_mut().for_each(|b| *b = f64::NAN);
            ctor.compute(&view, &mut buf)?;
            touched = touched.max(view.touched.get());
            for (col, v) in values.iter_mut().zip(&buf) {
                col[i] = *v;
            }
        }
        for (decl, vals) in decls.into_iter().zip(values) {
            columns.push(FeatureColumn {
                meta: FeatureMeta {
                    name: decl.name,
                    layer: decl.layer,
                    observation_semester: decl.observation_semester.max(touched),
                    role: decl.role,
                },
                values: vals,
            });
        }
    }

    let vot = window.vot_semesters as i64;
    let lag: Vec<f64> = order.iter().map(|r| derive_lag(r, dag, window) as f64).collect();
    let velocity = order
        .iter()
        .map(|r| derive_velocity(r, dag, window))
        .collect::<Result<Vec<_>, _>>()?;
    let data_end = config.data_end.unwrap_or_else(|| {
        order
            .iter()
            .map(|r| config.calendar.absolute(r.cohort_year, r.last_active_semester as i64))
            .max()
            .unwrap_or(0)
    });
    let dropout: Vec<DropoutLabel> = order
        .iter()
        .map(|r| {
            let end = config.calendar.relative(r.cohort_year, data_end);
            label_dropout(r, config.grace_semesters, end)
        })
        .collect();
    columns.push(FeatureColumn {
        meta: FeatureMeta { name: LAG_COLUMN.into(), layer: Layer::N3, observation_semester: vot, role: Role::Treatment },
        values: lag,
    });
    columns.push(FeatureColumn {
        meta: FeatureMeta {
            name: VELOCITY_COLUMN.into(),
            layer: Layer::N3,
            observation_semester: vot,
            role: Role::Moderator,
        },
        values: velocity,
    });
    columns.push(FeatureColumn {
        meta: FeatureMeta {
            name: DROPOUT_COLUMN.into(),
            layer: Layer::N4,
            observation_semester: OUTCOME_HORIZON,
            role: Role::Outcome,
        },
        values: dropout.iter().map(|d| d.value().unwrap_or(f64::NAN)).collect(),
    });

    let cohort_years: Vec<i32> = order.iter().map(|r| r.cohort_year).collect();
    let imputations = impute_missing(&mut columns, &cohort_years);

    let matrix = FeatureMatrix {
        student_ids: order.iter().map(|r| r.student_id).collect(),
        cohort_years,
        columns,
        dropout,
        vot: window.vot_semesters,
        imputations,
    };
    let violations = validate_leakage(&matrix, window);
    if violations.is_empty() {
        Ok(matrix)
    } else {
        Err(DataError::LeakageViolation(violations))
    }
}

/// Fills `NaN` cells with the mean of the same column within the student's
/// cohort (overall mean as fallback) and appends a `<name>_missing` indicator.
fn impute_missing(columns: &mut Vec<FeatureColumn>, cohorts: &[i32]) -> Vec<ImputationNote> {
    let mut notes = Vec::new();
    let mut indicators = Vec::new();
    for col in columns.iter_mut().filter(|c| c.meta.role != Role::Outcome) {
        let missing: Vec<bool> = col.values.iter().map(|v| v.is_nan()).collect();
        let count = missing.iter().filter(|&&m| m).count();
        if count == 0 {
            continue;
        }
        let mut by_cohort: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
        let mut total = (0.0, 0usize);
        for (v, c) in col.values.iter().zip(cohorts) {
            if !v.is_nan() {
                let e = by_cohort.entry(*c).or_default();
                e.0 += v;
                e.1 += 1;
                total.0 += v;
                total.1 += 1;
            }
        }
        let overall = if total.1 > 0 { total.0 / total.1 as f64 } else { 0.0 };
        for (v, c) in col.values.iter_mut().zip(cohorts) {
            if v.is_nan() {
                *v = match by_cohort.get(c) {
                    Some(&(s, k)) if k > 0 => s / k as f64,
                    _ => overall,
                };
            }
        }
        notes.push(ImputationNote { column: col.meta.name.clone(), imputed_rows: count });
        indicators.push(FeatureColumn {
            meta: FeatureMeta { name: format!("{}_missing", col.meta.name), ..col.meta.clone() },
            values: missing.into_iter().map(|m| if m { 1.0 } else { 0.0 }).collect(),
        });
    }
    // indicators go before the treatment/moderator/outcome block
    let tail_start = columns
        .iter()
        .position(|c| matches!(c.meta.role, Role::Treatment | Role::Moderator | Role::Outcome))
        .unwrap_or(columns.len());
    let tail = columns.split_off(tail_start);
    columns.extend(indicators);
    columns.extend(tail);
    notes
}

/// Every non-outcome column observed after the cutoff.
pub fn validate_leakage(matrix: &FeatureMatrix, window: ObservationWindow) -> Vec<LeakageViolation> {
    matrix
        .columns
        .iter()
        .filter(|c| c.meta.role != Role::Outcome)
        .filter(|c| c.meta.observation_semester > window.vot_semesters as i64)
        .map(|c| LeakageViolation {
            column: c.meta.name.clone(),
            observation_semester: c.meta.observation_semester,
            vot: window.vot_semesters,
        })
        .collect()
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.student_ids.len()
    }

    pub fn column(&self, name: &str) -> Option<&FeatureColumn> {
        self.columns.iter().find(|c| c.meta.name == name)
    }

    pub fn values(&self, name: &str) -> Result<&[f64], DataError> {
        self.column(name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn lag(&self) -> &[f64] {
        self.values(LAG_COLUMN).expect("lag column is always present")
    }

    pub fn velocity(&self) -> &[f64] {
        self.values(VELOCITY_COLUMN).expect("velocity column is always present")
    }

    pub fn names_with_role(&self, role: Role) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.meta.role == role)
            .map(|c| c.meta.name.as_str())
            .collect()
    }

    /// Rows with an observed (non-censored) outcome.
    pub fn estimation_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.dropout[i] != DropoutLabel::Censored).collect()
    }

    pub fn censored_count(&self) -> usize {
        self.dropout.iter().filter(|d| **d == DropoutLabel::Censored).count()
    }

    pub fn outcome(&self, rows: &[usize]) -> DVector<f64> {
        DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.dropout[i].value().unwrap_or(f64::NAN)))
    }

    pub fn vector(&self, name: &str, rows: &[usize]) -> Result<DVector<f64>, DataError> {
        let v = self.values(name)?;
        Ok(DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i])))
    }

    /// Selected columns restricted to `rows`, as an `rows × names` matrix.
    pub fn design(&self, names: &[&str], rows: &[usize]) -> Result<DMatrix<f64>, DataError> {
        let cols = names.iter().map(|n| self.values(n)).collect::<Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_fn(rows.len(), cols.len(), |r, c| cols[c][rows[r]]))
    }

    /// Row subset, keeping metadata.
    pub fn subset(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            student_ids: rows.iter().map(|&i| self.student_ids[i]).collect(),
            cohort_years: rows.iter().map(|&i| self.cohort_years[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| FeatureColumn { meta: c.meta.clone(), values: rows.iter().map(|&i| c.values[i]).collect() })
                .collect(),
            dropout: rows.iter().map(|&i| self.dropout[i]).collect(),
            vot: self.vot,
            imputations: self.imputations.clone(),
        }
    }

    /// Appends a column (used for macro exposures computed after the fact).
    pub fn push_column(&mut self, column: FeatureColumn) {
        let at = self
            .columns
            .iter()
            .position(|c| matches!(c.meta.role, Role::Treatment | Role::Moderator | Role::Outcome))
            .unwrap_or(self.columns.len());
        self.columns.insert(at, column);
    }

    /// `student_id` followed by every column; censored outcomes are empty cells.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["student_id".to_string()];
        header.extend(self.columns.iter().map(|c| c.meta.name.clone()));
        w.write_record(&header).expect("in-memory write");
        for i in 0..self.n_rows() {
            let mut row = vec![self.student_ids[i].to_string()];
            row.extend(self.columns.iter().map(|c| {
                let v = c.values[i];
                if v.is_nan() {
                    String::new()
                } else {
                    format!("{v}")
                }
            }));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Column metadata: `name,layer,observation_semester,role`.
    pub fn meta_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "layer", "observation_semester", "role"]).expect("in-memory write");
        for c in &self.columns {
            let obs = if c.meta.observation_semester == OUTCOME_HORIZON {
                "outcome".to_string()
            } else {
                c.meta.observation_semester.to_string()
            };
            w.write_record([c.meta.name.clone(), c.meta.layer.to_string(), obs, c.meta.role.as_str().to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}
