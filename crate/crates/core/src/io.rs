//! CSV readers and writers for curricula, student records and macro series.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::curriculum::{Course, CourseCode, CurriculumDag, CurriculumError};
use crate::datalayer::{DataError, EnrollmentAttempt, Outcome, StudentId, StudentRecord};
use crate::macroshock::{MacroError, MacroPoint, MacroSeries};
use crate::synth::SynthDataset;

pub const CURRICULUM_FILE: &str = "curriculum.csv";
pub const PREREQS_FILE: &str = "prereqs.csv";
pub const STUDENTS_FILE: &str = "students.csv";
pub const ATTEMPTS_FILE: &str = "attempts.csv";
pub const MACRO_FILE: &str = "macro.csv";
pub const TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{file}, line {line}: {message}")]
    Parse { file: String, line: u64, message: String },
    #[error("NoAttempts: {0} has no data rows")]
    NoAttempts(String),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Macro(#[from] MacroError),
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    fs::write(path, contents).map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

fn file_label(name: &str) -> String {
    Path::new(name).file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| name.to_string())
}

/// Deserializes every row, reporting the 1-based file line of the first bad one.
fn parse_rows<T: DeserializeOwned>(text: &str, file: &str) -> Result<Vec<(u64, T)>, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    if reader.headers().map(|h| h.is_empty()).unwrap_or(true) {
        return Err(IoError::Parse { file: file_label(file), line: 1, message: "missing header row".into() });
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<T>() {
        match row {
            Ok(v) => out.push((0, v)),
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                let message = match e.kind() {
                    csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                    _ => e.to_string(),
                };
                return Err(IoError::Parse { file: file_label(file), line, message });
            }
        }
    }
    // Record positions are not exposed through `deserialize`; recompute from the raw reader.
    let mut raw = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    for ((line, _), rec) in out.iter_mut().zip(raw.records()) {
        *line = rec.ok().and_then(|r| r.position().map(|p| p.line())).unwrap_or(0);
    }
    Ok(out)
}

fn parse_err(file: &str, line: u64, message: impl Into<String>) -> IoError {
    IoError::Parse { file: file_label(file), line, message: message.into() }
}

#[derive(Deserialize)]
struct CourseRow {
    code: CourseCode,
    name: String,
    semester: u32,
}

#[derive(Deserialize)]
struct PrereqRow {
    prereq_code: CourseCode,
    course_code: CourseCode,
}

pub fn parse_curriculum(courses_csv: &str, prereqs_csv: &str) -> Result<CurriculumDag, IoError> {
    let courses: Vec<Course> = parse_rows::<CourseRow>(courses_csv, CURRICULUM_FILE)?
        .into_iter()
        .map(|(_, r)| Course::new(r.code, r.name, r.semester))
        .collect();
    let edges: Vec<(CourseCode, CourseCode)> = parse_rows::<PrereqRow>(prereqs_csv, PREREQS_FILE)?
        .into_iter()
        .map(|(_, r)| (r.prereq_code, r.course_code))
        .collect();
    Ok(CurriculumDag::build(courses, &edges, Vec::new())?)
}

pub fn load_curriculum(dir: &Path) -> Result<CurriculumDag, IoError> {
    parse_curriculum(&read(&dir.join(CURRICULUM_FILE))?, &read(&dir.join(PREREQS_FILE))?)
}

#[derive(Deserialize)]
struct StudentRow {
    student_id: StudentId,
    cohort_year: i32,
    age_at_entry: f64,
    graduated: String,
    last_active_semester: u32,
}

#[derive(Deserialize)]
struct AttemptRow {
    student_id: StudentId,
    course_code: CourseCode,
    semester: u32,
    outcome: String,
    grade: Option<f64>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

pub fn parse_attempts(text: &str) -> Result<Vec<EnrollmentAttempt>, IoError> {
    let rows = parse_rows::<AttemptRow>(text, ATTEMPTS_FILE)?;
    if rows.is_empty() {
        return Err(IoError::NoAttempts(ATTEMPTS_FILE.into()));
    }
    rows.into_iter()
        .map(|(line, r)| {
            let outcome: Outcome = r.outcome.parse().map_err(|e: DataError| parse_err(ATTEMPTS_FILE, line, e.to_string()))?;
            let a = EnrollmentAttempt::new(r.student_id, r.course_code, r.semester, outcome, r.grade);
            a.validate().map_err(|e| parse_err(ATTEMPTS_FILE, line, e.to_string()))?;
            Ok(a)
        })
        .collect()
}

/// Joins students with their attempts. Attempts for unknown students are rejected.
pub fn parse_records(students_csv: &str, attempts_csv: &str) -> Result<Vec<StudentRecord>, IoError> {
    let attempts = parse_attempts(attempts_csv)?;
    let mut by_student: BTreeMap<StudentId, Vec<EnrollmentAttempt>> = BTreeMap::new();
    for a in attempts {
        by_student.entry(a.student_id).or_default().push(a);
    }
    let mut records = Vec::new();
    for (line, r) in parse_rows::<StudentRow>(students_csv, STUDENTS_FILE)? {
        let graduated = parse_bool(&r.graduated)
            .ok_or_else(|| parse_err(STUDENTS_FILE, line, format!("graduated must be true or false, got {:?}", r.graduated)))?;
        let own = by_student.remove(&r.student_id).unwrap_or_default();
        let rec = StudentRecord::new(r.student_id, r.cohort_year, r.age_at_entry, own, r.last_active_semester, graduated)
            .map_err(|e| parse_err(STUDENTS_FILE, line, e.to_string()))?;
        records.push(rec);
    }
    if let Some((&id, _)) = by_student.iter().next() {
        return Err(DataError::OrphanAttempt(id).into());
    }
    if records.is_empty() {
        return Err(DataError::EmptyCohort.into());
    }
    Ok(records)
}

pub fn load_records(dir: &Path) -> Result<Vec<StudentRecord>, IoError> {
    parse_records(&read(&dir.join(STUDENTS_FILE))?, &read(&dir.join(ATTEMPTS_FILE))?)
}

#[derive(Deserialize)]
struct MacroRow {
    semester_abs: i64,
    strike_intensity: f64,
    inflation: f64,
}

pub fn parse_macro(text: &str) -> Result<MacroSeries, IoError> {
    let rows = parse_rows::<MacroRow>(text, MACRO_FILE)?;
    let entries = rows
        .into_iter()
        .map(|(_, r)| (r.semester_abs, MacroPoint { strike_intensity: r.strike_intensity, inflation: r.inflation }))
        .collect();
    Ok(MacroSeries::new(entries)?)
}

pub fn load_macro(dir: &Path) -> Result<MacroSeries, IoError> {
    parse_macro(&read(&dir.join(MACRO_FILE))?)
}

/// Everything a dataset directory holds. The macro series is optional.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dag: CurriculumDag,
    pub records: Vec<StudentRecord>,
    pub macro_series: Option<MacroSeries>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let dag = load_curriculum(dir)?;
    let records = load_records(dir)?;
    let macro_path = dir.join(MACRO_FILE);
    let macro_series = if macro_path.exists() { Some(parse_macro(&read(&macro_path)?)?) } else { None };
    Ok(Dataset { dag, records, macro_series })
}

pub fn curriculum_csv(dag: &CurriculumDag) -> (String, String) {
    let mut c = csv::Writer::from_writer(Vec::new());
    c.write_record(["code", "name", "semester"]).expect("in-memory write");
    for course in dag.courses() {
        let sem = dag.plan_semester(course.code).unwrap_or(course.nominal_semester);
        c.write_record([course.code.to_string(), course.name.clone(), sem.to_string()]).expect("in-memory write");
    }
    let mut p = csv::Writer::from_writer(Vec::new());
    p.write_record(["prereq_code", "course_code"]).expect("in-memory write");
    for (pre, course) in dag.edges() {
        p.write_record([pre.to_string(), course.to_string()]).expect("in-memory write");
    }
    let done = |w: csv::Writer<Vec<u8>>| String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
    (done(c), done(p))
}

pub fn students_csv(records: &[StudentRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["student_id", "cohort_year", "age_at_entry", "graduated", "last_active_semester"])
        .expect("in-memory write");
    for r in records {
        w.write_record([
            r.student_id.to_string(),
            r.cohort_year.to_string(),
            r.age_at_entry.to_string(),
            r.graduated.to_string(),
            r.last_active_semester.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn attempts_csv(records: &[StudentRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["student_id", "course_code", "semester", "outcome", "grade"]).expect("in-memory write");
    for a in records.iter().flat_map(|r| &r.attempts) {
        w.write_record([
            a.student_id.to_string(),
            a.course_code.to_string(),
            a.semester_index.to_string(),
            a.outcome.as_str().to_string(),
            a.grade.map(|g| g.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Numeric table with a header row, e.g. a feature matrix to cluster.
pub fn parse_numeric_csv(text: &str, file: &str) -> Result<(Vec<String>, DMatrix<f64>), IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(file, 1, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(parse_err(file, 1, "missing header row"));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(file, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| parse_err(file, line, format!("not a number: {field:?}")))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((names.clone(), DMatrix::from_row_slice(rows, names.len(), &values)))
}

pub fn load_numeric_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>), IoError> {
    parse_numeric_csv(&read(path)?, &path.to_string_lossy())
}

/// Writes the curriculum, records, macro series and ground truth into `dir`.
pub fn write_synth(dir: &Path, data: &SynthDataset) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::Write { path: dir.to_path_buf(), source })?;
    let (courses, prereqs) = curriculum_csv(&data.dag);
    write_file(&dir.join(CURRICULUM_FILE), &courses)?;
    write_file(&dir.join(PREREQS_FILE), &prereqs)?;
    write_file(&dir.join(STUDENTS_FILE), &students_csv(&data.records))?;
    write_file(&dir.join(ATTEMPTS_FILE), &attempts_csv(&data.records))?;
    write_file(&dir.join(MACRO_FILE), &data.macro_series.to_csv())?;
    write_file(&dir.join(TRUTH_FILE), &data.truth.to_json())?;
    Ok(())
}
