use serde::{Deserialize, Serialize};

use super::MacroError;
use crate::datalayer::{AcademicCalendar, ObservationWindow, StudentRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroPoint {
    pub strike_intensity: f64,
    /// Per-semester fraction, 0.30 = 30%.
    pub inflation: f64,
}

/// Macro conditions indexed by contiguous absolute semesters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSeries {
    start: i64,
    points: Vec<MacroPoint>,
}

impl MacroSeries {
    /// Accepts `(absolute semester, point)` pairs in any order; they must
    /// cover a contiguous range.
    pub fn new(mut entries: Vec<(i64, MacroPoint)>) -> Result<Self, MacroError> {
        if entries.is_empty() {
            return Err(MacroError::EmptySeries);
        }
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[1].0 == w[0].0 {
                return Err(MacroError::DuplicateSemester(w[0].0));
            }
            if w[1].0 != w[0].0 + 1 {
                return Err(MacroError::SeriesGap(w[0].0 + 1));
            }
        }
        for (s, p) in &entries {
            if p.strike_intensity.is_nan() || p.strike_intensity < 0.0 || !p.inflation.is_finite() {
                return Err(MacroError::BadValue(*s));
            }
        }
        Ok(Self { start: entries[0].0, points: entries.into_iter().map(|e| e.1).collect() })
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.start + self.points.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, MacroPoint)> + '_ {
        self.points.iter().enumerate().map(move |(i, p)| (self.start + i as i64, *p))
    }

    pub fn get(&self, semester_abs: i64) -> Result<MacroPoint, MacroError> {
        if semester_abs < self.start || semester_abs > self.end() {
            return Err(MacroError::SeriesGap(semester_abs));
        }
        Ok(self.points[(semester_abs - self.start) as usize])
    }

    /// Strike intensity divided by its maximum; unchanged when all zero.
    pub fn normalized(&self) -> Self {
        let max = self.points.iter().map(|p| p.strike_intensity).fold(0.0, f64::max);
        let mut out = self.clone();
        if max > 0.0 {
            for p in &mut out.points {
                p.strike_intensity /= max;
            }
        }
        out
    }

    /// Same values moved `by` semesters later.
    pub fn shifted(&self, by: i64) -> Self {
        Self { start: self.start + by, points: self.points.clone() }
    }

    /// `semester_abs,strike_intensity,inflation`
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["semester_abs", "strike_intensity", "inflation"]).expect("in-memory write");
        for (s, p) in self.iter() {
            w.write_record([s.to_string(), format!("{}", p.strike_intensity), format!("{}", p.inflation)])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Per-student macro conditions `lag` semesters before the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedExposure {
    pub lag: i64,
    pub strike: Vec<f64>,
    pub inflation: Vec<f64>,
    pub interaction: Vec<f64>,
}

fn exposure_semester(calendar: AcademicCalendar, window: ObservationWindow, cohort_year: i32, lag: i64) -> i64 {
    calendar.absolute(cohort_year, window.vot_semesters as i64 - lag)
}

/// Macro values at each cohort's cutoff semester minus `lag`.
pub fn lagged_exposure_for_cohorts(
    series: &MacroSeries,
    cohort_years: &[i32],
    lag: i64,
    window: ObservationWindow,
    calendar: AcademicCalendar,
) -> Result<LaggedExposure, MacroError> {
    let mut out = LaggedExposure {
        lag,
        strike: Vec::with_capacity(cohort_years.len()),
        inflation: Vec::with_capacity(cohort_years.len()),
        interaction: Vec::with_capacity(cohort_years.len()),
    };
    for &c in cohort_years {
        let p = series.get(exposure_semester(calendar, window, c, lag))?;
        out.strike.push(p.strike_intensity);
        out.inflation.push(p.inflation);
        out.interaction.push(p.strike_intensity * p.inflation);
    }
    Ok(out)
}

/// Strike exposure per student, read at the student's cutoff semester minus `lag`.
pub fn align_exposure(
    series: &MacroSeries,
    records: &[StudentRecord],
    lag: i64,
    window: ObservationWindow,
    calendar: AcademicCalendar,
) -> Result<Vec<f64>, MacroError> {
    let cohorts: Vec<i32> = records.iter().map(|r| r.cohort_year).collect();
    Ok(lagged_exposure_for_cohorts(series, &cohorts, lag, window, calendar)?.strike)
}
