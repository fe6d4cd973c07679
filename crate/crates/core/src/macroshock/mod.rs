//! Lagged strike exposure, inflation moderation and placebo lags.

mod series;

pub use series::{align_exposure, lagged_exposure_for_cohorts, LaggedExposure, MacroPoint, MacroSeries};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datalayer::{AcademicCalendar, FeatureMatrix, FeatureSpec, Layer, ObservationWindow, Role};
use crate::dml::{dml_ate, kfold_split, DmlError, DmlEstimate, NuisanceSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacroError {
    #[error("SeriesGap: macro series has no value for absolute semester {0}")]
    SeriesGap(i64),
    #[error("macro series is empty")]
    EmptySeries,
    #[error("macro series lists semester {0} twice")]
    DuplicateSemester(i64),
    #[error("macro series has a negative or non-finite value at semester {0}")]
    BadValue(i64),
    #[error("feature matrix lacks column {0:?}")]
    MissingColumn(String),
    #[error(transparent)]
    Dml(#[from] DmlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroConfig {
    pub window: ObservationWindow,
    pub calendar: AcademicCalendar,
    pub k_folds: usize,
    pub seed: u64,
    pub learner: NuisanceSpec,
    /// Must match how the matrix's strike columns were built.
    pub normalize_strikes: bool,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            window: ObservationWindow::default(),
            calendar: AcademicCalendar::default(),
            k_folds: 5,
            seed: 42,
            learner: NuisanceSpec::default(),
            normalize_strikes: true,
        }
    }
}

/// Controls shared by every macro estimate: non-macro control columns
/// without cohort dummies, since exposure varies only by cohort.
fn base_controls(matrix: &FeatureMatrix) -> Vec<String> {
    matrix
        .columns
        .iter()
        .filter(|c| c.meta.role == Role::Control && c.meta.layer != Layer::N4)
        .filter(|c| !is_cohort_dummy(&c.meta.name))
        .map(|c| c.meta.name.clone())
        .collect()
}

fn is_cohort_dummy(name: &str) -> bool {
    name.strip_prefix("cohort_").is_some_and(|rest| rest.parse::<i32>().is_ok())
}

fn present_strike_lags(matrix: &FeatureMatrix) -> Vec<(i64, String)> {
    (-6..=12)
        .map(|l| (l, FeatureSpec::strike_column(l)))
        .filter(|(_, name)| matrix.column(name).is_some())
        .collect()
}

fn estimate_on(
    matrix: &FeatureMatrix,
    treatment: &DVector<f64>,
    controls: &[String],
    rows: &[usize],
    cfg: &MacroConfig,
) -> Result<DmlEstimate, MacroError> {
    let names: Vec<&str> = controls.iter().map(String::as_str).collect();
    let x = matrix.design(&names, rows).map_err(|e| MacroError::MissingColumn(e.to_string()))?;
    let y = matrix.outcome(rows);
    let plan = kfold_split(rows.len(), cfg.k_folds, cfg.seed)?;
    Ok(dml_ate(&x, &y, treatment, &plan, &cfg.learner)?)
}

fn column_vector(matrix: &FeatureMatrix, name: &str, rows: &[usize]) -> Result<DVector<f64>, MacroError> {
    matrix.vector(name, rows).map_err(|_| MacroError::MissingColumn(name.to_string()))
}

/// DML effect of strike exposure at `lag` on dropout, controlling for the
/// other lags and inflation.
pub fn estimate_strike_effect(matrix: &FeatureMatrix, lag: i64, cfg: &MacroConfig) -> Result<DmlEstimate, MacroError> {
    let rows = matrix.estimation_rows();
    let name = FeatureSpec::strike_column(lag);
    let t = column_vector(matrix, &name, &rows)?;
    let mut controls = base_controls(matrix);
    controls.extend(present_strike_lags(matrix).into_iter().filter(|(l, _)| *l != lag).map(|(_, n)| n));
    let inflation = FeatureSpec::inflation_column(0);
    if matrix.column(&inflation).is_some() {
        controls.push(inflation);
    }
    Ok(estimate_on(matrix, &t, &controls, &rows, cfg)?.with_estimand(name))
}

/// DML effect of the lag-2 strike times inflation product, with both
/// factors and the other lags as controls.
pub fn estimate_interaction(matrix: &FeatureMatrix, cfg: &MacroConfig) -> Result<DmlEstimate, MacroError> {
    let rows = matrix.estimation_rows();
    let strike = FeatureSpec::strike_column(2);
    let inflation = FeatureSpec::inflation_column(0);
    let name = FeatureSpec::interaction_column(2);
    let t = column_vector(matrix, &name, &rows)?;
    let infl = column_vector(matrix, &inflation, &rows)?;
    let m = infl.mean();
    if infl.iter().all(|v| (v - m).abs() < 1e-12) {
        return Err(DmlError::DegenerateTreatment { ratio: 0.0 }.into());
    }
    column_vector(matrix, &strike, &rows)?;
    let mut controls = base_controls(matrix);
    controls.extend(present_strike_lags(matrix).into_iter().map(|(_, n)| n));
    controls.push(inflation);
    Ok(estimate_on(matrix, &t, &controls, &rows, cfg)?.with_estimand(name))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboResult {
    pub pseudo_lag: i64,
    pub estimate: DmlEstimate,
    /// True when the pseudo exposure shows no effect (p > 0.05).
    pub pass: bool,
}

/// Exposure at `pseudo_lag` (negative means after the cutoff), computed from
/// the series rather than stored in the matrix, with the same controls as
/// the main lag models.
pub fn placebo_lag(
    matrix: &FeatureMatrix,
    series: &MacroSeries,
    pseudo_lag: i64,
    cfg: &MacroConfig,
) -> Result<PlaceboResult, MacroError> {
    let rows = matrix.estimation_rows();
    let series = if cfg.normalize_strikes { series.normalized() } else { series.clone() };
    let cohorts: Vec<i32> = rows.iter().map(|&i| matrix.cohort_years[i]).collect();
    let exposure = lagged_exposure_for_cohorts(&series, &cohorts, pseudo_lag, cfg.window, cfg.calendar)?;
    let t = DVector::from_vec(exposure.strike);
    let mut controls = base_controls(matrix);
    controls.extend(present_strike_lags(matrix).into_iter().filter(|(l, _)| *l != pseudo_lag).map(|(_, n)| n));
    let inflation = FeatureSpec::inflation_column(0);
    if matrix.column(&inflation).is_some() {
        controls.push(inflation);
    }
    let estimate = estimate_on(matrix, &t, &controls, &rows, cfg)?
        .with_estimand(format!("placebo_{}", FeatureSpec::strike_column(pseudo_lag)));
    let pass = estimate.p_value > 0.05;
    Ok(PlaceboResult { pseudo_lag, estimate, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagEstimate {
    pub lag: i64,
    pub estimate: DmlEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroReport {
    pub lags: Vec<LagEstimate>,
    pub interaction: Option<DmlEstimate>,
    pub placebo: Option<PlaceboResult>,
    pub censored_excluded: usize,
}

impl MacroReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Every lag present in the matrix, the interaction when its columns exist,
/// and optionally a placebo lag.
pub fn run_macro(
    matrix: &FeatureMatrix,
    series: &MacroSeries,
    cfg: &MacroConfig,
    placebo: Option<i64>,
) -> Result<MacroReport, MacroError> {
    let lags = present_strike_lags(matrix)
        .into_iter()
        .filter(|(l, _)| *l > 0)
        .map(|(lag, _)| Ok(LagEstimate { lag, estimate: estimate_strike_effect(matrix, lag, cfg)? }))
        .collect::<Result<Vec<_>, MacroError>>()?;
    let interaction = if matrix.column(&FeatureSpec::interaction_column(2)).is_some() {
        Some(estimate_interaction(matrix, cfg)?)
    } else {
        None
    };
    let placebo = placebo.map(|l| placebo_lag(matrix, series, l, cfg)).transpose()?;
    Ok(MacroReport { lags, interaction, placebo, censored_excluded: matrix.censored_count() })
}
