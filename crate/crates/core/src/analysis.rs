//! Effect of academic lag on dropout: average effect, velocity-moderated
//! curve and the unadjusted comparison.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use std::collections::HashMap;

use crate::archetype::ProfileInput;
use crate::curriculum::CurriculumDag;
use crate::datalayer::{DataError, FeatureMatrix, Layer, ObservationWindow, Role, StudentRecord};
use crate::dml::{
    dml_ate, estimate_cate_partialled, kfold_split, naive_ols, quantile_knots, BSplineBasis, CateCurve, DmlError,
    DmlEstimate, NuisanceSpec, DEFAULT_KNOT_QUANTILES,
};
use crate::stats::quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LagConfig {
    pub k_folds: usize,
    pub seed: u64,
    pub learner: NuisanceSpec,
    pub spline_degree: usize,
    pub knot_quantiles: Vec<f64>,
    pub grid_points: usize,
    /// Quantile range of treated velocities covered by the CATE grid.
    pub grid_range: (f64, f64),
}

impl Default for LagConfig {
    fn default() -> Self {
        Self {
            k_folds: 5,
            seed: 42,
            learner: NuisanceSpec::default(),
            spline_degree: 3,
            knot_quantiles: DEFAULT_KNOT_QUANTILES.to_vec(),
            grid_points: 20,
            grid_range: (0.05, 0.95),
        }
    }
}

/// Control-role columns in matrix order.
pub fn lag_controls(matrix: &FeatureMatrix) -> Vec<&str> {
    matrix.names_with_role(Role::Control)
}

struct Prepared {
    x: DMatrix<f64>,
    y: DVector<f64>,
    t: DVector<f64>,
    v: Vec<f64>,
}

fn prepare(matrix: &FeatureMatrix) -> Result<Prepared, DmlError> {
    let rows = matrix.estimation_rows();
    if rows.len() < 2 {
        return Err(DmlError::EmptySample);
    }
    let controls = lag_controls(matrix);
    let x = matrix.design(&controls, &rows).map_err(|e| DmlError::DimensionMismatch(e.to_string()))?;
    let lag = matrix.lag();
    let vel = matrix.velocity();
    Ok(Prepared {
        x,
        y: matrix.outcome(&rows),
        t: DVector::from_iterator(rows.len(), rows.iter().map(|&i| lag[i])),
        v: rows.iter().map(|&i| vel[i]).collect(),
    })
}

/// Cross-fitted partially linear estimate of the lag effect.
pub fn estimate_lag_ate(matrix: &FeatureMatrix, cfg: &LagConfig) -> Result<DmlEstimate, DmlError> {
    let p = prepare(matrix)?;
    let plan = kfold_split(p.y.len(), cfg.k_folds, cfg.seed)?;
    Ok(dml_ate(&p.x, &p.y, &p.t, &plan, &cfg.learner)?.with_estimand("ATE lag -> dropout"))
}

/// Unadjusted slope of dropout on lag.
pub fn naive_lag_effect(matrix: &FeatureMatrix) -> Result<DmlEstimate, DmlError> {
    let p = prepare(matrix)?;
    Ok(naive_ols(&p.y, &p.t)?.with_estimand("naive lag -> dropout"))
}

/// Knots and grid come from the velocities of lagged students, where the
/// curve is identified.
pub fn lag_cate_basis(velocity: &[f64], lag: &[f64], cfg: &LagConfig) -> Result<(BSplineBasis, Vec<f64>), DmlError> {
    let treated: Vec<f64> = velocity.iter().zip(lag).filter(|(_, &t)| t > 0.0).map(|(&v, _)| v).collect();
    let source = if treated.len() >= 2 { &treated[..] } else { velocity };
    let knots = quantile_knots(source, &cfg.knot_quantiles);
    let lo = velocity.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = velocity.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let basis = BSplineBasis::new(cfg.spline_degree, &knots, lo, hi)?;
    let (g0, g1) = (quantile(source, cfg.grid_range.0), quantile(source, cfg.grid_range.1));
    let n = cfg.grid_points.max(2);
    let grid = (0..n).map(|i| g0 + (g1 - g0) * i as f64 / (n - 1) as f64).collect();
    Ok((basis, grid))
}

pub fn estimate_lag_cate(matrix: &FeatureMatrix, cfg: &LagConfig) -> Result<CateCurve, DmlError> {
    let p = prepare(matrix)?;
    let t: Vec<f64> = p.t.iter().copied().collect();
    let (basis, grid) = lag_cate_basis(&p.v, &t, cfg)?;
    let plan = kfold_split(p.y.len(), cfg.k_folds, cfg.seed)?;
    estimate_cate_partialled(&p.x, &p.y, &p.t, &p.v, &plan, &cfg.learner, &basis, &grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagReport {
    pub ate: DmlEstimate,
    pub naive: DmlEstimate,
    pub censored_excluded: usize,
}

pub fn run_lag(matrix: &FeatureMatrix, cfg: &LagConfig) -> Result<(LagReport, CateCurve), DmlError> {
    let report = LagReport {
        ate: estimate_lag_ate(matrix, cfg)?,
        naive: naive_lag_effect(matrix)?,
        censored_excluded: matrix.censored_count(),
    };
    Ok((report, estimate_lag_cate(matrix, cfg)?))
}

impl LagReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Early-performance columns plus lag and velocity, the inputs for
/// trajectory clustering. Cohort and macro context are left out.
pub fn archetype_columns(matrix: &FeatureMatrix) -> Vec<&str> {
    let mut names: Vec<&str> = matrix
        .columns
        .iter()
        .filter(|c| matches!(c.meta.layer, Layer::N2 | Layer::N3))
        .filter(|c| matches!(c.meta.role, Role::Control | Role::Descriptive))
        .map(|c| c.meta.name.as_str())
        .collect();
    names.extend(matrix.names_with_role(Role::Treatment));
    names.extend(matrix.names_with_role(Role::Moderator));
    names
}

/// Profile inputs aligned with the matrix rows.
pub fn profile_inputs(
    matrix: &FeatureMatrix,
    records: &[StudentRecord],
    dag: &CurriculumDag,
) -> Result<Vec<ProfileInput>, DataError> {
    let window = ObservationWindow::new(matrix.vot)?;
    let by_id: HashMap<_, _> = records.iter().map(|r| (r.student_id, r)).collect();
    matrix
        .student_ids
        .iter()
        .zip(&matrix.dropout)
        .map(|(id, label)| {
            let record = by_id.get(id).ok_or(DataError::EmptyCohort)?;
            ProfileInput::from_record(record, dag, window, *label)
        })
        .collect()
}
