use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{crossfit_matrix, crossfit_residuals, BSplineBasis, DmlError, FoldPlan, Learner, Residuals};
use crate::stats::{format_p, two_sided_p};

const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmlEstimate {
    pub estimand: String,
    pub tau: f64,
    pub se: f64,
    #[serde(rename = "p")]
    pub p_value: f64,
    pub ci95: [f64; 2],
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: Option<u64>,
    pub spec: String,
}

impl DmlEstimate {
    fn from_parts(tau: f64, se: f64, n: usize) -> Self {
        let p_value = if se > 0.0 {
            two_sided_p(tau / se)
        } else if tau == 0.0 {
            1.0
        } else {
            0.0
        };
        Self {
            estimand: "ATE".into(),
            tau,
            se,
            p_value,
            ci95: [tau - Z95 * se, tau + Z95 * se],
            n,
            k: 0,
            seed: None,
            spec: String::new(),
        }
    }

    pub fn with_estimand(mut self, estimand: impl Into<String>) -> Self {
        self.estimand = estimand.into();
        self
    }

    pub fn with_spec(mut self, spec: impl Into<String>) -> Self {
        self.spec = spec.into();
        self
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci95[0] <= value && value <= self.ci95[1]
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    /// `label 0.0167 <0.0001`
    pub fn table_row(&self, label: &str) -> String {
        format!("{label} {:.4} {}", self.tau, format_p(self.p_value))
    }

    /// `0.0063 (p = 0.0092)`
    pub fn coef_with_p(&self) -> String {
        format!("{:.4} (p = {})", self.tau, format_p(self.p_value))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes")
    }
}

/// No-intercept least squares of `y` on `z` with the HC1 sandwich covariance.
fn hc1_regression(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), DmlError> {
    let (n, m) = z.shape();
    if n <= m {
        return Err(DmlError::EmptySample);
    }
    let gram = z.tr_mul(z);
    let d: Vec<f64> = (0..m).map(|i| gram[(i, i)].sqrt()).collect();
    if d.iter().any(|v| v.is_nan() || *v <= 0.0) {
        return Err(DmlError::CollinearBasis);
    }
    let corr = DMatrix::from_fn(m, m, |i, j| gram[(i, j)] / (d[i] * d[j]));
    match corr.cholesky() {
        Some(c) if c.l_dirty().diagonal().iter().all(|p| p * p > 1e-12) => {}
        _ => return Err(DmlError::CollinearBasis),
    }
    let chol = gram.cholesky().ok_or(DmlError::CollinearBasis)?;
    let beta = chol.solve(&z.tr_mul(y));
    let e = y - z * &beta;
    let mut ze = z.clone();
    for (i, mut row) in ze.row_iter_mut().enumerate() {
        row *= e[i];
    }
    let meat = ze.tr_mul(&ze);
    let bread = chol.inverse();
    let cov = (&bread * meat * &bread) * (n as f64 / (n - m) as f64);
    Ok((beta, cov))
}

/// Final stage: `Y~ = tau T~ + e` with HC1 standard error.
pub fn estimate_ate(residuals: &Residuals) -> Result<DmlEstimate, DmlError> {
    let n = residuals.t_tilde.len();
    if n < 2 || residuals.y_tilde.len() != n {
        return Err(DmlError::EmptySample);
    }
    let resid_var = residuals.t_tilde.norm_squared() / n as f64;
    let ratio = if residuals.t_variance > 0.0 { resid_var / residuals.t_variance } else { 0.0 };
    if ratio.is_nan() || ratio < 1e-6 {
        return Err(DmlError::DegenerateTreatment { ratio });
    }
    let z = DMatrix::from_column_slice(n, 1, residuals.t_tilde.as_slice());
    let (beta, cov) = hc1_regression(&z, &residuals.y_tilde)?;
    let mut est = DmlEstimate::from_parts(beta[0], cov[(0, 0)].max(0.0).sqrt(), n);
    est.k = residuals.k;
    est.seed = residuals.seed;
    Ok(est)
}

/// Cross-fit nuisances and estimate the average effect of `t` on `y`.
pub fn dml_ate<L: Learner>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    t: &DVector<f64>,
    plan: &FoldPlan,
    learner: &L,
) -> Result<DmlEstimate, DmlError> {
    let res = crossfit_residuals(x, y, t, plan, learner)?;
    Ok(estimate_ate(&res)?.with_spec(learner.describe()))
}

/// The main pipeline applied to a pseudo-treatment that should have no effect.
pub fn placebo_test<L: Learner>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    pseudo_treatment: &DVector<f64>,
    plan: &FoldPlan,
    learner: &L,
) -> Result<DmlEstimate, DmlError> {
    Ok(dml_ate(x, y, pseudo_treatment, plan, learner)?.with_estimand("placebo"))
}

/// Unadjusted OLS slope of `y` on `t` (with intercept), HC1 standard error.
pub fn naive_ols(y: &DVector<f64>, t: &DVector<f64>) -> Result<DmlEstimate, DmlError> {
    let n = y.len();
    if n < 3 || t.len() != n {
        return Err(DmlError::EmptySample);
    }
    let tc = t.add_scalar(-t.mean());
    let yc = y.add_scalar(-y.mean());
    let stt = tc.norm_squared();
    if stt == 0.0 {
        return Err(DmlError::DegenerateTreatment { ratio: 0.0 });
    }
    let tau = tc.dot(&yc) / stt;
    let e = &yc - &tc * tau;
    let meat: f64 = tc.iter().zip(e.iter()).map(|(a, b)| a * a * b * b).sum();
    let se = (n as f64 / (n - 2) as f64 * meat).sqrt() / stt;
    Ok(DmlEstimate::from_parts(tau, se, n).with_estimand("naive_ols"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatePoint {
    pub velocity: f64,
    pub effect: f64,
    pub se: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub p: f64,
}

impl CatePoint {
    /// `ns` when not significant at 5%.
    pub fn flag(&self) -> &'static str {
        if self.p < 0.05 {
            "*"
        } else {
            "ns"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateCurve {
    pub basis: BSplineBasis,
    pub coefficients: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub evaluation: Vec<CatePoint>,
    pub n: usize,
}

impl CateCurve {
    fn build(basis: &BSplineBasis, beta: DVector<f64>, cov: DMatrix<f64>, grid: &[f64], n: usize) -> Self {
        let mut curve = CateCurve {
            basis: basis.clone(),
            coefficients: beta.iter().copied().collect(),
            covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
            evaluation: Vec::new(),
            n,
        };
        curve.evaluation = grid.iter().map(|&v| curve.at(v)).collect();
        curve
    }

    /// Effect and pointwise standard error at one velocity.
    pub fn at(&self, v: f64) -> CatePoint {
        let m = self.coefficients.len();
        let mut b = vec![0.0; m];
        self.basis.eval_row(v, &mut b);
        let effect: f64 = b.iter().zip(&self.coefficients).map(|(x, c)| x * c).sum();
        let mut var = 0.0;
        for i in 0..m {
            for j in 0..m {
                var += b[i] * self.covariance[i][j] * b[j];
            }
        }
        let se = var.max(0.0).sqrt();
        let p = if se > 0.0 { two_sided_p(effect / se) } else { 1.0 };
        CatePoint { velocity: v, effect, se, lo95: effect - Z95 * se, hi95: effect + Z95 * se, p }
    }

    pub fn effects(&self) -> Vec<f64> {
        self.evaluation.iter().map(|p| p.effect).collect()
    }

    pub fn is_monotone_decreasing(&self) -> bool {
        self.evaluation.windows(2).all(|w| w[1].effect <= w[0].effect)
    }

    /// `velocity,effect,se,lo95,hi95`
    pub fn grid_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["velocity", "effect", "se", "lo95", "hi95"]).expect("in-memory write");
        for p in &self.evaluation {
            w.write_record([p.velocity, p.effect, p.se, p.lo95, p.hi95].map(|v| format!("{v}")))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Regress `Y~` on `T~` times each basis column; `CATE(v) = B(v) . beta`.
pub fn estimate_cate(
    residuals: &Residuals,
    basis: &BSplineBasis,
    velocity: &[f64],
    grid: &[f64],
) -> Result<CateCurve, DmlError> {
    let n = residuals.t_tilde.len();
    if velocity.len() != n {
        return Err(DmlError::DimensionMismatch(format!("{} velocities for {n} residuals", velocity.len())));
    }
    let mut z = basis.evaluate(velocity);
    for (i, mut row) in z.row_iter_mut().enumerate() {
        row *= residuals.t_tilde[i];
    }
    let (beta, cov) = hc1_regression(&z, &residuals.y_tilde)?;
    Ok(CateCurve::build(basis, beta, cov, grid, n))
}

/// CATE with each interaction `T * B_j(V)` residualized on `X` by
/// cross-fitting, then `Y~` regressed on the residualized interactions.
///
/// Unlike [`estimate_cate`] this stays consistent when the moderator is
/// itself a function of the treatment.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cate_partialled<L: Learner>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    t: &DVector<f64>,
    velocity: &[f64],
    plan: &FoldPlan,
    learner: &L,
    basis: &BSplineBasis,
    grid: &[f64],
) -> Result<CateCurve, DmlError> {
    let n = x.nrows();
    if y.len() != n || t.len() != n || velocity.len() != n {
        return Err(DmlError::DimensionMismatch("y, t, velocity and X must share rows".into()));
    }
    let b = basis.evaluate(velocity);
    let m = b.ncols();
    let targets = DMatrix::from_fn(n, m + 1, |i, j| if j == 0 { y[i] } else { t[i] * b[(i, j - 1)] });
    let r = crossfit_matrix(x, &targets, plan, learner)?;
    let y_tilde = r.column(0).into_owned();
    let w = r.columns(1, m).into_owned();
    let (beta, cov) = hc1_regression(&w, &y_tilde)?;
    Ok(CateCurve::build(basis, beta, cov, grid, n))
}
