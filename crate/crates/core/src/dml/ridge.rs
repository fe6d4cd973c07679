use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::DmlError;

/// A fitted nuisance model.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64>;
}

/// Anything that can be trained on `(X, y)` and then predict.
pub trait Learner: Sync {
    type Model: Predictor;
    fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self::Model, DmlError>;
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub lambda: f64,
    pub standardize: bool,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        Self { lambda: 1.0, standardize: true }
    }
}

impl NuisanceSpec {
    pub fn ols() -> Self {
        Self { lambda: 0.0, standardize: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    /// One coefficient per input column, on the original scale; dropped
    /// zero-variance columns get 0.
    pub coefficients: DVector<f64>,
}

impl Predictor for RidgeFit {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut out = x * &self.coefficients;
        out.add_scalar_mut(self.intercept);
        out
    }
}

impl Learner for NuisanceSpec {
    type Model = RidgeFit;

    fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<RidgeFit, DmlError> {
        fit_ridge(x, y, self)
    }

    fn describe(&self) -> String {
        format!("ridge(lambda={}, standardize={})", self.lambda, self.standardize)
    }
}

/// Minimizes `|y - a - X b|^2 + lambda |b|^2` with the intercept `a` unpenalized.
///
/// With `standardize` the penalty applies to coefficients of unit-variance
/// columns. Zero-variance columns are dropped before solving.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, spec: &NuisanceSpec) -> Result<RidgeFit, DmlError> {
    let (n, p) = x.shape();
    if n == 0 {
        return Err(DmlError::EmptySample);
    }
    if y.len() != n {
        return Err(DmlError::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    if spec.lambda.is_nan() || spec.lambda < 0.0 {
        return Err(DmlError::BadLambda(spec.lambda));
    }
    let y_mean = y.mean();
    let mut keep = Vec::with_capacity(p);
    let mut centers = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.column(j);
        let m = col.mean();
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-12 * (1.0 + m.abs()) {
            keep.push(j);
            centers.push(m);
            scales.push(if spec.standardize { sd } else { 1.0 });
        }
    }
    let mut coefficients = DVector::zeros(p);
    if keep.is_empty() {
        return Ok(RidgeFit { intercept: y_mean, coefficients });
    }
    let q = keep.len();
    let z = DMatrix::from_fn(n, q, |i, c| (x[(i, keep[c])] - centers[c]) / scales[c]);
    let yc = y.add_scalar(-y_mean);
    let mut a = z.tr_mul(&z);
    let b = z.tr_mul(&yc);
    if spec.lambda == 0.0 {
        check_rank(&a)?;
    }
    for d in 0..q {
        a[(d, d)] += spec.lambda;
    }
    let chol = a.cholesky().ok_or(DmlError::SingularSystem)?;
    let beta = chol.solve(&b);
    let mut intercept = y_mean;
    for (c, &j) in keep.iter().enumerate() {
        let bj = beta[c] / scales[c];
        coefficients[j] = bj;
        intercept -= centers[c] * bj;
    }
    Ok(RidgeFit { intercept, coefficients })
}

/// Rejects Gram matrices whose correlation form is numerically singular.
fn check_rank(gram: &DMatrix<f64>) -> Result<(), DmlError> {
    let q = gram.nrows();
    let d: Vec<f64> = (0..q).map(|i| gram[(i, i)].sqrt()).collect();
    let corr = DMatrix::from_fn(q, q, |i, j| gram[(i, j)] / (d[i] * d[j]));
    let chol = corr.cholesky().ok_or(DmlError::SingularSystem)?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min_pivot * min_pivot < 1e-10 {
        return Err(DmlError::SingularSystem);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn ols_matches_normal_equations_oracle() {
        let x = random(60, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = DVector::from_fn(60, |i, _| 1.5 + x[(i, 0)] - 2.0 * x[(i, 3)] + rng.random::<f64>());
        let fit = fit_ridge(&x, &y, &NuisanceSpec::ols()).unwrap();
        // oracle: normal equations of the design with an explicit ones column
        let aug = DMatrix::from_fn(60, 5, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let beta = aug.tr_mul(&aug).lu().solve(&aug.tr_mul(&y)).unwrap();
        assert!((fit.intercept - beta[0]).abs() < 1e-8);
        for j in 0..4 {
            assert!((fit.coefficients[j] - beta[j + 1]).abs() < 1e-8);
        }
        let std_fit = fit_ridge(&x, &y, &NuisanceSpec { lambda: 0.0, standardize: true }).unwrap();
        assert!((std_fit.coefficients - fit.coefficients).amax() < 1e-8);
    }

    #[test]
    fn orthonormal_design_gives_xty() {
        let raw = random(40, 3, 5);
        let mut centered = raw.clone();
        for mut c in centered.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
        }
        let q = centered.qr().q();
        let y = DVector::from_fn(40, |i, _| (i as f64).sin() + 3.0);
        let fit = fit_ridge(&q, &y, &NuisanceSpec::ols()).unwrap();
        assert!((fit.coefficients.clone() - q.tr_mul(&y)).amax() < 1e-10);
        assert!((fit.intercept - y.mean()).abs() < 1e-10);
    }

    #[test]
    fn heavy_penalty_shrinks_to_mean() {
        let x = random(50, 3, 7);
        let y = DVector::from_fn(50, |i, _| x[(i, 1)] * 4.0 + 2.0);
        let fit = fit_ridge(&x, &y, &NuisanceSpec { lambda: 1e12, standardize: true }).unwrap();
        assert!(fit.coefficients.norm() < 1e-8);
        assert!((fit.intercept - y.mean()).abs() < 1e-8);
    }

    #[test]
    fn rank_deficient_without_penalty_fails() {
        let mut x = random(30, 3, 9);
        for i in 0..30 {
            x[(i, 2)] = x[(i, 0)] + 2.0 * x[(i, 1)];
        }
        let y = DVector::from_element(30, 1.0);
        assert_eq!(fit_ridge(&x, &y, &NuisanceSpec::ols()).unwrap_err(), DmlError::SingularSystem);
        assert!(fit_ridge(&x, &y, &NuisanceSpec::default()).is_ok());
    }

    #[test]
    fn constant_columns_dropped() {
        let mut x = random(30, 2, 11);
        for i in 0..30 {
            x[(i, 1)] = 5.0;
        }
        let y = DVector::from_fn(30, |i, _| 2.0 * x[(i, 0)]);
        let fit = fit_ridge(&x, &y, &NuisanceSpec::ols()).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-10);
    }
}
