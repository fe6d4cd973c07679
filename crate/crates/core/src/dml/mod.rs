//! Cross-fitted double machine learning with a linear final stage.

mod crossfit;
mod estimate;
mod folds;
mod ridge;
mod spline;

pub use crossfit::{crossfit_matrix, crossfit_residuals, fullsample_residuals, Residuals};
pub use estimate::{
    dml_ate, estimate_ate, estimate_cate, estimate_cate_partialled, naive_ols, placebo_test, CateCurve, CatePoint,
    DmlEstimate,
};
pub use folds::{kfold_split, FoldPlan};
pub use ridge::{fit_ridge, Learner, NuisanceSpec, Predictor, RidgeFit};
pub use spline::{quantile_knots, spline_basis, BSplineBasis, DEFAULT_KNOT_QUANTILES};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DmlError {
    #[error("BadK: need 2 <= K <= n, got K={k} for n={n}")]
    BadK { n: usize, k: usize },
    #[error("SingularSystem: design is rank-deficient and lambda is zero")]
    SingularSystem,
    #[error("DegenerateTreatment: residual treatment variance ratio {ratio:.3e} is below 1e-6")]
    DegenerateTreatment { ratio: f64 },
    #[error("KnotOutOfRange: knot {knot} not strictly inside ({lower}, {upper}) or not increasing")]
    KnotOutOfRange { knot: f64, lower: f64, upper: f64 },
    #[error("CollinearBasis: spline-interaction design is singular")]
    CollinearBasis,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative ridge penalty {0}")]
    BadLambda(f64),
    #[error("empty sample")]
    EmptySample,
}
