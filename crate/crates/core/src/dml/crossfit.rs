use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{DmlError, FoldPlan, Learner, Predictor};

/// Residualized outcome and treatment from the nuisance stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub y_tilde: DVector<f64>,
    pub t_tilde: DVector<f64>,
    /// Population variance of the raw treatment, for the degeneracy guard.
    pub t_variance: f64,
    /// Fold count; 1 marks full-sample nuisances.
    pub k: usize,
    pub seed: Option<u64>,
}

fn rows_of(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    x.select_rows(rows)
}

fn population_variance(v: &DVector<f64>) -> f64 {
    let m = v.mean();
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Out-of-fold residuals of every column of `targets` on `x`.
///
/// Folds are fitted in parallel and reassembled in fold order, so the result
/// does not depend on scheduling.
pub fn crossfit_matrix<L: Learner>(
    x: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    plan: &FoldPlan,
    learner: &L,
) -> Result<DMatrix<f64>, DmlError> {
    let n = x.nrows();
    if plan.n != n || targets.nrows() != n {
        return Err(DmlError::DimensionMismatch(format!(
            "fold plan covers {} rows, X has {n}, targets have {}",
            plan.n,
            targets.nrows()
        )));
    }
    let per_fold: Vec<Result<_, DmlError>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let train = plan.train_rows(fold);
            let test = plan.test_rows(fold);
            let x_train = rows_of(x, &train);
            let x_test = rows_of(x, &test);
            let mut resid = DMatrix::zeros(test.len(), targets.ncols());
            for j in 0..targets.ncols() {
                let y_train = DVector::from_iterator(train.len(), train.iter().map(|&i| targets[(i, j)]));
                let model = learner.fit(&x_train, &y_train)?;
                let pred = model.predict(&x_test);
                for (r, &i) in test.iter().enumerate() {
                    resid[(r, j)] = targets[(i, j)] - pred[r];
                }
            }
            Ok((test, resid))
        })
        .collect();
    let mut out = DMatrix::zeros(n, targets.ncols());
    for item in per_fold {
        let (test, resid) = item?;
        for (r, &i) in test.iter().enumerate() {
            out.set_row(i, &resid.row(r));
        }
    }
    Ok(out)
}

/// `Y - m(X)` and `T - g(X)` with each row predicted by models that never saw it.
pub fn crossfit_residuals<L: Learner>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    t: &DVector<f64>,
    plan: &FoldPlan,
    learner: &L,
) -> Result<Residuals, DmlError> {
    let targets = DMatrix::from_columns(&[y.clone(), t.clone()]);
    let r = crossfit_matrix(x, &targets, plan, learner)?;
    Ok(Residuals {
        y_tilde: r.column(0).into_owned(),
        t_tilde: r.column(1).into_owned(),
        t_variance: population_variance(t),
        k: plan.k,
        seed: Some(plan.seed),
    })
}

/// Debug mode: nuisances trained and evaluated on the full sample.
pub fn fullsample_residuals<L: Learner>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    t: &DVector<f64>,
    learner: &L,
) -> Result<Residuals, DmlError> {
    if y.len() != x.nrows() || t.len() != x.nrows() {
        return Err(DmlError::DimensionMismatch("y/t length differs from X rows".into()));
    }
    let my = learner.fit(x, y)?;
    let mt = learner.fit(x, t)?;
    Ok(Residuals {
        y_tilde: y - my.predict(x),
        t_tilde: t - mt.predict(x),
        t_variance: population_variance(t),
        k: 1,
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dml::{kfold_split, NuisanceSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    /// Predicts 1 for any row whose id (column 0) it was trained on.
    struct Memorizer;
    struct Seen(HashSet<u64>);
    impl Predictor for Seen {
        fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
            DVector::from_fn(x.nrows(), |i, _| if self.0.contains(&(x[(i, 0)] as u64)) { 1.0 } else { 0.0 })
        }
    }
    impl Learner for Memorizer {
        type Model = Seen;
        fn fit(&self, x: &DMatrix<f64>, _: &DVector<f64>) -> Result<Seen, DmlError> {
            Ok(Seen(x.column(0).iter().map(|v| *v as u64).collect()))
        }
        fn describe(&self) -> String {
            "memorizer".into()
        }
    }

    #[test]
    fn no_row_is_predicted_by_a_model_that_saw_it() {
        let n = 97;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { i as f64 } else { 0.5 });
        let zeros = DVector::zeros(n);
        let r = crossfit_residuals(&x, &zeros, &zeros, &kfold_split(n, 5, 3).unwrap(), &Memorizer).unwrap();
        assert!(r.y_tilde.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exact_linear_outcome_leaves_no_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(200, 3, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(200, |i, _| 1.0 + 2.0 * x[(i, 0)] - x[(i, 1)] + 0.5 * x[(i, 2)]);
        let t = DVector::from_fn(200, |i, _| x[(i, 2)]);
        let r = crossfit_residuals(&x, &y, &t, &kfold_split(200, 5, 1).unwrap(), &NuisanceSpec::ols()).unwrap();
        assert!(r.y_tilde.amax() < 1e-6);
    }

    #[test]
    fn constant_outcome_has_zero_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(100, 2, |_, _| rng.random::<f64>());
        let y = DVector::from_element(100, 3.0);
        let r = crossfit_residuals(&x, &y, &y, &kfold_split(100, 4, 1).unwrap(), &NuisanceSpec::default()).unwrap();
        assert!(r.y_tilde.amax() < 1e-10);
    }

    #[test]
    fn mismatched_plan_rejected() {
        let x = DMatrix::zeros(10, 1);
        let y = DVector::zeros(10);
        let plan = kfold_split(9, 3, 0).unwrap();
        assert!(matches!(
            crossfit_residuals(&x, &y, &y, &plan, &NuisanceSpec::default()),
            Err(DmlError::DimensionMismatch(_))
        ));
    }
}
