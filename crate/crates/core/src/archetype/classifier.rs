use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArchetypeError, NOISE};

const PENALTY: f64 = 1.0;
const PERMUTATION_ROUNDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Mean held-out accuracy drop when the feature is shuffled.
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub classes: Vec<i64>,
    /// Rows are true classes, columns predictions, in `classes` order.
    pub confusion_matrix: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub importance: Vec<FeatureImportance>,
    pub n_train: usize,
    pub n_test: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// L2-penalized logistic regression by Newton steps; column 0 of `x` is the
/// unpenalized intercept.
fn fit_logistic(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let p = x.ncols();
    let mut w = DVector::zeros(p);
    for _ in 0..100 {
        let mu = (x * &w).map(sigmoid);
        let mut grad = x.tr_mul(&(&mu - y));
        let mut weighted = x.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= mu[i] * (1.0 - mu[i]);
        }
        let mut hess = x.tr_mul(&weighted);
        for j in 1..p {
            grad[j] += PENALTY * w[j];
            hess[(j, j)] += PENALTY;
        }
        hess[(0, 0)] += 1e-9;
        let Some(chol) = hess.cholesky() else { break };
        let step = chol.solve(&grad);
        w -= &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    w
}

struct OneVsRest {
    classes: Vec<i64>,
    weights: Vec<DVector<f64>>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl OneVsRest {
    fn design(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                (x[(i, j - 1)] - self.means[j - 1]) / self.sds[j - 1]
            }
        })
    }

    fn fit(x: &DMatrix<f64>, labels: &[i64], classes: &[i64]) -> Self {
        let (n, p) = x.shape();
        let means: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
        let sds: Vec<f64> = x
            .column_iter()
            .zip(&means)
            .map(|(c, m)| {
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        let mut model = OneVsRest { classes: classes.to_vec(), weights: Vec::new(), means, sds };
        let design = model.design(x);
        debug_assert_eq!(design.ncols(), p + 1);
        model.weights = classes
            .iter()
            .map(|c| {
                let y = DVector::from_iterator(n, labels.iter().map(|l| if l == c { 1.0 } else { 0.0 }));
                fit_logistic(&design, &y)
            })
            .collect();
        model
    }

    fn predict(&self, x: &DMatrix<f64>) -> Vec<i64> {
        let design = self.design(x);
        let scores: Vec<DVector<f64>> = self.weights.iter().map(|w| &design * w).collect();
        (0..x.nrows())
            .map(|i| {
                let best = (0..self.classes.len())
                    .max_by(|&a, &b| scores[a][i].total_cmp(&scores[b][i]).then(b.cmp(&a)))
                    .expect("at least one class");
                self.classes[best]
            })
            .collect()
    }
}

fn accuracy(pred: &[i64], truth: &[i64]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// One-vs-rest logistic back-prediction of cluster labels from the original
/// features on a stratified 70/30 split. Noise rows are left out.
pub fn train_classifier(
    x: &DMatrix<f64>,
    names: &[String],
    labels: &[i64],
    split_seed: u64,
) -> Result<ClassifierReport, ArchetypeError> {
    if labels.len() != x.nrows() {
        return Err(ArchetypeError::DimensionMismatch(format!("{} labels for {} rows", labels.len(), x.nrows())));
    }
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != NOISE {
            by_class.entry(l).or_default().push(i);
        }
    }
    if by_class.len() < 2 {
        return Err(ArchetypeError::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, rows) in &mut by_class {
        if rows.len() < 2 {
            return Err(ArchetypeError::BadParam(format!("class {class} has a single member; cannot stratify")));
        }
        rows.shuffle(&mut rng);
        let n_test = ((rows.len() as f64 * 0.3).round() as usize).clamp(1, rows.len() - 1);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let classes: Vec<i64> = by_class.keys().copied().collect();
    let x_train = x.select_rows(&train);
    let y_train: Vec<i64> = train.iter().map(|&i| labels[i]).collect();
    let model = OneVsRest::fit(&x_train, &y_train, &classes);

    let x_test = x.select_rows(&test);
    let y_test: Vec<i64> = test.iter().map(|&i| labels[i]).collect();
    let pred = model.predict(&x_test);
    let base = accuracy(&pred, &y_test);
    let index: BTreeMap<i64, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    for (t, p) in y_test.iter().zip(&pred) {
        confusion[index[t]][index[p]] += 1;
    }

    let mut importance = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let mut drop = 0.0;
        for _ in 0..PERMUTATION_ROUNDS {
            let mut shuffled = x_test.clone();
            let mut col: Vec<f64> = x_test.column(j).iter().copied().collect();
            col.shuffle(&mut rng);
            shuffled.set_column(j, &DVector::from_vec(col));
            drop += base - accuracy(&model.predict(&shuffled), &y_test);
        }
        importance.push(FeatureImportance {
            feature: names.get(j).cloned().unwrap_or_else(|| format!("x{j}")),
            importance: drop / PERMUTATION_ROUNDS as f64,
        });
    }
    Ok(ClassifierReport {
        classes,
        confusion_matrix: confusion,
        accuracy: base,
        importance,
        n_train: train.len(),
        n_test: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_rejected() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i + j) as f64);
        assert_eq!(train_classifier(&x, &[], &[0; 10], 1).unwrap_err(), ArchetypeError::SingleClass);
        let mostly_noise = [0, 0, 0, NOISE, NOISE, NOISE, NOISE, NOISE, NOISE, NOISE];
        assert_eq!(train_classifier(&x, &[], &mostly_noise, 1).unwrap_err(), ArchetypeError::SingleClass);
    }

    #[test]
    fn separable_classes_predicted() {
        let x = DMatrix::from_fn(60, 2, |i, j| {
            let base = (i % 3) as f64 * 10.0;
            base + (((i * 13 + j * 7) % 11) as f64 - 5.0) * 0.1
        });
        let labels: Vec<i64> = (0..60).map(|i| (i % 3) as i64).collect();
        let r = train_classifier(&x, &["a".into(), "b".into()], &labels, 4).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.n_test, 18);
        for (c, row) in r.confusion_matrix.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), 6);
            assert_eq!(row[c], 6);
        }
    }
}
