use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DmlError;
use crate::stats::quantile_sorted;

pub const DEFAULT_KNOT_QUANTILES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Clamped B-spline basis on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub degree: usize,
    pub interior_knots: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(degree: usize, interior_knots: &[f64], lower: f64, upper: f64) -> Result<Self, DmlError> {
        let (lower, upper) = if upper > lower { (lower, upper) } else { (lower - 0.5, upper + 0.5) };
        let mut prev = lower;
        for &k in interior_knots {
            if !(k > prev && k < upper) {
                return Err(DmlError::KnotOutOfRange { knot: k, lower, upper });
            }
            prev = k;
        }
        let mut knots = vec![lower; degree + 1];
        knots.extend_from_slice(interior_knots);
        knots.extend(std::iter::repeat_n(upper, degree + 1));
        Ok(Self { degree, interior_knots: interior_knots.to_vec(), lower, upper, knots })
    }

    /// Basis on the observed range of `v`; a constant `v` widens the range by 0.5 each side.
    pub fn for_data(v: &[f64], degree: usize, interior_knots: &[f64]) -> Result<Self, DmlError> {
        if v.is_empty() {
            return Err(DmlError::EmptySample);
        }
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(degree, interior_knots, lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.degree + 1 + self.interior_knots.len()
    }

    fn span(&self, x: f64) -> usize {
        let last = self.dim() - 1;
        if x >= self.upper {
            return last;
        }
        if x <= self.lower {
            return self.degree;
        }
        let mut s = self.degree;
        while s < last && self.knots[s + 1] <= x {
            s += 1;
        }
        s
    }

    /// Values of every basis function at `x`; points outside the range are clamped.
    pub fn eval_row(&self, x: f64, out: &mut [f64]) {
        let x = x.clamp(self.lower, self.upper);
        let p = self.degree;
        let span = self.span(x);
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, val) in n.into_iter().enumerate() {
            out[span - p + r] = val;
        }
    }

    pub fn evaluate(&self, v: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        let mut b = DMatrix::zeros(v.len(), m);
        let mut row = vec![0.0; m];
        for (i, &x) in v.iter().enumerate() {
            self.eval_row(x, &mut row);
            for (j, val) in row.iter().enumerate() {
                b[(i, j)] = *val;
            }
        }
        b
    }
}

/// B-spline design matrix for `v` with the data range as boundary.
pub fn spline_basis(v: &[f64], degree: usize, interior_knots: &[f64]) -> Result<DMatrix<f64>, DmlError> {
    Ok(BSplineBasis::for_data(v, degree, interior_knots)?.evaluate(v))
}

/// Quantiles of `v` at `probs`, deduplicated and kept only when strictly
/// inside the data range.
pub fn quantile_knots(v: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return Vec::new();
    }
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let mut knots: Vec<f64> = Vec::new();
    for &p in probs {
        let q = quantile_sorted(&s, p);
        if q > lo && q < hi && knots.last().is_none_or(|&k| q > k) {
            knots.push(q);
        }
    }
    knots
}
