use nalgebra::DMatrix;

use super::ArchetypeError;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// n x d coordinates.
    pub coordinates: DMatrix<f64>,
    pub method: String,
    /// Share of total variance per retained component, when the method has one.
    pub explained_variance_ratio: Vec<f64>,
    /// p x d loadings (orthonormal columns) for linear methods.
    pub components: Option<DMatrix<f64>>,
    pub center: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.coordinates.ncols()
    }

    /// Maps coordinates back to the input space (linear methods only).
    pub fn reconstruct(&self) -> Option<DMatrix<f64>> {
        let comps = self.components.as_ref()?;
        let mut x = &self.coordinates * comps.transpose();
        for (j, m) in self.center.iter().enumerate() {
            x.column_mut(j).add_scalar_mut(*m);
        }
        Some(x)
    }
}

/// Dimension reduction applied before clustering.
pub trait Embedder: Send + Sync {
    fn embed(&self, x: &DMatrix<f64>, d: usize) -> Result<Embedding, ArchetypeError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Pca;

impl Embedder for Pca {
    fn embed(&self, x: &DMatrix<f64>, d: usize) -> Result<Embedding, ArchetypeError> {
        embed_pca(x, d)
    }
}

/// Projection onto the top `d` principal axes, computed by SVD of the
/// centered data. Each axis is signed so its largest loading is positive.
pub fn embed_pca(x: &DMatrix<f64>, d: usize) -> Result<Embedding, ArchetypeError> {
    let (n, p) = x.shape();
    let max = n.min(p);
    if d == 0 || d > max {
        return Err(ArchetypeError::BadDimension { requested: d, max });
    }
    let center: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
    let mut xc = x.clone();
    for (j, m) in center.iter().enumerate() {
        xc.column_mut(j).add_scalar_mut(-m);
    }
    let svd = xc.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let total: f64 = s.iter().map(|v| v * v).sum();
    let mut components = DMatrix::zeros(p, d);
    let mut ratios = Vec::with_capacity(d);
    for (c, &idx) in order.iter().take(d).enumerate() {
        let mut axis = v_t.row(idx).transpose();
        let lead = axis.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            axis.neg_mut();
        }
        components.set_column(c, &axis);
        ratios.push(if total > 0.0 { s[idx] * s[idx] / total } else { 0.0 });
    }
    let coordinates = &xc * &components;
    Ok(Embedding {
        coordinates,
        method: "pca".into(),
        explained_variance_ratio: ratios,
        components: Some(components),
        center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.random::<f64>())
    }

    #[test]
    fn exact_subspace_is_fully_explained() {
        let basis = random(3, 6, 1);
        let coefs = random(40, 3, 2);
        let mut x = &coefs * &basis;
        x.add_scalar_mut(5.0);
        let e = embed_pca(&x, 3).unwrap();
        let total: f64 = e.explained_variance_ratio.iter().sum();
        assert!((total - 1.0).abs() < 1e-8);
        assert!(e.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn components_orthonormal_and_full_rank_reconstructs() {
        let x = random(25, 4, 3);
        let e = embed_pca(&x, 4).unwrap();
        let c = e.components.clone().unwrap();
        assert!((c.tr_mul(&c) - DMatrix::identity(4, 4)).amax() < 1e-10);
        assert!((e.reconstruct().unwrap() - x).amax() < 1e-8);
    }

    #[test]
    fn bad_dimension() {
        let x = random(5, 3, 4);
        assert_eq!(embed_pca(&x, 4).unwrap_err(), ArchetypeError::BadDimension { requested: 4, max: 3 });
        assert!(embed_pca(&x, 0).is_err());
    }
}
