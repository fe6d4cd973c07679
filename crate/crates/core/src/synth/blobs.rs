use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `k` spherical unit-variance blobs in `p` dimensions, every pair of
/// centers exactly `separation` apart. Centers are scaled orthonormal
/// directions, so no single coordinate separates the groups well.
pub fn planted_blobs(k: usize, n_per: usize, p: usize, separation: f64, seed: u64) -> (DMatrix<f64>, Vec<i64>) {
    assert!(k <= p, "need p >= k for orthonormal centers");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(p, k, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let q = g.qr().q();
    let scale = separation / std::f64::consts::SQRT_2;
    let n = k * n_per;
    let mut x = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i / n_per;
        labels.push(c as i64);
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = scale * q[(j, c)] + z;
        }
    }
    (x, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_equidistant() {
        let (x, labels) = planted_blobs(3, 2000, 8, 10.0, 1);
        let centers: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let rows: Vec<usize> = (0..x.nrows()).filter(|&i| labels[i] == c).collect();
                (0..8).map(|j| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / rows.len() as f64).collect()
            })
            .collect();
        for a in 0..3 {
            for b in a + 1..3 {
                let d: f64 = centers[a].iter().zip(&centers[b]).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
                assert!((d - 10.0).abs() < 0.3, "{d}");
            }
        }
    }
}
