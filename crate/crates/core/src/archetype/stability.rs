use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    adjusted_rand_index, dbscan, embed_pca, kdistance, silhouette, standardize, ArchetypeError, ClusterLabels,
    Embedding, KDistance, Standardized, NOISE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub embed_dim: usize,
    pub min_pts: usize,
    /// Fixed radius; `None` takes the k-distance knee with k = min_pts.
    pub eps: Option<f64>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { embed_dim: 3, min_pts: 5, eps: None, seed: 42 }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub standardized: Standardized,
    pub embedding: Embedding,
    pub kdistance: KDistance,
    pub labels: ClusterLabels,
}

/// Standardize, embed with PCA, pick eps, run DBSCAN.
pub fn run_pipeline(x: &DMatrix<f64>, names: &[String], cfg: &PipelineConfig) -> Result<PipelineRun, ArchetypeError> {
    let standardized = standardize(x, names)?;
    let d = cfg.embed_dim.min(standardized.data.ncols()).min(standardized.data.nrows());
    let embedding = embed_pca(&standardized.data, d)?;
    let kd = kdistance(&embedding.coordinates, cfg.min_pts.min(x.nrows() - 1).max(1))?;
    let eps = cfg.eps.unwrap_or(kd.suggested_eps).max(1e-12);
    let labels = dbscan(&embedding.coordinates, eps, cfg.min_pts)?;
    Ok(PipelineRun { standardized, embedding, kdistance: kd, labels })
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean_ari: f64,
    pub sd_ari: f64,
    pub b: usize,
    pub scores: Vec<f64>,
}

/// ARI between the reference labels and labels from `b` resamples, each
/// compared on the distinct rows it drew that are clustered (not noise) in
/// both labelings.
pub fn bootstrap_stability(
    x: &DMatrix<f64>,
    names: &[String],
    cfg: &PipelineConfig,
    b: usize,
) -> Result<BootstrapSummary, ArchetypeError> {
    if b < 10 {
        return Err(ArchetypeError::BadParam(format!("bootstrap needs B >= 10, got {b}")));
    }
    let reference = run_pipeline(x, names, cfg)?.labels.labels;
    let n = x.nrows();
    let scores = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng_for(cfg.seed, 1 + rep as u64);
            let draw: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let run = run_pipeline(&x.select_rows(&draw), names, cfg)?;
            let mut first = vec![None; n];
            for (pos, &row) in draw.iter().enumerate() {
                if first[row].is_none() {
                    first[row] = Some(run.labels.labels[pos]);
                }
            }
            let (a, bl): (Vec<i64>, Vec<i64>) =
                (0..n)
                    .filter_map(|i| first[i].map(|l| (reference[i], l)))
                    .filter(|&(r, l)| r != NOISE && l != NOISE)
                    .unzip();
            Ok(adjusted_rand_index(&a, &bl))
        })
        .collect::<Result<Vec<f64>, ArchetypeError>>()?;
    let mean = scores.iter().sum::<f64>() / b as f64;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (b - 1) as f64).sqrt();
    Ok(BootstrapSummary { mean_ari: mean, sd_ari: sd, b, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub observed: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub null: Vec<f64>,
}

fn statistic(x: &DMatrix<f64>, names: &[String], cfg: &PipelineConfig) -> Result<f64, ArchetypeError> {
    let run = run_pipeline(x, names, cfg)?;
    if run.labels.n_clusters() < 2 {
        return Ok(0.0);
    }
    silhouette(&run.embedding.coordinates, &run.labels.labels)
}

/// Silhouette of the full pipeline against column-wise permuted copies:
/// `p = (1 + #{null >= observed}) / (P + 1)`.
pub fn permutation_test(
    x: &DMatrix<f64>,
    names: &[String],
    cfg: &PipelineConfig,
    permutations: usize,
) -> Result<PermutationSummary, ArchetypeError> {
    if permutations < 19 {
        return Err(ArchetypeError::BadParam(format!("permutation test needs P >= 19, got {permutations}")));
    }
    let observed = statistic(x, names, cfg)?;
    let (n, p) = x.shape();
    let null: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng_for(cfg.seed, 1_000_000 + rep as u64);
            let mut permuted = x.clone();
            let mut order: Vec<usize> = (0..n).collect();
            for j in 0..p {
                order.shuffle(&mut rng);
                for (i, &src) in order.iter().enumerate() {
                    permuted[(i, j)] = x[(src, j)];
                }
            }
            statistic(&permuted, names, cfg).unwrap_or(0.0)
        })
        .collect();
    let exceed = null.iter().filter(|&&s| s >= observed).count();
    Ok(PermutationSummary {
        observed,
        p_value: (1 + exceed) as f64 / (permutations + 1) as f64,
        permutations,
        null,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub bootstrap: BootstrapSummary,
    pub permutation: PermutationSummary,
}
