use std::fs;

use serde::Deserialize;

use capire_core::io::IoError;
use capire_core::synth::SynthConfig;
use capire_core::Error;

use crate::Opts;

/// Settings from the optional TOML file, with command-line flags applied on top.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub vot: u32,
    pub grace: u32,
    pub k_folds: usize,
    pub lambda: f64,
    pub standardize: bool,
    pub spline_degree: usize,
    pub knot_quantiles: Vec<f64>,
    pub grid_points: usize,
    /// Absolute semester of the data extract; inferred from the records when absent.
    pub data_end: Option<i64>,
    pub features: Option<Vec<String>>,
    pub placebo: Option<i64>,
    pub top: Option<usize>,
    pub archetype_subset: Option<i64>,
    pub eps: Option<f64>,
    pub min_pts: usize,
    pub embed_dim: usize,
    pub bootstrap: usize,
    pub permutations: usize,
    pub k_max: usize,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            vot: 3,
            grace: 4,
            k_folds: 5,
            lambda: 1.0,
            standardize: true,
            spline_degree: 3,
            knot_quantiles: vec![0.2, 0.4, 0.6, 0.8],
            grid_points: 20,
            data_end: None,
            features: None,
            placebo: None,
            top: None,
            archetype_subset: None,
            eps: None,
            min_pts: 5,
            embed_dim: 3,
            bootstrap: 200,
            permutations: 99,
            k_max: 10,
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn resolve(opts: &Opts) -> Result<Self, Error> {
        let mut cfg = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| IoError::Read { path: path.clone(), source })?;
                toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {}", path.display(), e.message())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = opts.seed {
            cfg.seed = v;
        }
        if let Some(v) = opts.vot {
            cfg.vot = v;
        }
        if let Some(v) = opts.grace {
            cfg.grace = v;
        }
        if let Some(v) = opts.k_folds {
            cfg.k_folds = v;
        }
        if let Some(v) = opts.min_pts {
            cfg.min_pts = v;
        }
        if let Some(list) = &opts.features {
            cfg.features = Some(list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
        }
        cfg.eps = opts.eps.or(cfg.eps);
        cfg.placebo = opts.placebo.or(cfg.placebo);
        cfg.top = opts.top.or(cfg.top);
        cfg.archetype_subset = opts.archetype_subset.or(cfg.archetype_subset);
        Ok(cfg)
    }
}
