use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    bootstrap_stability, diagnostics, permutation_test, profile_archetypes, run_pipeline, train_classifier,
    ArchetypeError, ArchetypeProfile, ClassifierReport, ClusterDiagnostics, KDistance, PipelineConfig,
    ProfileInput, RiskThresholds, StabilityReport, NOISE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeConfig {
    pub pipeline: PipelineConfig,
    pub bootstrap_b: usize,
    pub permutations: usize,
    pub k_max: usize,
    pub thresholds: RiskThresholds,
}

impl Default for ArchetypeConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            bootstrap_b: 200,
            permutations: 99,
            k_max: 10,
            thresholds: RiskThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub archetype_id: i64,
    /// Mean standardized value per retained feature.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeReport {
    pub n_rows: usize,
    pub features: Vec<String>,
    pub warnings: Vec<String>,
    pub embedding_method: String,
    pub explained_variance_ratio: Vec<f64>,
    pub eps: f64,
    pub min_pts: usize,
    pub n_clusters: usize,
    pub noise_count: usize,
    pub labels: Vec<i64>,
    pub diagnostics: ClusterDiagnostics,
    pub stability: StabilityReport,
    pub profiles: Vec<ArchetypeProfile>,
    pub noise_profile: Option<ArchetypeProfile>,
    pub classifier: ClassifierReport,
    pub heatmap: Vec<HeatmapRow>,
    pub kdistance: KDistance,
}

/// Full archetype pipeline: clustering, diagnostics, stability, profiles
/// and the back-prediction classifier.
pub fn run_archetypes(
    x: &DMatrix<f64>,
    names: &[String],
    inputs: Option<&[ProfileInput]>,
    cfg: &ArchetypeConfig,
) -> Result<ArchetypeReport, ArchetypeError> {
    if let Some(inp) = inputs {
        if inp.len() != x.nrows() {
            return Err(ArchetypeError::DimensionMismatch(format!("{} profile rows for {} rows", inp.len(), x.nrows())));
        }
    }
    let run = run_pipeline(x, names, &cfg.pipeline)?;
    let labels = run.labels.labels.clone();
    let n_clusters = run.labels.n_clusters();
    if n_clusters < 2 {
        return Err(ArchetypeError::TooFewClusters(n_clusters));
    }
    let diag = diagnostics(&run.embedding.coordinates, &labels, &run.standardized.data, cfg.k_max, cfg.pipeline.seed)?;
    let stability = StabilityReport {
        bootstrap: bootstrap_stability(x, names, &cfg.pipeline, cfg.bootstrap_b)?,
        permutation: permutation_test(x, names, &cfg.pipeline, cfg.permutations)?,
    };
    let (profiles, noise_profile) = match inputs {
        Some(inp) => profile_archetypes(&labels, inp, &cfg.thresholds),
        None => (Vec::new(), None),
    };
    let classifier = train_classifier(x, names, &labels, cfg.pipeline.seed)?;
    let features: Vec<String> = run
        .standardized
        .kept
        .iter()
        .map(|&j| names.get(j).cloned().unwrap_or_else(|| format!("x{j}")))
        .collect();
    let heatmap = heatmap(&run.standardized.data, &labels);
    Ok(ArchetypeReport {
        n_rows: x.nrows(),
        features,
        warnings: run.standardized.warnings.clone(),
        embedding_method: run.embedding.method.clone(),
        explained_variance_ratio: run.embedding.explained_variance_ratio.clone(),
        eps: run.labels.eps,
        min_pts: run.labels.min_pts,
        n_clusters,
        noise_count: run.labels.noise_count(),
        labels,
        diagnostics: diag,
        stability,
        profiles,
        noise_profile,
        classifier,
        heatmap,
        kdistance: run.kdistance,
    })
}

fn heatmap(z: &DMatrix<f64>, labels: &[i64]) -> Vec<HeatmapRow> {
    let mut rows: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != NOISE {
            rows.entry(l).or_default().push(i);
        }
    }
    rows.into_iter()
        .map(|(id, members)| HeatmapRow {
            archetype_id: id,
            values: (0..z.ncols())
                .map(|j| members.iter().map(|&i| z[(i, j)]).sum::<f64>() / members.len() as f64)
                .collect(),
        })
        .collect()
}

impl ArchetypeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `archetype,<feature>...`
    pub fn heatmap_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["archetype".to_string()];
        header.extend(self.features.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for row in &self.heatmap {
            let mut rec = vec![row.archetype_id.to_string()];
            rec.extend(row.values.iter().map(|v| format!("{v}")));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn kdistance_csv(&self) -> String {
        self.kdistance.to_csv()
    }

    /// `k,inertia`
    pub fn elbow_csv(&self) -> String {
        let mut s = String::from("k,inertia\n");
        for (k, inertia) in &self.diagnostics.kmeans_elbow {
            s.push_str(&format!("{k},{inertia}\n"));
        }
        s
    }

    /// `(file name, metric,value table)` per archetype.
    pub fn profile_tables(&self) -> Vec<(String, String)> {
        self.profiles
            .iter()
            .map(|p| {
                let mut s = String::from("metric,value\n");
                s.push_str(&format!("size,{}\n", p.size));
                s.push_str(&format!("dropout_rate,{}\n", p.dropout_rate));
                s.push_str(&format!("libres_share,{}\n", p.libres_share));
                s.push_str(&format!("mean_grade,{}\n", p.mean_grade.map(|g| g.to_string()).unwrap_or_default()));
                s.push_str(&format!("mean_lag,{}\n", p.mean_lag));
                s.push_str(&format!("mean_velocity,{}\n", p.mean_velocity));
                s.push_str(&format!("risk_band,{}\n", p.risk_label));
                if let Some(h) = self.heatmap.iter().find(|h| h.archetype_id == p.archetype_id) {
                    for (f, v) in self.features.iter().zip(&h.values) {
                        s.push_str(&format!("z_{f},{v}\n"));
                    }
                }
                (format!("arquetipo_{}_perfil.csv", p.archetype_id), s)
            })
            .collect()
    }
}
