//! Fixtures shared by the benchmarks in `benches/`.

use capire_core::curriculum::reference::civil_engineering;
use capire_core::datalayer::{build_features, FeatureConfig, FeatureMatrix};
use capire_core::synth::{generate_cohort, SynthConfig, SynthDataset};

pub fn cohort(n_students: usize, seed: u64) -> SynthDataset {
    let cfg = SynthConfig { n_students, seed, ..SynthConfig::default() };
    generate_cohort(&cfg, &civil_engineering()).expect("default config is valid")
}

pub fn feature_matrix(data: &SynthDataset) -> FeatureMatrix {
    let fc = FeatureConfig { data_end: Some(data.truth.data_end_abs), ..FeatureConfig::default() };
    build_features(&data.records, &data.dag, Some(&data.macro_series), &fc).expect("synthetic data is clean")
}
