use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::NOISE;
use crate::curriculum::CurriculumDag;
use crate::datalayer::{
    derive_lag, derive_velocity, DataError, DropoutLabel, ObservationWindow, Outcome, StudentRecord,
};

/// Per-student quantities aggregated into archetype profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileInput {
    /// `None` for censored students.
    pub dropout: Option<f64>,
    pub attempts: usize,
    pub libre_attempts: usize,
    pub grade_sum: f64,
    pub graded: usize,
    pub lag: f64,
    pub velocity: f64,
}

impl ProfileInput {
    /// Attempt tallies cover semesters up to the cutoff.
    pub fn from_record(
        record: &StudentRecord,
        dag: &CurriculumDag,
        window: ObservationWindow,
        label: DropoutLabel,
    ) -> Result<Self, DataError> {
        let early = record.attempts.iter().filter(|a| a.semester_index <= window.vot_semesters);
        let mut input = ProfileInput {
            dropout: label.value(),
            attempts: 0,
            libre_attempts: 0,
            grade_sum: 0.0,
            graded: 0,
            lag: derive_lag(record, dag, window) as f64,
            velocity: derive_velocity(record, dag, window)?,
        };
        for a in early {
            input.attempts += 1;
            input.libre_attempts += (a.outcome == Outcome::Libre) as usize;
            if let Some(g) = a.grade {
                input.grade_sum += g;
                input.graded += 1;
            }
        }
        Ok(input)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskBand {
    Low,
    Moderate,
    High,
}

impl RiskBand {
    pub fn label(self) -> &'static str {
        match self {
            RiskBand::Low => "Bajo Riesgo",
            RiskBand::Moderate => "Riesgo Moderado",
            RiskBand::High => "Alto Riesgo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskThresholds {
    pub high: f64,
    pub moderate: f64,
}

impl Default for RiskThresholds {
    fn default() -> Self {
        Self { high: 0.6, moderate: 0.4 }
    }
}

impl RiskThresholds {
    pub fn band(&self, dropout_rate: f64) -> RiskBand {
        if dropout_rate >= self.high {
            RiskBand::High
        } else if dropout_rate >= self.moderate {
            RiskBand::Moderate
        } else {
            RiskBand::Low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeProfile {
    pub archetype_id: i64,
    pub size: usize,
    /// Among students with an observed outcome.
    pub dropout_rate: f64,
    /// Libre attempts over all attempts, pooled.
    pub libres_share: f64,
    pub mean_grade: Option<f64>,
    pub mean_lag: f64,
    pub mean_velocity: f64,
    pub risk_band: RiskBand,
    pub risk_label: String,
}

fn summarize(id: i64, members: &[&ProfileInput], thresholds: &RiskThresholds) -> ArchetypeProfile {
    let observed: Vec<f64> = members.iter().filter_map(|m| m.dropout).collect();
    let dropout_rate = if observed.is_empty() { 0.0 } else { observed.iter().sum::<f64>() / observed.len() as f64 };
    let attempts: usize = members.iter().map(|m| m.attempts).sum();
    let libres: usize = members.iter().map(|m| m.libre_attempts).sum();
    let graded: usize = members.iter().map(|m| m.graded).sum();
    let grade_sum: f64 = members.iter().map(|m| m.grade_sum).sum();
    let n = members.len() as f64;
    let band = thresholds.band(dropout_rate);
    ArchetypeProfile {
        archetype_id: id,
        size: members.len(),
        dropout_rate,
        libres_share: if attempts == 0 { 0.0 } else { libres as f64 / attempts as f64 },
        mean_grade: (graded > 0).then(|| grade_sum / graded as f64),
        mean_lag: members.iter().map(|m| m.lag).sum::<f64>() / n,
        mean_velocity: members.iter().map(|m| m.velocity).sum::<f64>() / n,
        risk_band: band,
        risk_label: band.label().to_string(),
    }
}

/// One profile per cluster in id order, and the noise group on its own.
pub fn profile_archetypes(
    labels: &[i64],
    inputs: &[ProfileInput],
    thresholds: &RiskThresholds,
) -> (Vec<ArchetypeProfile>, Option<ArchetypeProfile>) {
    let mut groups: BTreeMap<i64, Vec<&ProfileInput>> = BTreeMap::new();
    for (l, input) in labels.iter().zip(inputs) {
        groups.entry(*l).or_default().push(input);
    }
    let noise = groups.remove(&NOISE).map(|m| summarize(NOISE, &m, thresholds));
    let profiles = groups.iter().map(|(id, m)| summarize(*id, m, thresholds)).collect();
    (profiles, noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(dropout: f64, attempts: usize, libres: usize) -> ProfileInput {
        ProfileInput {
            dropout: Some(dropout),
            attempts,
            libre_attempts: libres,
            grade_sum: 12.0,
            graded: 2,
            lag: 2.0,
            velocity: 0.5,
        }
    }

    #[test]
    fn hand_counted_cluster() {
        let inputs = vec![input(1.0, 2, 1), input(1.0, 2, 1), input(0.0, 2, 1), input(0.0, 2, 0)];
        let (p, noise) = profile_archetypes(&[0, 0, 0, 0], &inputs, &RiskThresholds::default());
        assert!(noise.is_none());
        assert_eq!(p[0].dropout_rate, 0.5);
        assert_eq!(p[0].libres_share, 0.375);
        assert_eq!(p[0].mean_grade, Some(6.0));
        assert_eq!(p[0].risk_label, "Riesgo Moderado");
    }

    #[test]
    fn risk_band_fixtures() {
        let t = RiskThresholds::default();
        assert_eq!(t.band(1.0).label(), "Alto Riesgo");
        assert_eq!(t.band(0.227).label(), "Bajo Riesgo");
        // 1000 attempts with 822 libres and everyone dropped out
        let (p, _) = profile_archetypes(&[3], &[input(1.0, 1000, 822)], &t);
        assert!((p[0].libres_share - 0.822).abs() < 1e-12);
        assert_eq!(p[0].risk_label, "Alto Riesgo");
    }

    #[test]
    fn noise_reported_separately_and_censored_ignored() {
        let mut censored = input(0.0, 1, 0);
        censored.dropout = None;
        let inputs = vec![input(1.0, 1, 0), censored, input(0.0, 1, 0)];
        let (p, noise) = profile_archetypes(&[0, 0, NOISE], &inputs, &RiskThresholds::default());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].size, 2);
        assert_eq!(p[0].dropout_rate, 1.0);
        assert_eq!(noise.unwrap().size, 1);
    }
}
