use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CourseCode, CurriculumDag, CurriculumError};
use crate::datalayer::{EnrollmentAttempt, Outcome};

/// Per-course tallies of attempt outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub pass: u64,
    pub fail: u64,
    pub withdraw: u64,
    pub libre: u64,
}

impl OutcomeCounts {
    pub fn attempts(&self) -> u64 {
        self.pass + self.fail + self.withdraw + self.libre
    }

    pub fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Pass => self.pass += 1,
            Outcome::Fail => self.fail += 1,
            Outcome::Withdraw => self.withdraw += 1,
            Outcome::Libre => self.libre += 1,
        }
    }

    pub fn tally<'a>(attempts: impl IntoIterator<Item = &'a EnrollmentAttempt>) -> BTreeMap<CourseCode, Self> {
        let mut out: BTreeMap<CourseCode, Self> = BTreeMap::new();
        for a in attempts {
            out.entry(a.course_code).or_default().record(a.outcome);
        }
        out
    }
}

/// Weight given to each delay-generating outcome. The unweighted share
/// (all ones) is the default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionWeights {
    pub fail: f64,
    pub withdraw: f64,
    pub libre: f64,
}

impl Default for FrictionWeights {
    fn default() -> Self {
        Self {
            fail: 1.0,
            withdraw: 1.0,
            libre: 1.0,
        }
    }
}

impl FrictionWeights {
    /// Instructional friction coefficient for a tally; `None` when there are no attempts.
    pub fn ifc(&self, counts: &OutcomeCounts) -> Option<f64> {
        let n = counts.attempts();
        if n == 0 {
            return None;
        }
        let delayed = self.fail.clamp(0.0, 1.0) * counts.fail as f64
            + self.withdraw.clamp(0.0, 1.0) * counts.withdraw as f64
            + self.libre.clamp(0.0, 1.0) * counts.libre as f64;
        Some((delayed / n as f64).clamp(0.0, 1.0))
    }
}

/// Share of a course's attempts that ended in fail, withdraw or libre.
pub fn compute_ifc(attempts: &[EnrollmentAttempt], course_code: CourseCode) -> Result<f64, CurriculumError> {
    let counts = OutcomeCounts::tally(attempts.iter().filter(|a| a.course_code == course_code));
    counts
        .get(&course_code)
        .and_then(|c| FrictionWeights::default().ifc(c))
        .ok_or(CurriculumError::NoAttempts(course_code))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionEntry {
    pub code: CourseCode,
    pub name: String,
    pub ifc: f64,
    pub counts: OutcomeCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrictionTable {
    pub entries: Vec<FrictionEntry>,
}

impl FrictionTable {
    /// Tallies every course of `dag` that has at least one attempt, sorted by friction.
    pub fn from_attempts(
        dag: &CurriculumDag,
        attempts: &[EnrollmentAttempt],
        weights: FrictionWeights,
    ) -> Result<Self, CurriculumError> {
        if attempts.is_empty() {
            let first = dag.topological_order().first().copied().unwrap_or_default();
            return Err(CurriculumError::NoAttempts(first));
        }
        let tallies = OutcomeCounts::tally(attempts);
        let mut entries = Vec::with_capacity(tallies.len());
        for (code, counts) in tallies {
            let course = dag.course(code).ok_or(CurriculumError::UnknownCourse(code))?;
            entries.push(FrictionEntry {
                code,
                name: course.name.clone(),
                ifc: weights.ifc(&counts).expect("tallied courses have attempts"),
                counts,
            });
        }
        Ok(rank_friction(FrictionTable { entries }, usize::MAX))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position_of(&self, code: CourseCode) -> Option<usize> {
        self.entries.iter().position(|e| e.code == code)
    }

    /// Tab-separated ranking in the layout of a published friction table.
    pub fn render_table(&self) -> String {
        let mut out = String::from("Position\tCode\tName of the Subject Curriculum\tFriction Index (IFC)\n");
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.3}", i + 1, e.code, e.name, e.ifc);
        }
        out
    }

    /// Machine-readable ranking written by `capire friction`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["position", "code", "name", "ifc", "attempts", "pass", "fail", "withdraw", "libre"])
            .expect("in-memory write");
        for (i, e) in self.entries.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                e.code.to_string(),
                e.name.clone(),
                format!("{:.6}", e.ifc),
                e.counts.attempts().to_string(),
                e.counts.pass.to_string(),
                e.counts.fail.to_string(),
                e.counts.withdraw.to_string(),
                e.counts.libre.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Sorts by descending friction (ties by ascending code) and keeps `top_n`.
pub fn rank_friction(mut table: FrictionTable, top_n: usize) -> FrictionTable {
    table
        .entries
        .sort_by(|a, b| b.ifc.total_cmp(&a.ifc).then(a.code.cmp(&b.code)));
    table.entries.truncate(top_n);
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn attempts(code: CourseCode, pass: usize, fail: usize, withdraw: usize, libre: usize) -> Vec<EnrollmentAttempt> {
        let mut out = Vec::new();
        let mut push = |outcome, k| {
            for i in 0..k {
                out.push(EnrollmentAttempt::new(i as u64, code, 1, outcome, None));
            }
        };
        push(Outcome::Pass, pass);
        push(Outcome::Fail, fail);
        push(Outcome::Withdraw, withdraw);
        push(Outcome::Libre, libre);
        out
    }

    #[test]
    fn ratio_of_delaying_outcomes() {
        let a = attempts(5, 58, 20, 10, 12);
        assert!((compute_ifc(&a, 5).unwrap() - 0.42).abs() < 1e-12);
        assert_eq!(compute_ifc(&attempts(5, 9, 0, 0, 0), 5).unwrap(), 0.0);
        assert_eq!(compute_ifc(&a, 6), Err(CurriculumError::NoAttempts(6)));
    }

    #[test]
    fn weights_scale_outcomes() {
        let counts = OutcomeCounts { pass: 6, fail: 2, withdraw: 2, libre: 0 };
        let w = FrictionWeights { fail: 1.0, withdraw: 0.5, libre: 1.0 };
        assert!((w.ifc(&counts).unwrap() - 0.3).abs() < 1e-12);
    }

    fn entry(code: CourseCode, ifc: f64) -> FrictionEntry {
        FrictionEntry { code, name: format!("C{code}"), ifc, counts: OutcomeCounts::default() }
    }

    #[test]
    fn equal_friction_lower_code_first() {
        let t = rank_friction(FrictionTable { entries: vec![entry(9, 0.3), entry(4, 0.3), entry(7, 0.1)] }, 10);
        let codes: Vec<_> = t.entries.iter().map(|e| e.code).collect();
        assert_eq!(codes, vec![4, 9, 7]);
        let single = rank_friction(FrictionTable { entries: vec![entry(3, 0.2)] }, 10);
        assert_eq!(single.entries, vec![entry(3, 0.2)]);
        assert_eq!(rank_friction(t, 1).len(), 1);
    }

    proptest! {
        #[test]
        fn ifc_bounded_and_monotone(pass in 0u64..50, fail in 0u64..50, withdraw in 0u64..50, libre in 0u64..50) {
            let c = OutcomeCounts { pass, fail, withdraw, libre };
            if let Some(v) = FrictionWeights::default().ifc(&c) {
                prop_assert!((0.0..=1.0).contains(&v));
                if pass > 0 {
                    // convert one pass into a fail, attempts unchanged
                    let worse = OutcomeCounts { pass: pass - 1, fail: fail + 1, ..c };
                    prop_assert!(FrictionWeights::default().ifc(&worse).unwrap() >= v);
                }
            }
        }

        #[test]
        fn ranking_is_deterministic_permutation(values in proptest::collection::vec((0u32..40, 0u32..5), 0..30)) {
            let mut seen = std::collections::BTreeSet::new();
            let entries: Vec<_> = values.into_iter()
                .filter(|(c, _)| seen.insert(*c))
                .map(|(c, q)| entry(c, q as f64 / 4.0))
                .collect();
            let a = rank_friction(FrictionTable { entries: entries.clone() }, usize::MAX);
            let b = rank_friction(FrictionTable { entries: entries.clone() }, usize::MAX);
            prop_assert_eq!(&a, &b);
            let mut x: Vec<_> = a.entries.iter().map(|e| e.code).collect();
            let mut y: Vec<_> = entries.iter().map(|e| e.code).collect();
            x.sort(); y.sort();
            prop_assert_eq!(x, y);
            for w in a.entries.windows(2) {
                prop_assert!(w[0].ifc > w[1].ifc || (w[0].ifc == w[1].ifc && w[0].code < w[1].code));
            }
        }
    }
}
