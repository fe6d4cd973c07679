//! Synthetic cohorts with planted causal structure.
//!
//! Latent ability drives per-attempt failure through the prerequisite graph
//! (and so academic lag) and also dropout directly. Dropout is drawn from a
//! clipped linear index, so the planted lag coefficient is the marginal
//! effect on the dropout probability wherever the index stays inside [0, 1].

mod blobs;

pub use blobs::planted_blobs;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{CourseCode, CurriculumDag};
use crate::datalayer::{
    AcademicCalendar, EnrollmentAttempt, ObservationWindow, Outcome, StudentId, StudentRecord,
};
use crate::macroshock::{MacroPoint, MacroSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("ConfigInvalid: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_students: usize,
    pub n_cohorts: usize,
    pub first_cohort_year: i32,
    pub seed: u64,
    pub ability_sd: f64,
    /// Failure probability of an average student on a course without bump.
    pub base_failure: f64,
    /// Drop in failure probability per ability SD.
    pub ability_effect: f64,
    /// Extra failure probability for specific courses.
    pub friction_bumps: Vec<(CourseCode, f64)>,
    /// Shares of non-pass outcomes that are withdrawals and libres; the rest fail.
    pub withdraw_share: f64,
    pub libre_share: f64,
    pub grade_noise: f64,
    pub max_load: usize,
    /// Ceiling on failure probability after the cutoff for students who persist.
    pub post_cutoff_failure_cap: f64,
    pub vot: u32,
    pub grace: u32,
    /// Dropout index intercept.
    pub dropout_baseline: f64,
    /// Lag coefficient at velocity `cate_center`.
    pub lag_effect: f64,
    /// Change of the lag coefficient per unit of velocity.
    pub cate_slope: f64,
    pub cate_center: f64,
    /// In [0, 1]; the ability coefficient in the dropout index is `-0.2 * confounding`.
    pub confounding: f64,
    /// Coefficient of normalized strike exposure two semesters before the cutoff.
    pub strike_lag2: f64,
    /// Coefficient of normalized lag-2 strike times inflation at the cutoff.
    pub interaction: f64,
    pub strike_probability: f64,
    pub strike_max_days: f64,
    pub inflation_min: f64,
    pub inflation_max: f64,
    /// Share of students still active at the data end (outcome unknown).
    pub censor_rate: f64,
    /// Semesters of data after the last cohort's entry.
    pub horizon: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_students: 2000,
            n_cohorts: 20,
            first_cohort_year: 2010,
            seed: 42,
            ability_sd: 1.0,
            base_failure: 0.35,
            ability_effect: 0.06,
            friction_bumps: Vec::new(),
            withdraw_share: 0.25,
            libre_share: 0.25,
            grade_noise: 0.3,
            max_load: 6,
            post_cutoff_failure_cap: 0.5,
            vot: 3,
            grace: 4,
            dropout_baseline: 0.1,
            lag_effect: 0.05,
            cate_slope: 0.0,
            cate_center: 0.0,
            confounding: 0.6,
            strike_lag2: 0.0,
            interaction: 0.0,
            strike_probability: 0.5,
            strike_max_days: 30.0,
            inflation_min: 0.02,
            inflation_max: 0.30,
            censor_rate: 0.03,
            horizon: 64,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::ConfigInvalid(m));
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_students < 50 {
            return bad(format!("n_students must be at least 50, got {}", self.n_students));
        }
        if self.n_cohorts == 0 {
            return bad("n_cohorts must be positive".into());
        }
        if self.vot == 0 || self.grace == 0 {
            return bad("vot and grace must be at least 1".into());
        }
        if self.max_load == 0 {
            return bad("max_load must be positive".into());
        }
        for (name, v) in [
            ("base_failure", self.base_failure),
            ("withdraw_share", self.withdraw_share),
            ("libre_share", self.libre_share),
            ("post_cutoff_failure_cap", self.post_cutoff_failure_cap),
            ("confounding", self.confounding),
            ("strike_probability", self.strike_probability),
            ("censor_rate", self.censor_rate),
        ] {
            if !prob(v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.withdraw_share + self.libre_share > 1.0 {
            return bad("withdraw_share + libre_share exceeds 1".into());
        }
        if self.ability_sd < 0.0 || self.grade_noise < 0.0 || self.strike_max_days < 0.0 {
            return bad("scales must be non-negative".into());
        }
        if self.inflation_min > self.inflation_max {
            return bad("inflation_min exceeds inflation_max".into());
        }
        if self.horizon < self.vot + 2 * self.grace + 8 {
            return bad(format!("horizon {} too short for vot {} and grace {}", self.horizon, self.vot, self.grace));
        }
        for (code, bump) in &self.friction_bumps {
            if !(-1.0..=1.0).contains(bump) {
                return bad(format!("friction bump for course {code} must lie in [-1, 1]"));
            }
        }
        Ok(())
    }

    pub fn ability_coefficient(&self) -> f64 {
        -0.2 * self.confounding
    }

    /// Planted lag coefficient at velocity `v`.
    pub fn cate(&self, v: f64) -> f64 {
        self.lag_effect + self.cate_slope * (v - self.cate_center)
    }

    pub fn cohort_years(&self) -> Vec<i32> {
        (0..self.n_cohorts as i32).map(|i| self.first_cohort_year + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentTruth {
    pub student_id: StudentId,
    pub ability: f64,
    /// Dropout probability index before clipping.
    pub dropout_index: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub lag_effect: f64,
    pub cate_slope: f64,
    pub cate_center: f64,
    pub ability_coefficient: f64,
    pub strike_lag2: f64,
    pub interaction: f64,
    /// Mean one-unit-lag change in the clipped dropout probability, velocity held fixed.
    pub marginal_ate: f64,
    /// Share of students whose index fell outside [0, 1].
    pub clipped_share: f64,
    /// `(velocity, planted effect)` on an even grid over [0, 1].
    pub cate_grid: Vec<(f64, f64)>,
    pub friction_bumps: Vec<(CourseCode, f64)>,
    pub data_end_abs: i64,
    pub students: Vec<StudentTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dag: CurriculumDag,
    pub records: Vec<StudentRecord>,
    pub macro_series: MacroSeries,
    pub truth: GroundTruth,
    pub config: SynthConfig,
}

impl SynthDataset {
    pub fn attempts(&self) -> impl Iterator<Item = &EnrollmentAttempt> {
        self.records.iter().flat_map(|r| r.attempts.iter())
    }
}

struct Course {
    code: CourseCode,
    semester: u32,
    prereqs: Vec<usize>,
    bump: f64,
}

struct Plan {
    courses: Vec<Course>,
}

impl Plan {
    fn new(dag: &CurriculumDag, cfg: &SynthConfig) -> Self {
        let mut order: Vec<(u32, CourseCode)> = dag
            .courses()
            .map(|c| (dag.plan_semester(c.code).unwrap_or(c.nominal_semester), c.code))
            .collect();
        order.sort_unstable();
        let pos = |code: CourseCode| order.iter().position(|o| o.1 == code);
        let courses = order
            .iter()
            .map(|&(semester, code)| Course {
                code,
                semester,
                prereqs: dag
                    .prerequisites(code)
                    .map(|p| p.iter().filter_map(|&c| pos(c)).collect())
                    .unwrap_or_default(),
                bump: cfg.friction_bumps.iter().filter(|b| b.0 == code).map(|b| b.1).sum(),
            })
            .collect();
        Plan { courses }
    }

    /// Plan-ordered courses open in semester `s`.
    fn enrollable(&self, s: u32, passed: &[bool], max_load: usize) -> Vec<usize> {
        self.courses
            .iter()
            .enumerate()
            .filter(|(i, c)| !passed[*i] && c.semester <= s && c.prereqs.iter().all(|&p| passed[p]))
            .map(|(i, _)| i)
            .take(max_load)
            .collect()
    }
}

struct Sim<'a> {
    cfg: &'a SynthConfig,
    plan: &'a Plan,
    rng: &'a mut ChaCha8Rng,
    grade_dist: Normal<f64>,
}

impl Sim<'_> {
    fn semester(
        &mut self,
        id: StudentId,
        s: u32,
        ability: f64,
        cap: f64,
        passed: &mut [bool],
        out: &mut Vec<EnrollmentAttempt>,
    ) -> usize {
        let open = self.plan.enrollable(s, passed, self.cfg.max_load);
        for &i in &open {
            let course = &self.plan.courses[i];
            let p_fail = (self.cfg.base_failure + course.bump - self.cfg.ability_effect * ability)
                .clamp(0.02, 0.98)
                .min(cap);
            let u: f64 = self.rng.random();
            let grade = (6.0 + 1.5 * ability + self.grade_dist.sample(self.rng)).clamp(0.0, 10.0);
            let outcome = if u >= p_fail {
                passed[i] = true;
                Outcome::Pass
            } else {
                let r = u / p_fail;
                if r < self.cfg.withdraw_share {
                    Outcome::Withdraw
                } else if r < self.cfg.withdraw_share + self.cfg.libre_share {
                    Outcome::Libre
                } else {
                    Outcome::Fail
                }
            };
            let grade = outcome.is_graded().then_some((grade * 100.0).round() / 100.0);
            out.push(EnrollmentAttempt::new(id, course.code, s, outcome, grade));
        }
        open.len()
    }
}

fn macro_series(cfg: &SynthConfig, calendar: AcademicCalendar, data_end_abs: i64) -> MacroSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let start = calendar.absolute(cfg.first_cohort_year, 1) - 8;
    let entries = (start..=data_end_abs)
        .map(|s| {
            let strike = if rng.random::<f64>() < cfg.strike_probability {
                (rng.random::<f64>() * cfg.strike_max_days).round()
            } else {
                0.0
            };
            let inflation = cfg.inflation_min + rng.random::<f64>() * (cfg.inflation_max - cfg.inflation_min);
            (s, MacroPoint { strike_intensity: strike, inflation: (inflation * 1e4).round() / 1e4 })
        })
        .collect();
    MacroSeries::new(entries).expect("generated series is contiguous")
}

const MAX_SEMESTERS: u32 = 60;

/// Simulates a cohort over `dag`. Deterministic in `config.seed`.
pub fn generate_cohort(config: &SynthConfig, dag: &CurriculumDag) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let expected = dag.expected_courses(config.vot);
    if expected == 0 {
        return Err(SynthError::ConfigInvalid(format!("no plan courses by semester {}", config.vot)));
    }
    let window = ObservationWindow::new(config.vot).map_err(|e| SynthError::ConfigInvalid(e.to_string()))?;
    let calendar = AcademicCalendar::default();
    let cohorts = config.cohort_years();
    let last_cohort = *cohorts.last().expect("n_cohorts > 0");
    let data_end_abs = calendar.absolute(last_cohort, config.horizon as i64);
    let series = macro_series(config, calendar, data_end_abs);
    let normalized = series.normalized();

    let plan = Plan::new(dag, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ability_dist = Normal::new(0.0, config.ability_sd).map_err(|e| SynthError::ConfigInvalid(e.to_string()))?;
    let age_dist: Normal<f64> = Normal::new(0.0, 1.5).expect("valid");
    let grade_dist = Normal::new(0.0, config.grade_noise).map_err(|e| SynthError::ConfigInvalid(e.to_string()))?;
    let beta = config.ability_coefficient();

    let mut records = Vec::with_capacity(config.n_students);
    let mut truths = Vec::with_capacity(config.n_students);
    let mut marginal = 0.0;
    let mut clipped = 0usize;
    for idx in 0..config.n_students {
        let id = idx as StudentId + 1;
        let cohort = cohorts[idx % cohorts.len()];
        let ability = ability_dist.sample(&mut rng);
        let age = ((18.0 + age_dist.sample(&mut rng).abs()) * 10.0).round() / 10.0;
        let mut passed = vec![false; plan.courses.len()];
        let mut attempts = Vec::new();
        let mut sim = Sim { cfg: config, plan: &plan, rng: &mut rng, grade_dist };
        for s in 1..=config.vot {
            sim.semester(id, s, ability, 1.0, &mut passed, &mut attempts);
        }
        let completed = passed
            .iter()
            .zip(&plan.courses)
            .filter(|(p, c)| **p && c.semester <= config.vot)
            .count();
        let lag = expected.saturating_sub(completed) as f64;
        let velocity = completed as f64 / expected as f64;

        let exposure_abs = calendar.absolute(cohort, window.vot_semesters as i64 - 2);
        let strike2 = normalized.get(exposure_abs).expect("series covers windows").strike_intensity;
        let inflation = normalized
            .get(calendar.absolute(cohort, window.vot_semesters as i64))
            .expect("series covers windows")
            .inflation;
        let theta = config.cate(velocity);
        let base = config.dropout_baseline
            + beta * ability
            + config.strike_lag2 * strike2
            + config.interaction * strike2 * inflation;
        let index = base + theta * lag;
        if !(0.0..=1.0).contains(&index) {
            clipped += 1;
        }
        marginal += (base + theta * (lag + 1.0)).clamp(0.0, 1.0) - index.clamp(0.0, 1.0);
        let dropped = sim.rng.random::<f64>() < index.clamp(0.0, 1.0);
        let censored = sim.rng.random::<f64>() < config.censor_rate;
        let data_end_rel = calendar.relative(cohort, data_end_abs) as u32;

        let mut graduated = false;
        if censored {
            let back = sim.rng.random_range(0..config.grace);
            let s = data_end_rel - back;
            if let Some(&i) = plan.enrollable(s, &passed, 1).first() {
                attempts.push(EnrollmentAttempt::new(id, plan.courses[i].code, s, Outcome::Withdraw, None));
            }
        } else if dropped {
            let exit = config.vot + 1 + sim.rng.random_range(0..4);
            for s in config.vot + 1..=exit {
                sim.semester(id, s, ability, config.post_cutoff_failure_cap, &mut passed, &mut attempts);
            }
        } else {
            let mut s = config.vot;
            while !passed.iter().all(|p| *p) && s < MAX_SEMESTERS.min(data_end_rel) {
                s += 1;
                sim.semester(id, s, ability, config.post_cutoff_failure_cap, &mut passed, &mut attempts);
            }
            graduated = passed.iter().all(|p| *p);
        }
        let last = attempts.iter().map(|a| a.semester_index).max().unwrap_or(0);
        let record = StudentRecord::new(id, cohort, age, attempts, last, graduated)
            .map_err(|e| SynthError::ConfigInvalid(e.to_string()))?;
        records.push(record);
        truths.push(StudentTruth { student_id: id, ability, dropout_index: index, censored });
    }

    let truth = GroundTruth {
        lag_effect: config.lag_effect,
        cate_slope: config.cate_slope,
        cate_center: config.cate_center,
        ability_coefficient: beta,
        strike_lag2: config.strike_lag2,
        interaction: config.interaction,
        marginal_ate: marginal / config.n_students as f64,
        clipped_share: clipped as f64 / config.n_students as f64,
        cate_grid: (0..=20).map(|i| i as f64 / 20.0).map(|v| (v, config.cate(v))).collect(),
        friction_bumps: config.friction_bumps.clone(),
        data_end_abs,
        students: truths,
    };
    Ok(SynthDataset { dag: dag.clone(), records, macro_series: series, truth, config: config.clone() })
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }

    pub fn abilities(&self) -> DVector<f64> {
        DVector::from_iterator(self.students.len(), self.students.iter().map(|s| s.ability))
    }
}
