//! End-to-end acceptance checks. Runs without the libtest harness so the
//! verdict lines always reach the terminal; exits non-zero if any check fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::tempdir;

use capire_core::analysis::{estimate_lag_ate, estimate_lag_cate, naive_lag_effect, LagConfig};
use capire_core::archetype::{
    adjusted_rand_index, dbscan, run_archetypes, silhouette, ArchetypeConfig, PipelineConfig,
};
use capire_core::curriculum::reference::civil_engineering;
use capire_core::curriculum::{rank_friction, FrictionTable, FrictionWeights};
use capire_core::datalayer::{
    build_features, validate_leakage, DataError, FeatureConfig, FeatureMatrix, FeatureSpec, ObservationWindow, Role,
};
use capire_core::dml::{estimate_ate, fullsample_residuals, NuisanceSpec};
use capire_core::macroshock::{run_macro, MacroConfig};
use capire_core::stats::pearson;
use capire_core::synth::{generate_cohort, planted_blobs, SynthConfig, SynthDataset};
use common::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn matrix_for(data: &SynthDataset) -> FeatureMatrix {
    let fc = FeatureConfig { data_end: Some(data.truth.data_end_abs), ..FeatureConfig::default() };
    build_features(&data.records, &data.dag, Some(&data.macro_series), &fc).expect("features build")
}

fn cohort(cfg: SynthConfig) -> (SynthDataset, FeatureMatrix) {
    let data = generate_cohort(&cfg, &civil_engineering()).expect("generator config is valid");
    let m = matrix_for(&data);
    (data, m)
}

const TAU: f64 = 0.05;

/// Shared by the first two checks: the same 50 cohorts.
struct AteRun {
    tau: f64,
    covers: bool,
    naive: f64,
    elapsed: Duration,
}

fn ate_runs() -> Vec<AteRun> {
    (0..50)
        .map(|seed| {
            let t0 = Instant::now();
            let (_, m) = cohort(SynthConfig { seed, n_students: 2000, lag_effect: TAU, ..SynthConfig::default() });
            let ate = estimate_lag_ate(&m, &LagConfig { seed, ..LagConfig::default() }).unwrap();
            let elapsed = t0.elapsed();
            let naive = naive_lag_effect(&m).unwrap();
            AteRun { tau: ate.tau, covers: ate.covers(TAU), naive: naive.tau, elapsed }
        })
        .collect()
}

fn ate_recovery(runs: &[AteRun]) -> Verdict {
    let close = runs.iter().filter(|r| (r.tau - TAU).abs() <= 0.015).count();
    let cover = runs.iter().filter(|r| r.covers).count();
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    let n = runs.len();
    verdict(
        close * 10 >= n * 9 && cover * 10 >= n * 9 && slowest < Duration::from_secs(10),
        format!("within 0.015: {close}/{n}, CI covers: {cover}/{n}, slowest run {slowest:.2?}"),
    )
}

fn confounding(runs: &[AteRun]) -> Verdict {
    let worse = runs.iter().filter(|r| (r.naive - TAU).abs() > (r.tau - TAU).abs()).count();
    let mean_naive = runs.iter().map(|r| r.naive).sum::<f64>() / runs.len() as f64;
    verdict(
        worse * 10 >= runs.len() * 9,
        format!("naive farther than DML: {worse}/{}, mean naive {mean_naive:.4}", runs.len()),
    )
}

fn cate_shape() -> Verdict {
    let seeds = 20;
    let (mut corr_ok, mut strict, mut min_r) = (0, 0, f64::INFINITY);
    let mut mean_curve: Vec<f64> = Vec::new();
    for seed in 0..seeds {
        let cfg = SynthConfig {
            seed,
            n_students: 5000,
            lag_effect: 0.10,
            cate_slope: -0.10,
            cate_center: 0.0,
            ..SynthConfig::default()
        };
        let (_, m) = cohort(cfg.clone());
        let curve = estimate_lag_cate(&m, &LagConfig { seed, ..LagConfig::default() }).unwrap();
        let est = curve.effects();
        let truth: Vec<f64> = curve.evaluation.iter().map(|p| cfg.cate(p.velocity)).collect();
        let r = pearson(&est, &truth);
        min_r = min_r.min(r);
        corr_ok += usize::from(r >= 0.9);
        strict += usize::from(curve.is_monotone_decreasing());
        mean_curve.resize(est.len(), 0.0);
        for (acc, e) in mean_curve.iter_mut().zip(&est) {
            *acc += e / seeds as f64;
        }
    }
    let mean_monotone = mean_curve.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        corr_ok == seeds as usize && mean_monotone,
        format!(
            "corr >= 0.9: {corr_ok}/{seeds} (min {min_r:.3}), seed-mean curve decreasing: {mean_monotone}, \
             strictly decreasing per seed: {strict}/{seeds}"
        ),
    )
}

fn fwl_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, p) = (400, 5);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gamma = DVector::from_fn(p, |j, _| 0.3 * j as f64 - 0.5);
    let beta = DVector::from_fn(p, |j, _| 1.0 - 0.2 * j as f64);
    let t = &x * &gamma + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)).add_scalar(0.7);
    let y = &t * 0.8 + &x * &beta + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)).add_scalar(-1.2);

    let res = fullsample_residuals(&x, &y, &t, &NuisanceSpec::ols()).unwrap();
    let dml = estimate_ate(&res).unwrap().tau;

    let mut design = DMatrix::from_element(n, p + 2, 1.0);
    design.set_column(1, &t);
    design.view_mut((0, 2), (n, p)).copy_from(&x);
    let joint = design.svd(true, true).solve(&y, 1e-14).unwrap()[1];
    let diff = (dml - joint).abs();
    verdict(diff <= 1e-8, format!("DML {dml:.12} vs joint OLS {joint:.12}, |diff| {diff:.2e}"))
}

fn rate_ok(hits: usize, n: usize) -> bool {
    let r = hits as f64 / n as f64;
    (0.02..=0.10).contains(&r)
}

fn null_calibration() -> Verdict {
    let seeds = 200u64;
    // ATE, strike lags 1..3, placebo
    let mut rejections = [0usize; 5];
    for seed in 0..seeds {
        let (data, m) = cohort(SynthConfig {
            seed,
            n_cohorts: 40,
            lag_effect: 0.0,
            strike_lag2: 0.0,
            interaction: 0.0,
            ..SynthConfig::default()
        });
        let ate = estimate_lag_ate(&m, &LagConfig { seed, ..LagConfig::default() }).unwrap();
        let r = run_macro(&m, &data.macro_series, &MacroConfig { seed, ..MacroConfig::default() }, Some(-2)).unwrap();
        let mut ps = vec![ate.p_value];
        ps.extend(r.lags.iter().map(|l| l.estimate.p_value));
        ps.push(r.placebo.as_ref().unwrap().estimate.p_value);
        for (k, p) in ps.iter().enumerate() {
            rejections[k] += usize::from(*p < 0.05);
        }
    }
    let n = seeds as usize;
    let rates: Vec<String> =
        ["ATE", "lag1", "lag2", "lag3", "placebo"].iter().zip(&rejections).map(|(l, r)| format!("{l} {r}/{n}")).collect();
    verdict(rejections.iter().all(|&r| rate_ok(r, n)), format!("rejections at 0.05: {}", rates.join(", ")))
}

fn dual_stressor() -> Verdict {
    let seeds = 50u64;
    let (mut selective, mut covered) = (0, 0);
    for seed in 0..seeds {
        let (data, m) = cohort(SynthConfig { seed, n_cohorts: 40, strike_lag2: 0.3, ..SynthConfig::default() });
        let r = run_macro(&m, &data.macro_series, &MacroConfig { seed, ..MacroConfig::default() }, None).unwrap();
        let sig: Vec<bool> = r.lags.iter().map(|l| l.estimate.significant(0.05)).collect();
        selective += usize::from(!sig[0] && sig[1] && !sig[2]);

        let planted = 0.5;
        let (data, m) = cohort(SynthConfig { seed, n_cohorts: 40, interaction: planted, ..SynthConfig::default() });
        let r = run_macro(&m, &data.macro_series, &MacroConfig { seed, ..MacroConfig::default() }, None).unwrap();
        covered += usize::from(r.interaction.as_ref().unwrap().covers(planted));
    }
    let n = seeds as usize;
    verdict(
        selective * 10 >= n * 8 && covered * 10 >= n * 9,
        format!("lag 2 alone significant: {selective}/{n}, interaction CI covers: {covered}/{n}"),
    )
}

/// Every parametrized constructor at every horizon past the cutoff, plus the
/// fixed entry-time ones, which are caught once their declared horizon is moved.
fn leakage_guard() -> Verdict {
    let (data, _) = cohort(SynthConfig { n_students: 200, ..SynthConfig::default() });
    let mut checked = 0;
    let mut failures = Vec::new();
    for vot in 1..=5i64 {
        let window = ObservationWindow::new(vot as u32).unwrap();
        let base = FeatureSpec::defaults(window);
        let mut late = Vec::new();
        for h in vot + 1..=vot + 3 {
            let back = vot - h;
            late.extend([
                FeatureSpec::TermLoad { semester: h },
                FeatureSpec::TermGradeMean { semester: h },
                FeatureSpec::GradeMean { through: h },
                FeatureSpec::MeanIfc { through: h },
                FeatureSpec::FailCount { through: h },
                FeatureSpec::WithdrawCount { through: h },
                FeatureSpec::LibresShare { through: h },
                FeatureSpec::AttemptCount { through: h },
                FeatureSpec::RepeatedAttempts { through: h },
                FeatureSpec::StrikeExposure { lag: back },
                FeatureSpec::Inflation { lag: back },
                FeatureSpec::StrikeInflation { lag: back },
            ]);
        }
        for spec in late {
            let mut specs = base.clone();
            specs.push(spec);
            let fc = FeatureConfig {
                window,
                data_end: Some(data.truth.data_end_abs),
                specs,
                ..FeatureConfig::default()
            };
            checked += 1;
            match build_features(&data.records, &data.dag, Some(&data.macro_series), &fc) {
                Err(DataError::LeakageViolation(v)) if !v.is_empty() && v.iter().all(|x| x.observation_semester > vot) => {}
                other => failures.push(format!("{spec} at VOT {vot}: {:?}", other.map(|_| "built"))),
            }
        }
        let fc = FeatureConfig { window, data_end: Some(data.truth.data_end_abs), ..FeatureConfig::with_window(window) };
        let clean = build_features(&data.records, &data.dag, Some(&data.macro_series), &fc).unwrap();
        for (i, col) in clean.columns.iter().enumerate() {
            if col.meta.role == Role::Outcome {
                continue;
            }
            let mut tampered = clean.clone();
            tampered.columns[i].meta.observation_semester = vot + 1;
            checked += 1;
            let v = validate_leakage(&tampered, window);
            if v.len() != 1 || v[0].column != col.meta.name {
                failures.push(format!("tampered {} at VOT {vot} not caught", col.meta.name));
            }
        }
    }
    verdict(failures.is_empty(), format!("{checked} constructed cases, {} missed {:?}", failures.len(), failures))
}

fn friction_ordering() -> Verdict {
    let dag = civil_engineering();
    let codes = dag.topological_order().to_vec();
    let seeds = 100u64;
    let mut first = 0;
    for seed in 0..seeds {
        let bumped = codes[seed as usize % codes.len()];
        let data =
            generate_cohort(&SynthConfig { seed, friction_bumps: vec![(bumped, 0.3)], ..SynthConfig::default() }, &dag)
                .unwrap();
        let attempts: Vec<_> = data.attempts().cloned().collect();
        let table = rank_friction(FrictionTable::from_attempts(&dag, &attempts, FrictionWeights::default()).unwrap(), 1);
        first += usize::from(table.entries[0].code == bumped);
    }

    let tmp = tempdir().unwrap();
    let out = capire(&["friction", "--data", s(&fixture("friction_golden")), "--out", s(tmp.path()), "--top", "10"]);
    let expected = std::fs::read(fixture("friction_golden").join("expected_table.txt")).unwrap();
    let golden = code(&out) == 0 && out.stdout == expected;
    verdict(
        first * 100 >= seeds as usize * 95 && golden,
        format!("bumped course ranked first: {first}/{seeds}, golden table identical: {golden}"),
    )
}

/// Largest within-blob k-distance and smallest between-blob distance; any radius strictly between them separates the blobs.
fn separating_eps(points: &DMatrix<f64>, truth: &[i64], k: usize) -> (f64, f64) {
    let n = points.nrows();
    let dist = |i: usize, j: usize| (points.row(i) - points.row(j)).norm();
    let (mut within, mut between) = (0.0f64, f64::INFINITY);
    for i in 0..n {
        let mut same: Vec<f64> = (0..n).filter(|&j| j != i && truth[j] == truth[i]).map(|j| dist(i, j)).collect();
        same.sort_by(f64::total_cmp);
        within = within.max(same[k - 1]);
        for j in 0..n {
            if truth[j] != truth[i] {
                between = between.min(dist(i, j));
            }
        }
    }
    (within, between)
}

fn brute_silhouette(points: &DMatrix<f64>, labels: &[i64]) -> f64 {
    let n = points.nrows();
    let mut clusters: Vec<i64> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: i64| {
            let ds: Vec<f64> =
                (0..n).filter(|&j| j != i && labels[j] == c).map(|j| (points.row(i) - points.row(j)).norm()).collect();
            ds.iter().sum::<f64>() / ds.len() as f64
        };
        let a = mean_to(labels[i]);
        let b = clusters.iter().filter(|&&c| c != labels[i]).map(|&c| mean_to(c)).fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

fn cluster_recovery() -> Verdict {
    let (x, truth) = planted_blobs(3, 60, 8, 10.0, 11);
    let names: Vec<String> = (0..x.ncols()).map(|j| format!("f{j}")).collect();
    let min_pts = 5;
    // DBSCAN on the planted coordinates with a radius inside the gap.
    let (within, between) = separating_eps(&x, &truth, min_pts);
    let eps = 0.5 * (within + between);
    let ari = adjusted_rand_index(&dbscan(&x, eps, min_pts).unwrap().labels, &truth);

    // Full pipeline, radius from the k-distance knee.
    let cfg = ArchetypeConfig {
        pipeline: PipelineConfig { min_pts, ..PipelineConfig::default() },
        bootstrap_b: 200,
        permutations: 99,
        ..ArchetypeConfig::default()
    };
    let report = run_archetypes(&x, &names, None, &cfg).unwrap();
    let boot = report.stability.bootstrap.mean_ari;
    let perm = report.stability.permutation.p_value;
    let acc = report.classifier.accuracy;
    let pipeline_ari = adjusted_rand_index(&report.labels, &truth);

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let pts = DMatrix::from_fn(20, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let labels: Vec<i64> = (0..20).map(|i| [0, 1, 2][(i * 7 + rng.random_range(0..2)) % 3]).collect();
    let sil_gap = (silhouette(&pts, &labels).unwrap() - brute_silhouette(&pts, &labels)).abs();

    verdict(
        within < between
            && ari == 1.0
            && boot >= 0.95
            && (perm - 0.01).abs() < 1e-12
            && sil_gap <= 1e-10
            && acc >= 0.95,
        format!(
            "DBSCAN ARI {ari:.4} at eps {eps:.3} (gap {within:.3}..{between:.3}), pipeline: {} clusters, ARI {pipeline_ari:.4}, \
             bootstrap mean ARI {boot:.4}, permutation p {perm:.4}, classifier accuracy {acc:.4}; \
             silhouette oracle gap {sil_gap:.1e}",
            report.n_clusters
        ),
    )
}

fn determinism() -> Verdict {
    let tmp = tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let blobs = root.join("blobs.csv");
    write_blobs(&blobs, 40, 5);
    let golden_dir = fixture("friction_golden");
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("synth", vec!["--seed", "9"]),
        ("friction", vec!["--data", s(&golden_dir)]),
        ("features", vec!["--data", s(&data)]),
        ("estimate", vec!["--data", s(&data), "--placebo", "-2"]),
        ("macro", vec!["--data", s(&data)]),
        ("archetypes", vec!["--matrix", s(&blobs)]),
    ];
    let first = capire(&["synth", "--out", s(&data)]);
    if code(&first) != 0 {
        return verdict(false, format!("synth failed: {}", stderr(&first)));
    }
    let mut differing = Vec::new();
    for (cmd, extra) in &runs {
        let mut snaps = Vec::new();
        for rep in 0..2 {
            let out_dir = root.join(format!("{cmd}_{rep}"));
            let mut args = vec![*cmd, "--out", s(&out_dir)];
            args.extend(extra.iter().copied());
            let out = capire(&args);
            if code(&out) != 0 {
                return verdict(false, format!("{cmd} exited {}: {}", code(&out), stderr(&out)));
            }
            snaps.push((snapshot(&out_dir), out.stdout));
        }
        if snaps[0] != snaps[1] || snaps[0].0.is_empty() {
            differing.push(*cmd);
        }
    }
    verdict(
        differing.is_empty(),
        format!("{} commands run twice, differing outputs: {:?}", runs.len(), differing),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |id: usize, name: &str, v: Verdict| {
        all &= v.pass;
        println!("{} {id:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    let runs = ate_runs();
    report(1, "ATE recovery", ate_recovery(&runs));
    report(2, "confounding demonstration", confounding(&runs));
    report(3, "CATE shape", cate_shape());
    report(4, "FWL exactness", fwl_exactness());
    report(5, "null calibration", null_calibration());
    report(6, "strike lag selectivity and interaction", dual_stressor());
    report(7, "leakage guard", leakage_guard());
    report(8, "friction ordering", friction_ordering());
    report(9, "cluster recovery", cluster_recovery());
    report(10, "CLI determinism", determinism());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
