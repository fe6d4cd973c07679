use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use capire_core::analysis::{archetype_columns, profile_inputs, run_lag, LagConfig};
use capire_core::archetype::{run_archetypes, run_pipeline, ArchetypeConfig, PipelineConfig};
use capire_core::curriculum::{rank_friction, FrictionTable, FrictionWeights};
use capire_core::datalayer::{build_features, FeatureConfig, FeatureMatrix, FeatureSpec, ObservationWindow};
use capire_core::dml::NuisanceSpec;
use capire_core::io::{self, IoError};
use capire_core::macroshock::{run_macro, MacroConfig};
use capire_core::synth::{generate_cohort, SynthConfig};
use capire_core::{curriculum::reference, Error};

mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "capire", version, about = "Curriculum friction, academic lag and dropout analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Rank courses by friction index.
    Friction,
    /// Build the leakage-checked feature matrix.
    Features,
    /// Lag effect on dropout (ATE and velocity curve), plus macro models when a series is present.
    Estimate,
    /// Strike and inflation models only.
    Macro,
    /// Cluster trajectories into archetypes.
    Archetypes,
    /// Write a synthetic dataset with known effects.
    Synth,
}

#[derive(Args)]
struct Opts {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Dataset directory (curriculum.csv, prereqs.csv, students.csv, attempts.csv, macro.csv).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cutoff semester.
    #[arg(long, global = true)]
    vot: Option<u32>,
    /// Inactive semesters before a student counts as dropped out.
    #[arg(long, global = true)]
    grace: Option<u32>,
    #[arg(long = "k-folds", global = true)]
    k_folds: Option<usize>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long = "min-pts", global = true)]
    min_pts: Option<usize>,
    /// Pseudo lag for the placebo test; negative values look after the cutoff.
    #[arg(long, global = true, allow_negative_numbers = true)]
    placebo: Option<i64>,
    #[arg(long, global = true)]
    top: Option<usize>,
    /// Restrict estimation to one archetype's rows.
    #[arg(long = "archetype-subset", global = true, allow_negative_numbers = true)]
    archetype_subset: Option<i64>,
    /// Comma-separated feature specs, e.g. `age,grade_mean:3,strike:2`.
    #[arg(long, global = true)]
    features: Option<String>,
    /// Numeric CSV to cluster instead of a dataset.
    #[arg(long, global = true)]
    matrix: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = RunConfig::resolve(&cli.opts)?;
    fs::create_dir_all(&cli.opts.out).map_err(|source| IoError::Write { path: cli.opts.out.clone(), source })?;
    match cli.command {
        Command::Friction => friction(&cfg, &cli.opts),
        Command::Features => features(&cfg, &cli.opts),
        Command::Estimate => estimate(&cfg, &cli.opts),
        Command::Macro => macro_only(&cfg, &cli.opts),
        Command::Archetypes => archetypes(&cfg, &cli.opts),
        Command::Synth => synth(&cfg, &cli.opts),
    }
}

fn data_dir(opts: &Opts) -> &Path {
    opts.data.as_deref().unwrap_or(Path::new("."))
}

fn write(opts: &Opts, name: &str, contents: &str) -> Result<(), Error> {
    let path = opts.out.join(name);
    io::write_file(&path, contents)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn friction(cfg: &RunConfig, opts: &Opts) -> Result<(), Error> {
    let dir = data_dir(opts);
    let dag = io::load_curriculum(dir)?;
    let text = fs::read_to_string(dir.join(io::ATTEMPTS_FILE))
        .map_err(|source| IoError::Read { path: dir.join(io::ATTEMPTS_FILE), source })?;
    let attempts = io::parse_attempts(&text)?;
    let table = FrictionTable::from_attempts(&dag, &attempts, FrictionWeights::default())?;
    let table = rank_friction(table, cfg.top.unwrap_or(usize::MAX));
    print!("{}", table.render_table());
    write(opts, "friction.csv", &table.to_csv())
}

struct Loaded {
    data: io::Dataset,
    matrix: FeatureMatrix,
}

fn load_matrix(cfg: &RunConfig, opts: &Opts) -> Result<Loaded, Error> {
    let data = io::load_dataset(data_dir(opts))?;
    let window = ObservationWindow::new(cfg.vot)?;
    let specs = match &cfg.features {
        Some(list) => list.iter().map(|s| s.parse::<FeatureSpec>()).collect::<Result<Vec<_>, _>>()?,
        None if data.macro_series.is_some() => FeatureSpec::defaults(window),
        None => FeatureSpec::defaults_without_macro(window),
    };
    let fc = FeatureConfig {
        window,
        grace_semesters: cfg.grace,
        data_end: cfg.data_end,
        specs,
        ..FeatureConfig::default()
    };
    let matrix = build_features(&data.records, &data.dag, data.macro_series.as_ref(), &fc)?;
    Ok(Loaded { data, matrix })
}

fn features(cfg: &RunConfig, opts: &Opts) -> Result<(), Error> {
    let Loaded { matrix, .. } = load_matrix(cfg, opts)?;
    write(opts, "features.csv", &matrix.to_csv())?;
    write(opts, "features_meta.csv", &matrix.meta_csv())
}

fn lag_config(cfg: &RunConfig) -> LagConfig {
    LagConfig {
        k_folds: cfg.k_folds,
        seed: cfg.seed,
        learner: NuisanceSpec { lambda: cfg.lambda, standardize: cfg.standardize },
        spline_degree: cfg.spline_degree,
        knot_quantiles: cfg.knot_quantiles.clone(),
        grid_points: cfg.grid_points,
        ..LagConfig::default()
    }
}

fn macro_config(cfg: &RunConfig) -> Result<MacroConfig, Error> {
    Ok(MacroConfig {
        window: ObservationWindow::new(cfg.vot)?,
        k_folds: cfg.k_folds,
        seed: cfg.seed,
        learner: NuisanceSpec { lambda: cfg.lambda, standardize: cfg.standardize },
        ..MacroConfig::default()
    })
}

fn archetype_config(cfg: &RunConfig) -> ArchetypeConfig {
    ArchetypeConfig {
        pipeline: PipelineConfig { embed_dim: cfg.embed_dim, min_pts: cfg.min_pts, eps: cfg.eps, seed: cfg.seed },
        bootstrap_b: cfg.bootstrap,
        permutations: cfg.permutations,
        k_max: cfg.k_max,
        ..ArchetypeConfig::default()
    }
}

fn estimate(cfg: &RunConfig, opts: &Opts) -> Result<(), Error> {
    let Loaded { data, mut matrix } = load_matrix(cfg, opts)?;
    if let Some(id) = cfg.archetype_subset {
        let names: Vec<String> = archetype_columns(&matrix).into_iter().map(String::from).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let all: Vec<usize> = (0..matrix.n_rows()).collect();
        let x = matrix.design(&refs, &all)?;
        let run = run_pipeline(&x, &names, &archetype_config(cfg).pipeline)?;
        let rows: Vec<usize> = (0..matrix.n_rows()).filter(|&i| run.labels.labels[i] == id).collect();
        if rows.is_empty() {
            return Err(Error::Usage(format!("archetype {id} has no members")));
        }
        info!("archetype {id}: {} rows", rows.len());
        matrix = matrix.subset(&rows);
    }
    let lc = lag_config(cfg);
    let (report, curve) = run_lag(&matrix, &lc)?;
    write(opts, "ate.json", &report.ate.to_json())?;
    write(opts, "lag_report.json", &report.to_json())?;
    write(opts, "cate_grid.csv", &curve.grid_csv())?;
    if let Some(series) = &data.macro_series {
        let macro_report = run_macro(&matrix, series, &macro_config(cfg)?, cfg.placebo)?;
        write(opts, "macro_report.json", &macro_report.to_json())?;
    }
    println!("{}", report.ate.table_row("ATE lag -> dropout"));
    Ok(())
}

fn macro_only(cfg: &RunConfig, opts: &Opts) -> Result<(), Error> {
    let Loaded { data, matrix } = load_matrix(cfg, opts)?;
    let series = data
        .macro_series
        .as_ref()
        .ok_or_else(|| Error::Usage(format!("{} not found in the data directory", io::MACRO_FILE)))?;
    let report = run_macro(&matrix, series, &macro_config(cfg)?, cfg.placebo)?;
    write(opts, "macro_report.json", &report.to_json())
}

fn archetypes(cfg: &RunConfig, opts: &Opts) -> Result<(), Error> {
    let acfg = archetype_config(cfg);
    let report = if let Some(path) = &opts.matrix {
        let (names, x) = io::load_numeric_csv(path)?;
        run_archetypes(&x, &names, None, &acfg)?
    } else {
        let Loaded { data, matrix } = load_matrix(cfg, opts)?;
        let names: Vec<String> = archetype_columns(&matrix).into_iter().map(String::from).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let all: Vec<usize> = (0..matrix.n_rows()).collect();
        let x = matrix.design(&refs, &all)?;
        let inputs = profile_inputs(&matrix, &data.records, &data.dag)?;
        run_archetypes(&x, &names, Some(&inputs), &acfg)?
    };
    write(opts, "archetype_report.json", &report.to_json())?;
    write(opts, "heatmap.csv", &report.heatmap_csv())?;
    write(opts, "kdistance.csv", &report.kdistance_csv())?;
    write(opts, "elbow.csv", &report.elbow_csv())?;
    for (name, table) in report.profile_tables() {
        write(opts, &name, &table)?;
    }
    println!("{} archetypes, {} noise points", report.n_clusters, report.noise_count);
    Ok(())
}

fn synth(cfg: &RunConfig, opts: &Opts) -> Result<(), Error> {
    let sc = SynthConfig { seed: cfg.seed, vot: cfg.vot, grace: cfg.grace, ..cfg.synth.clone() };
    let data = generate_cohort(&sc, &reference::civil_engineering())?;
    io::write_synth(&opts.out, &data)?;
    println!("{} students, {} attempts", data.records.len(), data.attempts().count());
    Ok(())
}
