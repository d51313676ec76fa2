//! Command-line interface: argument parsing, config-file merging, and
//! subcommand dispatch. Flags override config-file values, which override
//! built-in defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::bootstrap::{build_universe, random_baseline, run_bootstrap, Arm};
use crate::error::{Error, Result};
use crate::ingest::InputFormat;
use crate::pipeline::{
    derive_seed, ingest_table, run_experiment_arms, run_pipeline, universe_params, Ingested,
    RunConfig,
};
use crate::regression::{predictor_moments, rating_level_regression, restaurant_level_regression};
use crate::report;
use crate::segmentation::{cohort_summary, segment_raters};
use crate::synthdata::{generate, SynthConfig};

#[derive(Parser)]
#[command(
    name = "ratelens",
    version,
    about = "Rating analytics: rater segmentation, rating regressions, and a seeded resampling experiment"
)]
pub struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log more detail to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the source tables, filter reviews to restaurants, and write the
    /// analysis rating set.
    Ingest(CommonArgs),
    /// Per-user and per-business statistics, population moments, and score
    /// distribution exports.
    Stats(CommonArgs),
    /// Label raters by percentile thresholds and export the cohort files.
    Segment(CommonArgs),
    /// Fit the rating-level or restaurant-level model.
    Regress(RegressArgs),
    /// Run the seeded resampling experiment.
    Bootstrap(BootstrapArgs),
    /// Generate a synthetic rating set with known latents.
    Synth(SynthArgs),
    /// Run the full pipeline and write a manifest.
    Run(CommonArgs),
    /// Emit every figure and table artifact (same work as `run`).
    Report(CommonArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Review table path.
    #[arg(long)]
    reviews: Option<PathBuf>,
    /// Business table path; omit when the reviews are already restaurant-only.
    #[arg(long)]
    businesses: Option<PathBuf>,
    /// User table path (counted for the dataset summary only).
    #[arg(long)]
    users: Option<PathBuf>,
    /// Input format [default: json].
    #[arg(long, value_enum)]
    format: Option<InputFormat>,
    /// Abort on the first malformed or unknown-business record.
    #[arg(long)]
    strict: bool,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Eligibility threshold for segmentation [default: 5].
    #[arg(long)]
    min_ratings: Option<u64>,
    /// Low percentile for the deflating threshold [default: 25].
    #[arg(long)]
    lo_pct: Option<f64>,
    /// High percentile for the inflating threshold [default: 75].
    #[arg(long)]
    hi_pct: Option<f64>,
    /// Master seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RegressArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which model to fit.
    #[arg(long, value_enum, default_value = "rating")]
    level: RegressionLevel,
    /// Restaurant-level stratum lower bound [default: 200].
    #[arg(long)]
    min_count: Option<u64>,
    /// Restaurant-level stratum upper bound [default: 2000].
    #[arg(long)]
    max_count: Option<u64>,
    /// Leave the predicted rating out of the author's average.
    #[arg(long)]
    loo: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegressionLevel {
    Rating,
    Restaurant,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which experiment arm(s) to run.
    #[arg(long, value_enum, default_value = "all")]
    cohort: CohortChoice,
    /// Users drawn per restaurant per replicate [default: 20].
    #[arg(long)]
    sample_size: Option<u32>,
    /// Number of replicates [default: 100].
    #[arg(long)]
    replicates: Option<u32>,
    /// Universe threshold: ratings required (strictly more) [default: 200].
    #[arg(long)]
    min_total: Option<u64>,
    /// Universe threshold: distinct raters per cohort [default: 50].
    #[arg(long)]
    min_per_cohort: Option<usize>,
    /// Score restaurants without the labeled cohorts' own ratings.
    #[arg(long)]
    exclude_cohorts_from_target: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CohortChoice {
    Deflating,
    Inflating,
    Baseline,
    All,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of users.
    #[arg(long)]
    users: Option<u32>,
    /// Number of restaurants.
    #[arg(long)]
    restaurants: Option<u32>,
    /// Ratings per user.
    #[arg(long)]
    ratings_per_user: Option<u32>,
    /// Std of latent restaurant quality.
    #[arg(long)]
    quality_spread: Option<f64>,
    /// Std of latent rater generosity.
    #[arg(long)]
    generosity_spread: Option<f64>,
    /// Std of per-rating noise.
    #[arg(long)]
    noise_spread: Option<f64>,
    /// Master seed; generation uses a stage seed derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Config-file counterpart of the flags. Every key is optional; unknown keys
/// are rejected so typos surface instead of silently using defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    reviews: Option<PathBuf>,
    businesses: Option<PathBuf>,
    users: Option<PathBuf>,
    format: Option<String>,
    strict: Option<bool>,
    out_dir: Option<PathBuf>,
    min_ratings: Option<u64>,
    lo_pct: Option<f64>,
    hi_pct: Option<f64>,
    universe_min_total: Option<u64>,
    universe_min_per_cohort: Option<usize>,
    stratum_min: Option<u64>,
    stratum_max: Option<u64>,
    sample_size: Option<u32>,
    replicates: Option<u32>,
    seed: Option<u64>,
    leave_one_out: Option<bool>,
    exclude_cohorts_from_target: Option<bool>,
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("config file: {e}")))
}

fn parse_format(s: &str) -> Result<InputFormat> {
    match s {
        "json" => Ok(InputFormat::JsonLines),
        "csv" => Ok(InputFormat::Csv),
        other => Err(Error::InvalidConfig(format!(
            "format must be json or csv, got {other}"
        ))),
    }
}

/// defaults <- file <- flags. Boolean flags can only switch a setting on.
fn build_config(common: &CommonArgs, file: &FileConfig) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(v) = &file.reviews {
        config.reviews = v.clone();
    }
    config.businesses = file.businesses.clone();
    config.users = file.users.clone();
    if let Some(v) = &file.format {
        config.format = parse_format(v)?;
    }
    config.strict = file.strict.unwrap_or(false);
    if let Some(v) = &file.out_dir {
        config.out_dir = v.clone();
    }
    let take = |target: &mut u64, v: Option<u64>| {
        if let Some(v) = v {
            *target = v;
        }
    };
    take(&mut config.min_ratings, file.min_ratings);
    take(&mut config.universe_min_total, file.universe_min_total);
    take(&mut config.stratum_min, file.stratum_min);
    take(&mut config.stratum_max, file.stratum_max);
    take(&mut config.seed, file.seed);
    if let Some(v) = file.lo_pct {
        config.lo_pct = v;
    }
    if let Some(v) = file.hi_pct {
        config.hi_pct = v;
    }
    if let Some(v) = file.universe_min_per_cohort {
        config.universe_min_per_cohort = v;
    }
    if let Some(v) = file.sample_size {
        config.sample_size = v;
    }
    if let Some(v) = file.replicates {
        config.replicates = v;
    }
    config.leave_one_out = file.leave_one_out.unwrap_or(false);
    config.exclude_cohorts_from_target = file.exclude_cohorts_from_target.unwrap_or(false);

    if let Some(v) = &common.reviews {
        config.reviews = v.clone();
    }
    if common.businesses.is_some() {
        config.businesses = common.businesses.clone();
    }
    if common.users.is_some() {
        config.users = common.users.clone();
    }
    if let Some(v) = common.format {
        config.format = v;
    }
    config.strict |= common.strict;
    if let Some(v) = &common.out {
        config.out_dir = v.clone();
    }
    take(&mut config.min_ratings, common.min_ratings);
    take(&mut config.seed, common.seed);
    if let Some(v) = common.lo_pct {
        config.lo_pct = v;
    }
    if let Some(v) = common.hi_pct {
        config.hi_pct = v;
    }

    if config.reviews.as_os_str().is_empty() {
        return Err(Error::InvalidConfig(
            "a reviews path is required (--reviews or config file)".into(),
        ));
    }
    Ok(config)
}

fn ensure_out_dir(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))
}

/// Parse arguments and execute; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let level = if cli.verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_class() as i32
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = load_file_config(cli.config.as_ref())?;
    match cli.command {
        Command::Ingest(common) => cmd_ingest(&common, &file),
        Command::Stats(common) => cmd_stats(&common, &file),
        Command::Segment(common) => cmd_segment(&common, &file),
        Command::Regress(args) => cmd_regress(&args, &file),
        Command::Bootstrap(args) => cmd_bootstrap(&args, &file),
        Command::Synth(args) => cmd_synth(&args, &file),
        Command::Run(common) | Command::Report(common) => {
            let config = build_config(&common, &file)?;
            let manifest = run_pipeline(&config)?;
            println!(
                "pipeline complete: {} artifacts in {}",
                manifest.artifacts.len(),
                config.out_dir.display()
            );
            Ok(())
        }
    }
}

fn cmd_ingest(common: &CommonArgs, file: &FileConfig) -> Result<()> {
    let config = build_config(common, file)?;
    ensure_out_dir(&config)?;
    let Ingested { table, counts } = ingest_table(&config)?;
    let ratings = report::write_ratings(&config.out_dir, &table)?;
    let summary = report::write_ingest_summary(&config.out_dir, &counts)?;
    println!(
        "kept {} restaurant ratings ({} users, {} businesses); wrote {} and {}",
        table.ratings.len(),
        table.users.len(),
        table.businesses.len(),
        ratings.display(),
        summary.display()
    );
    Ok(())
}

fn cmd_stats(common: &CommonArgs, file: &FileConfig) -> Result<()> {
    let config = build_config(common, file)?;
    ensure_out_dir(&config)?;
    let Ingested { table, counts } = ingest_table(&config)?;
    let stats = crate::aggregates::table_stats(&table);
    let moments = predictor_moments(&stats)?;
    report::write_user_stats(&config.out_dir, &table, &stats)?;
    report::write_business_stats(&config.out_dir, &table, &stats)?;
    report::write_moments(&config.out_dir, &moments)?;
    report::write_score_distributions(&config.out_dir, &table, &stats)?;
    report::write_dataset_summary(&config.out_dir, &counts, &table, &stats)?;
    println!(
        "user moments mu={:.4} sigma={:.4}; business moments mu={:.4} sigma={:.4}",
        moments.user.mean, moments.user.std, moments.business.mean, moments.business.std
    );
    Ok(())
}

fn cmd_segment(common: &CommonArgs, file: &FileConfig) -> Result<()> {
    let config = build_config(common, file)?;
    ensure_out_dir(&config)?;
    let Ingested { table, .. } = ingest_table(&config)?;
    let stats = crate::aggregates::table_stats(&table);
    let assignment = segment_raters(&stats, config.min_ratings, config.lo_pct, config.hi_pct)?;
    let summary = cohort_summary(&assignment, &stats, &table);
    report::write_segments(&config.out_dir, &table, &stats, &assignment)?;
    report::write_thresholds(&config.out_dir, &assignment)?;
    report::write_cohort_histograms(&config.out_dir, &table, &assignment)?;
    report::write_cohort_summary(&config.out_dir, &summary)?;
    println!(
        "thresholds lo={:.4} hi={:.4}; cohorts: {} deflating, {} inflating, {} neutral",
        assignment.lo_threshold,
        assignment.hi_threshold,
        summary.deflating.users,
        summary.inflating.users,
        summary.neutral.users
    );
    Ok(())
}

fn cmd_regress(args: &RegressArgs, file: &FileConfig) -> Result<()> {
    let mut config = build_config(&args.common, file)?;
    if let Some(v) = args.min_count {
        config.stratum_min = v;
    }
    if let Some(v) = args.max_count {
        config.stratum_max = v;
    }
    config.leave_one_out |= args.loo;
    ensure_out_dir(&config)?;
    let Ingested { table, .. } = ingest_table(&config)?;
    let stats = crate::aggregates::table_stats(&table);
    match args.level {
        RegressionLevel::Rating => {
            let moments = predictor_moments(&stats)?;
            let fit = rating_level_regression(&table, &stats, &moments, config.leave_one_out)?;
            report::write_rating_model(&config.out_dir, &fit)?;
            println!(
                "rating-level fit: intercept={:.4} b1={:.4} b2={:.4} r2={:.4} n={}",
                fit.coefficients[0],
                fit.coefficients[1],
                fit.coefficients[2],
                fit.r_squared,
                fit.n_obs
            );
        }
        RegressionLevel::Restaurant => {
            let (fit, points) = restaurant_level_regression(
                &table,
                &stats,
                config.stratum_min,
                config.stratum_max,
            )?;
            report::write_restaurant_model(&config.out_dir, &table, &fit, &points)?;
            println!(
                "restaurant-level fit: slope={:.4} r2={:.4} over {} restaurants",
                fit.coefficients[1],
                fit.r_squared,
                points.len()
            );
        }
    }
    Ok(())
}

fn cmd_bootstrap(args: &BootstrapArgs, file: &FileConfig) -> Result<()> {
    let mut config = build_config(&args.common, file)?;
    if let Some(v) = args.sample_size {
        config.sample_size = v;
    }
    if let Some(v) = args.replicates {
        config.replicates = v;
    }
    if let Some(v) = args.min_total {
        config.universe_min_total = v;
    }
    if let Some(v) = args.min_per_cohort {
        config.universe_min_per_cohort = v;
    }
    config.exclude_cohorts_from_target |= args.exclude_cohorts_from_target;
    ensure_out_dir(&config)?;

    let Ingested { table, .. } = ingest_table(&config)?;
    let stats = crate::aggregates::table_stats(&table);
    let assignment = segment_raters(&stats, config.min_ratings, config.lo_pct, config.hi_pct)?;
    let universe = build_universe(&table, &stats, &assignment, &universe_params(&config))?;
    report::write_universe(&config.out_dir, &table, &universe)?;

    let results = match args.cohort {
        CohortChoice::All => run_experiment_arms(&universe, &config)?,
        CohortChoice::Deflating => vec![run_bootstrap(
            &universe,
            Arm::Deflating,
            config.sample_size,
            config.replicates,
            derive_seed(config.seed, "bootstrap:deflating"),
        )?],
        CohortChoice::Inflating => vec![run_bootstrap(
            &universe,
            Arm::Inflating,
            config.sample_size,
            config.replicates,
            derive_seed(config.seed, "bootstrap:inflating"),
        )?],
        CohortChoice::Baseline => vec![random_baseline(
            &universe,
            config.replicates,
            derive_seed(config.seed, "baseline"),
        )?],
    };
    report::write_accuracies(&config.out_dir, &results)?;
    for result in &results {
        let line: Vec<String> = result
            .accuracies
            .iter()
            .map(|a| format!("{}: {:.3}±{:.3}", a.class, a.mean, a.std_error))
            .collect();
        println!(
            "{} ({} restaurants, R={}): {}",
            result.arm.as_str(),
            universe.len(),
            result.replicates,
            line.join(", ")
        );
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs, file: &FileConfig) -> Result<()> {
    let defaults = SynthConfig::default();
    let master = args.seed.or(file.seed).unwrap_or(0);
    let synth = SynthConfig {
        n_users: args.users.unwrap_or(defaults.n_users),
        n_restaurants: args.restaurants.unwrap_or(defaults.n_restaurants),
        ratings_per_user: args.ratings_per_user.unwrap_or(defaults.ratings_per_user),
        quality_spread: args.quality_spread.unwrap_or(defaults.quality_spread),
        generosity_spread: args.generosity_spread.unwrap_or(defaults.generosity_spread),
        noise_spread: args.noise_spread.unwrap_or(defaults.noise_spread),
        seed: derive_seed(master, "synth"),
    };
    let out_dir = args
        .out
        .clone()
        .or_else(|| file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let data = generate(&synth)?;
    let ratings_path = out_dir.join("ratings.csv");
    crate::ingest::write_ratings_csv_path(&ratings_path, &data.ratings)?;
    let latents_path = report::write_latents(&out_dir, &data)?;
    println!(
        "generated {} ratings by {} users of {} restaurants; wrote {} and {}",
        data.ratings.len(),
        synth.n_users,
        synth.n_restaurants,
        ratings_path.display(),
        latents_path.display()
    );
    Ok(())
}
