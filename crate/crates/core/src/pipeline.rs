//! End-to-end orchestration: ingest, aggregate, segment, fit, resample,
//! report, with one master seed, stage-tagged errors, and a run manifest
//! recording digests of inputs and every written artifact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::aggregates::table_stats;
use crate::bootstrap::{
    build_universe, random_baseline, run_bootstrap, Arm, BootstrapResult, HalfStar, TargetScore,
    Universe, UniverseParams,
};
use crate::error::{Error, Result};
use crate::ingest::{
    parse_businesses, parse_reviews, parse_users, InputFormat, ParseMode, RestaurantIndex,
    ReviewClass,
};
use crate::regression::{predictor_moments, rating_level_regression, restaurant_level_regression};
use crate::report::{self, DatasetCounts};
use crate::segmentation::{cohort_summary, segment_raters};
use crate::table::RatingTable;

/// Derive a stage seed from the master seed and a stable label: the first
/// eight little-endian bytes of sha256(master_le || label).
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Hex sha256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Everything a full run needs. Defaults are the analysis parameters used
/// throughout: eligibility 5 ratings, 25/75 percentiles, universe thresholds
/// 200/50, regression stratum 200..=2000, 20-user samples, 100 replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub reviews: PathBuf,
    pub businesses: Option<PathBuf>,
    pub users: Option<PathBuf>,
    pub format: InputFormat,
    pub strict: bool,
    pub min_ratings: u64,
    pub lo_pct: f64,
    pub hi_pct: f64,
    pub universe_min_total: u64,
    pub universe_min_per_cohort: usize,
    pub stratum_min: u64,
    pub stratum_max: u64,
    pub sample_size: u32,
    pub replicates: u32,
    pub seed: u64,
    pub leave_one_out: bool,
    pub exclude_cohorts_from_target: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            reviews: PathBuf::new(),
            businesses: None,
            users: None,
            format: InputFormat::JsonLines,
            strict: false,
            min_ratings: 5,
            lo_pct: 25.0,
            hi_pct: 75.0,
            universe_min_total: 200,
            universe_min_per_cohort: 50,
            stratum_min: 200,
            stratum_max: 2000,
            sample_size: 20,
            replicates: 100,
            seed: 0,
            leave_one_out: false,
            exclude_cohorts_from_target: false,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl InputFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            InputFormat::JsonLines => "json",
            InputFormat::Csv => "csv",
        }
    }
}

impl Serialize for InputFormat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub version: String,
    pub config: RunConfig,
    /// Input path → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Artifact file name → sha256.
    pub artifacts: BTreeMap<String, String>,
    /// Stage name → elapsed milliseconds. Timing varies run to run; all
    /// other fields are deterministic for a fixed config and inputs.
    pub timings_ms: BTreeMap<String, u64>,
}

impl RunManifest {
    fn new(config: &RunConfig) -> Self {
        RunManifest {
            status: "running".into(),
            failed_stage: None,
            error: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        use std::io::Write;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(path)
    }
}

fn open_buffered(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Ingest products handed to the later stages.
pub struct Ingested {
    pub table: RatingTable,
    pub counts: DatasetCounts,
}

/// Parse the configured inputs and build the analysis rating table. With a
/// business table, reviews are filtered to restaurants; without one, every
/// review is kept (the generic-CSV path, where inputs are already filtered).
pub fn ingest_table(config: &RunConfig) -> Result<Ingested> {
    ingest_stage(config)
}

fn ingest_stage(config: &RunConfig) -> Result<Ingested> {
    let mode = ParseMode::from_strict(config.strict);
    let mut counts = DatasetCounts::default();

    let index = match &config.businesses {
        Some(path) => {
            let mut businesses = Vec::new();
            let summary = parse_businesses(open_buffered(path)?, config.format, mode, |b| {
                businesses.push(b)
            })?;
            counts.businesses = summary.into();
            let index = RestaurantIndex::from_businesses(&businesses);
            counts.restaurants = index.restaurant_count() as u64;
            Some(index)
        }
        None => None,
    };

    let mut table = RatingTable::default();
    let mut kept = 0u64;
    let mut non_restaurant = 0u64;
    let mut unknown = 0u64;
    let mut strict_unknown: Option<String> = None;
    let summary =
        parse_reviews(
            open_buffered(&config.reviews)?,
            config.format,
            mode,
            |r| match index
                .as_ref()
                .map_or(ReviewClass::Restaurant, |ix| ix.classify(&r.business_id))
            {
                ReviewClass::Restaurant => {
                    kept += 1;
                    table.push(&r);
                }
                ReviewClass::NonRestaurant => non_restaurant += 1,
                ReviewClass::UnknownBusiness => {
                    unknown += 1;
                    if config.strict && strict_unknown.is_none() {
                        strict_unknown = Some(r.business_id.clone());
                    }
                }
            },
        )?;
    if let Some(id) = strict_unknown {
        return Err(Error::UnknownBusiness(id));
    }
    counts.reviews = summary.into();
    counts.apply_filter(&crate::ingest::FilterSummary {
        kept,
        non_restaurant,
        unknown_business: unknown,
    });

    if let Some(path) = &config.users {
        let summary = parse_users(open_buffered(path)?, config.format, mode, |_| {})?;
        counts.users = summary.into();
    }

    Ok(Ingested { table, counts })
}

/// Run every stage in dependency order, writing artifacts and the manifest
/// into `config.out_dir`. On a stage failure a best-effort manifest with
/// `status: "failed"` and the artifacts produced so far is still written.
pub fn run_pipeline(config: &RunConfig) -> Result<RunManifest> {
    if config.reviews.as_os_str().is_empty() {
        return Err(Error::InvalidConfig("no reviews path given".into()));
    }
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;

    let mut manifest = RunManifest::new(config);
    match run_stages(config, &mut manifest) {
        Ok(()) => {
            manifest.status = "complete".into();
            manifest.write(&config.out_dir)?;
            Ok(manifest)
        }
        Err(err) => {
            let stage = match &err {
                Error::Stage { stage, .. } => (*stage).to_string(),
                _ => "setup".to_string(),
            };
            manifest.status = "failed".into();
            manifest.failed_stage = Some(stage);
            manifest.error = Some(err.to_string());
            let _ = manifest.write(&config.out_dir);
            Err(err)
        }
    }
}

fn run_stages(config: &RunConfig, manifest: &mut RunManifest) -> Result<()> {
    let record = |manifest: &mut RunManifest, paths: &[&PathBuf]| -> Result<()> {
        for path in paths {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            manifest.artifacts.insert(name, sha256_file(path)?);
        }
        Ok(())
    };

    // Input digests.
    let mut inputs = vec![("reviews", config.reviews.clone())];
    if let Some(p) = &config.businesses {
        inputs.push(("businesses", p.clone()));
    }
    if let Some(p) = &config.users {
        inputs.push(("users", p.clone()));
    }
    for (label, path) in inputs {
        manifest.inputs.insert(
            label.to_string(),
            sha256_file(&path).map_err(|e| e.in_stage("ingest"))?,
        );
    }

    let dir = config.out_dir.clone();

    let t = Instant::now();
    let Ingested { table, counts } = ingest_stage(config).map_err(|e| e.in_stage("ingest"))?;
    manifest
        .timings_ms
        .insert("ingest".into(), t.elapsed().as_millis() as u64);

    let t = Instant::now();
    let stage = "aggregates";
    let stats = table_stats(&table);
    let moments = predictor_moments(&stats).map_err(|e| e.in_stage(stage))?;
    let p = report::write_user_stats(&dir, &table, &stats).map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p])?;
    let p = report::write_business_stats(&dir, &table, &stats).map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p])?;
    let p = report::write_moments(&dir, &moments).map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p])?;
    let (p1, p2) =
        report::write_score_distributions(&dir, &table, &stats).map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p1, &p2])?;
    let p = report::write_dataset_summary(&dir, &counts, &table, &stats)
        .map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p])?;
    manifest
        .timings_ms
        .insert(stage.into(), t.elapsed().as_millis() as u64);

    let t = Instant::now();
    let stage = "segmentation";
    let assignment = segment_raters(&stats, config.min_ratings, config.lo_pct, config.hi_pct)
        .map_err(|e| e.in_stage(stage))?;
    let summary = cohort_summary(&assignment, &stats, &table);
    let p =
        report::write_segments(&dir, &table, &stats, &assignment).map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p])?;
    let p = report::write_thresholds(&dir, &assignment).map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p])?;
    let (p1, p2) = report::write_cohort_histograms(&dir, &table, &assignment)
        .map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p1, &p2])?;
    let p = report::write_cohort_summary(&dir, &summary).map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p])?;
    manifest
        .timings_ms
        .insert(stage.into(), t.elapsed().as_millis() as u64);

    let t = Instant::now();
    let stage = "regression";
    let rating_fit = rating_level_regression(&table, &stats, &moments, config.leave_one_out)
        .map_err(|e| e.in_stage(stage))?;
    let (pj, pm) = report::write_rating_model(&dir, &rating_fit).map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&pj, &pm])?;
    let (restaurant_fit, points) =
        restaurant_level_regression(&table, &stats, config.stratum_min, config.stratum_max)
            .map_err(|e| e.in_stage(stage))?;
    let (pc, pf) = report::write_restaurant_model(&dir, &table, &restaurant_fit, &points)
        .map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&pc, &pf])?;
    manifest
        .timings_ms
        .insert(stage.into(), t.elapsed().as_millis() as u64);

    let t = Instant::now();
    let stage = "bootstrap";
    let universe = build_universe(&table, &stats, &assignment, &universe_params(config))
        .map_err(|e| e.in_stage(stage))?;
    let p = report::write_universe(&dir, &table, &universe).map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p])?;
    let results = run_experiment_arms(&universe, config).map_err(|e| e.in_stage(stage))?;
    let p = report::write_accuracies(&dir, &results).map_err(|e| e.in_stage(stage))?;
    record(manifest, &[&p])?;
    manifest
        .timings_ms
        .insert(stage.into(), t.elapsed().as_millis() as u64);

    Ok(())
}

pub fn universe_params(config: &RunConfig) -> UniverseParams {
    UniverseParams {
        min_total: config.universe_min_total,
        min_per_cohort: config.universe_min_per_cohort,
        allowed_scores: default_allowed_scores(),
        target: if config.exclude_cohorts_from_target {
            TargetScore::ExcludeCohorts
        } else {
            TargetScore::AllRatings
        },
    }
}

pub fn default_allowed_scores() -> Vec<HalfStar> {
    [3.5, 4.0, 4.5]
        .iter()
        .map(|s| HalfStar::from_score(*s).expect("grid score"))
        .collect()
}

/// Run the two cohort arms and the baseline with per-arm derived seeds.
pub fn run_experiment_arms(
    universe: &Universe,
    config: &RunConfig,
) -> Result<Vec<BootstrapResult>> {
    let deflating = run_bootstrap(
        universe,
        Arm::Deflating,
        config.sample_size,
        config.replicates,
        derive_seed(config.seed, "bootstrap:deflating"),
    )?;
    let inflating = run_bootstrap(
        universe,
        Arm::Inflating,
        config.sample_size,
        config.replicates,
        derive_seed(config.seed, "bootstrap:inflating"),
    )?;
    let baseline = random_baseline(
        universe,
        config.replicates,
        derive_seed(config.seed, "baseline"),
    )?;
    Ok(vec![deflating, inflating, baseline])
}

/// Count lines cheaply, for fixtures and smoke checks.
pub fn count_lines(path: &Path) -> Result<u64> {
    let mut n = 0u64;
    for line in open_buffered(path)?.lines() {
        line?;
        n += 1;
    }
    Ok(n)
}
