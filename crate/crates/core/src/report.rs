//! Writers for every data artifact: per-entity stats, segmentation outputs,
//! regression tables, the experiment universe and accuracies, histogram
//! exports, and dataset summaries. All iteration is explicitly ordered so a
//! rerun produces byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::aggregates::TableStats;
use crate::bootstrap::{BootstrapResult, HalfStar, Universe};
use crate::error::{Error, Result};
use crate::ingest::{FilterSummary, ParseSummary};
use crate::regression::{PredictorMoments, RegressionFit, ScatterPoint};
use crate::segmentation::{CohortSummary, Label, SegmentAssignment, PERCENTILE_CONVENTION};
use crate::synthdata::SynthData;
use crate::table::RatingTable;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::Stream(e),
        other => Error::malformed(0, format!("csv write: {other:?}")),
    }
}

/// User ids sorted lexicographically, restricted to users with ratings.
fn rated_users_by_name(table: &RatingTable, stats: &TableStats) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..table.users.len() as u32)
        .filter(|u| stats.users[*u as usize].n > 0)
        .collect();
    ids.sort_by(|a, b| table.users.name(*a).cmp(table.users.name(*b)));
    ids
}

fn rated_businesses_by_name(table: &RatingTable, stats: &TableStats) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..table.businesses.len() as u32)
        .filter(|b| stats.businesses[*b as usize].n > 0)
        .collect();
    ids.sort_by(|a, b| table.businesses.name(*a).cmp(table.businesses.name(*b)));
    ids
}

/// `user_stats.csv`: `user_id,n,mean`, one row per rated user.
pub fn write_user_stats(dir: &Path, table: &RatingTable, stats: &TableStats) -> Result<PathBuf> {
    let path = dir.join("user_stats.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["user_id", "n", "mean"]).map_err(csv_err)?;
    for u in rated_users_by_name(table, stats) {
        let s = stats.users[u as usize];
        w.write_record([table.users.name(u), &s.n.to_string(), &s.mean().to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}

/// `business_stats.csv`: `business_id,n,mean,yelp_score`.
pub fn write_business_stats(
    dir: &Path,
    table: &RatingTable,
    stats: &TableStats,
) -> Result<PathBuf> {
    let path = dir.join("business_stats.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["business_id", "n", "mean", "yelp_score"])
        .map_err(csv_err)?;
    for b in rated_businesses_by_name(table, stats) {
        let s = stats.businesses[b as usize];
        w.write_record([
            table.businesses.name(b),
            &s.n.to_string(),
            &s.mean().to_string(),
            &format!("{:.1}", s.yelp_score()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}

#[derive(Serialize)]
struct MomentsOut {
    mu_u: f64,
    sigma_u: f64,
    n_users: u64,
    mu_r: f64,
    sigma_r: f64,
    n_businesses: u64,
}

/// `moments.json`: population moments of user and business mean ratings.
pub fn write_moments(dir: &Path, moments: &PredictorMoments) -> Result<PathBuf> {
    let path = dir.join("moments.json");
    write_json(
        &path,
        &MomentsOut {
            mu_u: moments.user.mean,
            sigma_u: moments.user.std,
            n_users: moments.user.n,
            mu_r: moments.business.mean,
            sigma_r: moments.business.std,
            n_businesses: moments.business.n,
        },
    )?;
    Ok(path)
}

/// `segments.csv`: `user_id,label,mean,n` for every labeled (eligible) user.
pub fn write_segments(
    dir: &Path,
    table: &RatingTable,
    stats: &TableStats,
    assignment: &SegmentAssignment,
) -> Result<PathBuf> {
    let path = dir.join("segments.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["user_id", "label", "mean", "n"])
        .map_err(csv_err)?;
    for u in rated_users_by_name(table, stats) {
        let Some(label) = assignment.label(u) else {
            continue;
        };
        let s = stats.users[u as usize];
        w.write_record([
            table.users.name(u),
            label.as_str(),
            &s.mean().to_string(),
            &s.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}

#[derive(Serialize)]
struct ThresholdsOut<'a> {
    lo: f64,
    hi: f64,
    min_ratings: u64,
    convention: &'a str,
}

/// `thresholds.json`: the frozen segmentation thresholds.
pub fn write_thresholds(dir: &Path, assignment: &SegmentAssignment) -> Result<PathBuf> {
    let path = dir.join("thresholds.json");
    write_json(
        &path,
        &ThresholdsOut {
            lo: assignment.lo_threshold,
            hi: assignment.hi_threshold,
            min_ratings: assignment.min_ratings,
            convention: PERCENTILE_CONVENTION,
        },
    )?;
    Ok(path)
}

#[derive(Serialize)]
struct TableRow<'a> {
    term: &'a str,
    coefficient: f64,
    std_error: f64,
    t_value: f64,
    p_value: f64,
}

#[derive(Serialize)]
struct TableOut<'a> {
    rows: Vec<TableRow<'a>>,
    r_squared: f64,
    adj_r_squared: f64,
    f_value: f64,
    f_p_value: f64,
    df_residual: u64,
    df_model: u64,
    n_obs: u64,
}

pub const RATING_MODEL_TERMS: [&str; 3] = [
    "Intercept",
    "Average normalized user rating",
    "Average normalized restaurant rating",
];

/// `table1.json` and `table1.md`: the rating-level model summary.
pub fn write_rating_model(dir: &Path, fit: &RegressionFit) -> Result<(PathBuf, PathBuf)> {
    let rows: Vec<TableRow> = RATING_MODEL_TERMS
        .iter()
        .enumerate()
        .map(|(k, term)| TableRow {
            term,
            coefficient: fit.coefficients[k],
            std_error: fit.std_errors[k],
            t_value: fit.t_values[k],
            p_value: fit.p_values[k],
        })
        .collect();
    let json_path = dir.join("table1.json");
    write_json(
        &json_path,
        &TableOut {
            rows,
            r_squared: fit.r_squared,
            adj_r_squared: fit.adj_r_squared,
            f_value: fit.f_value,
            f_p_value: fit.f_p_value,
            df_residual: fit.df_residual,
            df_model: fit.df_model,
            n_obs: fit.n_obs,
        },
    )?;

    let md_path = dir.join("table1.md");
    let mut w = create(&md_path)?;
    writeln!(w, "| Term | Coefficient | Std. error | t-value | p-value |")?;
    writeln!(w, "|---|---|---|---|---|")?;
    for (k, term) in RATING_MODEL_TERMS.iter().enumerate() {
        writeln!(
            w,
            "| {} | {:.4} | {:.3} | {:.2} | {:.3} |",
            term, fit.coefficients[k], fit.std_errors[k], fit.t_values[k], fit.p_values[k]
        )?;
    }
    writeln!(w)?;
    writeln!(
        w,
        "R-squared {:.3}, adjusted {:.3}; F = {:.4e} (p = {:.3}); df model {}, df residual {}; n = {}.",
        fit.r_squared,
        fit.adj_r_squared,
        fit.f_value,
        fit.f_p_value,
        fit.df_model,
        fit.df_residual,
        fit.n_obs
    )?;
    w.flush()?;
    Ok((json_path, md_path))
}

#[derive(Serialize)]
struct LineFit {
    intercept: f64,
    slope: f64,
    r_squared: f64,
    n: u64,
}

/// `figure3.csv` (`business_id,x2,y`) and `figure3_fit.json` with the fitted
/// line for the restaurant-level model.
pub fn write_restaurant_model(
    dir: &Path,
    table: &RatingTable,
    fit: &RegressionFit,
    points: &[ScatterPoint],
) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join("figure3.csv");
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["business_id", "x2", "y"])
        .map_err(csv_err)?;
    let mut ordered: Vec<&ScatterPoint> = points.iter().collect();
    ordered.sort_by(|a, b| {
        table
            .businesses
            .name(a.business)
            .cmp(table.businesses.name(b.business))
    });
    for p in ordered {
        w.write_record([
            table.businesses.name(p.business),
            &p.x2.to_string(),
            &p.y.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let fit_path = dir.join("figure3_fit.json");
    write_json(
        &fit_path,
        &LineFit {
            intercept: fit.coefficients[0],
            slope: fit.coefficients[1],
            r_squared: fit.r_squared,
            n: fit.n_obs,
        },
    )?;
    Ok((csv_path, fit_path))
}

/// `universe.csv`: the eligible restaurants with pool sizes.
pub fn write_universe(dir: &Path, table: &RatingTable, universe: &Universe) -> Result<PathBuf> {
    let path = dir.join("universe.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "business_id",
        "true_score",
        "n_ratings",
        "n_deflating",
        "n_inflating",
    ])
    .map_err(csv_err)?;
    for e in &universe.entries {
        w.write_record([
            table.businesses.name(e.business),
            &e.true_score.to_string(),
            &e.n_ratings.to_string(),
            &e.deflating_pool.len().to_string(),
            &e.inflating_pool.len().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}

/// `figure4.csv`: `cohort,category,accuracy_mean,accuracy_se,R,seed`.
pub fn write_accuracies(dir: &Path, results: &[BootstrapResult]) -> Result<PathBuf> {
    let path = dir.join("figure4.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "cohort",
        "category",
        "accuracy_mean",
        "accuracy_se",
        "R",
        "seed",
    ])
    .map_err(csv_err)?;
    for result in results {
        for acc in &result.accuracies {
            w.write_record([
                result.arm.as_str(),
                &acc.class.to_string(),
                &acc.mean.to_string(),
                &acc.std_error.to_string(),
                &result.replicates.to_string(),
                &result.seed.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(path)
}

/// `cohort_summary.json`.
pub fn write_cohort_summary(dir: &Path, summary: &CohortSummary) -> Result<PathBuf> {
    let path = dir.join("cohort_summary.json");
    write_json(&path, summary)?;
    Ok(path)
}

/// Histogram of half-star scores for businesses whose rating count falls in
/// `[lo, hi]`. Returns (score, count) pairs, scores ascending and dense over
/// the 1.0..=5.0 grid.
pub fn yelp_score_histogram(stats: &TableStats, lo: u64, hi: u64) -> Vec<(HalfStar, u64)> {
    let mut counts = [0u64; 9];
    for b in &stats.businesses {
        if b.n >= lo.max(1) && b.n <= hi {
            let score = b.yelp_score();
            let slot = ((score * 2.0).round() as usize).saturating_sub(2);
            counts[slot] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .map(|(slot, count)| {
            let score = HalfStar::from_score((slot as f64 + 2.0) / 2.0).expect("grid score");
            (score, *count)
        })
        .collect()
}

/// Histogram of star values over rating records whose author's total rating
/// count falls in `[lo, hi]`. Index 0 is 1 star.
pub fn star_histogram_by_experience(
    table: &RatingTable,
    stats: &TableStats,
    lo: u64,
    hi: u64,
) -> [u64; 5] {
    let mut counts = [0u64; 5];
    for r in &table.ratings {
        let n = stats.users[r.user as usize].n;
        if n >= lo && n <= hi {
            counts[(r.stars - 1) as usize] += 1;
        }
    }
    counts
}

/// Histogram of star values over rating records authored by one cohort.
pub fn star_histogram_by_label(
    table: &RatingTable,
    assignment: &SegmentAssignment,
    label: Label,
) -> [u64; 5] {
    let mut counts = [0u64; 5];
    for r in &table.ratings {
        if assignment.label(r.user) == Some(label) {
            counts[(r.stars - 1) as usize] += 1;
        }
    }
    counts
}

/// `figure1_panel1.csv`: Yelp-score distribution for mid-count versus
/// high-count businesses. `figure1_panel2.csv`: star distribution for
/// low-experience versus experienced raters.
pub fn write_score_distributions(
    dir: &Path,
    table: &RatingTable,
    stats: &TableStats,
) -> Result<(PathBuf, PathBuf)> {
    let p1 = dir.join("figure1_panel1.csv");
    let mut w = csv_writer(&p1)?;
    w.write_record(["yelp_score", "businesses_10_199", "businesses_200_2000"])
        .map_err(csv_err)?;
    let mid = yelp_score_histogram(stats, 10, 199);
    let high = yelp_score_histogram(stats, 200, 2000);
    for ((score, mid_count), (_, high_count)) in mid.iter().zip(&high) {
        w.write_record([
            score.to_string(),
            mid_count.to_string(),
            high_count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let p2 = dir.join("figure1_panel2.csv");
    let mut w = csv_writer(&p2)?;
    w.write_record([
        "stars",
        "ratings_experience_0_4",
        "ratings_experience_5_2000",
    ])
    .map_err(csv_err)?;
    let novice = star_histogram_by_experience(table, stats, 0, 4);
    let expert = star_histogram_by_experience(table, stats, 5, 2000);
    for s in 0..5 {
        w.write_record([
            (s + 1).to_string(),
            novice[s].to_string(),
            expert[s].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok((p1, p2))
}

/// `figure2_panel1.csv` / `figure2_panel2.csv`: star histograms of ratings
/// authored by the deflating and inflating cohorts. An empty cohort yields a
/// header-only file.
pub fn write_cohort_histograms(
    dir: &Path,
    table: &RatingTable,
    assignment: &SegmentAssignment,
) -> Result<(PathBuf, PathBuf)> {
    let write_one = |path: &Path, label: Label| -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["stars", "count"]).map_err(csv_err)?;
        let counts = star_histogram_by_label(table, assignment, label);
        if counts.iter().any(|c| *c > 0) {
            for (s, count) in counts.iter().enumerate() {
                w.write_record([(s + 1).to_string(), count.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    };
    let p1 = dir.join("figure2_panel1.csv");
    write_one(&p1, Label::Deflating)?;
    let p2 = dir.join("figure2_panel2.csv");
    write_one(&p2, Label::Inflating)?;
    Ok((p1, p2))
}

/// Counts reported by an ingest pass, serialized into `dataset_summary.json`.
#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct DatasetCounts {
    pub reviews: ParseCounts,
    pub businesses: ParseCounts,
    pub users: ParseCounts,
    pub restaurants: u64,
    pub restaurant_ratings: u64,
    pub non_restaurant_reviews: u64,
    pub unknown_business_reviews: u64,
}

#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct ParseCounts {
    pub records: u64,
    pub skipped: u64,
}

impl From<ParseSummary> for ParseCounts {
    fn from(s: ParseSummary) -> Self {
        ParseCounts {
            records: s.records,
            skipped: s.skipped,
        }
    }
}

impl DatasetCounts {
    pub fn apply_filter(&mut self, f: &FilterSummary) {
        self.restaurant_ratings = f.kept;
        self.non_restaurant_reviews = f.non_restaurant;
        self.unknown_business_reviews = f.unknown_business;
    }
}

#[derive(Serialize)]
struct DatasetSummaryOut<'a> {
    counts: &'a DatasetCounts,
    /// Mean of per-user mean ratings, one term per user.
    mean_user_rating_by_user: f64,
    /// Mean of the author's mean rating, one term per rating record.
    mean_user_rating_by_record: f64,
    distinct_rated_users: u64,
    distinct_rated_businesses: u64,
}

/// `dataset_summary.json`: ingest counts plus the headline user-average
/// figure computed both ways (per user and per rating record).
pub fn write_dataset_summary(
    dir: &Path,
    counts: &DatasetCounts,
    table: &RatingTable,
    stats: &TableStats,
) -> Result<PathBuf> {
    let mut by_user = crate::aggregates::KahanSum::default();
    let mut users = 0u64;
    for u in &stats.users {
        if u.n > 0 {
            by_user.add(u.mean());
            users += 1;
        }
    }
    let mut by_record = crate::aggregates::KahanSum::default();
    for r in &table.ratings {
        by_record.add(stats.users[r.user as usize].mean());
    }
    let businesses = stats.businesses.iter().filter(|b| b.n > 0).count() as u64;
    let path = dir.join("dataset_summary.json");
    write_json(
        &path,
        &DatasetSummaryOut {
            counts,
            mean_user_rating_by_user: if users > 0 {
                by_user.value() / users as f64
            } else {
                0.0
            },
            mean_user_rating_by_record: if table.ratings.is_empty() {
                0.0
            } else {
                by_record.value() / table.ratings.len() as f64
            },
            distinct_rated_users: users,
            distinct_rated_businesses: businesses,
        },
    )?;
    Ok(path)
}

/// `ratings.csv`: the analysis rating set in the generic review format.
pub fn write_ratings(dir: &Path, table: &RatingTable) -> Result<PathBuf> {
    let path = dir.join("ratings.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["user_id", "business_id", "stars"])
        .map_err(csv_err)?;
    for r in &table.ratings {
        w.write_record([
            table.users.name(r.user),
            table.businesses.name(r.business),
            &r.stars.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}

/// `ingest_summary.json`: the parse and filter counts alone.
pub fn write_ingest_summary(dir: &Path, counts: &DatasetCounts) -> Result<PathBuf> {
    let path = dir.join("ingest_summary.json");
    write_json(&path, counts)?;
    Ok(path)
}

#[derive(Serialize)]
struct LatentsOut<'a> {
    quality: &'a std::collections::BTreeMap<String, f64>,
    generosity: &'a std::collections::BTreeMap<String, f64>,
}

/// `latents.json`: ground truth for a synthetic set.
pub fn write_latents(dir: &Path, data: &SynthData) -> Result<PathBuf> {
    let path = dir.join("latents.json");
    write_json(
        &path,
        &LatentsOut {
            quality: &data.quality,
            generosity: &data.generosity,
        },
    )?;
    Ok(path)
}
