//! Stream parsing of the three source tables (reviews, businesses, users)
//! from JSON-lines or CSV, plus the restaurant filter that produces the
//! analysis rating set.
//!
//! Parsers are strictly per-line: splitting an input at any line boundary and
//! concatenating the summaries yields the same totals as a single pass. In
//! lenient mode malformed lines are skipped and counted; in strict mode the
//! first malformed line aborts the parse.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Category token that marks a business as a restaurant.
pub const RESTAURANT_TAG: &str = "Restaurants";

/// One (user, business, stars) observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingRecord {
    pub user_id: String,
    pub business_id: String,
    /// Star rating, always in `1..=5`.
    pub stars: u8,
}

/// One row of the business table.
#[derive(Debug, Clone, PartialEq)]
pub struct BusinessRecord {
    pub business_id: String,
    pub source_review_count: u64,
    /// Published half-star score, a multiple of 0.5 in `[1.0, 5.0]`.
    pub source_score: f64,
    pub is_restaurant: bool,
}

/// One row of the user table.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    pub source_review_count: u64,
    pub source_average: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    /// One JSON object per line, field names as in the public dataset.
    #[value(name = "json")]
    JsonLines,
    /// Generic CSV with a header row.
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Skip malformed lines and count them.
    Lenient,
    /// Abort on the first malformed line.
    Strict,
}

impl ParseMode {
    pub fn from_strict(strict: bool) -> Self {
        if strict {
            ParseMode::Strict
        } else {
            ParseMode::Lenient
        }
    }
}

/// Totals reported by each parser.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ParseSummary {
    pub records: u64,
    pub skipped: u64,
}

#[derive(Deserialize)]
struct RawReview {
    user_id: String,
    business_id: String,
    stars: f64,
}

#[derive(Deserialize)]
struct RawBusiness {
    business_id: String,
    review_count: u64,
    stars: f64,
    categories: Option<String>,
}

#[derive(Deserialize)]
struct RawUser {
    user_id: String,
    review_count: u64,
    average_stars: f64,
}

fn validate_stars(stars: f64) -> std::result::Result<u8, String> {
    if !stars.is_finite() || (stars - stars.round()).abs() > 1e-9 {
        return Err(format!("stars {stars} is not an integer"));
    }
    let s = stars.round();
    if !(1.0..=5.0).contains(&s) {
        return Err(format!("stars {stars} outside 1..=5"));
    }
    Ok(s as u8)
}

fn validate_half_star(score: f64) -> std::result::Result<f64, String> {
    let doubled = score * 2.0;
    if !score.is_finite() || (doubled - doubled.round()).abs() > 1e-9 {
        return Err(format!("score {score} is not a half-star value"));
    }
    if !(1.0..=5.0).contains(&score) {
        return Err(format!("score {score} outside [1.0, 5.0]"));
    }
    Ok(doubled.round() / 2.0)
}

fn review_from_raw(raw: RawReview) -> std::result::Result<RatingRecord, String> {
    if raw.user_id.is_empty() {
        return Err("empty user_id".into());
    }
    if raw.business_id.is_empty() {
        return Err("empty business_id".into());
    }
    let stars = validate_stars(raw.stars)?;
    Ok(RatingRecord {
        user_id: raw.user_id,
        business_id: raw.business_id,
        stars,
    })
}

/// Split the categories field on commas and look for the restaurant tag,
/// case-insensitively.
pub fn has_restaurant_tag(categories: &str) -> bool {
    categories
        .split(',')
        .any(|token| token.trim().eq_ignore_ascii_case(RESTAURANT_TAG))
}

fn business_from_raw(raw: RawBusiness) -> std::result::Result<BusinessRecord, String> {
    if raw.business_id.is_empty() {
        return Err("empty business_id".into());
    }
    let source_score = validate_half_star(raw.stars)?;
    let is_restaurant = raw
        .categories
        .as_deref()
        .map(has_restaurant_tag)
        .unwrap_or(false);
    Ok(BusinessRecord {
        business_id: raw.business_id,
        source_review_count: raw.review_count,
        source_score,
        is_restaurant,
    })
}

fn user_from_raw(raw: RawUser) -> std::result::Result<UserRecord, String> {
    if raw.user_id.is_empty() {
        return Err("empty user_id".into());
    }
    if raw.review_count > 0 && !(1.0..=5.0).contains(&raw.average_stars) {
        return Err(format!(
            "average_stars {} outside [1.0, 5.0]",
            raw.average_stars
        ));
    }
    Ok(UserRecord {
        user_id: raw.user_id,
        source_review_count: raw.review_count,
        source_average: raw.average_stars,
    })
}

fn parse_jsonl<R, Raw, T>(
    reader: R,
    mode: ParseMode,
    convert: impl Fn(Raw) -> std::result::Result<T, String>,
    mut sink: impl FnMut(T),
) -> Result<ParseSummary>
where
    R: BufRead,
    Raw: for<'de> Deserialize<'de>,
{
    let mut summary = ParseSummary::default();
    let mut line_no = 0u64;
    for line in reader.lines() {
        let line = line?;
        line_no += 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Raw>(&line)
            .map_err(|e| e.to_string())
            .and_then(&convert);
        match parsed {
            Ok(record) => {
                summary.records += 1;
                sink(record);
            }
            Err(reason) => match mode {
                ParseMode::Lenient => summary.skipped += 1,
                ParseMode::Strict => return Err(Error::malformed(line_no, reason)),
            },
        }
    }
    Ok(summary)
}

/// Locate required header columns, erroring on the first missing one.
fn header_indices(headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::MissingColumn((*name).to_string()))
        })
        .collect()
}

fn parse_csv<R, T>(
    reader: R,
    mode: ParseMode,
    required: &[&str],
    convert: impl Fn(&csv::StringRecord, &[usize]) -> std::result::Result<T, String>,
    mut sink: impl FnMut(T),
) -> Result<ParseSummary>
where
    R: BufRead,
{
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::malformed(1, e.to_string()))?
        .clone();
    let cols = header_indices(&headers, required)?;

    let mut summary = ParseSummary::default();
    for (i, row) in rdr.records().enumerate() {
        let line_no = i as u64 + 2; // header occupies line 1
        let parsed = row
            .map_err(|e| e.to_string())
            .and_then(|record| convert(&record, &cols));
        match parsed {
            Ok(record) => {
                summary.records += 1;
                sink(record);
            }
            Err(reason) => match mode {
                ParseMode::Lenient => summary.skipped += 1,
                ParseMode::Strict => return Err(Error::malformed(line_no, reason)),
            },
        }
    }
    Ok(summary)
}

fn field(record: &csv::StringRecord, idx: usize) -> std::result::Result<&str, String> {
    record.get(idx).ok_or_else(|| "short record".to_string())
}

/// Parse the review table, feeding each valid record to `sink`.
pub fn parse_reviews<R: BufRead>(
    reader: R,
    format: InputFormat,
    mode: ParseMode,
    sink: impl FnMut(RatingRecord),
) -> Result<ParseSummary> {
    match format {
        InputFormat::JsonLines => parse_jsonl(reader, mode, review_from_raw, sink),
        InputFormat::Csv => parse_csv(
            reader,
            mode,
            &["user_id", "business_id", "stars"],
            |record, cols| {
                let stars: f64 = field(record, cols[2])?
                    .trim()
                    .parse()
                    .map_err(|e| format!("stars: {e}"))?;
                review_from_raw(RawReview {
                    user_id: field(record, cols[0])?.to_string(),
                    business_id: field(record, cols[1])?.to_string(),
                    stars,
                })
            },
            sink,
        ),
    }
}

/// Parse the business table, feeding each valid record to `sink`.
pub fn parse_businesses<R: BufRead>(
    reader: R,
    format: InputFormat,
    mode: ParseMode,
    sink: impl FnMut(BusinessRecord),
) -> Result<ParseSummary> {
    match format {
        InputFormat::JsonLines => parse_jsonl(reader, mode, business_from_raw, sink),
        InputFormat::Csv => parse_csv(
            reader,
            mode,
            &["business_id", "review_count", "stars", "categories"],
            |record, cols| {
                let review_count: u64 = field(record, cols[1])?
                    .trim()
                    .parse()
                    .map_err(|e| format!("review_count: {e}"))?;
                let stars: f64 = field(record, cols[2])?
                    .trim()
                    .parse()
                    .map_err(|e| format!("stars: {e}"))?;
                business_from_raw(RawBusiness {
                    business_id: field(record, cols[0])?.to_string(),
                    review_count,
                    stars,
                    categories: Some(field(record, cols[3])?.to_string()),
                })
            },
            sink,
        ),
    }
}

/// Parse the user table, feeding each valid record to `sink`.
pub fn parse_users<R: BufRead>(
    reader: R,
    format: InputFormat,
    mode: ParseMode,
    sink: impl FnMut(UserRecord),
) -> Result<ParseSummary> {
    match format {
        InputFormat::JsonLines => parse_jsonl(reader, mode, user_from_raw, sink),
        InputFormat::Csv => parse_csv(
            reader,
            mode,
            &["user_id", "review_count", "average_stars"],
            |record, cols| {
                let review_count: u64 = field(record, cols[1])?
                    .trim()
                    .parse()
                    .map_err(|e| format!("review_count: {e}"))?;
                let average_stars: f64 = field(record, cols[2])?
                    .trim()
                    .parse()
                    .map_err(|e| format!("average_stars: {e}"))?;
                user_from_raw(RawUser {
                    user_id: field(record, cols[0])?.to_string(),
                    review_count,
                    average_stars,
                })
            },
            sink,
        ),
    }
}

/// Collect variants of the streaming parsers, for fixtures and small inputs.
pub fn parse_reviews_vec<R: BufRead>(
    reader: R,
    format: InputFormat,
    mode: ParseMode,
) -> Result<(Vec<RatingRecord>, ParseSummary)> {
    let mut out = Vec::new();
    let summary = parse_reviews(reader, format, mode, |r| out.push(r))?;
    Ok((out, summary))
}

pub fn parse_businesses_vec<R: BufRead>(
    reader: R,
    format: InputFormat,
    mode: ParseMode,
) -> Result<(Vec<BusinessRecord>, ParseSummary)> {
    let mut out = Vec::new();
    let summary = parse_businesses(reader, format, mode, |r| out.push(r))?;
    Ok((out, summary))
}

pub fn parse_users_vec<R: BufRead>(
    reader: R,
    format: InputFormat,
    mode: ParseMode,
) -> Result<(Vec<UserRecord>, ParseSummary)> {
    let mut out = Vec::new();
    let summary = parse_users(reader, format, mode, |r| out.push(r))?;
    Ok((out, summary))
}

/// How a review relates to the loaded business table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReviewClass {
    Restaurant,
    NonRestaurant,
    UnknownBusiness,
}

/// Business-id lookup used to filter reviews down to restaurants.
#[derive(Debug, Default)]
pub struct RestaurantIndex {
    known: HashSet<String>,
    restaurants: HashSet<String>,
}

impl RestaurantIndex {
    pub fn from_businesses<'a, I>(businesses: I) -> Self
    where
        I: IntoIterator<Item = &'a BusinessRecord>,
    {
        let mut index = Self::default();
        for b in businesses {
            index.known.insert(b.business_id.clone());
            if b.is_restaurant {
                index.restaurants.insert(b.business_id.clone());
            }
        }
        index
    }

    pub fn classify(&self, business_id: &str) -> ReviewClass {
        if self.restaurants.contains(business_id) {
            ReviewClass::Restaurant
        } else if self.known.contains(business_id) {
            ReviewClass::NonRestaurant
        } else {
            ReviewClass::UnknownBusiness
        }
    }

    pub fn restaurant_count(&self) -> usize {
        self.restaurants.len()
    }
}

/// Totals reported by the restaurant filter.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FilterSummary {
    pub kept: u64,
    pub non_restaurant: u64,
    pub unknown_business: u64,
}

/// Keep exactly the reviews whose business is a restaurant, preserving input
/// order. Reviews of unknown businesses are dropped and counted (fatal in
/// strict mode).
pub fn filter_restaurant_reviews(
    reviews: &[RatingRecord],
    businesses: &[BusinessRecord],
    mode: ParseMode,
) -> Result<(Vec<RatingRecord>, FilterSummary)> {
    let index = RestaurantIndex::from_businesses(businesses);
    let mut kept = Vec::new();
    let mut summary = FilterSummary::default();
    for review in reviews {
        match index.classify(&review.business_id) {
            ReviewClass::Restaurant => {
                summary.kept += 1;
                kept.push(review.clone());
            }
            ReviewClass::NonRestaurant => summary.non_restaurant += 1,
            ReviewClass::UnknownBusiness => {
                if mode == ParseMode::Strict {
                    return Err(Error::UnknownBusiness(review.business_id.clone()));
                }
                summary.unknown_business += 1;
            }
        }
    }
    Ok((kept, summary))
}

/// Write ratings in the generic CSV review format (`user_id,business_id,stars`).
pub fn write_ratings_csv<'a, W, I>(writer: W, records: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a RatingRecord>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "business_id", "stars"])
        .map_err(csv_io)?;
    for r in records {
        w.write_record([
            r.user_id.as_str(),
            r.business_id.as_str(),
            &r.stars.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ratings_csv_path<'a, I>(path: &Path, records: I) -> Result<()>
where
    I: IntoIterator<Item = &'a RatingRecord>,
{
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ratings_csv(std::io::BufWriter::new(file), records)
}

fn csv_io(err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::Stream(e),
        other => Error::malformed(0, format!("csv write: {other:?}")),
    }
}
