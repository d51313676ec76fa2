//! Percentile-threshold segmentation of raters into low-mean and high-mean
//! cohorts, plus summary statistics for each cohort.

use serde::Serialize;

use crate::aggregates::{KahanSum, TableStats};
use crate::error::{Error, Result};
use crate::table::RatingTable;

/// Percentile convention used throughout: linear interpolation between
/// closest ranks, index = p/100 * (N - 1) on the sorted values.
pub const PERCENTILE_CONVENTION: &str = "linear interpolation (type 7)";

/// Percentile of `sorted` (ascending) at `p` in `[0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::DegeneratePopulation(
            "percentile of empty slice".into(),
        ));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidConfig(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let h = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Deflating,
    Inflating,
    Neutral,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Deflating => "deflating",
            Label::Inflating => "inflating",
            Label::Neutral => "neutral",
        }
    }
}

/// Frozen cohort assignment: thresholds plus one optional label per user,
/// indexed by the rating table's interned user ids. Ineligible users
/// (fewer than `min_ratings` ratings) carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentAssignment {
    pub lo_threshold: f64,
    pub hi_threshold: f64,
    pub min_ratings: u64,
    pub labels: Vec<Option<Label>>,
}

impl SegmentAssignment {
    pub fn label(&self, user: u32) -> Option<Label> {
        self.labels[user as usize]
    }

    pub fn cohort_size(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == Some(label)).count()
    }

    pub fn eligible_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Label each user with at least `min_ratings` ratings by comparing their
/// mean rating against the `lo_pct` / `hi_pct` percentiles of eligible means.
/// Users strictly below the low threshold deflate, strictly above the high
/// threshold inflate, everyone else eligible is neutral.
pub fn segment_raters(
    stats: &TableStats,
    min_ratings: u64,
    lo_pct: f64,
    hi_pct: f64,
) -> Result<SegmentAssignment> {
    if lo_pct > hi_pct {
        return Err(Error::InvalidConfig(format!(
            "lo percentile {lo_pct} above hi percentile {hi_pct}"
        )));
    }
    let mut eligible_means: Vec<f64> = stats
        .users
        .iter()
        .filter(|u| u.n >= min_ratings)
        .map(|u| u.mean())
        .collect();
    if eligible_means.is_empty() {
        return Err(Error::NoEligibleUsers);
    }
    eligible_means.sort_by(f64::total_cmp);
    let lo_threshold = percentile(&eligible_means, lo_pct)?;
    let hi_threshold = percentile(&eligible_means, hi_pct)?;
    if lo_threshold == hi_threshold {
        log::warn!(
            "segmentation thresholds coincide at {lo_threshold}; both cohorts will be empty"
        );
    }

    let labels = stats
        .users
        .iter()
        .map(|u| {
            if u.n < min_ratings {
                return None;
            }
            let mean = u.mean();
            Some(if mean < lo_threshold {
                Label::Deflating
            } else if mean > hi_threshold {
                Label::Inflating
            } else {
                Label::Neutral
            })
        })
        .collect();

    Ok(SegmentAssignment {
        lo_threshold,
        hi_threshold,
        min_ratings,
        labels,
    })
}

/// Per-cohort pooled means over rating records. `None` for an empty cohort.
#[derive(Debug, Default, Clone, Copy, PartialEq, Serialize)]
pub struct CohortFigures {
    pub users: u64,
    pub ratings: u64,
    /// Mean of the cohort's individual star ratings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_rating: Option<f64>,
    /// Mean, over the cohort's rating records, of the rated business's mean rating.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_business_rating: Option<f64>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Serialize)]
pub struct CohortSummary {
    pub deflating: CohortFigures,
    pub inflating: CohortFigures,
    pub neutral: CohortFigures,
}

impl CohortSummary {
    pub fn get(&self, label: Label) -> &CohortFigures {
        match label {
            Label::Deflating => &self.deflating,
            Label::Inflating => &self.inflating,
            Label::Neutral => &self.neutral,
        }
    }
}

/// Pool every rating record by its author's cohort and take means of the
/// record's stars and of the rated business's mean rating.
pub fn cohort_summary(
    assignment: &SegmentAssignment,
    stats: &TableStats,
    table: &RatingTable,
) -> CohortSummary {
    struct Acc {
        users: u64,
        ratings: u64,
        stars: KahanSum,
        business_means: KahanSum,
    }
    let mut accs = [
        Acc {
            users: 0,
            ratings: 0,
            stars: KahanSum::default(),
            business_means: KahanSum::default(),
        },
        Acc {
            users: 0,
            ratings: 0,
            stars: KahanSum::default(),
            business_means: KahanSum::default(),
        },
        Acc {
            users: 0,
            ratings: 0,
            stars: KahanSum::default(),
            business_means: KahanSum::default(),
        },
    ];
    let slot = |label: Label| match label {
        Label::Deflating => 0usize,
        Label::Inflating => 1,
        Label::Neutral => 2,
    };
    for (user, label) in assignment.labels.iter().enumerate() {
        if let Some(label) = label {
            if stats.users[user].n > 0 {
                accs[slot(*label)].users += 1;
            }
        }
    }
    for r in &table.ratings {
        let Some(label) = assignment.label(r.user) else {
            continue;
        };
        let acc = &mut accs[slot(label)];
        acc.ratings += 1;
        acc.stars.add(r.stars as f64);
        acc.business_means
            .add(stats.businesses[r.business as usize].mean());
    }

    let figures = |acc: &Acc, name: &str| {
        if acc.ratings == 0 {
            log::warn!("cohort {name} is empty; summary fields omitted");
            CohortFigures {
                users: acc.users,
                ..CohortFigures::default()
            }
        } else {
            let n = acc.ratings as f64;
            CohortFigures {
                users: acc.users,
                ratings: acc.ratings,
                mean_rating: Some(acc.stars.value() / n),
                mean_business_rating: Some(acc.business_means.value() / n),
            }
        }
    };
    CohortSummary {
        deflating: figures(&accs[0], "deflating"),
        inflating: figures(&accs[1], "inflating"),
        neutral: figures(&accs[2], "neutral"),
    }
}
