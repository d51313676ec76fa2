//! Per-user and per-business aggregates over a rating table, half-star
//! rounding, and population moments used to standardize regression inputs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::table::RatingTable;

/// Compensated (Kahan) accumulator for long f64 sums.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Rating count and exact star total for one user.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UserStats {
    pub n: u64,
    pub star_sum: u64,
}

impl UserStats {
    pub fn mean(&self) -> f64 {
        self.star_sum as f64 / self.n as f64
    }
}

/// Rating count and exact star total for one business.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BusinessStats {
    pub n: u64,
    pub star_sum: u64,
}

impl BusinessStats {
    pub fn mean(&self) -> f64 {
        self.star_sum as f64 / self.n as f64
    }

    /// The half-star score the platform would publish for this business.
    pub fn yelp_score(&self) -> f64 {
        round_half(self.mean())
    }
}

/// Round to the nearest multiple of 0.5, halves away from zero
/// (3.74 -> 3.5, 3.75 -> 4.0, 3.76 -> 4.0).
pub fn round_half(x: f64) -> f64 {
    (2.0 * x).round() / 2.0
}

/// Mean ratings per user / business, indexed by the table's interned ids.
/// Entries are dense: every id in the table's pools gets a slot, so users or
/// businesses without ratings have `n == 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableStats {
    pub users: Vec<UserStats>,
    pub businesses: Vec<BusinessStats>,
}

pub fn table_stats(table: &RatingTable) -> TableStats {
    let mut users = vec![UserStats::default(); table.users.len()];
    let mut businesses = vec![BusinessStats::default(); table.businesses.len()];
    for r in &table.ratings {
        let u = &mut users[r.user as usize];
        u.n += 1;
        u.star_sum += r.stars as u64;
        let b = &mut businesses[r.business as usize];
        b.n += 1;
        b.star_sum += r.stars as u64;
    }
    TableStats { users, businesses }
}

/// Population mean and standard deviation (divisor N) of a value sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationMoments {
    pub n: u64,
    pub mean: f64,
    pub std: f64,
}

/// Two-pass population moments with compensated summation.
pub fn population_moments<I>(values: I) -> Result<PopulationMoments>
where
    I: IntoIterator<Item = f64> + Clone,
{
    let mut n = 0u64;
    let mut total = KahanSum::default();
    for v in values.clone() {
        n += 1;
        total.add(v);
    }
    if n == 0 {
        return Err(Error::DegeneratePopulation("no values".into()));
    }
    let mean = total.value() / n as f64;
    let mut sq = KahanSum::default();
    for v in values {
        let d = v - mean;
        sq.add(d * d);
    }
    let std = (sq.value() / n as f64).sqrt();
    Ok(PopulationMoments { n, mean, std })
}

impl PopulationMoments {
    /// Standardize a raw value. Requires `std > 0`.
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    /// Invert [`normalize`](Self::normalize).
    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn check_spread(&self, what: &str) -> Result<()> {
        if self.std > 0.0 {
            Ok(())
        } else {
            Err(Error::DegeneratePopulation(format!(
                "{what} has zero variance"
            )))
        }
    }
}
