//! Streaming ordinary least squares on top of a Givens-rotation QR of the
//! augmented system [X | y], plus the two concrete model fits used by the
//! pipeline: the rating-level model and the restaurant-level model.
//!
//! The factorization never forms XᵀX. Rows are folded one at a time into a
//! small upper-triangular matrix, so memory is O(k²) regardless of n.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::aggregates::{population_moments, PopulationMoments, TableStats};
use crate::error::{Error, Result};
use crate::table::RatingTable;

/// Degrees of freedom above which the t-distribution is replaced by a
/// standard normal when converting t-values to p-values.
const NORMAL_APPROX_DF: u64 = 10_000;

/// Full OLS summary, intercept first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub f_value: f64,
    pub f_p_value: f64,
    pub df_residual: u64,
    pub df_model: u64,
    pub n_obs: u64,
}

impl RegressionFit {
    pub fn k(&self) -> usize {
        self.coefficients.len()
    }
}

/// Incremental thin QR of the augmented matrix [X | y].
///
/// After all rows are folded in, the top-left k×k block is the triangular
/// factor of X, column k holds Qᵀy, and the corner entry squared is the
/// residual sum of squares.
#[derive(Debug, Clone)]
pub struct OlsBuilder {
    k: usize,
    /// (k+1) x (k+1) upper triangular, row major.
    r: Vec<Vec<f64>>,
    /// Squared column norms of X, for the rank tolerance.
    col_sq: Vec<f64>,
    n: u64,
    /// Welford accumulators for the response, giving a stable SST.
    y_mean: f64,
    y_m2: f64,
}

impl OlsBuilder {
    /// `k` is the number of design columns including the intercept.
    pub fn new(k: usize) -> Self {
        let dim = k + 1;
        OlsBuilder {
            k,
            r: vec![vec![0.0; dim]; dim],
            col_sq: vec![0.0; k],
            n: 0,
            y_mean: 0.0,
            y_m2: 0.0,
        }
    }

    /// Fold one observation into the factorization.
    #[allow(clippy::needless_range_loop)]
    pub fn push(&mut self, xs: &[f64], y: f64) {
        assert_eq!(xs.len(), self.k, "design row width mismatch");
        let dim = self.k + 1;
        let mut w = Vec::with_capacity(dim);
        w.extend_from_slice(xs);
        w.push(y);

        for (i, x) in xs.iter().enumerate() {
            self.col_sq[i] += x * x;
        }
        self.n += 1;
        let delta = y - self.y_mean;
        self.y_mean += delta / self.n as f64;
        self.y_m2 += delta * (y - self.y_mean);

        for i in 0..dim {
            if w[i] == 0.0 {
                continue;
            }
            let rii = self.r[i][i];
            let rot = rii.hypot(w[i]);
            if rot == 0.0 {
                continue;
            }
            let c = rii / rot;
            let s = w[i] / rot;
            for j in i..dim {
                let rij = self.r[i][j];
                let wj = w[j];
                self.r[i][j] = c * rij + s * wj;
                w[j] = c * wj - s * rij;
            }
        }
    }

    pub fn n_obs(&self) -> u64 {
        self.n
    }

    /// Solve the triangularized system and assemble the fit summary.
    ///
    /// An exactly determined system (n == k) is fit with zero residual
    /// degrees of freedom: coefficients and R² are defined, standard errors
    /// and p-values are NaN.
    #[allow(clippy::needless_range_loop)]
    pub fn fit(&self) -> Result<RegressionFit> {
        let k = self.k;
        let n = self.n;
        if (n as usize) < k {
            return Err(Error::InsufficientData {
                need: k,
                got: n as usize,
            });
        }
        for i in 0..k {
            let tol = 1e-12 * self.col_sq[i].sqrt().max(1.0);
            if self.r[i][i].abs() <= tol {
                return Err(Error::SingularDesign { column: i });
            }
        }

        // Back-substitution for the coefficients.
        let qty: Vec<f64> = (0..k).map(|i| self.r[i][k]).collect();
        let mut coefficients = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = qty[i];
            for j in i + 1..k {
                acc -= self.r[i][j] * coefficients[j];
            }
            coefficients[i] = acc / self.r[i][i];
        }

        let ssr = self.r[k][k] * self.r[k][k];
        let sst = self.y_m2;
        let r_squared = if sst > 0.0 {
            (1.0 - ssr / sst).clamp(0.0, 1.0)
        } else {
            0.0
        };

        let df_residual = n - k as u64;
        let df_model = k as u64 - 1;
        let adj_r_squared = if df_residual > 0 && df_model > 0 {
            1.0 - (1.0 - r_squared) * (n as f64 - 1.0) / df_residual as f64
        } else {
            r_squared
        };

        // Diagonal of (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ via the triangular inverse of R.
        let mut inv = vec![vec![0.0; k]; k];
        for j in 0..k {
            inv[j][j] = 1.0 / self.r[j][j];
            for i in (0..j).rev() {
                let mut acc = 0.0;
                for m in i + 1..=j {
                    acc += self.r[i][m] * inv[m][j];
                }
                inv[i][j] = -acc / self.r[i][i];
            }
        }
        let sigma_sq = if df_residual > 0 {
            ssr / df_residual as f64
        } else {
            f64::NAN
        };
        let std_errors: Vec<f64> = (0..k)
            .map(|i| {
                let d: f64 = (i..k).map(|j| inv[i][j] * inv[i][j]).sum();
                (sigma_sq * d).sqrt()
            })
            .collect();

        let t_values: Vec<f64> = coefficients
            .iter()
            .zip(&std_errors)
            .map(|(b, se)| {
                if se.is_nan() {
                    f64::NAN
                } else if *se > 0.0 {
                    b / se
                } else if *b == 0.0 {
                    0.0
                } else {
                    b.signum() * f64::INFINITY
                }
            })
            .collect();
        let p_values: Vec<f64> = t_values
            .iter()
            .map(|t| two_sided_p(*t, df_residual))
            .collect();

        let (f_value, f_p_value) = if df_model == 0 || df_residual == 0 {
            (f64::NAN, f64::NAN)
        } else if r_squared < 1.0 {
            let f = (r_squared / df_model as f64) / ((1.0 - r_squared) / df_residual as f64);
            let dist = FisherSnedecor::new(df_model as f64, df_residual as f64)
                .expect("positive degrees of freedom");
            (f, dist.sf(f))
        } else {
            (f64::INFINITY, 0.0)
        };

        Ok(RegressionFit {
            coefficients,
            std_errors,
            t_values,
            p_values,
            r_squared,
            adj_r_squared,
            f_value,
            f_p_value,
            df_residual,
            df_model,
            n_obs: n,
        })
    }
}

/// Two-sided p-value of a t statistic with `df` residual degrees of freedom.
fn two_sided_p(t: f64, df: u64) -> f64 {
    if t.is_nan() || df == 0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    let tail = if df > NORMAL_APPROX_DF {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        normal.sf(t.abs())
    } else {
        let dist = StudentsT::new(0.0, 1.0, df as f64).expect("positive df");
        dist.sf(t.abs())
    };
    (2.0 * tail).min(1.0)
}

/// Fit a design given as in-memory rows. `design[i]` must include the
/// intercept column explicitly.
pub fn ols_fit(design: &[Vec<f64>], response: &[f64]) -> Result<RegressionFit> {
    if design.len() != response.len() {
        return Err(Error::InvalidConfig(format!(
            "design has {} rows but response has {}",
            design.len(),
            response.len()
        )));
    }
    let Some(first) = design.first() else {
        return Err(Error::InsufficientData { need: 1, got: 0 });
    };
    let mut builder = OlsBuilder::new(first.len());
    for (xs, y) in design.iter().zip(response) {
        builder.push(xs, *y);
    }
    builder.fit()
}

/// Max over design columns of |Xᵀr| / n, where r are fit residuals. Exact
/// least squares makes this zero; it is the orthogonality diagnostic.
pub fn residual_orthogonality(design: &[Vec<f64>], response: &[f64], fit: &RegressionFit) -> f64 {
    let k = fit.k();
    let mut dots = vec![0.0; k];
    for (xs, y) in design.iter().zip(response) {
        let pred: f64 = xs.iter().zip(&fit.coefficients).map(|(x, b)| x * b).sum();
        let r = y - pred;
        for (dot, x) in dots.iter_mut().zip(xs) {
            *dot += x * r;
        }
    }
    let n = design.len().max(1) as f64;
    dots.iter().fold(0.0f64, |m, d| m.max(d.abs())) / n
}

/// Standardizing moments for the two rating-level predictors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictorMoments {
    pub user: PopulationMoments,
    pub business: PopulationMoments,
}

/// Population moments of per-user and per-business mean ratings, over
/// entities that have at least one rating.
pub fn predictor_moments(stats: &TableStats) -> Result<PredictorMoments> {
    let user_means: Vec<f64> = stats
        .users
        .iter()
        .filter(|u| u.n > 0)
        .map(|u| u.mean())
        .collect();
    let business_means: Vec<f64> = stats
        .businesses
        .iter()
        .filter(|b| b.n > 0)
        .map(|b| b.mean())
        .collect();
    let user = population_moments(user_means)
        .map_err(|_| Error::DegeneratePopulation("no rated users".into()))?;
    let business = population_moments(business_means)
        .map_err(|_| Error::DegeneratePopulation("no rated businesses".into()))?;
    user.check_spread("user mean ratings")?;
    business.check_spread("business mean ratings")?;
    Ok(PredictorMoments { user, business })
}

/// Regress each star rating on the author's standardized mean rating and the
/// business's standardized mean rating, with intercept.
///
/// `leave_one_out` recomputes the author's mean without the predicted rating
/// (rows whose author has a single rating are dropped); the default keeps the
/// plain average, which includes the predicted rating.
pub fn rating_level_regression(
    table: &RatingTable,
    stats: &TableStats,
    moments: &PredictorMoments,
    leave_one_out: bool,
) -> Result<RegressionFit> {
    let mut builder = OlsBuilder::new(3);
    for r in &table.ratings {
        let u = stats.users[r.user as usize];
        let x1_raw = if leave_one_out {
            if u.n < 2 {
                continue;
            }
            (u.star_sum - r.stars as u64) as f64 / (u.n - 1) as f64
        } else {
            u.mean()
        };
        let x1 = moments.user.normalize(x1_raw);
        let x2 = moments
            .business
            .normalize(stats.businesses[r.business as usize].mean());
        builder.push(&[1.0, x1, x2], r.stars as f64);
    }
    builder.fit()
}

/// One restaurant in the restaurant-level scatter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatterPoint {
    /// Interned business id.
    pub business: u32,
    /// Restaurant mean rating.
    pub x2: f64,
    /// Mean over distinct raters of the rater's overall mean rating.
    pub y: f64,
}

/// For restaurants rated between `min_count` and `max_count` times
/// (inclusive), regress the mean rater generosity on the restaurant's own
/// mean rating. Each distinct user contributes their overall mean once,
/// however many times they rated the restaurant.
pub fn restaurant_level_regression(
    table: &RatingTable,
    stats: &TableStats,
    min_count: u64,
    max_count: u64,
) -> Result<(RegressionFit, Vec<ScatterPoint>)> {
    let mut pairs: Vec<(u32, u32)> = table.ratings.iter().map(|r| (r.business, r.user)).collect();
    pairs.sort_unstable();
    pairs.dedup();

    let mut points = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let business = pairs[i].0;
        let mut j = i;
        let mut sum = 0.0;
        while j < pairs.len() && pairs[j].0 == business {
            sum += stats.users[pairs[j].1 as usize].mean();
            j += 1;
        }
        let b = stats.businesses[business as usize];
        if b.n >= min_count && b.n <= max_count {
            points.push(ScatterPoint {
                business,
                x2: b.mean(),
                y: sum / (j - i) as f64,
            });
        }
        i = j;
    }

    if points.len() < 2 {
        return Err(Error::InsufficientData {
            need: 2,
            got: points.len(),
        });
    }
    let design: Vec<Vec<f64>> = points.iter().map(|p| vec![1.0, p.x2]).collect();
    let response: Vec<f64> = points.iter().map(|p| p.y).collect();
    let fit = ols_fit(&design, &response)?;
    Ok((fit, points))
}
