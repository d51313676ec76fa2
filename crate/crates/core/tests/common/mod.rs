// Brute-force oracles shared by the integration suites. These deliberately
// take the slow, obvious route (explicit small-matrix inverse, full sort,
// two-pass sums) so they share no code with the engine they check.

#![allow(dead_code)]

use rand::Rng;

/// Explicit adjugate inverse for matrices up to 3x3.
pub fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    match m.len() {
        1 => {
            if m[0][0].abs() < 1e-12 {
                return None;
            }
            Some(vec![vec![1.0 / m[0][0]]])
        }
        2 => {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < 1e-12 {
                return None;
            }
            Some(vec![
                vec![m[1][1] / det, -m[0][1] / det],
                vec![-m[1][0] / det, m[0][0] / det],
            ])
        }
        3 => {
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            if det.abs() < 1e-12 {
                return None;
            }
            let cofactor = |r: usize, c: usize| -> f64 {
                let rows: Vec<usize> = (0..3).filter(|i| *i != r).collect();
                let cols: Vec<usize> = (0..3).filter(|j| *j != c).collect();
                let minor = m[rows[0]][cols[0]] * m[rows[1]][cols[1]]
                    - m[rows[0]][cols[1]] * m[rows[1]][cols[0]];
                if (r + c).is_multiple_of(2) {
                    minor
                } else {
                    -minor
                }
            };
            Some(
                (0..3)
                    .map(|i| (0..3).map(|j| cofactor(j, i) / det).collect())
                    .collect(),
            )
        }
        _ => None,
    }
}

pub struct OracleFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub r_squared: f64,
}

/// Textbook normal equations: beta = (X'X)^-1 X'y via the explicit inverse,
/// residual sums recomputed from the fitted values.
pub fn normal_equation_fit(design: &[Vec<f64>], response: &[f64]) -> Option<OracleFit> {
    let n = design.len();
    let k = design[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (row, y) in design.iter().zip(response) {
        for i in 0..k {
            for j in 0..k {
                xtx[i][j] += row[i] * row[j];
            }
            xty[i] += row[i] * y;
        }
    }
    let inv = invert(&xtx)?;
    let coefficients: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| inv[i][j] * xty[j]).sum())
        .collect();

    let y_mean = response.iter().sum::<f64>() / n as f64;
    let mut ssr = 0.0;
    let mut sst = 0.0;
    for (row, y) in design.iter().zip(response) {
        let fitted: f64 = row.iter().zip(&coefficients).map(|(x, b)| x * b).sum();
        ssr += (y - fitted) * (y - fitted);
        sst += (y - y_mean) * (y - y_mean);
    }
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 };
    let sigma_sq = if n > k {
        ssr / (n - k) as f64
    } else {
        f64::NAN
    };
    let std_errors = (0..k).map(|i| (sigma_sq * inv[i][i]).sqrt()).collect();
    Some(OracleFit {
        coefficients,
        std_errors,
        r_squared,
    })
}

/// Plain two-pass population mean and standard deviation.
pub fn two_pass_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Sort-and-interpolate percentile on a copy of the data.
pub fn percentile_oracle(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p / 100.0 * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Absolute difference scaled by the larger magnitude, floored at 1 so
/// near-zero values compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// A well-conditioned random regression problem: intercept column, uniform
/// predictors, linear response plus bounded noise.
pub fn random_regression(rng: &mut impl Rng, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let truth: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let design: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut row = vec![1.0];
            row.extend((1..k).map(|_| rng.random_range(-3.0..3.0)));
            row
        })
        .collect();
    let response: Vec<f64> = design
        .iter()
        .map(|row| {
            let signal: f64 = row.iter().zip(&truth).map(|(x, b)| x * b).sum();
            signal + rng.random_range(-1.0..1.0)
        })
        .collect();
    (design, response)
}
