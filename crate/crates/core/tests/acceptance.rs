// Acceptance gate. One test per criterion, each printing a single
// PASS/FAIL/SKIP line (visible with --nocapture; embedded in the panic
// message on failure).
//
// Criteria 1-7 reproduce published full-dataset numbers and need the public
// Yelp academic dataset: point RATELENS_YELP_DIR at a directory holding the
// review/business/user JSON-lines files (either `yelp_academic_dataset_
// review.json` or plain `review.json` naming). Without it they skip.
// Criteria 8-14 are dataset-free and run on synthetic data and oracles.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ratelens::aggregates::{population_moments, round_half, table_stats, KahanSum, TableStats};
use ratelens::bootstrap::{
    block_sizes, bootstrap_replicate, build_universe, classify_by_proportions, random_baseline,
    rank_descending, run_bootstrap, Arm, HalfStar, PoolEntry, Universe, UniverseEntry,
    UniverseParams,
};
use ratelens::pipeline::{derive_seed, ingest_table, Ingested, RunConfig};
use ratelens::regression::{
    ols_fit, predictor_moments, rating_level_regression, residual_orthogonality,
    restaurant_level_regression, PredictorMoments, RegressionFit,
};
use ratelens::segmentation::{
    cohort_summary, percentile, segment_raters, Label, SegmentAssignment,
};
use ratelens::synthdata::{generate, SynthConfig};
use ratelens::table::RatingTable;

fn check(name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {name}: {verdict} ({detail})");
    assert!(pass, "criterion {name}: FAIL ({detail})");
}

fn skip(name: &str, why: &str) {
    println!("criterion {name}: SKIP ({why})");
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn within_pct(value: f64, target: f64, pct: f64) -> bool {
    (value - target).abs() <= target * pct / 100.0
}

// ---------------------------------------------------------------------------
// Full-dataset criteria (1-7)

struct FullProducts {
    counts: ratelens::report::DatasetCounts,
    table: RatingTable,
    stats: TableStats,
    moments: PredictorMoments,
    assignment: SegmentAssignment,
    ingest_secs: f64,
}

static FULL: OnceLock<Option<FullProducts>> = OnceLock::new();

const DATASET_HINT: &str = "set RATELENS_YELP_DIR to the Yelp dataset directory to run";

fn full_products() -> Option<&'static FullProducts> {
    FULL.get_or_init(|| {
        let dir = PathBuf::from(std::env::var_os("RATELENS_YELP_DIR")?);
        let find = |kind: &str| -> Option<PathBuf> {
            for name in [
                format!("yelp_academic_dataset_{kind}.json"),
                format!("{kind}.json"),
            ] {
                let p = dir.join(name);
                if p.is_file() {
                    return Some(p);
                }
            }
            None
        };
        let reviews = find("review").unwrap_or_else(|| {
            panic!(
                "RATELENS_YELP_DIR is set but no review file found in {}",
                dir.display()
            )
        });
        let config = RunConfig {
            reviews,
            businesses: find("business"),
            users: find("user"),
            ..RunConfig::default()
        };
        let t = Instant::now();
        let Ingested { table, counts } = ingest_table(&config).expect("dataset ingest");
        let ingest_secs = t.elapsed().as_secs_f64();
        let stats = table_stats(&table);
        let moments = predictor_moments(&stats).expect("predictor moments");
        let assignment = segment_raters(&stats, 5, 25.0, 75.0).expect("segmentation");
        Some(FullProducts {
            counts,
            table,
            stats,
            moments,
            assignment,
            ingest_secs,
        })
    })
    .as_ref()
}

#[test]
fn c01_dataset_counts() {
    let name = "01 dataset-counts";
    let Some(p) = full_products() else {
        return skip(name, DATASET_HINT);
    };
    let restaurant_reviews = p.counts.restaurant_ratings as f64;
    let businesses = p.counts.businesses.records as f64;
    let users = p.counts.users.records as f64;
    let pass = within_pct(restaurant_reviews, 4_700_000.0, 2.0)
        && within_pct(businesses, 52_000.0, 2.0)
        && within_pct(users, 1_400_000.0, 2.0)
        && p.ingest_secs < 600.0;
    check(
        name,
        pass,
        format!(
            "restaurant reviews {restaurant_reviews}, businesses {businesses}, users {users}, ingest {:.1}s",
            p.ingest_secs
        ),
    );
}

#[test]
fn c02_segmentation_thresholds() {
    let name = "02 segmentation-thresholds";
    let Some(p) = full_products() else {
        return skip(name, DATASET_HINT);
    };
    let lo = p.assignment.lo_threshold;
    let hi = p.assignment.hi_threshold;
    let pass = within(lo, 3.38, 0.02) && within(hi, 4.33, 0.02);
    check(
        name,
        pass,
        format!("lo {lo:.4} vs 3.38±0.02, hi {hi:.4} vs 4.33±0.02"),
    );
}

#[test]
fn c03_rating_level_regression() {
    let name = "03 rating-level-regression";
    let Some(p) = full_products() else {
        return skip(name, DATASET_HINT);
    };
    let fit = rating_level_regression(&p.table, &p.stats, &p.moments, false).expect("fit");
    let [a, b1, b2] = [
        fit.coefficients[0],
        fit.coefficients[1],
        fit.coefficients[2],
    ];
    let pass = within(a, 3.7938, 0.005)
        && within(b1, 0.6617, 0.005)
        && within(b2, 0.4214, 0.005)
        && within(fit.r_squared, 0.391, 0.005);
    check(
        name,
        pass,
        format!(
            "intercept {a:.4} vs 3.7938, b1 {b1:.4} vs 0.6617, b2 {b2:.4} vs 0.4214, R² {:.4} vs 0.391 (±0.005)",
            fit.r_squared
        ),
    );
}

#[test]
fn c04_restaurant_level_regression() {
    let name = "04 restaurant-level-regression";
    let Some(p) = full_products() else {
        return skip(name, DATASET_HINT);
    };
    let (fit, _) = restaurant_level_regression(&p.table, &p.stats, 200, 2000).expect("fit");
    let slope = fit.coefficients[1];
    let pass = within(slope, 0.30, 0.02) && within(fit.r_squared, 0.76, 0.02);
    check(
        name,
        pass,
        format!(
            "slope {slope:.4} vs 0.30±0.02, R² {:.4} vs 0.76±0.02",
            fit.r_squared
        ),
    );
}

#[test]
fn c05_universe_composition() {
    let name = "05 universe-composition";
    let Some(p) = full_products() else {
        return skip(name, DATASET_HINT);
    };
    let universe = build_universe(
        &p.table,
        &p.stats,
        &p.assignment,
        &UniverseParams::default(),
    )
    .expect("universe");
    let counts = &universe.class_counts;
    let expected = [(3.5, 768.0), (4.0, 1697.0), (4.5, 681.0)];
    let mut pass = within_pct(universe.len() as f64, 3146.0, 1.0) && counts.len() == 3;
    for (k, (score, want)) in expected.iter().enumerate() {
        pass = pass
            && universe.classes.get(k) == HalfStar::from_score(*score).as_ref()
            && within_pct(counts[k] as f64, *want, 1.0);
    }
    check(
        name,
        pass,
        format!(
            "size {} vs 3146±1%, classes {counts:?} vs [768, 1697, 681]±1%",
            universe.len()
        ),
    );
}

#[test]
fn c06_bootstrap_accuracies() {
    let name = "06 bootstrap-accuracies";
    let Some(p) = full_products() else {
        return skip(name, DATASET_HINT);
    };
    let universe = build_universe(
        &p.table,
        &p.stats,
        &p.assignment,
        &UniverseParams::default(),
    )
    .expect("universe");
    let t = Instant::now();
    let deflating = run_bootstrap(
        &universe,
        Arm::Deflating,
        20,
        100,
        derive_seed(0, "bootstrap:deflating"),
    )
    .expect("deflating arm");
    let inflating = run_bootstrap(
        &universe,
        Arm::Inflating,
        20,
        100,
        derive_seed(0, "bootstrap:inflating"),
    )
    .expect("inflating arm");
    let secs = t.elapsed().as_secs_f64();

    let acc = |r: &ratelens::bootstrap::BootstrapResult, score: f64| {
        let a = r.class(score).expect("class present");
        (a.mean, a.std_error)
    };
    let (d_bot, _) = acc(&deflating, 3.5);
    let (d_top, d_top_se) = acc(&deflating, 4.5);
    let (i_bot, _) = acc(&inflating, 3.5);
    let (i_top, i_top_se) = acc(&inflating, 4.5);
    let contrast = d_top - i_top;
    let sigma = (d_top_se * d_top_se + i_top_se * i_top_se).sqrt();
    let pass = within(d_bot, 0.56, 0.03)
        && within(d_top, 0.59, 0.03)
        && within(i_bot, 0.52, 0.03)
        && within(i_top, 0.49, 0.03)
        && contrast >= 3.0 * sigma
        && secs < 300.0;
    check(
        name,
        pass,
        format!(
            "deflating bottom/top {d_bot:.3}/{d_top:.3} vs 0.56/0.59, inflating {i_bot:.3}/{i_top:.3} vs 0.52/0.49 (±0.03), top contrast {contrast:.4} vs 3σ={:.4}, {secs:.1}s",
            3.0 * sigma
        ),
    );
}

#[test]
fn c07_cohort_summary() {
    let name = "07 cohort-summary";
    let Some(p) = full_products() else {
        return skip(name, DATASET_HINT);
    };
    let summary = cohort_summary(&p.assignment, &p.stats, &p.table);
    let get = |label: Label| {
        let f = summary.get(label);
        (
            f.mean_rating.expect("cohort rated"),
            f.mean_business_rating.expect("cohort rated"),
        )
    };
    let (infl_rating, infl_score) = get(Label::Inflating);
    let (defl_rating, defl_score) = get(Label::Deflating);
    let pass = within(infl_rating, 4.7, 0.05)
        && within(defl_rating, 2.7, 0.05)
        && within(infl_score, 4.0, 0.05)
        && within(defl_score, 3.7, 0.05);
    check(
        name,
        pass,
        format!(
            "mean ratings inflating/deflating {infl_rating:.3}/{defl_rating:.3} vs 4.7/2.7, business means {infl_score:.3}/{defl_score:.3} vs 4.0/3.7 (±0.05)"
        ),
    );
}

// ---------------------------------------------------------------------------
// Desk-scale criteria (8-14)

#[test]
fn c08_ols_matches_normal_equation_oracle() {
    let name = "08 ols-oracle-equivalence";
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut max_coef = 0.0f64;
    let mut max_r2 = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(12..=60);
        let k = rng.random_range(1..=3);
        let (design, response) = common::random_regression(&mut rng, n, k);
        let fit = ols_fit(&design, &response).expect("engine fit");
        let oracle = common::normal_equation_fit(&design, &response).expect("oracle fit");
        for (a, b) in fit.coefficients.iter().zip(&oracle.coefficients) {
            max_coef = max_coef.max(common::rel_err(*a, *b));
        }
        max_r2 = max_r2.max((fit.r_squared - oracle.r_squared).abs());
    }
    let pass = max_coef <= 1e-8 && max_r2 <= 1e-10;
    check(
        name,
        pass,
        format!("200 random fits, max coefficient rel err {max_coef:.2e} (≤1e-8), max R² err {max_r2:.2e} (≤1e-10)"),
    );
}

/// |X'r|∞ / n for the rating-level design, recomputing each row the way the
/// fit did.
fn rating_design_orthogonality(
    table: &RatingTable,
    stats: &TableStats,
    moments: &PredictorMoments,
    leave_one_out: bool,
    fit: &RegressionFit,
) -> f64 {
    let mut acc = [
        KahanSum::default(),
        KahanSum::default(),
        KahanSum::default(),
    ];
    let mut n = 0u64;
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
        let resid = r.stars as f64
            - (fit.coefficients[0] + fit.coefficients[1] * x1 + fit.coefficients[2] * x2);
        acc[0].add(resid);
        acc[1].add(x1 * resid);
        acc[2].add(x2 * resid);
        n += 1;
    }
    acc.iter().fold(0.0f64, |m, a| m.max(a.value().abs())) / n as f64
}

#[test]
fn c09_residual_orthogonality() {
    let name = "09 residual-orthogonality";
    let mut worst = 0.0f64;

    let mut rng = ChaCha8Rng::seed_from_u64(90);
    for _ in 0..200 {
        let n = rng.random_range(12..=60);
        let k = rng.random_range(1..=3);
        let (design, response) = common::random_regression(&mut rng, n, k);
        let fit = ols_fit(&design, &response).expect("engine fit");
        worst = worst.max(residual_orthogonality(&design, &response, &fit));
    }

    let config = SynthConfig {
        n_users: 2_000,
        n_restaurants: 120,
        ratings_per_user: 25,
        seed: 9,
        ..SynthConfig::default()
    };
    let data = generate(&config).expect("synth data");
    let table = RatingTable::from_records(data.ratings.iter());
    let stats = table_stats(&table);
    let moments = predictor_moments(&stats).expect("moments");
    for leave_one_out in [false, true] {
        let fit = rating_level_regression(&table, &stats, &moments, leave_one_out).expect("fit");
        worst = worst.max(rating_design_orthogonality(
            &table,
            &stats,
            &moments,
            leave_one_out,
            &fit,
        ));
    }
    let (fit, points) = restaurant_level_regression(&table, &stats, 1, u64::MAX).expect("fit");
    let design: Vec<Vec<f64>> = points.iter().map(|p| vec![1.0, p.x2]).collect();
    let response: Vec<f64> = points.iter().map(|p| p.y).collect();
    worst = worst.max(residual_orthogonality(&design, &response, &fit));

    let pass = worst <= 1e-8;
    check(
        name,
        pass,
        format!("max |X'r|∞/n over 203 fits: {worst:.2e} (≤1e-8)"),
    );
}

/// Brute-force streaming OLS for a fixed 3-column design: normal equations
/// with the explicit 3x3 inverse, residual sums on a second pass.
fn streaming_normal_fit<F, I>(rows: F) -> (Vec<f64>, Vec<f64>, f64)
where
    F: Fn() -> I,
    I: Iterator<Item = ([f64; 3], f64)>,
{
    let mut xtx = vec![vec![KahanSum::default(); 3]; 3];
    let mut xty = [
        KahanSum::default(),
        KahanSum::default(),
        KahanSum::default(),
    ];
    let mut y_sum = KahanSum::default();
    let mut n = 0u64;
    for (x, y) in rows() {
        for i in 0..3 {
            for j in 0..3 {
                xtx[i][j].add(x[i] * x[j]);
            }
            xty[i].add(x[i] * y);
        }
        y_sum.add(y);
        n += 1;
    }
    let xtx: Vec<Vec<f64>> = xtx
        .iter()
        .map(|row| row.iter().map(KahanSum::value).collect())
        .collect();
    let inv = common::invert(&xtx).expect("well-conditioned design");
    let beta: Vec<f64> = (0..3)
        .map(|i| (0..3).map(|j| inv[i][j] * xty[j].value()).sum())
        .collect();

    let y_mean = y_sum.value() / n as f64;
    let mut ssr = KahanSum::default();
    let mut sst = KahanSum::default();
    for (x, y) in rows() {
        let fitted: f64 = (0..3).map(|i| x[i] * beta[i]).sum();
        ssr.add((y - fitted) * (y - fitted));
        sst.add((y - y_mean) * (y - y_mean));
    }
    let sigma_sq = ssr.value() / (n - 3) as f64;
    let se: Vec<f64> = (0..3).map(|i| (sigma_sq * inv[i][i]).sqrt()).collect();
    let r_squared = 1.0 - ssr.value() / sst.value();
    (beta, se, r_squared)
}

#[test]
fn c10_synthetic_recovery() {
    let name = "10 synthetic-recovery";

    // Part 1: the pipeline's standardized coefficients against a brute-force
    // fit on the true latents, z-scored over the same rated populations.
    let config = SynthConfig::default();
    let data = generate(&config).expect("synth data");
    let table = RatingTable::from_records(data.ratings.iter());
    let stats = table_stats(&table);
    let moments = predictor_moments(&stats).expect("moments");
    let fit = rating_level_regression(&table, &stats, &moments, false).expect("pipeline fit");

    let generosity: Vec<f64> = (0..table.users.len() as u32)
        .map(|u| data.generosity[table.users.name(u)])
        .collect();
    let quality: Vec<f64> = (0..table.businesses.len() as u32)
        .map(|b| data.quality[table.businesses.name(b)])
        .collect();
    let rated_g: Vec<f64> = generosity
        .iter()
        .enumerate()
        .filter(|(u, _)| stats.users[*u].n > 0)
        .map(|(_, v)| *v)
        .collect();
    let rated_q: Vec<f64> = quality
        .iter()
        .enumerate()
        .filter(|(b, _)| stats.businesses[*b].n > 0)
        .map(|(_, v)| *v)
        .collect();
    let (g_mean, g_std) = common::two_pass_moments(&rated_g);
    let (q_mean, q_std) = common::two_pass_moments(&rated_q);
    let oracle_rows = || {
        table.ratings.iter().map(|r| {
            let x1 = (generosity[r.user as usize] - g_mean) / g_std;
            let x2 = (quality[r.business as usize] - q_mean) / q_std;
            ([1.0, x1, x2], r.stars as f64)
        })
    };
    let (oracle_beta, oracle_se, _) = streaming_normal_fit(oracle_rows);

    let mut pass = fit.coefficients[1] > 0.0 && fit.coefficients[2] > 0.0;
    let mut gaps = Vec::new();
    for idx in [1, 2] {
        let gap = (fit.coefficients[idx] - oracle_beta[idx]).abs();
        let sigma =
            (fit.std_errors[idx] * fit.std_errors[idx] + oracle_se[idx] * oracle_se[idx]).sqrt();
        pass = pass && gap <= 3.0 * sigma;
        gaps.push(format!(
            "b{idx} {:.4} vs oracle {:.4} (gap {:.4}, 3σ {:.4})",
            fit.coefficients[idx],
            oracle_beta[idx],
            gap,
            3.0 * sigma
        ));
    }

    // Every fit in this suite stays orthogonal (criterion 9's bound).
    let ortho = rating_design_orthogonality(&table, &stats, &moments, false, &fit);
    pass = pass && ortho <= 1e-8;

    // Part 2: with zero generosity spread the cohorts are sampling noise, so
    // the two experiment arms must agree on the cohort's accuracy (fraction
    // of the whole universe correctly slotted) within replicate noise.
    let null_config = SynthConfig {
        generosity_spread: 0.0,
        ..SynthConfig::default()
    };
    let null_data = generate(&null_config).expect("synth data");
    let null_table = RatingTable::from_records(null_data.ratings.iter());
    let null_stats = table_stats(&null_table);
    let assignment = segment_raters(&null_stats, 5, 25.0, 75.0).expect("segmentation");
    let universe = build_universe(
        &null_table,
        &null_stats,
        &assignment,
        &UniverseParams::default(),
    )
    .expect("universe");
    let (d_mean, d_se) = cohort_accuracy(
        &universe,
        Arm::Deflating,
        derive_seed(0, "bootstrap:deflating"),
    );
    let (i_mean, i_se) = cohort_accuracy(
        &universe,
        Arm::Inflating,
        derive_seed(0, "bootstrap:inflating"),
    );
    let null_diff = (d_mean - i_mean).abs();
    let null_sigma = (d_se * d_se + i_se * i_se).sqrt();
    pass = pass && null_diff <= 3.0 * null_sigma;

    check(
        name,
        pass,
        format!(
            "{}; orthogonality {ortho:.1e}; null cohorts {d_mean:.4} vs {i_mean:.4} over {} restaurants, |Δacc| {null_diff:.4} ≤ 3σ={:.4}",
            gaps.join("; "),
            universe.len(),
            3.0 * null_sigma
        ),
    );
}

/// Mean and standard error across replicates of one arm's whole-universe
/// accuracy, with the same per-replicate streams `run_bootstrap` uses.
fn cohort_accuracy(universe: &Universe, arm: Arm, seed: u64) -> (f64, f64) {
    let replicates = 100u32;
    let n = universe.len() as f64;
    let weights: Vec<f64> = universe
        .class_counts
        .iter()
        .map(|c| *c as f64 / n)
        .collect();
    let mut sum = 0.0;
    let mut sq_sum = 0.0;
    for rep in 0..replicates {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64 + 1);
        let per_class = bootstrap_replicate(universe, arm, 20, &mut rng);
        let overall: f64 = per_class.iter().zip(&weights).map(|(a, w)| a * w).sum();
        sum += overall;
        sq_sum += overall * overall;
    }
    let r = replicates as f64;
    let mean = sum / r;
    let var = ((sq_sum - r * mean * mean) / (r - 1.0)).max(0.0);
    (mean, (var / r).sqrt())
}

#[test]
fn c11_random_baseline_matches_class_proportions() {
    let name = "11 random-baseline-law";
    let mut entries = Vec::new();
    let mix = [(3.5, 22u32), (4.0, 54), (4.5, 24)];
    let mut idx = 0u32;
    for (score, count) in mix {
        for _ in 0..count {
            entries.push(UniverseEntry {
                business: idx,
                true_score: HalfStar::from_score(score).expect("grid score"),
                n_ratings: 1000,
                deflating_pool: vec![PoolEntry {
                    user: idx,
                    value: score,
                }],
                inflating_pool: vec![PoolEntry {
                    user: idx,
                    value: score,
                }],
            });
            idx += 1;
        }
    }
    let universe = Universe {
        entries,
        classes: mix
            .iter()
            .map(|(s, _)| HalfStar::from_score(*s).unwrap())
            .collect(),
        class_counts: mix.iter().map(|(_, c)| *c as u64).collect(),
    };
    let result = random_baseline(&universe, 2000, derive_seed(0, "baseline")).expect("baseline");
    let proportions = universe.proportions();
    let mut pass = true;
    let mut details = Vec::new();
    for (k, acc) in result.accuracies.iter().enumerate() {
        let dev = (acc.mean - proportions[k]).abs();
        pass = pass && dev <= 3.0 * acc.std_error;
        details.push(format!(
            "{}: {:.4} vs {:.2} (3SE {:.4})",
            acc.class,
            acc.mean,
            proportions[k],
            3.0 * acc.std_error
        ));
    }
    check(
        name,
        pass,
        format!("100 restaurants, R=2000: {}", details.join(", ")),
    );
}

fn run_cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ratelens"))
        .args(args)
        .output()
        .expect("spawn CLI");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn dir_bytes(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut map = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("read out dir") {
        let entry = entry.expect("dir entry");
        let name = entry.file_name().into_string().expect("utf-8 name");
        map.insert(name, std::fs::read(entry.path()).expect("read artifact"));
    }
    map
}

#[test]
fn c12_seeded_reruns_byte_identical() {
    let name = "12 determinism";
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();
    let path_str = |p: PathBuf| p.into_os_string().into_string().expect("utf-8 path");

    // synth twice with one seed.
    let synth_args = |out: &str| {
        vec![
            "synth".to_string(),
            "--users=200".into(),
            "--restaurants=10".into(),
            "--ratings-per-user=30".into(),
            "--seed=11".into(),
            format!("--out={}", path_str(root.join(out))),
        ]
    };
    for out in ["s1", "s2"] {
        let args: Vec<String> = synth_args(out);
        run_cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let mut pass = true;
    for file in ["ratings.csv", "latents.json"] {
        pass = pass
            && std::fs::read(root.join("s1").join(file)).expect("synth artifact")
                == std::fs::read(root.join("s2").join(file)).expect("synth artifact");
    }

    // Full pipeline twice into the same directory; everything but the stage
    // timings in the manifest must be byte-identical.
    let reviews = path_str(root.join("s1").join("ratings.csv"));
    let run_out = root.join("run_out");
    let config_path = root.join("run.toml");
    std::fs::write(
        &config_path,
        format!(
            "reviews = \"{reviews}\"\nformat = \"csv\"\nout_dir = \"{}\"\nseed = 5\nreplicates = 40\nsample_size = 10\nuniverse_min_total = 100\nuniverse_min_per_cohort = 5\nstratum_min = 1\nstratum_max = 100000\n",
            path_str(run_out.clone())
        ),
    )
    .expect("write config");
    let config_arg = format!("--config={}", path_str(config_path));
    run_cli(&["run", &config_arg]);
    let first = dir_bytes(&run_out);
    run_cli(&["run", &config_arg]);
    let second = dir_bytes(&run_out);

    pass = pass && first.keys().eq(second.keys());
    for (file, bytes) in &first {
        if file == "manifest.json" {
            let strip = |b: &[u8]| -> serde_json::Value {
                let mut v: serde_json::Value = serde_json::from_slice(b).expect("manifest json");
                v.as_object_mut()
                    .expect("manifest object")
                    .remove("timings_ms");
                v
            };
            pass = pass && strip(bytes) == strip(&second[file]);
        } else {
            pass = pass && bytes == &second[file];
        }
    }
    let artifact_count = first.len();

    // Bootstrap subcommand twice.
    let boot_args = |out: &str| {
        vec![
            "bootstrap".to_string(),
            format!("--reviews={reviews}"),
            "--format=csv".into(),
            "--seed=9".into(),
            "--replicates=30".into(),
            "--sample-size=10".into(),
            "--min-total=100".into(),
            "--min-per-cohort=5".into(),
            format!("--out={}", path_str(root.join(out))),
        ]
    };
    for out in ["b1", "b2"] {
        let args = boot_args(out);
        run_cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
    for file in ["figure4.csv", "universe.csv"] {
        pass = pass
            && std::fs::read(root.join("b1").join(file)).expect("bootstrap artifact")
                == std::fs::read(root.join("b2").join(file)).expect("bootstrap artifact");
    }

    check(
        name,
        pass,
        format!(
            "synth, run ({artifact_count} files, manifest compared without timings), and bootstrap reruns identical"
        ),
    );
}

/// A universe of single-value pools: sampling always averages to the pool
/// value, so ranking depends only on the values' order.
fn value_universe(items: &[(f64, usize)], scale: f64) -> Universe {
    let grid = [3.5, 4.0, 4.5];
    let mut present: Vec<usize> = items.iter().map(|(_, c)| *c).collect();
    present.sort_unstable();
    present.dedup();
    let classes: Vec<HalfStar> = present
        .iter()
        .map(|c| HalfStar::from_score(grid[*c]).expect("grid score"))
        .collect();
    let mut class_counts = vec![0u64; classes.len()];
    let entries = items
        .iter()
        .enumerate()
        .map(|(i, (value, c))| {
            let ci = present.binary_search(c).expect("class present");
            class_counts[ci] += 1;
            let pool = vec![PoolEntry {
                user: i as u32,
                value: value * scale,
            }];
            UniverseEntry {
                business: i as u32,
                true_score: classes[ci],
                n_ratings: 1000,
                deflating_pool: pool.clone(),
                inflating_pool: pool,
            }
        })
        .collect();
    Universe {
        entries,
        classes,
        class_counts,
    }
}

#[test]
fn c13_partition_and_rank_invariance_properties() {
    let name = "13 partition+rank-invariance";
    use proptest::prelude::*;
    use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

    let config = Config {
        cases: 1000,
        ..Config::default()
    };

    // Partition: ranking then classifying touches every entry exactly once
    // and produces blocks of exactly the derived sizes.
    let mut runner = TestRunner::new_with_rng(
        config.clone(),
        TestRng::from_seed(RngAlgorithm::ChaCha, &[13; 32]),
    );
    let grid = [1.5, 2.5, 3.0, 4.0, 5.0];
    let partition = runner.run(
        &(
            proptest::collection::vec(-1.0e6f64..1.0e6, 1..200),
            proptest::collection::vec(0.01f64..1.0, 1..=5),
        ),
        |(scores, weights)| {
            let total: f64 = weights.iter().sum();
            let proportions: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let classes: Vec<HalfStar> = grid
                .iter()
                .take(proportions.len())
                .map(|s| HalfStar::from_score(*s).expect("grid score"))
                .collect();

            let order = rank_descending(&scores);
            let mut seen = order.clone();
            seen.sort_unstable();
            prop_assert!(
                seen.iter().enumerate().all(|(i, v)| i == *v),
                "order is a permutation"
            );

            let sizes = block_sizes(scores.len(), &proportions);
            prop_assert_eq!(sizes.iter().sum::<usize>(), scores.len());

            let assigned = classify_by_proportions(&order, &classes, &proportions);
            prop_assert_eq!(assigned.len(), scores.len());
            for (k, class) in classes.iter().enumerate() {
                let got = assigned.iter().filter(|a| *a == class).count();
                prop_assert_eq!(got, sizes[k]);
            }
            Ok(())
        },
    );

    // Rank invariance: scaling every pool value by a positive power of two
    // (exact on floats, strictly increasing) leaves a replicate's
    // classification accuracy untouched.
    let mut runner2 =
        TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &[31; 32]));
    let rank_invariance = runner2.run(
        &(
            proptest::collection::vec((-1.0e6f64..1.0e6, 0usize..3), 2..120),
            proptest::num::u64::ANY,
        ),
        |(items, seed)| {
            let plain = value_universe(&items, 1.0);
            let scaled = value_universe(&items, 4.0);
            let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
            let mut rng_b = ChaCha8Rng::seed_from_u64(seed);
            let a = bootstrap_replicate(&plain, Arm::Deflating, 5, &mut rng_a);
            let b = bootstrap_replicate(&scaled, Arm::Deflating, 5, &mut rng_b);
            prop_assert_eq!(a, b);
            Ok(())
        },
    );

    let pass = partition.is_ok() && rank_invariance.is_ok();
    check(
        name,
        pass,
        format!(
            "partition: {}, rank invariance: {} (1000 cases each)",
            if partition.is_ok() { "ok" } else { "violated" },
            if rank_invariance.is_ok() {
                "ok"
            } else {
                "violated"
            },
        ),
    );
}

#[test]
fn c14_forced_examples_exact() {
    let name = "14 forced-examples";

    let rounding = round_half(3.74) == 3.5 && round_half(3.76) == 4.0 && round_half(3.75) == 4.0;

    let m = population_moments(vec![3.0, 5.0]).expect("two-point population");
    let (oracle_mean, oracle_std) = common::two_pass_moments(&[3.0, 5.0]);
    let moments_ok = m.mean == 4.0 && m.std == 1.0 && oracle_mean == 4.0 && oracle_std == 1.0;
    let normalize_ok = m.normalize(4.0) == 0.0 && m.normalize(5.0) == 1.0;

    let sorted = [1.0, 2.0, 3.0, 4.0, 5.0];
    let percentile_ok = percentile(&sorted, 25.0).expect("25th") == 2.0
        && percentile(&sorted, 75.0).expect("75th") == 4.0
        && common::percentile_oracle(&sorted, 25.0) == 2.0
        && common::percentile_oracle(&sorted, 75.0) == 4.0;

    let pass = rounding && moments_ok && normalize_ok && percentile_ok;
    check(
        name,
        pass,
        format!("round_half {rounding}, moments {moments_ok}, normalize {normalize_ok}, percentile {percentile_ok}"),
    );
}
