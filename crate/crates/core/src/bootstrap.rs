//! The seeded resampling experiment: build the eligible restaurant universe,
//! repeatedly score restaurants from small user samples, rank, classify by
//! score-class proportions, and measure per-class accuracy, for each rater
//! cohort and for a shuffled random baseline.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregates::{round_half, TableStats};
use crate::error::{Error, Result};
use crate::segmentation::{Label, SegmentAssignment};
use crate::table::RatingTable;

/// A half-star score class stored exactly as twice its value, so 3.5 is 7.
/// Gives the score classes total order and hashing without float caveats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfStar(u8);

impl HalfStar {
    pub fn from_score(score: f64) -> Option<Self> {
        let doubled = score * 2.0;
        if !score.is_finite() || (doubled - doubled.round()).abs() > 1e-9 {
            return None;
        }
        let d = doubled.round();
        if !(2.0..=10.0).contains(&d) {
            return None;
        }
        Some(HalfStar(d as u8))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl std::fmt::Display for HalfStar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1}", self.as_f64())
    }
}

/// One distinct rater of a restaurant and their mean star rating of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolEntry {
    pub user: u32,
    pub value: f64,
}

/// One eligible restaurant.
#[derive(Debug, Clone, PartialEq)]
pub struct UniverseEntry {
    pub business: u32,
    pub true_score: HalfStar,
    /// Total rating count, before collapsing repeat raters.
    pub n_ratings: u64,
    pub deflating_pool: Vec<PoolEntry>,
    pub inflating_pool: Vec<PoolEntry>,
}

/// The experiment's restaurant set with per-cohort rater pools and the
/// score-class mix. Entries are ordered by business id so ranking tie-breaks
/// are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    pub entries: Vec<UniverseEntry>,
    /// Distinct score classes present, ascending.
    pub classes: Vec<HalfStar>,
    /// Restaurants per class, aligned with `classes`.
    pub class_counts: Vec<u64>,
}

impl Universe {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fraction of restaurants per class, aligned with `classes`.
    pub fn proportions(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.class_counts.iter().map(|c| *c as f64 / n).collect()
    }

    fn class_index(&self, score: HalfStar) -> usize {
        self.classes
            .binary_search(&score)
            .expect("score class present")
    }
}

/// Which score the classifier is asked to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetScore {
    /// Published half-star score over all ratings.
    #[default]
    AllRatings,
    /// Half-star score recomputed without the labeled cohorts' ratings.
    ExcludeCohorts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniverseParams {
    /// A restaurant qualifies with strictly more than this many ratings.
    pub min_total: u64,
    /// Minimum distinct raters from each cohort.
    pub min_per_cohort: usize,
    /// Score classes admitted to the experiment.
    pub allowed_scores: Vec<HalfStar>,
    pub target: TargetScore,
}

impl Default for UniverseParams {
    fn default() -> Self {
        UniverseParams {
            min_total: 200,
            min_per_cohort: 50,
            allowed_scores: [3.5, 4.0, 4.5]
                .iter()
                .map(|s| HalfStar::from_score(*s).unwrap())
                .collect(),
            target: TargetScore::AllRatings,
        }
    }
}

/// Collect the restaurants that qualify for the experiment: strictly more
/// than `min_total` ratings, at least `min_per_cohort` distinct raters from
/// each cohort, and a target score in `allowed_scores`. Pool values collapse
/// repeat ratings by one user of one restaurant into their mean.
pub fn build_universe(
    table: &RatingTable,
    stats: &TableStats,
    assignment: &SegmentAssignment,
    params: &UniverseParams,
) -> Result<Universe> {
    // Collapse to one row per (business, user).
    let mut triples: Vec<(u32, u32, u8)> = table
        .ratings
        .iter()
        .map(|r| (r.business, r.user, r.stars))
        .collect();
    triples.sort_unstable();

    let mut entries = Vec::new();
    let mut i = 0;
    while i < triples.len() {
        let business = triples[i].0;
        let mut deflating_pool = Vec::new();
        let mut inflating_pool = Vec::new();
        let mut kept_sum = 0u64;
        let mut kept_n = 0u64;
        let mut j = i;
        while j < triples.len() && triples[j].0 == business {
            let user = triples[j].1;
            let mut star_sum = 0u64;
            let mut n = 0u64;
            while j < triples.len() && triples[j].0 == business && triples[j].1 == user {
                star_sum += triples[j].2 as u64;
                n += 1;
                j += 1;
            }
            let value = star_sum as f64 / n as f64;
            match assignment.label(user) {
                Some(Label::Deflating) => deflating_pool.push(PoolEntry { user, value }),
                Some(Label::Inflating) => inflating_pool.push(PoolEntry { user, value }),
                _ => {
                    kept_sum += star_sum;
                    kept_n += n;
                }
            }
        }
        i = j;

        let b = stats.businesses[business as usize];
        if b.n <= params.min_total
            || deflating_pool.len() < params.min_per_cohort
            || inflating_pool.len() < params.min_per_cohort
        {
            continue;
        }
        let target_mean = match params.target {
            TargetScore::AllRatings => b.mean(),
            TargetScore::ExcludeCohorts => {
                if kept_n == 0 {
                    continue;
                }
                kept_sum as f64 / kept_n as f64
            }
        };
        let Some(true_score) = HalfStar::from_score(round_half(target_mean)) else {
            continue;
        };
        if !params.allowed_scores.contains(&true_score) {
            continue;
        }
        entries.push(UniverseEntry {
            business,
            true_score,
            n_ratings: b.n,
            deflating_pool,
            inflating_pool,
        });
    }

    if entries.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    // Order by business id string so downstream tie-breaks follow ids.
    entries.sort_by(|a, b| {
        table
            .businesses
            .name(a.business)
            .cmp(table.businesses.name(b.business))
    });

    let mut classes: Vec<HalfStar> = entries.iter().map(|e| e.true_score).collect();
    classes.sort_unstable();
    classes.dedup();
    let class_counts = classes
        .iter()
        .map(|c| entries.iter().filter(|e| e.true_score == *c).count() as u64)
        .collect();

    Ok(Universe {
        entries,
        classes,
        class_counts,
    })
}

/// Experiment arm: one of the two cohorts or the shuffled baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Deflating,
    Inflating,
    RandomBaseline,
}

impl Arm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Deflating => "deflating",
            Arm::Inflating => "inflating",
            Arm::RandomBaseline => "random-baseline",
        }
    }
}

/// Entry indices sorted by score descending; ties go to the lower index,
/// which is the lexicographically smaller business id.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Block sizes that partition `n` items proportionally to `proportions`,
/// by largest remainder so they always sum to `n`. Ties on the remainder are
/// broken toward the earlier class.
pub fn block_sizes(n: usize, proportions: &[f64]) -> Vec<usize> {
    // Snap near-integer targets before flooring; c/N * N can land one ulp low.
    let targets: Vec<f64> = proportions.iter().map(|p| p * n as f64 + 1e-9).collect();
    let mut sizes: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for idx in order.into_iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[idx] += 1;
    }
    sizes
}

/// Assign each entry a score class from its rank: walking the descending
/// order, the first block takes the highest class, the last block the lowest.
/// Returns the assigned class per entry index.
pub fn classify_by_proportions(
    order: &[usize],
    classes: &[HalfStar],
    proportions: &[f64],
) -> Vec<HalfStar> {
    debug_assert_eq!(classes.len(), proportions.len());
    let sizes = block_sizes(order.len(), proportions);
    let mut assigned = vec![classes[0]; order.len()];
    let mut cursor = 0;
    for (class, size) in classes.iter().rev().zip(sizes.iter().rev()) {
        for &entry in &order[cursor..cursor + size] {
            assigned[entry] = *class;
        }
        cursor += size;
    }
    assigned
}

/// Per-class fraction of restaurants whose assigned class matches their true
/// class, aligned with `universe.classes`.
fn per_class_accuracy(universe: &Universe, assigned: &[HalfStar]) -> Vec<f64> {
    let mut correct = vec![0u64; universe.classes.len()];
    for (entry, assigned_class) in universe.entries.iter().zip(assigned) {
        if entry.true_score == *assigned_class {
            correct[universe.class_index(entry.true_score)] += 1;
        }
    }
    correct
        .iter()
        .zip(&universe.class_counts)
        .map(|(c, n)| *c as f64 / *n as f64)
        .collect()
}

fn sample_scores(universe: &Universe, arm: Arm, sample_size: u32, rng: &mut impl Rng) -> Vec<f64> {
    universe
        .entries
        .iter()
        .map(|entry| {
            let pool = match arm {
                Arm::Deflating => &entry.deflating_pool,
                Arm::Inflating => &entry.inflating_pool,
                Arm::RandomBaseline => unreachable!("baseline does not sample pools"),
            };
            assert!(
                !pool.is_empty(),
                "cohort pool empty; universe thresholds violated"
            );
            let mut sum = 0.0;
            for _ in 0..sample_size {
                sum += pool[rng.random_range(0..pool.len())].value;
            }
            sum / sample_size as f64
        })
        .collect()
}

/// One replicate: sample each restaurant's cohort pool, rank the averages,
/// classify by the universe's own class proportions, and score accuracy per
/// class. The baseline arm ranks by a uniform shuffle instead of samples.
pub fn bootstrap_replicate(
    universe: &Universe,
    arm: Arm,
    sample_size: u32,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let order = match arm {
        Arm::RandomBaseline => {
            let mut order: Vec<usize> = (0..universe.len()).collect();
            order.shuffle(rng);
            order
        }
        _ => rank_descending(&sample_scores(universe, arm, sample_size, rng)),
    };
    let assigned = classify_by_proportions(&order, &universe.classes, &universe.proportions());
    per_class_accuracy(universe, assigned.as_slice())
}

/// Accuracy summary for one score class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassAccuracy {
    pub class: HalfStar,
    pub mean: f64,
    /// Sample standard deviation across replicates divided by sqrt(R).
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub arm: Arm,
    pub replicates: u32,
    pub sample_size: u32,
    pub seed: u64,
    pub accuracies: Vec<ClassAccuracy>,
}

impl BootstrapResult {
    pub fn class(&self, score: f64) -> Option<&ClassAccuracy> {
        let wanted = HalfStar::from_score(score)?;
        self.accuracies.iter().find(|a| a.class == wanted)
    }
}

/// Run `replicates` independent replicates of `arm`. Each replicate draws
/// from its own RNG stream derived from (seed, replicate index), so results
/// do not depend on execution order. Stream 0 is reserved.
pub fn run_bootstrap(
    universe: &Universe,
    arm: Arm,
    sample_size: u32,
    replicates: u32,
    seed: u64,
) -> Result<BootstrapResult> {
    if replicates < 2 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs at least 2 replicates, got {replicates}"
        )));
    }
    if sample_size == 0 && arm != Arm::RandomBaseline {
        return Err(Error::InvalidConfig("sample size must be positive".into()));
    }

    let n_classes = universe.classes.len();
    let mut sums = vec![0.0; n_classes];
    let mut sq_sums = vec![0.0; n_classes];
    for rep in 0..replicates {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64 + 1);
        let acc = bootstrap_replicate(universe, arm, sample_size, &mut rng);
        for (k, a) in acc.iter().enumerate() {
            sums[k] += a;
            sq_sums[k] += a * a;
        }
    }

    let r = replicates as f64;
    let accuracies = (0..n_classes)
        .map(|k| {
            let mean = sums[k] / r;
            let var = ((sq_sums[k] - r * mean * mean) / (r - 1.0)).max(0.0);
            ClassAccuracy {
                class: universe.classes[k],
                mean,
                std_error: (var / r).sqrt(),
            }
        })
        .collect();

    Ok(BootstrapResult {
        arm,
        replicates,
        sample_size,
        seed,
        accuracies,
    })
}

/// The shuffled-ranking control arm.
pub fn random_baseline(universe: &Universe, replicates: u32, seed: u64) -> Result<BootstrapResult> {
    run_bootstrap(universe, Arm::RandomBaseline, 0, replicates, seed)
}
