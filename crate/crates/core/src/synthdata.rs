//! Synthetic rating data with known latent restaurant quality and rater
//! generosity. Downstream acceptance checks fit models on these sets and
//! compare against oracles computed from the latents.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RatingRecord;

/// Generated ratings plus the latents that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub ratings: Vec<RatingRecord>,
    pub quality: BTreeMap<String, f64>,
    pub generosity: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: u32,
    pub n_restaurants: u32,
    pub ratings_per_user: u32,
    /// Std of latent restaurant quality.
    pub quality_spread: f64,
    /// Std of latent rater generosity.
    pub generosity_spread: f64,
    /// Std of per-rating noise.
    pub noise_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 10_000,
            n_restaurants: 500,
            ratings_per_user: 200,
            quality_spread: 0.5,
            generosity_spread: 0.7,
            noise_spread: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_restaurants == 0 || self.ratings_per_user == 0 {
            return Err(Error::InvalidConfig(
                "synthetic counts must all be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("quality_spread", self.quality_spread),
            ("generosity_spread", self.generosity_spread),
            ("noise_spread", self.noise_spread),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn id_width(n: u32) -> usize {
    (n.max(1) as f64).log10().floor() as usize + 1
}

fn user_id(i: u32, width: usize) -> String {
    format!("u{i:0width$}")
}

fn business_id(j: u32, width: usize) -> String {
    format!("r{j:0width$}")
}

/// Draw a rating table where user i gives restaurant j the score
/// clamp(round(3 + q_j + g_i + noise), 1, 5).
///
/// Latents come from one RNG stream; each user's restaurant choices and
/// noise come from a per-user stream, so generation is reproducible and
/// could be split across workers without changing the output. Ratings are
/// returned sorted by (user_id, business_id).
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let quality_dist = Normal::new(0.0, config.quality_spread)
        .map_err(|e| Error::InvalidConfig(format!("quality spread: {e}")))?;
    let generosity_dist = Normal::new(0.0, config.generosity_spread)
        .map_err(|e| Error::InvalidConfig(format!("generosity spread: {e}")))?;
    let noise_dist = Normal::new(0.0, config.noise_spread)
        .map_err(|e| Error::InvalidConfig(format!("noise spread: {e}")))?;

    let uw = id_width(config.n_users - 1);
    let bw = id_width(config.n_restaurants - 1);

    // Stream 0: latents, in a fixed order.
    let mut latent_rng = ChaCha8Rng::seed_from_u64(config.seed);
    latent_rng.set_stream(0);
    let quality_values: Vec<f64> = (0..config.n_restaurants)
        .map(|_| quality_dist.sample(&mut latent_rng))
        .collect();
    let generosity_values: Vec<f64> = (0..config.n_users)
        .map(|_| generosity_dist.sample(&mut latent_rng))
        .collect();

    let mut ratings =
        Vec::with_capacity(config.n_users as usize * config.ratings_per_user as usize);
    for i in 0..config.n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64 + 1);
        let g = generosity_values[i as usize];
        let mut picks: Vec<u32> = (0..config.ratings_per_user)
            .map(|_| rng.random_range(0..config.n_restaurants))
            .collect();
        picks.sort_unstable();
        for j in picks.drain(..) {
            let latent = 3.0 + quality_values[j as usize] + g + noise_dist.sample(&mut rng);
            let stars = latent.round().clamp(1.0, 5.0) as u8;
            ratings.push(RatingRecord {
                user_id: user_id(i, uw),
                business_id: business_id(j, bw),
                stars,
            });
        }
    }

    let quality = quality_values
        .into_iter()
        .enumerate()
        .map(|(j, q)| (business_id(j as u32, bw), q))
        .collect();
    let generosity = generosity_values
        .into_iter()
        .enumerate()
        .map(|(i, g)| (user_id(i as u32, uw), g))
        .collect();

    Ok(SynthData {
        ratings,
        quality,
        generosity,
    })
}
