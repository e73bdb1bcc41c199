//! Synthetic Gaussian reward populations.
//!
//! Each prompt gets a true mean and standard deviation drawn uniformly from
//! configured intervals; its rewards are i.i.d. normal draws. Normal variates
//! come from `rand_distr::Normal` (ziggurat) driven by a ChaCha8 stream keyed
//! by `derive_seed(seed, prompt_id)`, so a prompt's rewards do not depend on
//! which other prompts exist and the first `m` of `n` draws equal a run with
//! budget `m`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{PromptGroup, ScoredSample};
use crate::seed::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptProfile {
    pub prompt_id: String,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub prompt_count: usize,
    pub samples_per_prompt: usize,
    pub mu_range: [f64; 2],
    pub sigma_range: [f64; 2],
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            prompt_count: 200,
            samples_per_prompt: 200,
            mu_range: [-1.0, 1.0],
            sigma_range: [0.5, 1.5],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("prompt_count must be positive")]
    NoPrompts,
    #[error("samples_per_prompt must be positive")]
    NoSamples,
    #[error("{name} [{lo}, {hi}] is empty or not finite")]
    BadRange { name: &'static str, lo: f64, hi: f64 },
    #[error("sigma_range lower bound must be > 0, got {0}")]
    NonPositiveSigma(f64),
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.prompt_count == 0 {
            return Err(ConfigError::NoPrompts);
        }
        if self.samples_per_prompt == 0 {
            return Err(ConfigError::NoSamples);
        }
        for (name, [lo, hi]) in [("mu_range", self.mu_range), ("sigma_range", self.sigma_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ConfigError::BadRange { name, lo, hi });
            }
        }
        if !(self.sigma_range[0] > 0.0) {
            return Err(ConfigError::NonPositiveSigma(self.sigma_range[0]));
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn make_profiles(config: &GeneratorConfig) -> Result<Vec<PromptProfile>, ConfigError> {
    config.validate()?;
    let mut rng = derived_rng(config.seed, "profiles");
    Ok((0..config.prompt_count)
        .map(|i| {
            let mu = uniform(&mut rng, config.mu_range);
            let sigma = uniform(&mut rng, config.sigma_range);
            PromptProfile {
                prompt_id: format!("p{i}"),
                mu,
                sigma,
            }
        })
        .collect())
}

/// Draws `n` rewards for one prompt. Pure in `(profile, n, seed)`.
pub fn sample_rewards(profile: &PromptProfile, n: usize, seed: u64) -> Vec<ScoredSample> {
    let mut rng = derived_rng(seed, &profile.prompt_id);
    let normal = Normal::new(profile.mu, profile.sigma).expect("sigma validated positive");
    (0..n)
        .map(|i| ScoredSample {
            prompt_id: profile.prompt_id.clone(),
            sample_id: i,
            reward: normal.sample(&mut rng),
            text: None,
        })
        .collect()
}

/// Profiles plus their samples, one group per prompt in profile order.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<Vec<PromptGroup>, ConfigError> {
    let profiles = make_profiles(config)?;
    Ok(profiles
        .par_iter()
        .map(|p| PromptGroup {
            prompt_id: p.prompt_id.clone(),
            samples: sample_rewards(p, config.samples_per_prompt, config.seed),
        })
        .collect())
}
