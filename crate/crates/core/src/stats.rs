//! Per-prompt reward statistics and anchor selection.
//!
//! A prompt's rewards are summarised by their mean `mu` and Bessel-corrected
//! standard deviation `sigma`. Anchors are target reward values on that
//! distribution: the observed minimum and maximum, and `mu + k*sigma` for
//! `k` in `-4..=4`. The canonical set is `{min, mu±2s, mu±1s, mu, max}`; the
//! extended set adds `mu±3s` and `mu±4s`.
//!
//! Selection picks the sample whose reward is closest to the target. Ties go
//! to the lowest `sample_id`, so the result is independent of input order.
//! Targets outside the observed range are not clamped; they collapse onto
//! the extreme samples.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::data::ScoredSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub prompt_id: String,
    pub n: usize,
    pub mu: f64,
    pub sigma: f64,
    pub min_reward: f64,
    pub max_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no samples")]
    Empty,
    #[error("samples mix prompts {0} and {1}")]
    MixedPrompts(String, String),
    #[error("prompt {prompt_id}: {n} sample(s), at least 2 are needed for a standard deviation")]
    InsufficientSamples { prompt_id: String, n: usize },
    #[error("unknown anchor {0:?}")]
    UnknownAnchor(String),
}

/// A target point on a prompt's reward distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Anchor {
    Min,
    /// `mu + level * sigma`, `level` in `-4..=4`.
    Sigma(i8),
    Max,
}

impl Anchor {
    pub const CANONICAL: [Anchor; 7] = [
        Anchor::Min,
        Anchor::Sigma(-2),
        Anchor::Sigma(-1),
        Anchor::Sigma(0),
        Anchor::Sigma(1),
        Anchor::Sigma(2),
        Anchor::Max,
    ];

    pub const EXTENDED: [Anchor; 11] = [
        Anchor::Min,
        Anchor::Sigma(-4),
        Anchor::Sigma(-3),
        Anchor::Sigma(-2),
        Anchor::Sigma(-1),
        Anchor::Sigma(0),
        Anchor::Sigma(1),
        Anchor::Sigma(2),
        Anchor::Sigma(3),
        Anchor::Sigma(4),
        Anchor::Max,
    ];

    /// Position in the `min < mu-4s < ... < mu+4s < max` order.
    pub fn rank(self) -> i8 {
        match self {
            Anchor::Min => -5,
            Anchor::Sigma(l) => l,
            Anchor::Max => 5,
        }
    }

    pub fn target(self, stats: &RewardStats) -> f64 {
        match self {
            Anchor::Min => stats.min_reward,
            Anchor::Max => stats.max_reward,
            Anchor::Sigma(l) => stats.mu + f64::from(l) * stats.sigma,
        }
    }
}

impl Ord for Anchor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl PartialOrd for Anchor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Anchor::Min => f.write_str("min"),
            Anchor::Max => f.write_str("max"),
            Anchor::Sigma(0) => f.write_str("mu"),
            Anchor::Sigma(l) if l > 0 => write!(f, "mu+{l}s"),
            Anchor::Sigma(l) => write!(f, "mu-{}s", -l),
        }
    }
}

impl FromStr for Anchor {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || StatsError::UnknownAnchor(s.to_string());
        match s {
            "min" => return Ok(Anchor::Min),
            "max" => return Ok(Anchor::Max),
            "mu" => return Ok(Anchor::Sigma(0)),
            _ => {}
        }
        let rest = s.strip_prefix("mu").ok_or_else(unknown)?;
        let rest = rest.strip_suffix('s').ok_or_else(unknown)?;
        let (sign, digits) = match rest.as_bytes().first() {
            Some(b'+') => (1, &rest[1..]),
            Some(b'-') => (-1, &rest[1..]),
            _ => return Err(unknown()),
        };
        match digits {
            "1" | "2" | "3" | "4" => Ok(Anchor::Sigma(sign * digits.parse::<i8>().unwrap())),
            _ => Err(unknown()),
        }
    }
}

impl Serialize for Anchor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Anchor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSelection {
    pub anchor: Anchor,
    pub sample_id: usize,
    pub reward: f64,
    pub target_value: f64,
}

/// Statistics plus the selected sample for each anchor of one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub stats: RewardStats,
    pub selections: BTreeMap<Anchor, AnchorSelection>,
}

impl AnchorSet {
    pub fn get(&self, anchor: Anchor) -> Option<&AnchorSelection> {
        self.selections.get(&anchor)
    }

    pub fn len(&self) -> usize {
        self.selections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selections.is_empty()
    }
}

pub fn compute_stats(samples: &[ScoredSample]) -> Result<RewardStats, StatsError> {
    let first = samples.first().ok_or(StatsError::Empty)?;
    if let Some(other) = samples.iter().find(|s| s.prompt_id != first.prompt_id) {
        return Err(StatsError::MixedPrompts(
            first.prompt_id.clone(),
            other.prompt_id.clone(),
        ));
    }
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::InsufficientSamples {
            prompt_id: first.prompt_id.clone(),
            n,
        });
    }

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in samples {
        lo = lo.min(s.reward);
        hi = hi.max(s.reward);
    }
    let (mu, sigma) = if lo == hi {
        (lo, 0.0)
    } else {
        let mean = samples.iter().map(|s| s.reward).sum::<f64>() / n as f64;
        let ss: f64 = samples.iter().map(|s| (s.reward - mean).powi(2)).sum();
        (mean.clamp(lo, hi), (ss / (n - 1) as f64).sqrt())
    };
    Ok(RewardStats {
        prompt_id: first.prompt_id.clone(),
        n,
        mu,
        sigma,
        min_reward: lo,
        max_reward: hi,
    })
}

/// Picks the sample for `anchor`.
///
/// # Panics
///
/// If `samples` is empty.
pub fn select_anchor(samples: &[ScoredSample], stats: &RewardStats, anchor: Anchor) -> AnchorSelection {
    let target_value = anchor.target(stats);
    // `+ 0.0` folds -0.0 into 0.0 so equal rewards tie under total_cmp.
    let key = |s: &ScoredSample| -> f64 {
        match anchor {
            Anchor::Min => s.reward + 0.0,
            Anchor::Max => -s.reward + 0.0,
            Anchor::Sigma(_) => (s.reward - target_value).abs(),
        }
    };
    let best = samples
        .iter()
        .min_by(|a, b| key(a).total_cmp(&key(b)).then(a.sample_id.cmp(&b.sample_id)))
        .expect("select_anchor needs at least one sample");
    AnchorSelection {
        anchor,
        sample_id: best.sample_id,
        reward: best.reward,
        target_value,
    }
}

/// Selects the canonical seven anchors, or all eleven when `extended`.
pub fn select_anchor_set(samples: &[ScoredSample], extended: bool) -> Result<AnchorSet, StatsError> {
    let stats = compute_stats(samples)?;
    let anchors: &[Anchor] = if extended {
        &Anchor::EXTENDED
    } else {
        &Anchor::CANONICAL
    };
    let selections = anchors
        .iter()
        .map(|&a| (a, select_anchor(samples, &stats, a)))
        .collect();
    Ok(AnchorSet { stats, selections })
}

/// Equal-width histogram over `[min_reward, max_reward]`.
pub fn histogram(samples: &[ScoredSample], stats: &RewardStats, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins.max(1)];
    let width = stats.max_reward - stats.min_reward;
    for s in samples {
        let b = if width > 0.0 {
            (((s.reward - stats.min_reward) / width) * counts.len() as f64) as usize
        } else {
            0
        };
        let last = counts.len() - 1;
        counts[b.min(last)] += 1;
    }
    counts
}
