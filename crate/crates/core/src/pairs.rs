//! Preference-pair construction.
//!
//! Three strategy families:
//!
//! * anchor pairs: chosen and rejected are the samples nearest two anchors of
//!   the prompt's reward distribution; the canonical seven anchors give 21
//!   ordered combinations.
//! * conventional: the best and the worst of the first `n` generations.
//! * scalable: the worst of the first `pool` generations is rejected, the best
//!   of the first `n` is chosen. The rejected sample does not move as `n`
//!   grows; at `n == pool` this is the conventional pair.
//!
//! Budgets are always prefixes by `sample_id`, so sweeps over `n` are nested.
//! A prompt whose selections collide, or whose margin is not strictly
//! positive, is dropped rather than producing an invalid pair.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{PreferencePair, PromptGroup, ScoredSample};
use crate::stats::{compute_stats, select_anchor, Anchor, AnchorSet, StatsError};

/// Default size of the scalable strategy's rejected pool.
pub const DEFAULT_POOL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategySpec {
    AnchorPair { chosen: Anchor, rejected: Anchor },
    Conventional { n: usize },
    Scalable { pool: usize, n: usize },
}

impl StrategySpec {
    pub fn tag(&self) -> String {
        self.to_string()
    }

    pub fn validate(&self) -> Result<(), PairError> {
        match *self {
            StrategySpec::AnchorPair { chosen, rejected } if chosen <= rejected => {
                Err(PairError::UnorderedAnchors { chosen, rejected })
            }
            StrategySpec::Conventional { n: 0 } | StrategySpec::Scalable { n: 0, .. } => {
                Err(PairError::ZeroBudget)
            }
            StrategySpec::Scalable { pool, n } if pool == 0 || pool > n => {
                Err(PairError::PoolExceedsBudget { pool, n })
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategySpec::AnchorPair { chosen, rejected } => write!(f, "anchor:{chosen}/{rejected}"),
            StrategySpec::Conventional { n } => write!(f, "conventional:n={n}"),
            StrategySpec::Scalable { pool, n } => write!(f, "scalable:pool={pool},n={n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    SameSample,
    NonPositiveMargin,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Pair(PreferencePair),
    Drop(DropReason),
}

impl PairOutcome {
    pub fn pair(&self) -> Option<&PreferencePair> {
        match self {
            PairOutcome::Pair(p) => Some(p),
            PairOutcome::Drop(_) => None,
        }
    }

    pub fn is_drop(&self) -> bool {
        matches!(self, PairOutcome::Drop(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairError {
    #[error("chosen anchor {chosen} must lie above rejected anchor {rejected}")]
    UnorderedAnchors { chosen: Anchor, rejected: Anchor },
    #[error("anchor {0} is not in the anchor set")]
    MissingAnchor(Anchor),
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("rejected pool {pool} must be in 1..={n}")]
    PoolExceedsBudget { pool: usize, n: usize },
    #[error("prompt {prompt_id}: budget {n} exceeds the {available} available samples")]
    BudgetExceeds {
        prompt_id: String,
        n: usize,
        available: usize,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Drop counts for one dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DropReport {
    pub same_sample: usize,
    pub non_positive_margin: usize,
    pub dropped_prompts: Vec<String>,
}

impl DropReport {
    pub fn total(&self) -> usize {
        self.same_sample + self.non_positive_margin
    }

    fn record(&mut self, prompt_id: &str, reason: DropReason) {
        match reason {
            DropReason::SameSample => self.same_sample += 1,
            DropReason::NonPositiveMargin => self.non_positive_margin += 1,
        }
        self.dropped_prompts.push(prompt_id.to_string());
    }
}

fn assemble(
    prompt_id: &str,
    (chosen_id, chosen_reward): (usize, f64),
    (rejected_id, rejected_reward): (usize, f64),
    tag: String,
) -> PairOutcome {
    if chosen_id == rejected_id {
        return PairOutcome::Drop(DropReason::SameSample);
    }
    if !(chosen_reward > rejected_reward) {
        return PairOutcome::Drop(DropReason::NonPositiveMargin);
    }
    PairOutcome::Pair(PreferencePair {
        prompt_id: prompt_id.to_string(),
        chosen_id,
        rejected_id,
        chosen_reward,
        rejected_reward,
        margin: chosen_reward - rejected_reward,
        strategy_tag: tag,
    })
}

pub fn build_anchor_pair(
    set: &AnchorSet,
    chosen: Anchor,
    rejected: Anchor,
) -> Result<PairOutcome, PairError> {
    StrategySpec::AnchorPair { chosen, rejected }.validate()?;
    let c = set.get(chosen).ok_or(PairError::MissingAnchor(chosen))?;
    let r = set.get(rejected).ok_or(PairError::MissingAnchor(rejected))?;
    Ok(assemble(
        &set.stats.prompt_id,
        (c.sample_id, c.reward),
        (r.sample_id, r.reward),
        StrategySpec::AnchorPair { chosen, rejected }.tag(),
    ))
}

/// The 21 (chosen, rejected) combinations of the canonical anchors, chosen
/// strictly above rejected, ordered by rejected then chosen.
pub fn canonical_anchor_pairs() -> Vec<(Anchor, Anchor)> {
    let a = Anchor::CANONICAL;
    let mut out = Vec::with_capacity(21);
    for (i, &rejected) in a.iter().enumerate() {
        for &chosen in &a[i + 1..] {
            out.push((chosen, rejected));
        }
    }
    out
}

pub fn build_all_21(
    set: &AnchorSet,
) -> Result<BTreeMap<(Anchor, Anchor), PairOutcome>, PairError> {
    canonical_anchor_pairs()
        .into_iter()
        .map(|(c, r)| Ok(((c, r), build_anchor_pair(set, c, r)?)))
        .collect()
}

fn check_budget(samples: &[ScoredSample], n: usize) -> Result<(), PairError> {
    if n == 0 {
        return Err(PairError::ZeroBudget);
    }
    if n > samples.len() {
        return Err(PairError::BudgetExceeds {
            prompt_id: samples.first().map(|s| s.prompt_id.clone()).unwrap_or_default(),
            n,
            available: samples.len(),
        });
    }
    Ok(())
}

// Lowest-reward (or highest, via `sign = -1`) sample among ids below `limit`;
// ties go to the lower id. `+ 0.0` makes -0.0 and 0.0 tie.
fn extreme_below(samples: &[ScoredSample], limit: usize, sign: f64) -> &ScoredSample {
    samples
        .iter()
        .filter(|s| s.sample_id < limit)
        .min_by(|a, b| {
            (sign * a.reward + 0.0)
                .total_cmp(&(sign * b.reward + 0.0))
                .then(a.sample_id.cmp(&b.sample_id))
        })
        .expect("budget checked non-empty")
}

pub fn build_conventional(samples: &[ScoredSample], n: usize) -> Result<PairOutcome, PairError> {
    check_budget(samples, n)?;
    let chosen = extreme_below(samples, n, -1.0);
    let rejected = extreme_below(samples, n, 1.0);
    Ok(assemble(
        &chosen.prompt_id,
        (chosen.sample_id, chosen.reward),
        (rejected.sample_id, rejected.reward),
        StrategySpec::Conventional { n }.tag(),
    ))
}

pub fn build_scalable(samples: &[ScoredSample], n: usize, pool: usize) -> Result<PairOutcome, PairError> {
    StrategySpec::Scalable { pool, n }.validate()?;
    check_budget(samples, n)?;
    let chosen = extreme_below(samples, n, -1.0);
    let rejected = extreme_below(samples, pool, 1.0);
    Ok(assemble(
        &chosen.prompt_id,
        (chosen.sample_id, chosen.reward),
        (rejected.sample_id, rejected.reward),
        StrategySpec::Scalable { pool, n }.tag(),
    ))
}

/// One strategy applied to one prompt.
pub fn build_for_prompt(group: &PromptGroup, strategy: &StrategySpec) -> Result<PairOutcome, PairError> {
    match *strategy {
        StrategySpec::AnchorPair { chosen, rejected } => {
            strategy.validate()?;
            let stats = compute_stats(&group.samples)?;
            let selections = [chosen, rejected]
                .into_iter()
                .map(|a| (a, select_anchor(&group.samples, &stats, a)))
                .collect();
            build_anchor_pair(&AnchorSet { stats, selections }, chosen, rejected)
        }
        StrategySpec::Conventional { n } => build_conventional(&group.samples, n),
        StrategySpec::Scalable { pool, n } => build_scalable(&group.samples, n, pool),
    }
}

/// One pair per prompt that is not dropped, in prompt order.
pub fn build_dataset(
    groups: &[PromptGroup],
    strategy: &StrategySpec,
) -> Result<(Vec<PreferencePair>, DropReport), PairError> {
    strategy.validate()?;
    let outcomes: Vec<PairOutcome> = groups
        .par_iter()
        .map(|g| build_for_prompt(g, strategy))
        .collect::<Result<_, _>>()?;
    let mut pairs = Vec::with_capacity(outcomes.len());
    let mut report = DropReport::default();
    for (g, outcome) in groups.iter().zip(outcomes) {
        match outcome {
            PairOutcome::Pair(p) => pairs.push(p),
            PairOutcome::Drop(reason) => report.record(&g.prompt_id, reason),
        }
    }
    Ok((pairs, report))
}
