//! Sweeps over strategies, sample budgets and replicate seeds.
//!
//! Every cell `(strategy, n, seed)` runs the same recipe: generate the
//! replicate's corpus, keep each prompt's first `n` samples, build one
//! preference dataset, train a fresh toy policy on it and record loss,
//! margin, drop count and the mean expected policy reward
//! `E_{y~pi}[r(y)]` before and after training. That reward is the toy's
//! quality metric; it is not a win rate.
//!
//! Seeds: replicate `s` uses corpus seed `derive_seed(generator.seed,
//! "replicate-{s}")` and trainer seed `derive_seed(trainer.seed,
//! "replicate-{s}")`. A cell depends only on its own coordinates, so adding
//! or removing strategies leaves other cells unchanged, and rows come back
//! in config order regardless of scheduling.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::data::PromptGroup;
use crate::dpo::{train, DpoConfig, ReferencePolicy, ToyPolicy, TrainError};
use crate::evt::{predicted_margin, EvtError};
use crate::pairs::{build_dataset, canonical_anchor_pairs, PairError, StrategySpec, DEFAULT_POOL};
use crate::seed::derive_seed;
use crate::stats::{compute_stats, Anchor};
use crate::synth::{generate_corpus, ConfigError, GeneratorConfig};

/// Printed at the top of every sweep report.
pub const METRIC_NOTE: &str =
    "pre_reward/post_reward = mean expected policy reward E_{y~pi}[r(y)] over candidates (toy metric, not a win rate)";

/// A strategy with the budget left open; the sweep supplies `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyFamily {
    Conventional,
    Scalable { pool: usize },
    Anchor { chosen: Anchor, rejected: Anchor },
}

impl StrategyFamily {
    pub fn at(&self, n: usize) -> StrategySpec {
        match *self {
            StrategyFamily::Conventional => StrategySpec::Conventional { n },
            StrategyFamily::Scalable { pool } => StrategySpec::Scalable { pool, n },
            StrategyFamily::Anchor { chosen, rejected } => StrategySpec::AnchorPair { chosen, rejected },
        }
    }
}

impl fmt::Display for StrategyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyFamily::Conventional => f.write_str("conventional"),
            StrategyFamily::Scalable { pool } => write!(f, "scalable:pool={pool}"),
            StrategyFamily::Anchor { chosen, rejected } => write!(f, "anchor:{chosen}/{rejected}"),
        }
    }
}

impl FromStr for StrategyFamily {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SweepError::Strategy(s.to_string());
        if s == "conventional" {
            return Ok(StrategyFamily::Conventional);
        }
        if s == "scalable" {
            return Ok(StrategyFamily::Scalable { pool: DEFAULT_POOL });
        }
        if let Some(pool) = s.strip_prefix("scalable:pool=") {
            let pool = pool.parse().map_err(|_| bad())?;
            return Ok(StrategyFamily::Scalable { pool });
        }
        let pair = s.strip_prefix("anchor:").ok_or_else(bad)?;
        let (c, r) = pair.split_once('/').ok_or_else(bad)?;
        let chosen: Anchor = c.parse().map_err(|_| bad())?;
        let rejected: Anchor = r.parse().map_err(|_| bad())?;
        if chosen <= rejected {
            return Err(bad());
        }
        Ok(StrategyFamily::Anchor { chosen, rejected })
    }
}

impl Serialize for StrategyFamily {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrategyFamily {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n_grid: Vec<usize>,
    pub strategies: Vec<StrategyFamily>,
    pub generator: GeneratorConfig,
    pub trainer: DpoConfig,
    pub replicate_seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![5, 10, 20, 50, 100, 200],
            strategies: vec![
                StrategyFamily::Conventional,
                StrategyFamily::Scalable { pool: DEFAULT_POOL },
            ],
            generator: GeneratorConfig::default(),
            trainer: DpoConfig::default(),
            replicate_seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("unknown strategy {0:?} (expected conventional, scalable[:pool=K] or anchor:<chosen>/<rejected>)")]
    Strategy(String),
    #[error("invalid sweep config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Generator(#[from] ConfigError),
    #[error(transparent)]
    Pairs(#[from] PairError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Evt(#[from] EvtError),
    #[error("{strategy} at n={n}: every prompt was dropped")]
    EmptyDataset { strategy: String, n: usize },
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        let invalid = |m: &str| Err(SweepError::Invalid(m.to_string()));
        self.generator.validate()?;
        self.trainer.validate()?;
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return invalid("n_grid must be non-empty and positive");
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("n_grid must be strictly increasing");
        }
        if *self.n_grid.last().unwrap() > self.generator.samples_per_prompt {
            return invalid("max(n_grid) exceeds generator.samples_per_prompt");
        }
        if self.strategies.is_empty() {
            return invalid("no strategies");
        }
        if self.replicate_seeds.is_empty() {
            return invalid("no replicate seeds");
        }
        for s in &self.strategies {
            for &n in &self.n_grid {
                s.at(n).validate()?;
            }
            if matches!(s, StrategyFamily::Anchor { .. }) && self.n_grid[0] < 2 {
                return invalid("anchor strategies need n >= 2");
            }
        }
        Ok(())
    }

    fn max_n(&self) -> usize {
        *self.n_grid.last().expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub strategy_tag: String,
    pub n: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub mean_margin: f64,
    pub drops: usize,
    pub pre_reward: f64,
    pub post_reward: f64,
    #[serde(skip)]
    pub pairs: usize,
    #[serde(skip)]
    pub initial_loss: f64,
    #[serde(skip)]
    pub mean_chosen_reward: f64,
    #[serde(skip)]
    pub mean_rejected_reward: f64,
    /// Chosen and rejected rewards per prompt, `None` where the prompt was dropped.
    #[serde(skip)]
    pub per_prompt: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Rows for one strategy tag and budget, in seed order.
    pub fn cells<'a>(&'a self, tag: &'a str, n: usize) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| r.strategy_tag == tag && r.n == n)
    }

    /// Median of `field` over the seeds of one (tag, n) cell.
    pub fn median(&self, tag: &str, n: usize, field: impl Fn(&SweepRow) -> f64) -> Option<f64> {
        median(self.cells(tag, n).map(field).collect())
    }

    /// `strategy_tag,n,seed,final_loss,mean_margin,drops,pre_reward,post_reward`,
    /// preceded by `#` comment lines.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> csv::Result<()> {
        writeln!(out, "# {METRIC_NOTE}")?;
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

/// The corpus a replicate seed trains on, at the generator's full budget.
pub fn replicate_corpus(config: &SweepConfig, seed: u64) -> Result<Vec<PromptGroup>, SweepError> {
    let generator = GeneratorConfig {
        seed: derive_seed(config.generator.seed, &format!("replicate-{seed}")),
        ..config.generator.clone()
    };
    Ok(generate_corpus(&generator)?)
}

/// Runs one cell on an already generated corpus.
pub fn run_cell(
    corpus: &[PromptGroup],
    family: StrategyFamily,
    n: usize,
    seed: u64,
    trainer: &DpoConfig,
) -> Result<SweepRow, SweepError> {
    let groups: Vec<PromptGroup> = corpus.iter().map(|g| g.prefix(n)).collect();
    let strategy = family.at(n);
    let (pairs, drops) = build_dataset(&groups, &strategy)?;
    if pairs.is_empty() {
        return Err(SweepError::EmptyDataset {
            strategy: strategy.tag(),
            n,
        });
    }

    let policy = ToyPolicy::uniform(&groups, trainer.reward_feature_scale)?;
    let reference = ReferencePolicy::freeze(&policy);
    let pre_reward = policy.mean_expected_reward();
    let config = DpoConfig {
        seed: derive_seed(trainer.seed, &format!("replicate-{seed}")),
        ..trainer.clone()
    };
    let trace = train(policy, &reference, &pairs, &config)?;

    let k = pairs.len() as f64;
    let mut per_prompt = vec![None; groups.len()];
    let mut at = 0;
    for (slot, g) in groups.iter().enumerate() {
        if at < pairs.len() && pairs[at].prompt_id == g.prompt_id {
            per_prompt[slot] = Some((pairs[at].chosen_reward, pairs[at].rejected_reward));
            at += 1;
        }
    }
    Ok(SweepRow {
        strategy_tag: strategy.tag(),
        n,
        seed,
        final_loss: trace.final_loss,
        mean_margin: pairs.iter().map(|p| p.margin).sum::<f64>() / k,
        drops: drops.total(),
        pre_reward,
        post_reward: trace.policy.mean_expected_reward(),
        pairs: pairs.len(),
        initial_loss: trace.initial_loss(),
        mean_chosen_reward: pairs.iter().map(|p| p.chosen_reward).sum::<f64>() / k,
        mean_rejected_reward: pairs.iter().map(|p| p.rejected_reward).sum::<f64>() / k,
        per_prompt,
    })
}

fn run_cells(
    config: &SweepConfig,
    families: &[StrategyFamily],
    n_values: &[usize],
) -> Result<SweepReport, SweepError> {
    let corpora: Vec<Vec<PromptGroup>> = config
        .replicate_seeds
        .par_iter()
        .map(|&s| replicate_corpus(config, s))
        .collect::<Result<_, _>>()?;
    let mut cells = Vec::new();
    for &family in families {
        for &n in n_values {
            for (i, &seed) in config.replicate_seeds.iter().enumerate() {
                cells.push((family, n, seed, i));
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|&(family, n, seed, i)| run_cell(&corpora[i], family, n, seed, &config.trainer))
        .collect::<Result<_, _>>()?;
    Ok(SweepReport { rows })
}

/// Every configured strategy at every budget and seed.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport, SweepError> {
    config.validate()?;
    run_cells(config, &config.strategies, &config.n_grid)
}

/// All 21 canonical anchor pairs at the largest budget.
pub fn run_grid_21(config: &SweepConfig) -> Result<SweepReport, SweepError> {
    config.validate()?;
    let families: Vec<StrategyFamily> = canonical_anchor_pairs()
        .into_iter()
        .map(|(chosen, rejected)| StrategyFamily::Anchor { chosen, rejected })
        .collect();
    run_cells(config, &families, &[config.max_n()])
}

/// Conventional against scalable (pool 5) over the budget grid.
pub fn run_scaling(config: &SweepConfig) -> Result<SweepReport, SweepError> {
    config.validate()?;
    let families = [
        StrategyFamily::Conventional,
        StrategyFamily::Scalable { pool: DEFAULT_POOL },
    ];
    if config.n_grid[0] < DEFAULT_POOL {
        return Err(SweepError::Invalid(format!(
            "scaling needs every budget >= {DEFAULT_POOL}"
        )));
    }
    run_cells(config, &families, &config.n_grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverfitRow {
    pub n: usize,
    pub median_final_loss: f64,
    pub median_mean_margin: f64,
    pub predicted_margin: f64,
    pub median_pre_reward: f64,
    pub median_post_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitReport {
    pub rows: Vec<OverfitRow>,
    pub cells: SweepReport,
    /// Mean per-prompt sample standard deviation used for the predicted margins.
    pub sigma: f64,
}

impl OverfitReport {
    pub fn row(&self, n: usize) -> Option<&OverfitRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> csv::Result<()> {
        writeln!(out, "# {METRIC_NOTE}")?;
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Conventional pairs over the budget grid, with per-budget medians and the
/// extreme-value margin `2 sigma sqrt(2 ln n)` for comparison.
pub fn run_overfit_probe(config: &SweepConfig) -> Result<OverfitReport, SweepError> {
    config.validate()?;
    for need in [5, 50, 400] {
        if !config.n_grid.contains(&need) {
            return Err(SweepError::Invalid(format!("overfit probe needs n = {need} in n_grid")));
        }
    }
    let cells = run_cells(config, &[StrategyFamily::Conventional], &config.n_grid)?;

    let mut sigmas = Vec::new();
    for &s in &config.replicate_seeds {
        for g in replicate_corpus(config, s)? {
            sigmas.push(compute_stats(&g.samples).map_err(PairError::from)?.sigma);
        }
    }
    let sigma = sigmas.iter().sum::<f64>() / sigmas.len() as f64;

    let rows = config
        .n_grid
        .iter()
        .map(|&n| {
            let tag = StrategySpec::Conventional { n }.tag();
            let med = |f: fn(&SweepRow) -> f64| cells.median(&tag, n, f).expect("cell ran");
            Ok(OverfitRow {
                n,
                median_final_loss: med(|r| r.final_loss),
                median_mean_margin: med(|r| r.mean_margin),
                predicted_margin: predicted_margin(sigma, n as u64)?,
                median_pre_reward: med(|r| r.pre_reward),
                median_post_reward: med(|r| r.post_reward),
            })
        })
        .collect::<Result<_, SweepError>>()?;
    Ok(OverfitReport { rows, cells, sigma })
}
