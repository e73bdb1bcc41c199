//! Command implementations behind the `dpo-pairs` binary.
//!
//! Each command resolves its configuration (flags over config file over
//! defaults), logs the resolved form to `log`, does its work and returns a
//! short summary for standard output. Every file written carries the
//! resolved configuration: CSV files as a leading `# config: {...}` line,
//! JSONL files as a `<out>.manifest.json` sidecar.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{
    read_preference_dataset, read_scored_samples, write_jsonl, write_preference_dataset,
    write_scored_samples, DataError, ManifestMeta, PromptGroup,
};
use crate::dpo::{train, DpoConfig, ReferencePolicy, ToyPolicy, TrainError};
use crate::evt::{evt_report, top_k_mean_curve, EvtError};
use crate::harness::{
    run_grid_21, run_overfit_probe, run_scaling, run_sweep, StrategyFamily, SweepConfig,
    SweepError,
};
use crate::pairs::{build_dataset, PairError, StrategySpec, DEFAULT_POOL};
use crate::stats::{histogram, select_anchor_set, Anchor, AnchorSelection, StatsError};
use crate::synth::{generate_corpus, ConfigError, GeneratorConfig};

/// Failure class; decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Divergence,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Divergence => 3,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Divergence => "divergence",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn usage(message: impl fmt::Display) -> Self {
        Self {
            kind: ErrorKind::Usage,
            message: message.to_string(),
        }
    }

    pub fn data(message: impl fmt::Display) -> Self {
        Self {
            kind: ErrorKind::Data,
            message: message.to_string(),
        }
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        Self::data(e)
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        Self::usage(e)
    }
}

impl From<EvtError> for PipelineError {
    fn from(e: EvtError) -> Self {
        Self::usage(e)
    }
}

impl From<PairError> for PipelineError {
    fn from(e: PairError) -> Self {
        match e {
            PairError::UnorderedAnchors { .. } | PairError::ZeroBudget | PairError::PoolExceedsBudget { .. } => {
                Self::usage(e)
            }
            _ => Self::data(e),
        }
    }
}

impl From<StatsError> for PipelineError {
    fn from(e: StatsError) -> Self {
        Self::data(e)
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Self {
                kind: ErrorKind::Divergence,
                message: e.to_string(),
            },
            TrainError::InvalidConfig(_) => Self::usage(e),
            _ => Self::data(e),
        }
    }
}

impl From<SweepError> for PipelineError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Generator(e) => e.into(),
            SweepError::Pairs(e) => e.into(),
            SweepError::Train(e) => e.into(),
            SweepError::Evt(e) => e.into(),
            SweepError::EmptyDataset { .. } => Self::data(e),
            SweepError::Strategy(_) | SweepError::Invalid(_) => Self::usage(e),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::data(format!("{}: {e}", path.display()))
}

fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> PipelineError + '_ {
    move |e| PipelineError::data(format!("{}: {e}", path.display()))
}

/// Which report a `sweep` run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Every configured strategy at every budget.
    #[default]
    Sweep,
    /// The 21 anchor pairs at the largest budget.
    Grid21,
    /// Conventional against scalable.
    Scaling,
    /// Conventional over the budget grid with per-budget medians.
    Overfit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepPlan {
    pub mode: SweepMode,
    pub n_grid: Vec<usize>,
    pub strategies: Vec<StrategyFamily>,
    pub replicate_seeds: Vec<u64>,
}

impl Default for SweepPlan {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            mode: SweepMode::Sweep,
            n_grid: d.n_grid,
            strategies: d.strategies,
            replicate_seeds: d.replicate_seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub samples: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// The single config document shared by all commands.
///
/// A top-level `seed`, when present, replaces both `generator.seed` and
/// `trainer.seed`; command-line flags override everything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub generator: GeneratorConfig,
    pub trainer: DpoConfig,
    pub sweep: SweepPlan,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        Self::from_json(&text).map_err(|e| PipelineError::usage(format!("{}: {}", path.display(), e.message)))
    }

    /// `load(path)` if given, defaults otherwise, with the top-level seed applied.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, PipelineError> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(seed) = config.seed {
            config.set_seed(seed);
        }
        Ok(config)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.generator.seed = seed;
        self.trainer.seed = seed;
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            n_grid: self.sweep.n_grid.clone(),
            strategies: self.sweep.strategies.clone(),
            generator: self.generator.clone(),
            trainer: self.trainer.clone(),
            replicate_seeds: self.sweep.replicate_seeds.clone(),
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("config types serialize")
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = OsString::from(out.as_os_str());
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_sidecar(out: &Path, value: &serde_json::Value) -> Result<PathBuf, PipelineError> {
    let path = sidecar_path(out);
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_error(&path))?;
    Ok(path)
}

/// Opens `path` for writing, or standard output when `path` is `None`.
fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, PipelineError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_error(p))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Keeps standard output clean when it already carries the report.
fn summary(to_stdout: bool, text: String, log: &mut dyn Write) -> String {
    if to_stdout {
        let _ = writeln!(log, "{text}");
        String::new()
    } else {
        text
    }
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf, PipelineError> {
    path.ok_or_else(|| PipelineError::usage(format!("missing {what} path (flag or config paths section)")))
}

#[derive(Debug, Clone, Default)]
pub struct GenArgs {
    pub config: Option<PathBuf>,
    pub prompts: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Writes a synthetic scored-sample corpus.
pub fn cmd_gen(args: GenArgs, log: &mut dyn Write) -> Result<String, PipelineError> {
    let mut config = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    let generator = GeneratorConfig {
        prompt_count: args.prompts.unwrap_or(config.generator.prompt_count),
        samples_per_prompt: args.samples.unwrap_or(config.generator.samples_per_prompt),
        ..config.generator
    };
    let out = required(args.out.or(config.paths.samples), "output")?;
    let _ = writeln!(log, "gen: generator={} out={}", to_json(&generator), out.display());
    generator.validate()?;

    let corpus = generate_corpus(&generator)?;
    write_scored_samples(&out, &corpus)?;
    let records = corpus.iter().map(PromptGroup::len).sum::<usize>();
    let sidecar = write_sidecar(
        &out,
        &json!({
            "command": "gen",
            "generator": generator,
            "record_count": records,
            "prompt_count": corpus.len(),
        }),
    )?;
    Ok(format!(
        "wrote {records} samples for {} prompts to {} (seed {}, manifest {})",
        corpus.len(),
        out.display(),
        generator.seed,
        sidecar.display()
    ))
}

#[derive(Debug, Clone)]
pub struct StatsArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub extended: bool,
    pub bins: usize,
}

#[derive(Debug, Serialize)]
struct PromptStatsRecord<'a> {
    prompt_id: &'a str,
    n: usize,
    mu: f64,
    sigma: f64,
    min_reward: f64,
    max_reward: f64,
    anchors: Vec<AnchorSelection>,
    histogram: Vec<usize>,
}

/// Per-prompt statistics, anchor selections and a reward histogram.
pub fn cmd_stats(args: StatsArgs, log: &mut dyn Write) -> Result<String, PipelineError> {
    if args.bins == 0 {
        return Err(PipelineError::usage("--bins must be positive"));
    }
    let _ = writeln!(
        log,
        "stats: in={} out={} extended={} bins={}",
        args.input.display(),
        args.out.display(),
        args.extended,
        args.bins
    );
    let groups = read_scored_samples(&args.input)?;
    let mut records = Vec::with_capacity(groups.len());
    for g in &groups {
        let set = select_anchor_set(&g.samples, args.extended)
            .map_err(|e| PipelineError::data(format!("prompt {}: {e}", g.prompt_id)))?;
        let counts = histogram(&g.samples, &set.stats, args.bins);
        records.push(PromptStatsRecord {
            prompt_id: &g.prompt_id,
            n: set.stats.n,
            mu: set.stats.mu,
            sigma: set.stats.sigma,
            min_reward: set.stats.min_reward,
            max_reward: set.stats.max_reward,
            anchors: set.selections.into_values().collect(),
            histogram: counts,
        });
    }
    write_jsonl(&args.out, &records)?;
    write_sidecar(
        &args.out,
        &json!({
            "command": "stats",
            "input": args.input,
            "extended": args.extended,
            "bins": args.bins,
            "record_count": records.len(),
        }),
    )?;
    let anchors = if args.extended { 11 } else { 7 };
    Ok(format!(
        "wrote stats and {anchors} anchors for {} prompts to {}",
        records.len(),
        args.out.display()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Anchor,
    Conventional,
    Scalable,
}

#[derive(Debug, Clone)]
pub struct PairsArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub strategy: StrategyKind,
    pub chosen: Option<Anchor>,
    pub rejected: Option<Anchor>,
    /// Candidate budget; defaults to the smallest prompt's sample count.
    pub n: Option<usize>,
    pub pool: Option<usize>,
}

/// Builds one preference pair per prompt and reports drops.
pub fn cmd_pairs(args: PairsArgs, log: &mut dyn Write) -> Result<String, PipelineError> {
    let groups = read_scored_samples(&args.input)?;
    if groups.is_empty() {
        return Err(PipelineError::data(format!("{}: no samples", args.input.display())));
    }
    let smallest = groups.iter().map(PromptGroup::len).min().expect("non-empty");
    let n = args.n.unwrap_or(smallest);
    let spec = match args.strategy {
        StrategyKind::Anchor => StrategySpec::AnchorPair {
            chosen: args.chosen.ok_or_else(|| PipelineError::usage("anchor strategy needs --chosen"))?,
            rejected: args
                .rejected
                .ok_or_else(|| PipelineError::usage("anchor strategy needs --rejected"))?,
        },
        StrategyKind::Conventional => StrategySpec::Conventional { n },
        StrategyKind::Scalable => StrategySpec::Scalable {
            pool: args.pool.unwrap_or(DEFAULT_POOL),
            n,
        },
    };
    let _ = writeln!(
        log,
        "pairs: in={} out={} strategy={} n={n}",
        args.input.display(),
        args.out.display(),
        spec.tag()
    );
    spec.validate()?;
    if n > smallest {
        let g = groups.iter().find(|g| g.len() < n).expect("smallest < n");
        return Err(PairError::BudgetExceeds {
            prompt_id: g.prompt_id.clone(),
            n,
            available: g.len(),
        }
        .into());
    }

    let prefixed: Vec<PromptGroup> = groups.iter().map(|g| g.prefix(n)).collect();
    let (pairs, drops) = build_dataset(&prefixed, &spec)?;
    let seed = input_seed(&args.input);
    let manifest = write_preference_dataset(
        &args.out,
        &pairs,
        &ManifestMeta {
            dropped_prompt_count: drops.total(),
            strategy_tag: spec.tag(),
            seed,
            source_path: args.input.display().to_string(),
        },
    )?;
    write_sidecar(
        &args.out,
        &json!({
            "command": "pairs",
            "n": n,
            "manifest": manifest,
            "drops": drops,
        }),
    )?;
    Ok(format!(
        "wrote {} pairs tagged {} to {}; dropped {} prompts ({} same sample, {} non-positive margin)",
        manifest.record_count,
        manifest.strategy_tag,
        args.out.display(),
        drops.total(),
        drops.same_sample,
        drops.non_positive_margin
    ))
}

/// The generator seed recorded next to a samples file, 0 when there is none.
fn input_seed(input: &Path) -> u64 {
    fs::read_to_string(sidecar_path(input))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v["generator"]["seed"].as_u64())
        .unwrap_or(0)
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub beta: Option<f64>,
    pub learning_rate: Option<f64>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub trace_every: Option<usize>,
    pub seed: Option<u64>,
    pub reward_feature_scale: Option<f64>,
}

/// The candidate budget encoded in a strategy tag (`...n=N`), if any.
pub fn budget_from_tag(tag: &str) -> Option<usize> {
    tag.rsplit_once("n=").and_then(|(_, n)| n.parse().ok())
}

/// Trains the toy policy on a pair dataset and writes the loss trace.
///
/// The candidate set of each prompt is its first `n` samples, with `n`
/// read from the dataset's strategy tag; anchor datasets use every sample.
pub fn cmd_train(args: TrainArgs, log: &mut dyn Write) -> Result<String, PipelineError> {
    let mut config = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    let d = config.trainer;
    let trainer = DpoConfig {
        beta: args.beta.unwrap_or(d.beta),
        learning_rate: args.learning_rate.unwrap_or(d.learning_rate),
        steps: args.steps.unwrap_or(d.steps),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        trace_every: args.trace_every.unwrap_or(d.trace_every),
        seed: d.seed,
        reward_feature_scale: args.reward_feature_scale.unwrap_or(d.reward_feature_scale),
    };
    let pairs_path = required(args.pairs.or(config.paths.pairs), "pairs")?;
    let samples_path = required(args.samples.or(config.paths.samples), "samples")?;
    let out = required(args.out.or(config.paths.out), "output")?;
    let _ = writeln!(
        log,
        "train: trainer={} pairs={} samples={} out={}",
        to_json(&trainer),
        pairs_path.display(),
        samples_path.display(),
        out.display()
    );
    trainer.validate()?;

    let dataset = read_preference_dataset(&pairs_path)?;
    let first = dataset
        .first()
        .ok_or_else(|| PipelineError::data(format!("{}: empty dataset", pairs_path.display())))?;
    let budget = budget_from_tag(&first.strategy_tag);
    let groups: Vec<PromptGroup> = read_scored_samples(&samples_path)?
        .into_iter()
        .map(|g| match budget {
            Some(n) => g.prefix(n),
            None => g,
        })
        .collect();

    let policy = ToyPolicy::uniform(&groups, trainer.reward_feature_scale)?;
    let reference = ReferencePolicy::freeze(&policy);
    let pre = policy.mean_expected_reward();
    let trace = train(policy, &reference, &dataset, &trainer)?;
    let post = trace.policy.mean_expected_reward();

    let mut w = BufWriter::new(File::create(&out).map_err(io_error(&out))?);
    let header = json!({
        "command": "train",
        "trainer": trainer,
        "pairs": pairs_path,
        "samples": samples_path,
        "candidate_budget": budget,
    });
    writeln!(w, "# config: {header}").map_err(io_error(&out))?;
    trace.write_csv(&mut w).map_err(csv_error(&out))?;
    w.flush().map_err(io_error(&out))?;
    Ok(format!(
        "trained {} steps on {} pairs: loss {:.6} -> {:.6}, expected reward {:.6} -> {:.6}; trace in {}",
        trainer.steps,
        dataset.len(),
        trace.initial_loss(),
        trace.final_loss,
        pre,
        post,
        out.display()
    ))
}

#[derive(Debug, Clone)]
pub struct EvtArgs {
    pub mu: f64,
    pub sigma: f64,
    pub n: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// With a samples file, writes the top-k mean reward curve instead.
    pub samples: Option<PathBuf>,
    pub k: usize,
}

/// Extreme-value predictions against Monte Carlo, or a top-k reward curve.
pub fn cmd_evt(args: EvtArgs, log: &mut dyn Write) -> Result<String, PipelineError> {
    let mut w = open_out(args.out.as_deref())?;
    let dest = args.out.as_ref().map_or("stdout".to_string(), |p| p.display().to_string());
    let err = |e: std::io::Error| PipelineError::data(format!("{dest}: {e}"));

    if let Some(samples) = &args.samples {
        let header = json!({"command": "evt", "samples": samples, "k": args.k, "n": args.n});
        let _ = writeln!(log, "evt: {header}");
        let grid: Vec<usize> = args.n.iter().map(|&n| n as usize).collect();
        let groups = read_scored_samples(samples)?;
        let curve = top_k_mean_curve(&groups, args.k, &grid)?;
        writeln!(w, "# config: {header}").map_err(err)?;
        curve.write_csv(&mut w).map_err(|e| PipelineError::data(format!("{dest}: {e}")))?;
        w.flush().map_err(err)?;
        return Ok(summary(
            args.out.is_none(),
            format!("wrote top-{} curve with {} rows to {dest}", args.k, curve.points.len()),
            log,
        ));
    }

    let header = json!({
        "command": "evt",
        "mu": args.mu,
        "sigma": args.sigma,
        "n": args.n,
        "trials": args.trials,
        "seed": args.seed,
    });
    let _ = writeln!(log, "evt: {header}");
    let report = evt_report(args.mu, args.sigma, &args.n, args.trials, args.seed)?;
    writeln!(w, "# config: {header}").map_err(err)?;
    report.write_csv(&mut w).map_err(|e| PipelineError::data(format!("{dest}: {e}")))?;
    w.flush().map_err(err)?;
    Ok(summary(args.out.is_none(), format!("wrote {} rows to {dest}", report.rows.len()), log))
}

#[derive(Debug, Clone, Default)]
pub struct SweepArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<SweepMode>,
}

/// Runs the sweep described by a config file and writes its CSV report.
pub fn cmd_sweep(args: SweepArgs, log: &mut dyn Write) -> Result<String, PipelineError> {
    let mut config = RunConfig::load_or_default(Some(&args.config))?;
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    if let Some(mode) = args.mode {
        config.sweep.mode = mode;
    }
    let out = args.out.or(config.paths.out.clone());
    let header = to_json(&config);
    let _ = writeln!(log, "sweep: {header}");

    let sweep = config.sweep_config();
    let comments = [format!("config: {header}")];
    let dest = out.as_ref().map_or("stdout".to_string(), |p| p.display().to_string());
    let mut w = open_out(out.as_deref())?;
    let csv_err = |e: csv::Error| PipelineError::data(format!("{dest}: {e}"));
    let rows = match config.sweep.mode {
        SweepMode::Overfit => {
            let report = run_overfit_probe(&sweep)?;
            report.write_csv(&mut w, &comments).map_err(csv_err)?;
            report.rows.len()
        }
        mode => {
            let report = match mode {
                SweepMode::Grid21 => run_grid_21(&sweep)?,
                SweepMode::Scaling => run_scaling(&sweep)?,
                _ => run_sweep(&sweep)?,
            };
            report.write_csv(&mut w, &comments).map_err(csv_err)?;
            report.rows.len()
        }
    };
    w.flush().map_err(|e| PipelineError::data(format!("{dest}: {e}")))?;
    Ok(summary(out.is_none(), format!("wrote {rows} rows to {dest}"), log))
}
