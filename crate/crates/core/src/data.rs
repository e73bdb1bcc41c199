//! Record types and the JSONL layer shared by every stage of the pipeline.
//!
//! Two line formats are used:
//!
//! ```text
//! {"prompt_id": "p0", "sample_id": 0, "reward": 1.5, "text": "..."}
//! {"prompt_id": "p0", "chosen_id": 3, "rejected_id": 1, "chosen_reward": 2.1,
//!  "rejected_reward": -0.4, "margin": 2.5, "strategy_tag": "conventional:n=5"}
//! ```
//!
//! Floats are written with the shortest decimal form that parses back to the
//! same bits, so a write/read cycle is exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One scored generation for a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub prompt_id: String,
    /// Generation order within the prompt, `0..n`.
    pub sample_id: usize,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl ScoredSample {
    pub fn new(prompt_id: impl Into<String>, sample_id: usize, reward: f64) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            sample_id,
            reward,
            text: None,
        }
    }
}

/// All samples of one prompt, ordered by `sample_id` (which is `0..len`).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptGroup {
    pub prompt_id: String,
    pub samples: Vec<ScoredSample>,
}

impl PromptGroup {
    /// Builds a group from bare rewards, assigning sample ids in order.
    pub fn from_rewards(prompt_id: impl Into<String>, rewards: &[f64]) -> Self {
        let prompt_id = prompt_id.into();
        let samples = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| ScoredSample::new(prompt_id.clone(), i, r))
            .collect();
        Self { prompt_id, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.reward).collect()
    }

    /// The first `n` generations (all of them when `n >= len`).
    pub fn prefix(&self, n: usize) -> PromptGroup {
        PromptGroup {
            prompt_id: self.prompt_id.clone(),
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
        }
    }
}

/// Why a pair violates the preference-pair contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum InvalidPair {
    #[error("chosen and rejected are the same sample")]
    SameSample,
    #[error("margin is not strictly positive")]
    NonPositiveMargin,
    #[error("stored margin differs from chosen_reward - rejected_reward")]
    MarginMismatch,
    #[error("non-finite reward")]
    NonFinite,
}

/// A (chosen, rejected) training pair for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub chosen_id: usize,
    pub rejected_id: usize,
    pub chosen_reward: f64,
    pub rejected_reward: f64,
    pub margin: f64,
    pub strategy_tag: String,
}

impl PreferencePair {
    /// Assembles a pair, refusing anything that is not a strict preference.
    pub fn from_samples(
        chosen: &ScoredSample,
        rejected: &ScoredSample,
        strategy_tag: impl Into<String>,
    ) -> Result<Self, InvalidPair> {
        let pair = Self {
            prompt_id: chosen.prompt_id.clone(),
            chosen_id: chosen.sample_id,
            rejected_id: rejected.sample_id,
            chosen_reward: chosen.reward,
            rejected_reward: rejected.reward,
            margin: chosen.reward - rejected.reward,
            strategy_tag: strategy_tag.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), InvalidPair> {
        if !(self.chosen_reward.is_finite() && self.rejected_reward.is_finite()) {
            return Err(InvalidPair::NonFinite);
        }
        if self.chosen_id == self.rejected_id {
            return Err(InvalidPair::SameSample);
        }
        if !(self.chosen_reward > self.rejected_reward) || !(self.margin > 0.0) {
            return Err(InvalidPair::NonPositiveMargin);
        }
        if self.margin != self.chosen_reward - self.rejected_reward {
            return Err(InvalidPair::MarginMismatch);
        }
        Ok(())
    }
}

/// Summary written next to every preference dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub record_count: usize,
    pub dropped_prompt_count: usize,
    pub strategy_tag: String,
    pub seed: u64,
    pub source_path: String,
}

/// Provenance that the writer cannot infer from the pairs themselves.
#[derive(Debug, Clone, Default)]
pub struct ManifestMeta {
    pub dropped_prompt_count: usize,
    pub strategy_tag: String,
    pub seed: u64,
    pub source_path: String,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: non-finite reward")]
    NonFiniteReward { line: usize },
    #[error("line {line}: duplicate sample ({prompt_id}, {sample_id})")]
    DuplicateSample {
        line: usize,
        prompt_id: String,
        sample_id: usize,
    },
    #[error("prompt {prompt_id}: sample ids are not contiguous from 0 (missing {missing})")]
    NonContiguous { prompt_id: String, missing: usize },
    #[error("pair {index} ({prompt_id}): {reason}")]
    InvalidPair {
        index: usize,
        prompt_id: String,
        reason: InvalidPair,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a scored-sample JSONL file into prompt groups.
///
/// Groups come back in order of first appearance; samples inside a group are
/// sorted by `sample_id`, which must cover `0..n` without gaps.
pub fn read_scored_samples(path: impl AsRef<Path>) -> Result<Vec<PromptGroup>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_scored_samples_from(BufReader::new(file), path)
}

pub fn read_scored_samples_from<R: BufRead>(
    reader: R,
    path: &Path,
) -> Result<Vec<PromptGroup>, DataError> {
    let mut groups: Vec<PromptGroup> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<(usize, usize), ()> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        let sample: ScoredSample = serde_json::from_str(&line).map_err(|source| {
            if reward_token_is_non_finite(&line) {
                DataError::NonFiniteReward { line: line_no }
            } else {
                DataError::Malformed {
                    line: line_no,
                    source,
                }
            }
        })?;
        if !sample.reward.is_finite() {
            return Err(DataError::NonFiniteReward { line: line_no });
        }
        let g = *index.entry(sample.prompt_id.clone()).or_insert_with(|| {
            groups.push(PromptGroup {
                prompt_id: sample.prompt_id.clone(),
                samples: Vec::new(),
            });
            groups.len() - 1
        });
        if seen.insert((g, sample.sample_id), ()).is_some() {
            return Err(DataError::DuplicateSample {
                line: line_no,
                prompt_id: sample.prompt_id,
                sample_id: sample.sample_id,
            });
        }
        groups[g].samples.push(sample);
    }

    for group in &mut groups {
        group.samples.sort_by_key(|s| s.sample_id);
        if let Some(missing) = group
            .samples
            .iter()
            .enumerate()
            .find(|(i, s)| s.sample_id != *i)
            .map(|(i, _)| i)
        {
            return Err(DataError::NonContiguous {
                prompt_id: group.prompt_id.clone(),
                missing,
            });
        }
    }
    Ok(groups)
}

// JSON has no literal for NaN or infinity, but Python's json module happily
// emits `NaN`/`Infinity`. Recognise them so the error says what is wrong.
fn reward_token_is_non_finite(line: &str) -> bool {
    let Some(pos) = line.find("\"reward\"") else {
        return false;
    };
    let rest = line[pos + "\"reward\"".len()..].trim_start();
    let Some(value) = rest.strip_prefix(':') else {
        return false;
    };
    let value = value.trim_start();
    let value = value.strip_prefix(['-', '+']).unwrap_or(value);
    ["NaN", "nan", "Infinity", "inf", "Inf"]
        .iter()
        .any(|t| value.starts_with(t))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(std::io::Error::from)
            .map_err(io_err(path))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes prompt groups as scored-sample JSONL, group by group.
pub fn write_scored_samples(path: impl AsRef<Path>, groups: &[PromptGroup]) -> Result<(), DataError> {
    let all: Vec<&ScoredSample> = groups.iter().flat_map(|g| g.samples.iter()).collect();
    write_jsonl(path.as_ref(), &all)
}

/// Writes a preference dataset, one pair per line in input order.
///
/// Every pair is validated first; nothing is written if any pair is invalid.
pub fn write_preference_dataset(
    path: impl AsRef<Path>,
    pairs: &[PreferencePair],
    meta: &ManifestMeta,
) -> Result<DatasetManifest, DataError> {
    for (index, p) in pairs.iter().enumerate() {
        p.validate().map_err(|reason| DataError::InvalidPair {
            index,
            prompt_id: p.prompt_id.clone(),
            reason,
        })?;
    }
    write_jsonl(path.as_ref(), pairs)?;
    Ok(DatasetManifest {
        record_count: pairs.len(),
        dropped_prompt_count: meta.dropped_prompt_count,
        strategy_tag: meta.strategy_tag.clone(),
        seed: meta.seed,
        source_path: meta.source_path.clone(),
    })
}

/// Reads a preference dataset written by [`write_preference_dataset`].
pub fn read_preference_dataset(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let pair: PreferencePair = serde_json::from_str(&line)
            .map_err(|source| DataError::Malformed { line: i + 1, source })?;
        pair.validate().map_err(|reason| DataError::InvalidPair {
            index: i,
            prompt_id: pair.prompt_id.clone(),
            reason,
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}
