//! A toy DPO trainer over softmax policies on enumerated candidates.
//!
//! Each prompt's candidates are its scored samples. The policy logit of
//! candidate `j` is
//!
//! ```text
//! z_j = table_j + tilt * feature_j,   feature_j = scale * (r_j - mu) / sigma
//! ```
//!
//! where `table` is a free per-candidate logit table and `tilt` a single
//! per-prompt weight on the standardized reward. The feature term lets
//! candidates with similar rewards move together, so a pair whose two rewards
//! are close is harder to separate than a wide-margin pair. With
//! `scale = 0` the policy is purely tabular; then the softmax normaliser
//! cancels inside every pairwise margin and all pairs train identically.
//!
//! The DPO objective per pair is
//!
//! ```text
//! loss = -ln logistic(beta * [(ln pi(w) - ln ref(w)) - (ln pi(l) - ln ref(l))])
//!      = softplus(-beta * [(z_w - z_l) - (z0_w - z0_l)])
//! ```
//!
//! Training is plain mini-batch gradient descent with a seeded shuffle.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{PreferencePair, PromptGroup};
use crate::numeric::{log_sum_exp, logistic, softplus};
use crate::seed::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub trace_every: usize,
    pub seed: u64,
    /// Multiplier on the standardized-reward feature; 0 gives a pure table.
    pub reward_feature_scale: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            learning_rate: 1500.0,
            steps: 500,
            batch_size: 16,
            trace_every: 5,
            seed: 0,
            reward_feature_scale: 1.0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what| Err(TrainError::InvalidConfig(what));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.steps == 0 || self.batch_size == 0 || self.trace_every == 0 {
            return bad("steps, batch_size and trace_every must be positive");
        }
        if !(self.reward_feature_scale >= 0.0 && self.reward_feature_scale.is_finite()) {
            return bad("reward_feature_scale must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    InvalidConfig(&'static str),
    #[error("prompt {0} has no candidates in the policy")]
    UnknownPrompt(String),
    #[error("prompt {prompt_id}: response {response_id} out of range (m = {m})")]
    UnknownResponse {
        prompt_id: String,
        response_id: usize,
        m: usize,
    },
    #[error("prompt {0} has no candidates")]
    EmptyPrompt(String),
    #[error("policy and reference enumerate different candidates")]
    ReferenceMismatch,
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at step {step}: loss {loss} exceeds 10 ln 2")]
    Diverged { step: usize, loss: f64 },
}

/// One prompt's candidates and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPolicy {
    pub prompt_id: String,
    pub rewards: Vec<f64>,
    pub features: Vec<f64>,
    pub table: Vec<f64>,
    pub tilt: f64,
}

impl PromptPolicy {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn logit(&self, j: usize) -> f64 {
        self.table[j] + self.tilt * self.features[j]
    }

    pub fn logits(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.logit(j)).collect()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let z = self.logits();
        let lse = log_sum_exp(&z);
        z.into_iter().map(|x| x - lse).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs().into_iter().map(f64::exp).collect()
    }

    /// `E_{y ~ pi}[r(y)]` over this prompt's candidates.
    pub fn expected_reward(&self) -> f64 {
        self.probs().iter().zip(&self.rewards).map(|(p, r)| p * r).sum()
    }

    fn check(&self, response_id: usize) -> Result<(), TrainError> {
        if response_id < self.len() {
            Ok(())
        } else {
            Err(TrainError::UnknownResponse {
                prompt_id: self.prompt_id.clone(),
                response_id,
                m: self.len(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    prompts: Vec<PromptPolicy>,
    index: HashMap<String, usize>,
}

impl ToyPolicy {
    /// Zero logits (a uniform policy) over each group's samples.
    pub fn uniform(groups: &[PromptGroup], reward_feature_scale: f64) -> Result<Self, TrainError> {
        let mut prompts = Vec::with_capacity(groups.len());
        for g in groups {
            if g.is_empty() {
                return Err(TrainError::EmptyPrompt(g.prompt_id.clone()));
            }
            let rewards = g.rewards();
            let m = rewards.len() as f64;
            let mean = rewards.iter().sum::<f64>() / m;
            let sd = if rewards.len() > 1 {
                (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            let features = rewards
                .iter()
                .map(|r| {
                    if sd > 0.0 {
                        reward_feature_scale * (r - mean) / sd
                    } else {
                        0.0
                    }
                })
                .collect();
            prompts.push(PromptPolicy {
                prompt_id: g.prompt_id.clone(),
                table: vec![0.0; rewards.len()],
                rewards,
                features,
                tilt: 0.0,
            });
        }
        Ok(Self::from_prompts(prompts))
    }

    pub fn from_prompts(prompts: Vec<PromptPolicy>) -> Self {
        let index = prompts
            .iter()
            .enumerate()
            .map(|(i, p)| (p.prompt_id.clone(), i))
            .collect();
        Self { prompts, index }
    }

    pub fn prompts(&self) -> &[PromptPolicy] {
        &self.prompts
    }

    pub fn prompt(&self, prompt_id: &str) -> Result<&PromptPolicy, TrainError> {
        self.index
            .get(prompt_id)
            .map(|&i| &self.prompts[i])
            .ok_or_else(|| TrainError::UnknownPrompt(prompt_id.to_string()))
    }

    pub fn prompt_mut(&mut self, prompt_id: &str) -> Result<&mut PromptPolicy, TrainError> {
        match self.index.get(prompt_id) {
            Some(&i) => Ok(&mut self.prompts[i]),
            None => Err(TrainError::UnknownPrompt(prompt_id.to_string())),
        }
    }

    fn slot(&self, prompt_id: &str) -> Result<usize, TrainError> {
        self.index
            .get(prompt_id)
            .copied()
            .ok_or_else(|| TrainError::UnknownPrompt(prompt_id.to_string()))
    }

    /// Mean over prompts of the expected reward under the policy.
    pub fn mean_expected_reward(&self) -> f64 {
        if self.prompts.is_empty() {
            return 0.0;
        }
        self.prompts.iter().map(|p| p.expected_reward()).sum::<f64>() / self.prompts.len() as f64
    }

    fn same_candidates(&self, other: &ToyPolicy) -> bool {
        self.prompts.len() == other.prompts.len()
            && self.prompts.iter().zip(&other.prompts).all(|(a, b)| {
                a.prompt_id == b.prompt_id && a.len() == b.len() && a.features == b.features
            })
    }

    fn step(&mut self, grad: &PolicyGrad, learning_rate: f64) {
        for (p, g) in self.prompts.iter_mut().zip(&grad.prompts) {
            for (t, d) in p.table.iter_mut().zip(&g.table) {
                *t -= learning_rate * d;
            }
            p.tilt -= learning_rate * g.tilt;
        }
    }
}

/// A frozen copy of the policy at initialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy(ToyPolicy);

impl ReferencePolicy {
    pub fn freeze(policy: &ToyPolicy) -> Self {
        Self(policy.clone())
    }

    pub fn policy(&self) -> &ToyPolicy {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptGrad {
    pub table: Vec<f64>,
    pub tilt: f64,
}

/// Gradient with the same layout as a [`ToyPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub prompts: Vec<PromptGrad>,
}

impl PolicyGrad {
    pub fn zeros_like(policy: &ToyPolicy) -> Self {
        Self {
            prompts: policy
                .prompts
                .iter()
                .map(|p| PromptGrad {
                    table: vec![0.0; p.len()],
                    tilt: 0.0,
                })
                .collect(),
        }
    }
}

/// `beta * (ln pi(y|x) - ln ref(y|x))`.
pub fn implicit_reward(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    prompt_id: &str,
    response_id: usize,
    beta: f64,
) -> Result<f64, TrainError> {
    let p = policy.prompt(prompt_id)?;
    let r = reference.policy().prompt(prompt_id)?;
    p.check(response_id)?;
    r.check(response_id)?;
    Ok(beta * (p.log_probs()[response_id] - r.log_probs()[response_id]))
}

/// `-ln logistic(implicit_reward(w) - implicit_reward(l))`, evaluated through
/// the full softmax of both policies.
pub fn pair_loss(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    pair: &PreferencePair,
    beta: f64,
) -> Result<f64, TrainError> {
    let rw = implicit_reward(policy, reference, &pair.prompt_id, pair.chosen_id, beta)?;
    let rl = implicit_reward(policy, reference, &pair.prompt_id, pair.rejected_id, beta)?;
    Ok(softplus(-(rw - rl)))
}

struct Resolved {
    slot: usize,
    w: usize,
    l: usize,
}

fn resolve(policy: &ToyPolicy, pair: &PreferencePair) -> Result<Resolved, TrainError> {
    let slot = policy.slot(&pair.prompt_id)?;
    let p = &policy.prompts[slot];
    p.check(pair.chosen_id)?;
    p.check(pair.rejected_id)?;
    Ok(Resolved {
        slot,
        w: pair.chosen_id,
        l: pair.rejected_id,
    })
}

// The normaliser cancels in z_w - z_l, so the margin needs two logits only.
fn implicit_margin(policy: &ToyPolicy, reference: &ToyPolicy, r: &Resolved, beta: f64) -> f64 {
    let p = &policy.prompts[r.slot];
    let q = &reference.prompts[r.slot];
    beta * ((p.logit(r.w) - p.logit(r.l)) - (q.logit(r.w) - q.logit(r.l)))
}

fn accumulate(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    batch: &[Resolved],
    beta: f64,
    grad: &mut PolicyGrad,
) -> f64 {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for r in batch {
        let margin = implicit_margin(policy, reference, r, beta);
        total += softplus(-margin);
        // d loss / d margin = -logistic(-margin)
        let coef = -logistic(-margin) * beta * scale;
        let p = &policy.prompts[r.slot];
        let g = &mut grad.prompts[r.slot];
        g.table[r.w] += coef;
        g.table[r.l] -= coef;
        g.tilt += coef * (p.features[r.w] - p.features[r.l]);
    }
    total * scale
}

/// Mean DPO loss over `batch` and its analytic gradient.
pub fn batch_loss_and_grad(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    batch: &[PreferencePair],
    beta: f64,
) -> Result<(f64, PolicyGrad), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if !policy.same_candidates(reference.policy()) {
        return Err(TrainError::ReferenceMismatch);
    }
    let resolved = batch
        .iter()
        .map(|p| resolve(policy, p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut grad = PolicyGrad::zeros_like(policy);
    let loss = accumulate(policy, reference.policy(), &resolved, beta, &mut grad);
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    /// Full-dataset mean loss at step 0, every `trace_every` steps, and at the last step.
    pub points: Vec<TracePoint>,
    pub final_loss: f64,
    pub policy: ToyPolicy,
}

impl TrainTrace {
    pub fn initial_loss(&self) -> f64 {
        self.points[0].loss
    }

    /// `step,loss` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn dataset_loss(policy: &ToyPolicy, reference: &ToyPolicy, pairs: &[Resolved], beta: f64) -> f64 {
    pairs
        .iter()
        .map(|r| softplus(-implicit_margin(policy, reference, r, beta)))
        .sum::<f64>()
        / pairs.len() as f64
}

/// Trains `policy` on `dataset` by mini-batch gradient descent.
///
/// Batches are consecutive slices of a seeded permutation of the dataset;
/// the permutation is redrawn whenever fewer than `batch_size` pairs remain.
pub fn train(
    mut policy: ToyPolicy,
    reference: &ReferencePolicy,
    dataset: &[PreferencePair],
    config: &DpoConfig,
) -> Result<TrainTrace, TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !policy.same_candidates(reference.policy()) {
        return Err(TrainError::ReferenceMismatch);
    }
    let resolved = dataset
        .iter()
        .map(|p| resolve(&policy, p))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = reference.policy();
    let ceiling = 10.0 * LN_2;
    let batch_size = config.batch_size.min(resolved.len());

    let mut rng = derived_rng(config.seed, "shuffle");
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut points = vec![TracePoint {
        step: 0,
        loss: dataset_loss(&policy, reference, &resolved, config.beta),
    }];
    let mut batch = Vec::with_capacity(batch_size);
    for step in 1..=config.steps {
        if cursor + batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        batch.clear();
        batch.extend(order[cursor..cursor + batch_size].iter().map(|&i| Resolved {
            slot: resolved[i].slot,
            w: resolved[i].w,
            l: resolved[i].l,
        }));
        cursor += batch_size;

        let mut grad = PolicyGrad::zeros_like(&policy);
        let loss = accumulate(&policy, reference, &batch, config.beta, &mut grad);
        if !(loss <= ceiling) {
            return Err(TrainError::Diverged { step, loss });
        }
        policy.step(&grad, config.learning_rate);

        if step % config.trace_every == 0 || step == config.steps {
            let loss = dataset_loss(&policy, reference, &resolved, config.beta);
            if !(loss <= ceiling) {
                return Err(TrainError::Diverged { step, loss });
            }
            points.push(TracePoint { step, loss });
        }
    }
    let final_loss = points.last().expect("step 0 recorded").loss;
    Ok(TrainTrace {
        points,
        final_loss,
        policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy_over(rewards: &[&[f64]]) -> ToyPolicy {
        let groups: Vec<PromptGroup> = rewards
            .iter()
            .enumerate()
            .map(|(i, r)| PromptGroup::from_rewards(format!("p{i}"), r))
            .collect();
        ToyPolicy::uniform(&groups, 1.0).unwrap()
    }

    fn pair(prompt: &str, w: usize, l: usize) -> PreferencePair {
        PreferencePair {
            prompt_id: prompt.into(),
            chosen_id: w,
            rejected_id: l,
            chosen_reward: 1.0,
            rejected_reward: 0.0,
            margin: 1.0,
            strategy_tag: "t".into(),
        }
    }

    #[test]
    fn identity_gives_zero_reward_and_ln2_loss() {
        let pol = policy_over(&[&[0.0, 1.0, 2.0, 3.0]]);
        let r = ReferencePolicy::freeze(&pol);
        for y in 0..4 {
            assert_eq!(implicit_reward(&pol, &r, "p0", y, 0.01).unwrap(), 0.0);
        }
        assert_eq!(pair_loss(&pol, &r, &pair("p0", 3, 0), 0.01).unwrap(), LN_2);
        let (loss, _) = batch_loss_and_grad(&pol, &r, &[pair("p0", 3, 0), pair("p0", 2, 1)], 0.1).unwrap();
        assert!((loss - LN_2).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_log_ratio() {
        // policy table [1,0,0,0] against a uniform reference over four candidates.
        let mut pol = policy_over(&[&[0.0, 1.0, 2.0, 3.0]]);
        let r = ReferencePolicy::freeze(&pol);
        pol.prompt_mut("p0").unwrap().table[0] = 1.0;
        let beta = 0.3;
        let expect = beta * (1.0 - (1f64.exp() + 3.0).ln() + 4f64.ln());
        let got = implicit_reward(&pol, &r, "p0", 0, beta).unwrap();
        assert!((got - expect).abs() < 1e-15);
        let doubled = implicit_reward(&pol, &r, "p0", 0, 2.0 * beta).unwrap();
        assert!((doubled - 2.0 * got).abs() < 1e-15);
    }

    #[test]
    fn large_margin_loss() {
        // Implicit margin of exactly 10: beta = 1, table difference 10.
        let mut pol = policy_over(&[&[0.0, 0.0]]);
        let r = ReferencePolicy::freeze(&pol);
        pol.prompt_mut("p0").unwrap().table = vec![10.0, 0.0];
        let l = pair_loss(&pol, &r, &pair("p0", 0, 1), 1.0).unwrap();
        assert!((l - 4.539_889_921_686_465e-5).abs() < 1e-15);
    }

    #[test]
    fn swapped_pair_losses_are_complementary() {
        let mut pol = policy_over(&[&[0.5, -1.0, 2.0]]);
        let r = ReferencePolicy::freeze(&pol);
        let p = pol.prompt_mut("p0").unwrap();
        p.table = vec![0.4, -1.3, 2.2];
        p.tilt = 0.7;
        let a = pair_loss(&pol, &r, &pair("p0", 2, 1), 0.8).unwrap();
        let b = pair_loss(&pol, &r, &pair("p0", 1, 2), 0.8).unwrap();
        assert!(((-a).exp() + (-b).exp() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lookup_errors() {
        let pol = policy_over(&[&[0.0, 1.0]]);
        let r = ReferencePolicy::freeze(&pol);
        assert!(matches!(
            implicit_reward(&pol, &r, "nope", 0, 0.1),
            Err(TrainError::UnknownPrompt(_))
        ));
        assert!(matches!(
            implicit_reward(&pol, &r, "p0", 2, 0.1),
            Err(TrainError::UnknownResponse { m: 2, .. })
        ));
        assert_eq!(
            batch_loss_and_grad(&pol, &r, &[], 0.1).unwrap_err(),
            TrainError::EmptyBatch
        );
    }

    #[test]
    fn absent_prompts_have_zero_gradient() {
        let pol = policy_over(&[&[0.0, 1.0, 2.0], &[3.0, 1.0], &[0.2, 0.1, 0.0]]);
        let r = ReferencePolicy::freeze(&pol);
        let (_, g) = batch_loss_and_grad(&pol, &r, &[pair("p1", 0, 1)], 0.5).unwrap();
        for i in [0, 2] {
            assert!(g.prompts[i].table.iter().all(|&x| x == 0.0));
            assert_eq!(g.prompts[i].tilt, 0.0);
        }
        assert!(g.prompts[1].table[0] < 0.0);
    }

    #[test]
    fn divergence_guard_and_config_checks() {
        let pol = policy_over(&[&[0.0, 1.0]]);
        let r = ReferencePolicy::freeze(&pol);
        let cfg = DpoConfig { beta: 0.0, ..Default::default() };
        assert!(matches!(
            train(pol.clone(), &r, &[pair("p0", 1, 0)], &cfg),
            Err(TrainError::InvalidConfig(_))
        ));
        assert_eq!(
            train(pol.clone(), &r, &[], &DpoConfig::default()).unwrap_err(),
            TrainError::EmptyDataset
        );
        // Start far on the wrong side of the margin so the very first batch exceeds the ceiling.
        let mut bad = pol.clone();
        bad.prompt_mut("p0").unwrap().table = vec![0.0, 100.0];
        let cfg = DpoConfig { beta: 1.0, ..Default::default() };
        assert!(matches!(
            train(bad, &r, &[pair("p0", 0, 1)], &cfg),
            Err(TrainError::Diverged { step: 1, .. })
        ));
    }

    #[test]
    fn trace_shape() {
        let pol = policy_over(&[&[0.0, 1.0, 2.0], &[0.0, -1.0, 1.5]]);
        let r = ReferencePolicy::freeze(&pol);
        let cfg = DpoConfig { steps: 12, batch_size: 1, ..Default::default() };
        let t = train(pol, &r, &[pair("p0", 2, 0), pair("p1", 2, 1)], &cfg).unwrap();
        let steps: Vec<usize> = t.points.iter().map(|p| p.step).collect();
        assert_eq!(steps, [0, 5, 10, 12]);
        assert_eq!(t.initial_loss(), LN_2);
        assert!(t.final_loss < LN_2);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,loss\n0,0.6931471805599453\n"));
    }
}
