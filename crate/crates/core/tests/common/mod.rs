//! Independent reference implementations used by the integration tests.
//!
//! Each oracle is written from the definition, by exhaustive scan or
//! quadrature, and shares no code with the library beyond its data types.

#![allow(dead_code)]

use dpo_pairs::stats::Anchor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

/// Mean and Bessel-corrected standard deviation by two plain passes.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Index into `ids`/`rewards` of the nearest sample to the anchor target,
/// found by computing every distance, keeping the minimum, then taking the
/// smallest id among all samples at that minimum.
pub fn nearest_scan(ids: &[usize], rewards: &[f64], anchor: Anchor, target: f64) -> usize {
    let dist: Vec<f64> = rewards
        .iter()
        .map(|&r| match anchor {
            Anchor::Min => r,
            Anchor::Max => -r,
            Anchor::Sigma(_) => (r - target).abs(),
        })
        .collect();
    let mut best = f64::INFINITY;
    for &d in &dist {
        if d < best {
            best = d;
        }
    }
    let mut pick: Option<usize> = None;
    for i in 0..rewards.len() {
        if dist[i] == best && pick.is_none_or(|p| ids[i] < ids[p]) {
            pick = Some(i);
        }
    }
    pick.unwrap()
}

/// What a pair rule should emit, decided by comparing every candidate
/// against every other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expected {
    Pair { chosen: usize, rejected: usize },
    SameSample,
    NonPositive,
}

/// Sample id `i` in `ids` is the "top" (or "bottom") if no other id beats it:
/// strictly better reward, or equal reward and smaller id.
fn extreme(ids: &[usize], rewards: &[f64], top: bool) -> usize {
    for a in 0..ids.len() {
        let beaten = (0..ids.len()).any(|b| {
            let better = if top { rewards[b] > rewards[a] } else { rewards[b] < rewards[a] };
            better || (rewards[b] == rewards[a] && ids[b] < ids[a])
        });
        if !beaten {
            return ids[a];
        }
    }
    unreachable!("finite rewards always have an extreme")
}

fn decide(chosen: usize, rejected: usize, rewards: &[f64]) -> Expected {
    if chosen == rejected {
        Expected::SameSample
    } else if rewards[chosen] > rewards[rejected] {
        Expected::Pair { chosen, rejected }
    } else {
        Expected::NonPositive
    }
}

/// Max over the first `n` against min over the first `n` (ids are positions).
pub fn conventional_oracle(rewards: &[f64], n: usize) -> Expected {
    let ids: Vec<usize> = (0..n).collect();
    let r = &rewards[..n];
    decide(extreme(&ids, r, true), extreme(&ids, r, false), rewards)
}

/// Max over the first `n` against min over the first `pool`.
pub fn scalable_oracle(rewards: &[f64], n: usize, pool: usize) -> Expected {
    let ids: Vec<usize> = (0..n).collect();
    let chosen = extreme(&ids, &rewards[..n], true);
    let rejected = extreme(&ids[..pool], &rewards[..pool], false);
    decide(chosen, rejected, rewards)
}

/// Standard normal density and CDF, the CDF via `erfc` for accuracy in the
/// lower tail.
pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn big_phi(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// `E[max of n iid N(0,1)] = integral of x n phi(x) Phi(x)^(n-1)` by
/// composite Simpson on [-12, 12].
pub fn expected_max_quadrature(n: u64) -> f64 {
    let (a, b, steps) = (-12.0_f64, 12.0_f64, 200_000_usize);
    let h = (b - a) / steps as f64;
    let f = |x: f64| x * n as f64 * phi(x) * big_phi(x).powi(n as i32 - 1);
    let mut s = f(a) + f(b);
    for i in 1..steps {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Reward vectors for selection tests: Gaussian, uniform, or coarsely
/// quantized so that ties (duplicates and equidistant pairs) are common.
pub fn random_rewards(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    match rng.random_range(0..4) {
        0 => {
            let d = Normal::new(rng.random_range(-2.0..2.0), rng.random_range(0.1..3.0)).unwrap();
            (0..n).map(|_| d.sample(rng)).collect()
        }
        1 => (0..n).map(|_| rng.random_range(-5.0..5.0)).collect(),
        2 => (0..n).map(|_| rng.random_range(-3_i32..=3) as f64).collect(),
        _ => (0..n).map(|_| rng.random_range(0_i32..=4) as f64 * 0.5).collect(),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random trainer instance: up to 3 prompts with 2..=5 candidates each,
/// a perturbed policy, a differently perturbed reference and 1..=6 pairs.
pub struct GradInstance {
    pub policy: dpo_pairs::dpo::ToyPolicy,
    pub reference: dpo_pairs::dpo::ReferencePolicy,
    pub batch: Vec<dpo_pairs::PreferencePair>,
    pub beta: f64,
}

pub fn grad_instance(rng: &mut ChaCha8Rng) -> GradInstance {
    use dpo_pairs::dpo::{ReferencePolicy, ToyPolicy};
    use dpo_pairs::PromptGroup;

    let prompts = rng.random_range(1..=3);
    let groups: Vec<PromptGroup> = (0..prompts)
        .map(|k| {
            let m = rng.random_range(2..=5);
            let rs: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
            PromptGroup::from_rewards(format!("p{k}"), &rs)
        })
        .collect();
    let scale = rng.random_range(0.0..2.0);
    let perturb = |rng: &mut ChaCha8Rng, mut p: ToyPolicy| {
        for g in &groups {
            let q = p.prompt_mut(&g.prompt_id).unwrap();
            for t in q.table.iter_mut() {
                *t = rng.random_range(-2.0..2.0);
            }
            q.tilt = rng.random_range(-1.0..1.0);
        }
        p
    };
    let base = ToyPolicy::uniform(&groups, scale).unwrap();
    let reference = ReferencePolicy::freeze(&perturb(rng, base.clone()));
    let policy = perturb(rng, base);

    let mut batch = Vec::new();
    while batch.is_empty() {
        for _ in 0..rng.random_range(1..=6) {
            let g = &groups[rng.random_range(0..groups.len())];
            let (a, b) = (rng.random_range(0..g.len()), rng.random_range(0..g.len()));
            let (w, l) = if g.samples[a].reward > g.samples[b].reward { (a, b) } else { (b, a) };
            if let Ok(p) = dpo_pairs::PreferencePair::from_samples(&g.samples[w], &g.samples[l], "test") {
                batch.push(p);
            }
        }
    }
    GradInstance {
        policy,
        reference,
        batch,
        beta: rng.random_range(0.1..2.0),
    }
}

/// Mean loss over the batch through the full-softmax `pair_loss`.
pub fn slow_loss(inst: &GradInstance, policy: &dpo_pairs::dpo::ToyPolicy) -> f64 {
    let total: f64 = inst
        .batch
        .iter()
        .map(|p| dpo_pairs::dpo::pair_loss(policy, &inst.reference, p, inst.beta).unwrap())
        .sum();
    total / inst.batch.len() as f64
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, over every table entry and tilt. The
/// denominator is floored at `floor` so exact zeros compare absolutely.
pub fn max_grad_error(inst: &GradInstance, h: f64, floor: f64) -> f64 {
    let (_, grad) = dpo_pairs::dpo::batch_loss_and_grad(&inst.policy, &inst.reference, &inst.batch, inst.beta).unwrap();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    let mut worst: f64 = 0.0;
    for (slot, prompt) in inst.policy.prompts().iter().enumerate() {
        let id = prompt.prompt_id.clone();
        let bump = |j: Option<usize>, d: f64| {
            let mut p = inst.policy.clone();
            let q = p.prompt_mut(&id).unwrap();
            match j {
                Some(j) => q.table[j] += d,
                None => q.tilt += d,
            }
            slow_loss(inst, &p)
        };
        for j in 0..prompt.table.len() {
            let numeric = (bump(Some(j), h) - bump(Some(j), -h)) / (2.0 * h);
            worst = worst.max(rel(grad.prompts[slot].table[j], numeric));
        }
        let numeric = (bump(None, h) - bump(None, -h)) / (2.0 * h);
        worst = worst.max(rel(grad.prompts[slot].tilt, numeric));
    }
    worst
}
