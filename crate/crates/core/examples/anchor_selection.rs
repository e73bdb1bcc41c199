//! Reward statistics and the nearest sample to each anchor for one prompt.
//!
//! cargo run --example anchor_selection

use dpo_pairs::stats::{histogram, select_anchor_set};
use dpo_pairs::synth::{sample_rewards, PromptProfile};

fn main() -> anyhow::Result<()> {
    let profile = PromptProfile {
        prompt_id: "demo".into(),
        mu: 0.3,
        sigma: 0.8,
    };
    let samples = sample_rewards(&profile, 64, 42);
    let set = select_anchor_set(&samples, true)?;
    let s = &set.stats;
    println!("n={} mu={:.4} sigma={:.4} min={:.4} max={:.4}", s.n, s.mu, s.sigma, s.min_reward, s.max_reward);
    println!("{:<7} {:>9} {:>6} {:>9}", "anchor", "target", "id", "reward");
    for sel in set.selections.values() {
        println!("{:<7} {:>9.4} {:>6} {:>9.4}", sel.anchor.to_string(), sel.target_value, sel.sample_id, sel.reward);
    }
    let counts = histogram(&samples, s, 10);
    let peak = *counts.iter().max().unwrap_or(&1);
    for (i, c) in counts.iter().enumerate() {
        println!("bin {i}: {}", "#".repeat(c * 40 / peak));
    }
    Ok(())
}

