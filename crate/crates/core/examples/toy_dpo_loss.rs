//! Training curves of the toy DPO trainer for four anchor pairs that share
//! the max-reward chosen response.
//!
//! cargo run --release --example toy_dpo_loss

use dpo_pairs::dpo::{train, DpoConfig, ReferencePolicy, ToyPolicy};
use dpo_pairs::pairs::{build_dataset, StrategySpec};
use dpo_pairs::stats::Anchor;
use dpo_pairs::synth::{generate_corpus, GeneratorConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate_corpus(&GeneratorConfig::default())?;
    let config = DpoConfig::default();
    let mut traces = Vec::new();
    for rejected in [Anchor::Min, Anchor::Sigma(-2), Anchor::Sigma(0), Anchor::Sigma(2)] {
        let spec = StrategySpec::AnchorPair { chosen: Anchor::Max, rejected };
        let (pairs, drops) = build_dataset(&corpus, &spec)?;
        let policy = ToyPolicy::uniform(&corpus, config.reward_feature_scale)?;
        let reference = ReferencePolicy::freeze(&policy);
        let before = policy.mean_expected_reward();
        let trace = train(policy, &reference, &pairs, &config)?;
        println!(
            "{:<20} pairs={:>3} drops={:>2} loss {:.4} -> {:.4}  E[r] {:+.4} -> {:+.4}",
            spec.tag(),
            pairs.len(),
            drops.total(),
            trace.initial_loss(),
            trace.final_loss,
            before,
            trace.policy.mean_expected_reward()
        );
        traces.push(trace);
    }
    println!();
    println!("{:>5} {:>9} {:>9} {:>9} {:>9}", "step", "max/min", "max/mu-2s", "max/mu", "max/mu+2s");
    for i in (0..traces[0].points.len()).step_by(10) {
        print!("{:>5}", traces[0].points[i].step);
        for t in &traces {
            print!(" {:>9.4}", t.points[i].loss);
        }
        println!();
    }
    Ok(())
}
