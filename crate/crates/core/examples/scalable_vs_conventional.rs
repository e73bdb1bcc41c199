//! Conventional (max/min over n) against scalable (max over n, min over the
//! first 5) as the sample budget grows.
//!
//! cargo run --example scalable_vs_conventional

use dpo_pairs::data::PromptGroup;
use dpo_pairs::pairs::{build_dataset, StrategySpec, DEFAULT_POOL};
use dpo_pairs::synth::{generate_corpus, GeneratorConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate_corpus(&GeneratorConfig {
        prompt_count: 300,
        samples_per_prompt: 400,
        seed: 5,
        ..Default::default()
    })?;
    println!("{:>4} {:>24} {:>24}", "n", "conventional chosen/rej", "scalable chosen/rej");
    for n in [5, 10, 20, 50, 100, 200, 400] {
        let groups: Vec<PromptGroup> = corpus.iter().map(|g| g.prefix(n)).collect();
        let mut cells = Vec::new();
        for spec in [StrategySpec::Conventional { n }, StrategySpec::Scalable { pool: DEFAULT_POOL, n }] {
            let (pairs, _) = build_dataset(&groups, &spec)?;
            let k = pairs.len() as f64;
            let chosen = pairs.iter().map(|p| p.chosen_reward).sum::<f64>() / k;
            let rejected = pairs.iter().map(|p| p.rejected_reward).sum::<f64>() / k;
            cells.push(format!("{chosen:>+8.4} / {rejected:>+8.4}"));
        }
        println!("{n:>4} {:>24} {:>24}", cells[0], cells[1]);
    }
    Ok(())
}
