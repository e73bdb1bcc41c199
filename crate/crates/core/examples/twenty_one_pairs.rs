//! All 21 anchor pairs for a small corpus: pair counts, drops and mean margins.
//!
//! cargo run --example twenty_one_pairs

use dpo_pairs::pairs::{build_all_21, canonical_anchor_pairs, PairOutcome};
use dpo_pairs::stats::select_anchor_set;
use dpo_pairs::synth::{generate_corpus, GeneratorConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate_corpus(&GeneratorConfig {
        prompt_count: 100,
        samples_per_prompt: 40,
        seed: 1,
        ..Default::default()
    })?;
    let keys = canonical_anchor_pairs();
    let mut margin = vec![0.0; keys.len()];
    let mut kept = vec![0usize; keys.len()];
    for g in &corpus {
        let all = build_all_21(&select_anchor_set(&g.samples, false)?)?;
        for (i, key) in keys.iter().enumerate() {
            if let PairOutcome::Pair(p) = &all[key] {
                margin[i] += p.margin;
                kept[i] += 1;
            }
        }
    }
    println!("{:<8} {:<8} {:>5} {:>6} {:>11}", "chosen", "rejected", "pairs", "drops", "mean_margin");
    for (i, (c, r)) in keys.iter().enumerate() {
        let mean = if kept[i] > 0 { margin[i] / kept[i] as f64 } else { f64::NAN };
        println!(
            "{:<8} {:<8} {:>5} {:>6} {:>11.4}",
            c.to_string(),
            r.to_string(),
            kept[i],
            corpus.len() - kept[i],
            mean
        );
    }
    Ok(())
}
