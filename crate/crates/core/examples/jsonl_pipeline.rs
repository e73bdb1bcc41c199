//! File-based flow: generate a corpus, read it back, build a scalable
//! dataset, write it with its manifest and reload it.
//!
//! cargo run --example jsonl_pipeline

use dpo_pairs::data::{
    read_preference_dataset, read_scored_samples, write_preference_dataset, write_scored_samples,
    ManifestMeta,
};
use dpo_pairs::pairs::{build_dataset, StrategySpec};
use dpo_pairs::synth::{generate_corpus, GeneratorConfig};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("dpo-pairs-example");
    std::fs::create_dir_all(&dir)?;
    let samples_path = dir.join("samples.jsonl");
    let pairs_path = dir.join("pairs.jsonl");

    let generator = GeneratorConfig {
        prompt_count: 50,
        samples_per_prompt: 64,
        seed: 9,
        ..Default::default()
    };
    write_scored_samples(&samples_path, &generate_corpus(&generator)?)?;
    let groups = read_scored_samples(&samples_path)?;
    println!("read {} prompts from {}", groups.len(), samples_path.display());

    let spec = StrategySpec::Scalable { pool: 5, n: 64 };
    let (pairs, drops) = build_dataset(&groups, &spec)?;
    let manifest = write_preference_dataset(
        &pairs_path,
        &pairs,
        &ManifestMeta {
            dropped_prompt_count: drops.total(),
            strategy_tag: spec.tag(),
            seed: generator.seed,
            source_path: samples_path.display().to_string(),
        },
    )?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);

    let back = read_preference_dataset(&pairs_path)?;
    assert_eq!(back, pairs);
    println!("round trip ok: {} pairs, first {:?}", back.len(), back[0]);
    Ok(())
}
