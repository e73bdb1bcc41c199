//! A small config-driven sweep: conventional against scalable over budgets
//! and seeds, printed as the CSV report.
//!
//! cargo run --release --example scaling_sweep

use dpo_pairs::dpo::DpoConfig;
use dpo_pairs::harness::{run_scaling, SweepConfig};
use dpo_pairs::synth::GeneratorConfig;

fn main() -> anyhow::Result<()> {
    let config = SweepConfig {
        n_grid: vec![5, 20, 100, 200],
        generator: GeneratorConfig {
            prompt_count: 100,
            samples_per_prompt: 200,
            ..Default::default()
        },
        trainer: DpoConfig {
            steps: 200,
            ..Default::default()
        },
        replicate_seeds: vec![1, 2, 3],
        ..Default::default()
    };
    let report = run_scaling(&config)?;
    report.write_csv(std::io::stdout().lock(), &[])?;

    eprintln!();
    for n in &config.n_grid {
        for tag in [format!("conventional:n={n}"), format!("scalable:pool=5,n={n}")] {
            let loss = report.median(&tag, *n, |r| r.final_loss).unwrap_or(f64::NAN);
            let gain = report.median(&tag, *n, |r| r.post_reward - r.pre_reward).unwrap_or(f64::NAN);
            eprintln!("{tag:<22} median loss {loss:.4}  median reward gain {gain:+.4}");
        }
    }
    Ok(())
}
