//! Extreme-value predictions, Monte Carlo estimates and the saturated
//! log-sigmoid term as n grows.
//!
//! cargo run --release --example evt_saturation

use dpo_pairs::evt::{beta_saturation_curve, evt_report};

fn main() -> anyhow::Result<()> {
    let grid = [2, 5, 20, 100, 400, 1000, 10_000];
    let report = evt_report(0.0, 1.0, &grid, 200_000, 7)?;
    println!("{:>6} {:>10} {:>16} {:>7} {:>12}", "n", "predicted", "mc_max", "ratio", "saturated");
    for r in &report.rows {
        println!(
            "{:>6} {:>10.4} {:>9.4}+-{:.4} {:>7.3} {:>12.3e}",
            r.n,
            r.predicted_max,
            r.mc_max,
            r.mc_max_se,
            r.mc_max / r.predicted_max,
            r.saturated_term
        );
    }
    println!();
    println!("with beta = 0.01 the same margins stay far from saturation:");
    for (n, v) in beta_saturation_curve(0.01, 1.0, &grid)? {
        println!("{n:>6} {v:>12.6}");
    }
    report.write_csv(std::io::stdout().lock())?;
    Ok(())
}
