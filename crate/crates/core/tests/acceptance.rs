//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::f64::consts::LN_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{expected_max_quadrature, grad_instance, max_grad_error, nearest_scan, random_rewards};
use dpo_pairs::dpo::{pair_loss, DpoConfig, ReferencePolicy};
use dpo_pairs::evt::{mc_extremes, predicted_extremes, saturation_curve, top_k_mean_curve};
use dpo_pairs::harness::{run_overfit_probe, run_sweep, StrategyFamily, SweepConfig};
use dpo_pairs::pairs::{build_all_21, build_conventional, build_scalable, PairOutcome};
use dpo_pairs::stats::{compute_stats, select_anchor, select_anchor_set, Anchor};
use dpo_pairs::synth::{generate_corpus, GeneratorConfig};
use dpo_pairs::PromptGroup;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> Result<Duration, String> {
    let e = t.elapsed();
    check(e < limit, || format!("took {e:?}, limit {limit:?}"))?;
    Ok(e)
}

fn corpus(prompts: usize, samples: usize, seed: u64) -> Vec<PromptGroup> {
    generate_corpus(&GeneratorConfig {
        prompt_count: prompts,
        samples_per_prompt: samples,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn anchor_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = common::rng(1);
    let mut ties = 0;
    for case in 0..10_000 {
        let n = rng.random_range(2..=12);
        let g = PromptGroup::from_rewards(format!("p{case}"), &random_rewards(&mut rng, n));
        let mut samples = g.samples.clone();
        samples.shuffle(&mut rng);
        let stats = compute_stats(&samples).unwrap();
        let ids: Vec<usize> = samples.iter().map(|s| s.sample_id).collect();
        let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
        for anchor in Anchor::EXTENDED {
            let target = anchor.target(&stats);
            let want = ids[nearest_scan(&ids, &rewards, anchor, target)];
            let got = select_anchor(&samples, &stats, anchor).sample_id;
            check(got == want, || format!("case {case} {anchor}: got id {got}, scan {want}, rewards {rewards:?}"))?;
            let d = |r: f64| (r - target).abs();
            if matches!(anchor, Anchor::Sigma(_))
                && rewards.iter().filter(|&&r| d(r) == d(rewards[ids.iter().position(|&i| i == want).unwrap()])).count() > 1
            {
                ties += 1;
            }
        }
    }
    let e = within(t, Duration::from_secs(10))?;
    check(ties > 0, || "no tie cases were exercised".into())?;
    Ok(format!("10000 prompts x 11 anchors match the scan ({ties} ties) in {e:.2?}"))
}

fn twenty_one() -> Outcome {
    let mut groups = corpus(500, 50, 2);
    let mut rng = common::rng(2);
    for k in 0..500 {
        let n = rng.random_range(2..=12);
        groups.push(PromptGroup::from_rewards(format!("q{k}"), &random_rewards(&mut rng, n)));
    }
    let mut pairs = 0;
    for g in &groups {
        let all = build_all_21(&select_anchor_set(&g.samples, false).unwrap()).unwrap();
        check(all.len() == 21, || format!("{}: {} entries", g.prompt_id, all.len()))?;
        for outcome in all.values() {
            if let PairOutcome::Pair(p) = outcome {
                check(p.margin > 0.0 && p.validate().is_ok(), || format!("{}: bad pair {p:?}", g.prompt_id))?;
                pairs += 1;
            }
        }
    }
    for (k, v) in [0.0, -1.5, 7.25].iter().enumerate() {
        let flat = PromptGroup::from_rewards(format!("flat{k}"), &[*v; 9]);
        let all = build_all_21(&select_anchor_set(&flat.samples, false).unwrap()).unwrap();
        let drops = all.values().filter(|o| o.is_drop()).count();
        check(all.len() == 21 && drops == 21, || format!("sigma=0 prompt: {drops} drops of {}", all.len()))?;
    }
    Ok(format!("{} prompts x 21 entries, {pairs} valid pairs; sigma=0 prompts drop all 21", groups.len()))
}

fn scalable_prefix() -> Outcome {
    let groups = corpus(1000, 200, 3);
    let grid = [5, 10, 20, 50, 100, 200];
    for g in &groups {
        let mut last: Option<(f64, usize)> = None;
        for n in grid {
            let p = match build_scalable(&g.samples, n, 5).unwrap() {
                PairOutcome::Pair(p) => p,
                PairOutcome::Drop(r) => return Err(format!("{} n={n}: dropped ({r:?})", g.prompt_id)),
            };
            if let Some((c, r)) = last {
                check(p.chosen_reward >= c, || format!("{} n={n}: chosen fell {c} -> {}", g.prompt_id, p.chosen_reward))?;
                check(p.rejected_id == r, || format!("{} n={n}: rejected moved", g.prompt_id))?;
            }
            last = Some((p.chosen_reward, p.rejected_id));
        }
        let s = build_scalable(&g.samples, 5, 5).unwrap();
        let c = build_conventional(&g.samples, 5).unwrap();
        let (s, c) = (s.pair().unwrap(), c.pair().unwrap());
        check(
            (s.chosen_id, s.rejected_id, s.margin) == (c.chosen_id, c.rejected_id, c.margin),
            || format!("{}: scalable and conventional differ at n=5", g.prompt_id),
        )?;
    }
    Ok("1000 prompts: chosen nondecreasing, rejected fixed, identical to conventional at n=5".into())
}

fn gradient_check() -> Outcome {
    let mut rng = common::rng(4);
    let mut worst: f64 = 0.0;
    let mut init: f64 = 0.0;
    for _ in 0..100 {
        let inst = grad_instance(&mut rng);
        worst = worst.max(max_grad_error(&inst, 1e-5, 1e-5));
        let frozen = ReferencePolicy::freeze(&inst.policy);
        for p in &inst.batch {
            init = init.max((pair_loss(&inst.policy, &frozen, p, inst.beta).unwrap() - LN_2).abs());
        }
    }
    check(worst < 1e-5, || format!("worst relative error {worst:e}"))?;
    check(init <= 1e-12, || format!("initial loss off ln 2 by {init:e}"))?;
    Ok(format!("100 instances, worst relative error {worst:.2e}; |loss0 - ln 2| <= {init:.1e}"))
}

fn loss_ordering() -> Outcome {
    let t = Instant::now();
    let fam = |rejected| StrategyFamily::Anchor { chosen: Anchor::Max, rejected };
    let families = [fam(Anchor::Min), fam(Anchor::Sigma(-2)), fam(Anchor::Sigma(0)), fam(Anchor::Sigma(2))];
    let config = SweepConfig {
        n_grid: vec![200],
        strategies: families.to_vec(),
        generator: GeneratorConfig {
            prompt_count: 200,
            samples_per_prompt: 200,
            ..Default::default()
        },
        trainer: DpoConfig {
            steps: 500,
            ..Default::default()
        },
        replicate_seeds: vec![1, 2, 3, 4, 5],
    };
    let report = run_sweep(&config).unwrap();
    let medians: Vec<f64> = families
        .iter()
        .map(|f| report.median(&f.at(200).tag(), 200, |r| r.final_loss).unwrap())
        .collect();
    let shown = families
        .iter()
        .zip(&medians)
        .map(|(f, m)| format!("{}={m:.4}", f.at(200).tag().trim_start_matches("anchor:")))
        .collect::<Vec<_>>()
        .join(" <= ");
    check(medians.windows(2).all(|w| w[0] <= w[1]), || format!("order violated: {shown}"))?;
    for r in report.cells(&families[3].at(200).tag(), 200) {
        check(r.final_loss > 0.5 * r.initial_loss, || {
            format!("max/mu+2s seed {} fell to {:.4} of initial {:.4}", r.seed, r.final_loss, r.initial_loss)
        })?;
    }
    let e = within(t, Duration::from_secs(300))?;
    Ok(format!("median final loss {shown}; max/mu+2s stays above half its initial loss; {e:.2?}"))
}

fn evt_bracketing() -> Outcome {
    let t = Instant::now();
    let grid = [2_u64, 5, 20, 100, 1000, 10_000];
    let mut ratios = Vec::new();
    let mut notes = Vec::new();
    for (i, &n) in grid.iter().enumerate() {
        let mc = mc_extremes(0.0, 1.0, n, 1_000_000, 600 + i as u64).unwrap();
        let (predicted, _) = predicted_extremes(0.0, 1.0, n).unwrap();
        let oracle = match n {
            2 => Some(1.0 / std::f64::consts::PI.sqrt()),
            5 | 100 => Some(expected_max_quadrature(n)),
            _ => None,
        };
        if let Some(o) = oracle {
            check(mc.max.covers(o, 3.0), || format!("n={n}: mc {:.5} +- {:.5} misses {o:.5}", mc.max.mean, mc.max.se))?;
            notes.push(format!("n={n}: {:.4}+-{:.4} vs {o:.4}", mc.max.mean, mc.max.se));
        }
        check(predicted > mc.max.mean, || format!("n={n}: prediction {predicted} not above mc {}", mc.max.mean))?;
        ratios.push(mc.max.mean / predicted);
    }
    check(ratios.windows(2).all(|w| w[0] < w[1]), || format!("ratio not increasing: {ratios:?}"))?;
    let e = within(t, Duration::from_secs(60))?;
    let r: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    Ok(format!("{}; ratio {}; {e:.2?}", notes.join(", "), r.join(" < ")))
}

fn saturation() -> Outcome {
    let grid: Vec<u64> = (2..=1000).collect();
    let curve = saturation_curve(1.0, &grid).unwrap();
    check(curve.windows(2).all(|w| w[0].1 < w[1].1 && w[1].1 < 0.0), || "not strictly increasing toward 0".into())?;
    let at400 = curve.iter().find(|(n, _)| *n == 400).unwrap().1;
    // ln logistic(x) written out directly
    let x = 2.0 * (2.0 * (400.0_f64).ln()).sqrt();
    let oracle = -(1.0 + (-x).exp()).ln();
    check((at400 - oracle).abs() < 1e-15, || format!("n=400: {at400} vs oracle {oracle}"))?;
    check(at400.abs() < 1e-3, || format!("|value(400)| = {}", at400.abs()))?;
    Ok(format!("strictly increasing over n=2..1000; value(400) = {at400:.4e}"))
}

fn top_k() -> Outcome {
    let groups = corpus(1000, 400, 8);
    let curve = top_k_mean_curve(&groups, 3, &[5, 20, 100, 400]).unwrap();
    let v: Vec<f64> = curve.points.iter().map(|p| p.topk_mean).collect();
    check(v.windows(2).all(|w| w[0] < w[1]), || format!("not strictly increasing: {v:?}"))?;
    let s: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    Ok(format!("mean top-3 reward {} at n = 5, 20, 100, 400", s.join(" < ")))
}

fn overfit_probe() -> Outcome {
    let config = SweepConfig {
        n_grid: vec![5, 50, 400],
        strategies: vec![StrategyFamily::Conventional],
        generator: GeneratorConfig {
            prompt_count: 200,
            samples_per_prompt: 400,
            ..Default::default()
        },
        trainer: DpoConfig::default(),
        replicate_seeds: vec![1, 2, 3, 4, 5],
    };
    let report = run_overfit_probe(&config).unwrap();
    let losses: Vec<f64> = report.rows.iter().map(|r| r.median_final_loss).collect();
    check(losses.windows(2).all(|w| w[0] >= w[1]), || format!("median loss not nonincreasing: {losses:?}"))?;
    let gain = |n| {
        let r = report.row(n).unwrap();
        r.median_post_reward - r.median_pre_reward
    };
    let (g50, g400) = (gain(50), gain(400));
    Ok(format!(
        "median final loss {:.4} >= {:.4} >= {:.4}; expected-reward gain {g50:.4} (n=50) -> {g400:.4} (n=400), change {:+.4}",
        losses[0],
        losses[1],
        losses[2],
        g400 - g50
    ))
}

fn sweep_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.json"),
        r#"{
            "seed": 10,
            "generator": {"prompt_count": 40, "samples_per_prompt": 100},
            "trainer": {"steps": 60},
            "sweep": {"n_grid": [5, 20, 100], "strategies": ["conventional", "scalable", "anchor:mu+2s/mu-2s"], "replicate_seeds": [1, 2, 3]}
        }"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "3", "1"].iter().enumerate() {
        let out = format!("r{i}.csv");
        let status = Command::new(env!("CARGO_BIN_EXE_dpo-pairs"))
            .current_dir(d)
            .args(["--threads", threads, "sweep", "run.json", "--out", &out])
            .output()
            .unwrap();
        check(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        outputs.push(std::fs::read(d.join(&out)).unwrap());
    }
    check(outputs.iter().all(|o| o == &outputs[0]), || "CSV reports differ".into())?;
    let rows = outputs[0].iter().filter(|&&b| b == b'\n').count();
    Ok(format!("3 runs (threads 1, 3, 1) gave byte-identical CSV ({rows} lines)"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("anchor selection matches exhaustive scan", anchor_oracle),
        ("21 keyed pairs per prompt, valid margins, sigma=0 drops", twenty_one),
        ("scalable prefix property", scalable_prefix),
        ("DPO gradient check and ln 2 initial loss", gradient_check),
        ("loss ordering and max/mu+2s stagnation", loss_ordering),
        ("EVT bracketing and approach", evt_bracketing),
        ("saturation toward 0", saturation),
        ("top-3 reward growth", top_k),
        ("overfit probe", overfit_probe),
        ("sweep determinism across thread counts", sweep_determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS criterion {:>2} [{name}]: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2} [{name}]: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
