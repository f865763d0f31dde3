//! Benchmark calibration sweep: prints per-task ablation accuracies,
//! σ-collapse traces, trajectory annotations and correlation summaries so
//! the benchmark constants can be sanity-checked end to end.
//!
//! Run with: cargo run -p cvp-core --example calibrate [n_seeds]

use std::time::Instant;

use cvp_core::analysis::{correlate, oscillation_suite, sigma_trajectory};
use cvp_core::bench::{run_source_only, run_task, sigma_collapse_probe, Task};
use cvp_core::losses::{Ablation, LossGates};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn main() {
    let n_seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let seeds: Vec<u64> = (0..n_seeds).collect();

    println!("== source-only baselines ==");
    for task in Task::ALL {
        let t0 = Instant::now();
        let (mut src, mut tgt) = (vec![], vec![]);
        for &s in &seeds {
            let (sa, ta) = run_source_only(task, s).unwrap();
            src.push(sa);
            tgt.push(ta);
        }
        println!(
            "{:<11} src {:.3}±{:.3}  tgt {:.3}±{:.3}  gap {:+.3}  [{:.1?}]",
            task.name(),
            mean(&src),
            std(&src),
            mean(&tgt),
            std(&tgt),
            mean(&tgt) - mean(&src),
            t0.elapsed() / seeds.len() as u32
        );
    }

    println!("\n== sigma collapse probe (500 steps) ==");
    for (label, gates) in [
        ("no-ant", LossGates { samples_ce: true, ant: false }),
        ("full", LossGates { samples_ce: true, ant: true }),
    ] {
        for &s in &seeds {
            let t0 = Instant::now();
            let medians = sigma_collapse_probe(gates, s, 500).unwrap();
            let min = medians.iter().cloned().fold(f64::INFINITY, f64::min);
            let last = *medians.last().unwrap();
            println!(
                "{label:<7} seed {s}: min {:.4}  final {:.4}  at100 {:.4}  at250 {:.4}  [{:.1?}]",
                min,
                last,
                medians[99],
                medians[249],
                t0.elapsed()
            );
        }
    }

    println!("\n== ablation accuracy / oscillation / trajectory / correlation ==");
    for task in Task::ALL {
        let mut acc = std::collections::BTreeMap::<&str, Vec<f64>>::new();
        let mut osc = std::collections::BTreeMap::<&str, Vec<f64>>::new();
        for ablation in [Ablation::Basic, Ablation::NoSamplesCe, Ablation::Full] {
            for &s in &seeds {
                let t0 = Instant::now();
                let run = run_task(task, ablation, s).unwrap();
                acc.entry(ablation.name()).or_default().push(run.tgt_acc);
                let o = oscillation_suite(&run.state.params, &run.target, 5, 1000, s).unwrap();
                osc.entry(ablation.name()).or_default().push(o);

                if ablation == Ablation::Full {
                    let traj =
                        sigma_trajectory(&run.state.history, run.train_cfg.pretrain_cycles)
                            .unwrap();
                    let pre_final_src =
                        run.state.history[run.train_cfg.pretrain_cycles - 1].sigma_src_median;
                    let first_adapt_tgt = run.state.history[run.train_cfg.pretrain_cycles]
                        .sigma_tgt_median
                        .unwrap();
                    let rep = correlate(&run.state.params, &run.model_cfg, &run.target, 20, s)
                        .unwrap();
                    println!(
                        "  {} full seed {s}: tgt {:.3} osc {:.1} | pre_src_sigma {:.3} first_tgt {:.3} min@{:?} | r: L {:?} GT {:?} gap {:?} mcd_mu {:?} -mcd_sd {:?} [{:.1?}]",
                        task.name(),
                        run.tgt_acc,
                        o,
                        pre_final_src,
                        first_adapt_tgt,
                        traj.min_tgt_cycle,
                        rep.r_max_logit.value().map(|v| (v * 100.0).round() / 100.0),
                        rep.r_gt_logit.value().map(|v| (v * 100.0).round() / 100.0),
                        rep.r_logit_gap.value().map(|v| (v * 100.0).round() / 100.0),
                        rep.r_mcd_mean.value().map(|v| (v * 100.0).round() / 100.0),
                        rep.r_neg_mcd_std.value().map(|v| (v * 100.0).round() / 100.0),
                        t0.elapsed()
                    );
                }
            }
        }
        for name in ["basic", "no-samples-ce", "full"] {
            println!(
                "{:<11} {:<14} acc {:.3}±{:.3}  osc {:.1}±{:.1}",
                task.name(),
                name,
                mean(&acc[name]),
                std(&acc[name]),
                mean(&osc[name]),
                std(&osc[name]),
            );
        }
    }
}
