//! Hyperparameter grid probe for the benchmark recipe.
//! cargo run -p cvp-core --example grid <task> <seeds> <lr,...> <alpha,...> <m,...> <noise,...> <adapt_cycles>

use cvp_core::bench::{bench_config, Task};
use cvp_core::losses::Ablation;
use cvp_core::trainer::{accuracy, adapt, pretrain, TrainState};
use cvp_core::analysis::oscillation_suite;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn run_with(
    task: Task,
    ablation: Ablation,
    seed: u64,
    lr: f64,
    alpha: f64,
    m: usize,
    noise: f64,
    adapt_cycles: usize,
    cls_hidden: usize,
    width: usize,
    pretrain_cycles: usize,
) -> (f64, f64) {
    let mut cfg = bench_config(task, ablation, seed);
    cfg.train.base_lr = lr;
    cfg.train.alpha = alpha;
    cfg.train.m_samples = m;
    cfg.train.adapt_cycles = adapt_cycles;
    cfg.train.pretrain_cycles = pretrain_cycles;
    cfg.model.classifier_hidden = cls_hidden;
    cfg.model.extractor_hidden = vec![width, width];
    if noise > 0.0 {
        cfg.dataset.noise_std = noise;
    }
    let resolved = cfg.resolve().unwrap();
    let (source, target) = cfg.dataset.load(seed).unwrap();
    let mut state = TrainState::new(&resolved.model, &resolved.train).unwrap();
    pretrain(&mut state, &source, &resolved.model, &resolved.train).unwrap();
    adapt(&mut state, &source, &target, &resolved.model, &resolved.train).unwrap();
    let acc = accuracy(&state.params, &target).unwrap().unwrap();
    let osc = oscillation_suite(&state.params, &target, 5, 1000, seed).unwrap();
    (acc, osc)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let task = match args.get(1).map(|s| s.as_str()) {
        Some("blobs") => Task::Blobs12,
        Some("rings") => Task::Rings,
        _ => Task::MoonsRot30,
    };
    let n_seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let parse_list = |i: usize, def: &str| -> Vec<f64> {
        args.get(i)
            .map(|s| s.as_str())
            .unwrap_or(def)
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect()
    };
    let lrs = parse_list(3, "0.001,0.002,0.005");
    let alphas = parse_list(4, "0.5");
    let ms = parse_list(5, "32");
    let noises = parse_list(6, "0");
    let adapt_cycles: usize =
        args.get(7).and_then(|s| s.parse().ok()).unwrap_or(40);
    let cls_hidden: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(32);
    let width: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(64);
    let pretrain_cycles: usize = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(10);

    for &noise in &noises {
        for &lr in &lrs {
            for &alpha in &alphas {
                for &mf in &ms {
                    let m = mf as usize;
                    let mut rows = Vec::new();
                    for ablation in [Ablation::Basic, Ablation::NoSamplesCe, Ablation::Full] {
                        let mut accs = Vec::new();
                        let mut oscs = Vec::new();
                        for seed in 0..n_seeds {
                            let (a, o) =
                                run_with(task, ablation, seed, lr, alpha, m, noise, adapt_cycles, cls_hidden, width, pretrain_cycles);
                            accs.push(a);
                            oscs.push(o);
                        }
                        rows.push((ablation.name(), mean(&accs), mean(&oscs), accs.clone(), oscs));
                    }
                    println!("{} lr={lr} alpha={alpha} M={m} noise={noise} ac={adapt_cycles}", task.name());
                    for (name, acc, osc, accs, oscs) in &rows {
                        println!(
                            "  {:<14} acc {:.3} osc {:>7.2}  {:?} {:?}",
                            name,
                            acc,
                            osc,
                            accs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                            oscs.iter().map(|o| (o * 100.0).round() / 100.0).collect::<Vec<_>>()
                        );
                    }
                }
            }
        }
    }
}
