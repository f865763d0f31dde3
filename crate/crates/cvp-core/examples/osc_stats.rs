//! Oscillation statistics probe: 5-seed basic-vs-full suite values at
//! several per-class sample counts, with pooled standard deviations.
//! cargo run -p cvp-core --example osc_stats <task> <lr> <alpha> <noise> <ac> <cls_hidden> <width>

use cvp_core::analysis::oscillation_suite;
use cvp_core::bench::{bench_config, Task};
use cvp_core::losses::Ablation;
use cvp_core::trainer::{accuracy, adapt, pretrain, TrainState};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let task = match args.get(1).map(|s| s.as_str()) {
        Some("blobs") => Task::Blobs12,
        Some("rings") => Task::Rings,
        _ => Task::MoonsRot30,
    };
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.003);
    let alpha: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let noise: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let ac: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(40);
    let cls_hidden: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(128);
    let width: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(128);

    let per_classes = [5usize, 10, 20];
    let mut accs = std::collections::BTreeMap::<&str, Vec<f64>>::new();
    let mut oscs = std::collections::BTreeMap::<(&str, usize), Vec<f64>>::new();

    for ablation in [Ablation::Basic, Ablation::Full] {
        for seed in 0..5u64 {
            let mut cfg = bench_config(task, ablation, seed);
            cfg.train.base_lr = lr;
            cfg.train.alpha = alpha;
            cfg.train.adapt_cycles = ac;
            cfg.train.m_samples = 32;
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
            accs.entry(ablation.name())
                .or_default()
                .push(accuracy(&state.params, &target).unwrap().unwrap());
            for &pc in &per_classes {
                let o = oscillation_suite(&state.params, &target, pc, 1000, seed).unwrap();
                oscs.entry((ablation.name(), pc)).or_default().push(o);
            }
        }
    }

    println!(
        "{} lr={lr} alpha={alpha} noise={noise} ac={ac} cls={cls_hidden} w={width}",
        task.name()
    );
    for name in ["basic", "full"] {
        println!("  {:<6} acc {:.3} {:?}", name, mean(&accs[name]), accs[name]);
    }
    for &pc in &per_classes {
        let b = &oscs[&("basic", pc)];
        let f = &oscs[&("full", pc)];
        let pooled = ((var(b) + var(f)) / 2.0).sqrt();
        println!(
            "  pc={pc:<2} basic {:.4}±{:.4}  full {:.4}±{:.4}  gap {:+.4}  pooled_std {:.4}  gap/pooled {:+.2}",
            mean(b),
            var(b).sqrt(),
            mean(f),
            var(f).sqrt(),
            mean(b) - mean(f),
            pooled,
            (mean(b) - mean(f)) / pooled
        );
    }
}
