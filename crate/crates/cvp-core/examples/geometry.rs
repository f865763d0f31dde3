//! Geometry probe: after a benchmark run, how large is σ relative to the
//! feature cloud, and where do the oscillation flips happen?
//! cargo run -p cvp-core --example geometry <task> <lr> <alpha> <adapt_cycles>

use cvp_core::analysis::oscillation;
use cvp_core::bench::{bench_config, Task};
use cvp_core::losses::Ablation;
use cvp_core::model::{extract_features, predict_sigma};
use cvp_core::trainer::{accuracy, adapt, pretrain, TrainState};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let task = match args.get(1).map(|s| s.as_str()) {
        Some("blobs") => Task::Blobs12,
        Some("rings") => Task::Rings,
        _ => Task::MoonsRot30,
    };
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.001);
    let alpha: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let ac: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(60);
    let cls_hidden: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(32);
    let width: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(64);
    let noise: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let seed: u64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0);

    for ablation in [Ablation::Basic, Ablation::Full] {
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

        // features + sigmas of 5 instances per class (seeded selection = 0..)
        let mut feats: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut count = vec![0usize; target.n_classes()];
        for (i, inst) in target.instances().iter().enumerate() {
            let c = target.eval_label(i).unwrap();
            if count[c] < 5 {
                count[c] += 1;
                feats.push((c, extract_features(&state.params, &inst.features).unwrap()));
            }
        }
        let sigmas: Vec<f64> = feats
            .iter()
            .map(|(_, f)| predict_sigma(&state.params, f, resolved.model.sigma_floor).unwrap())
            .collect();
        let mean_sigma = sigmas.iter().sum::<f64>() / sigmas.len() as f64;

        let mut dists = Vec::new();
        let mut same_osc = 0.0;
        let mut cross_osc = 0.0;
        let mut multi_cross = 0;
        for i in 0..feats.len() {
            for j in (i + 1)..feats.len() {
                let d: f64 = feats[i]
                    .1
                    .iter()
                    .zip(&feats[j].1)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                dists.push(d);
                let o = oscillation(&state.params, &feats[i].1, &feats[j].1, 1000).unwrap();
                if feats[i].0 == feats[j].0 {
                    same_osc += o;
                } else {
                    cross_osc += o;
                }
                if o > 1.5 / 1000.0 {
                    multi_cross += 1;
                }
            }
        }
        let mean_dist = dists.iter().sum::<f64>() / dists.len() as f64;
        println!(
            "{} {:<6} tgt_acc {:.3} | mean_sigma {:.3} mean_pair_dist {:.2} ratio {:.1} | osc same {:.4} cross {:.4} multi-cross pairs {}",
            task.name(),
            ablation.name(),
            accuracy(&state.params, &target).unwrap().unwrap(),
            mean_sigma,
            mean_dist,
            mean_dist / mean_sigma,
            same_osc,
            cross_osc,
            multi_cross
        );
    }
}
