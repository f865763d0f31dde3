//! The three-task synthetic benchmark.
//!
//! Three domain shifts of increasing flavor stand in for large transfer
//! tasks: rotated two moons, translated-and-scaled blobs with 12 classes,
//! and rescaled concentric rings. All tasks share one desk-scale model and
//! training recipe so ablation comparisons only vary the loss setup.
//!
//! [`run_task`] executes one complete two-phase run in memory and returns
//! the final state together with the datasets, so downstream checks
//! (accuracy ordering, oscillation suites, σ trajectories, correlation
//! reports) can reuse a single training run.

use crate::data::{DomainDataset, DomainTransform};
use crate::error::Result;
use crate::experiment::{DatasetConfig, DatasetKind, ExperimentConfig, ModelSection};
use crate::losses::{instance_loss, kappa, Ablation, LossGates};
use crate::model::{forward_cvp_taped, register_params, ModelConfig};
use crate::rng::{stream_rng, Stream};
use crate::sampler::NoiseSource;
use crate::trainer::{accuracy, adapt, pretrain, TrainConfig, TrainState};
use crate::autodiff::Tape;

/// Benchmark tasks, in increasing class-count order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Two moons, target rotated by 30°.
    MoonsRot30,
    /// Twelve blobs on a circle, target translated and scaled.
    Blobs12,
    /// Three concentric rings, target radially scaled.
    Rings,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::MoonsRot30, Task::Blobs12, Task::Rings];

    pub fn name(self) -> &'static str {
        match self {
            Task::MoonsRot30 => "moons-rot30",
            Task::Blobs12 => "blobs-12",
            Task::Rings => "rings",
        }
    }

    pub fn dataset_config(self) -> DatasetConfig {
        match self {
            Task::MoonsRot30 => DatasetConfig {
                kind: DatasetKind::TwoMoons,
                samples_per_class: 250,
                noise_std: 0.1,
                transform: DomainTransform {
                    rotation_deg: 30.0,
                    ..DomainTransform::identity()
                },
                ..DatasetConfig::default()
            },
            Task::Blobs12 => DatasetConfig {
                kind: DatasetKind::Blobs,
                classes: 12,
                samples_per_class: 40,
                noise_std: 0.4,
                transform: DomainTransform {
                    rotation_deg: 12.0,
                    translation: [0.5, 0.3],
                    scale: [1.1, 1.0],
                },
                ..DatasetConfig::default()
            },
            Task::Rings => DatasetConfig {
                kind: DatasetKind::Rings,
                classes: 3,
                samples_per_class: 150,
                noise_std: 0.1,
                transform: DomainTransform {
                    rotation_deg: 0.0,
                    translation: [0.0, 0.0],
                    scale: [1.25, 1.25],
                },
                ..DatasetConfig::default()
            },
        }
    }
}

/// Shared desk-scale recipe: one model, one optimizer schedule; only the
/// ablation (and seed) vary across benchmark runs.
pub fn bench_config(task: Task, ablation: Ablation, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        out_dir: std::path::PathBuf::from(format!("runs/{}-{}-{}", task.name(), ablation, seed)),
        dataset: task.dataset_config(),
        model: ModelSection {
            feature_dim: 16,
            extractor_hidden: vec![64, 64],
            classifier_hidden: 32,
            ..ModelSection::default()
        },
        train: TrainConfig {
            alpha: 0.5,
            m_samples: 64,
            batch_size: 32,
            pretrain_cycles: 10,
            adapt_cycles: 40,
            steps_per_cycle: 50,
            base_lr: 5e-3,
            ablation,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

/// A finished in-memory benchmark run.
#[derive(Debug)]
pub struct BenchRun {
    pub task: Task,
    pub ablation: Ablation,
    pub seed: u64,
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub state: TrainState,
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub src_acc: f64,
    pub tgt_acc: f64,
}

/// Train one benchmark task end to end (no file output).
pub fn run_task(task: Task, ablation: Ablation, seed: u64) -> Result<BenchRun> {
    let cfg = bench_config(task, ablation, seed);
    let resolved = cfg.resolve()?;
    let (source, target) = cfg.dataset.load(seed)?;

    let mut state = TrainState::new(&resolved.model, &resolved.train)?;
    pretrain(&mut state, &source, &resolved.model, &resolved.train)?;
    adapt(&mut state, &source, &target, &resolved.model, &resolved.train)?;

    let src_acc = accuracy(&state.params, &source)?.unwrap_or(0.0);
    let tgt_acc = accuracy(&state.params, &target)?.unwrap_or(0.0);
    Ok(BenchRun {
        task,
        ablation,
        seed,
        model_cfg: resolved.model,
        train_cfg: resolved.train,
        state,
        source,
        target,
        src_acc,
        tgt_acc,
    })
}

/// Source-only accuracy baseline: pretraining only, then evaluate both
/// domains.
pub fn run_source_only(task: Task, seed: u64) -> Result<(f64, f64)> {
    let mut cfg = bench_config(task, Ablation::Basic, seed);
    cfg.train.adapt_cycles = 0;
    let resolved = cfg.resolve()?;
    let (source, target) = cfg.dataset.load(seed)?;
    let mut state = TrainState::new(&resolved.model, &resolved.train)?;
    pretrain(&mut state, &source, &resolved.model, &resolved.train)?;
    Ok((
        accuracy(&state.params, &source)?.unwrap_or(0.0),
        accuracy(&state.params, &target)?.unwrap_or(0.0),
    ))
}

/// σ-collapse probe: source-only two-moons training for `steps` steps with
/// explicit loss gates, recording the batch-median σ after every step.
/// With the antagonistic term off, the samples loss alone shrinks σ toward
/// zero; with it on, σ is held up once classification stabilizes.
pub fn sigma_collapse_probe(gates: LossGates, seed: u64, steps: usize) -> Result<Vec<f64>> {
    let cfg = bench_config(Task::MoonsRot30, Ablation::Full, seed);
    let resolved = cfg.resolve()?;
    let model_cfg = &resolved.model;
    let train_cfg = &resolved.train;
    let (source, _) = cfg.dataset.load(seed)?;
    let kappa = kappa(model_cfg.n_classes)?;

    let mut state = TrainState::new(model_cfg, train_cfg)?;
    let mut medians = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut rng = stream_rng(train_cfg.seed, Stream::Batch, &[0, step as u64]);
        let items = crate::data::source_batch(&source, train_cfg.batch_size, &mut rng)?;

        let mut tape = Tape::new();
        let nodes = register_params(&mut tape, &state.params)?;
        let mut totals = Vec::with_capacity(items.len());
        let mut sigmas = Vec::with_capacity(items.len());
        let weight = 1.0 / items.len() as f64;
        for item in &items {
            let mut noise =
                NoiseSource::for_context(train_cfg.seed, 0, step as u64, item.id as u64);
            let fwd = forward_cvp_taped(
                &mut tape,
                &nodes,
                &item.features,
                train_cfg.m_samples,
                &mut noise,
                model_cfg.sigma_floor,
            )?;
            sigmas.push(tape.scalar(fwd.sigma));
            let loss = instance_loss(&mut tape, &fwd, item.label, train_cfg.alpha, kappa, gates)?;
            totals.push((weight, loss.total));
        }
        let root = tape.weighted_sum(&totals)?;
        tape.backward(root)?;
        let grads: Vec<Vec<f64>> = nodes.ids().iter().map(|&id| tape.grad(id)).collect();
        let lr = crate::trainer::lr_at(state.global_step, train_cfg);
        let mut tensors = state.params.tensors_mut();
        state.opt.step(&mut tensors, &grads, lr)?;
        state.global_step += 1;

        sigmas.sort_by(|a, b| a.partial_cmp(b).expect("sigma is finite"));
        let n = sigmas.len();
        medians.push(if n % 2 == 1 {
            sigmas[n / 2]
        } else {
            0.5 * (sigmas[n / 2 - 1] + sigmas[n / 2])
        });
    }
    Ok(medians)
}
