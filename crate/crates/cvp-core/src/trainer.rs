//! Two-phase training: source-only pretraining, then cycle-based adaptation.
//!
//! Pretraining runs on labeled source batches and initializes the σ head and
//! classifier well enough to act as a pseudo-labeler. Each adaptation cycle
//! then regenerates pseudo-labels for every target instance with the
//! *current* weights (argmax over plain forward logits, no sampling) and
//! runs `T_cycle` optimization steps on mixed half-source/half-target
//! batches. Only one set of weights ever exists; there is no frozen teacher
//! copy.
//!
//! All randomness (batch composition, sampling noise) is derived from
//! `(seed, cycle, step, instance)`, so a run resumed from a cycle-boundary
//! checkpoint continues bit-identically to the uninterrupted run.
//!
//! Target ground truth never enters a gradient: batches carry pseudo-labels
//! for target instances, and the held-back evaluation labels are read only
//! when computing the `tgt_acc` metric column.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{mixed_batch, source_batch, BatchItem, DomainDataset};
use crate::error::{CvpError, Result};
use crate::losses::{instance_loss, kappa, Ablation, LossBundle};
use crate::model::{
    extract_features, forward_cvp_taped, init_model, predict_class, predict_sigma,
    register_params, ModelConfig, ModelParams,
};
use crate::optim::SgdNesterov;
use crate::rng::{stream_rng, Stream};
use crate::sampler::NoiseSource;
use crate::autodiff::Tape;

/// Hyperparameters of the two-phase loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the samples cross-entropy in the total.
    pub alpha: f64,
    /// Samples drawn per instance (M).
    pub m_samples: usize,
    /// Batch size (must be even for mixed batches).
    pub batch_size: usize,
    pub pretrain_cycles: usize,
    pub adapt_cycles: usize,
    /// Optimization steps per cycle (T_cycle).
    pub steps_per_cycle: usize,
    pub base_lr: f64,
    pub momentum: f64,
    /// Inverse-decay schedule shape: lr(p) = base_lr·(1 + γ·p)^(−β).
    pub lr_gamma: f64,
    pub lr_beta: f64,
    pub seed: u64,
    /// Write a checkpoint every this many cycles (0 = only when asked).
    pub checkpoint_every: usize,
    /// Which loss terms are active.
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            m_samples: 64,
            batch_size: 32,
            pretrain_cycles: 50,
            adapt_cycles: 250,
            steps_per_cycle: 50,
            base_lr: 5e-4,
            momentum: 0.95,
            lr_gamma: 10.0,
            lr_beta: 0.75,
            seed: 0,
            checkpoint_every: 0,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CvpError::config("batch_size must be >= 1"));
        }
        if self.adapt_cycles > 0 && self.batch_size % 2 != 0 {
            return Err(CvpError::config("batch_size must be even for mixed batches"));
        }
        if self.steps_per_cycle == 0 {
            return Err(CvpError::config("steps_per_cycle must be >= 1"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(CvpError::config("alpha must be finite and >= 0"));
        }
        if self.ablation.gates().needs_samples() && self.m_samples == 0 {
            return Err(CvpError::config("m_samples must be >= 1 for this ablation"));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(CvpError::config("base_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CvpError::config("momentum must be in [0, 1)"));
        }
        if self.lr_gamma < 0.0 || self.lr_beta < 0.0 {
            return Err(CvpError::config("lr schedule parameters must be >= 0"));
        }
        Ok(())
    }

    pub fn total_cycles(&self) -> usize {
        self.pretrain_cycles + self.adapt_cycles
    }

    pub fn total_steps(&self) -> u64 {
        (self.total_cycles() * self.steps_per_cycle) as u64
    }
}

/// Inverse-decay learning rate at a global step.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let total = cfg.total_steps();
    let p = if total == 0 { 0.0 } else { step as f64 / total as f64 };
    cfg.base_lr * (1.0 + cfg.lr_gamma * p).powf(-cfg.lr_beta)
}

/// Per-cycle scalars, one row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub cycle: usize,
    /// Global step count at the end of the cycle.
    pub step: u64,
    pub l_ce_mu: f64,
    pub l_ce_phi: f64,
    pub l_ant: f64,
    pub total: f64,
    pub sigma_src_median: f64,
    /// Absent during pretraining (target data is untouched in phase one).
    pub sigma_tgt_median: Option<f64>,
    pub src_acc: f64,
    /// Absent when the target set has no held-back evaluation labels.
    pub tgt_acc: Option<f64>,
    pub lr: f64,
}

/// Mutable training state: the single set of weights plus bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub opt: SgdNesterov,
    /// Next cycle to run (0-based, counts pretraining and adaptation).
    pub cycle: usize,
    pub global_step: u64,
    /// Current pseudo-label per target id; regenerated at each adaptation
    /// cycle start, complete over the target set.
    pub pseudo_labels: BTreeMap<usize, usize>,
    pub history: Vec<MetricsRecord>,
}

impl TrainState {
    pub fn new(model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<Self> {
        train_cfg.validate()?;
        let params = init_model(model_cfg)?;
        let opt = SgdNesterov::new(train_cfg.momentum, &params.tensor_lens())?;
        Ok(TrainState {
            params,
            opt,
            cycle: 0,
            global_step: 0,
            pseudo_labels: BTreeMap::new(),
            history: Vec::new(),
        })
    }
}

/// argmax ∘ classifier ∘ extractor over every target instance; complete and
/// deterministic for fixed weights.
pub fn pseudo_label(
    params: &ModelParams,
    target: &DomainDataset,
) -> Result<BTreeMap<usize, usize>> {
    target
        .instances()
        .iter()
        .map(|inst| Ok((inst.id, predict_class(params, &inst.features)?)))
        .collect()
}

/// Fraction of correct argmax predictions, judged on evaluation labels.
/// `None` when any instance lacks one.
pub fn accuracy(params: &ModelParams, dataset: &DomainDataset) -> Result<Option<f64>> {
    if !dataset.fully_evaluable() || dataset.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for (i, inst) in dataset.instances().iter().enumerate() {
        let pred = predict_class(params, &inst.features)?;
        if Some(pred) == dataset.eval_label(i) {
            correct += 1;
        }
    }
    Ok(Some(correct as f64 / dataset.len() as f64))
}

/// Median σ over a whole dataset (even count: mean of the middle two).
pub fn median_sigma(
    params: &ModelParams,
    dataset: &DomainDataset,
    sigma_floor: f64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(CvpError::data("median sigma of an empty dataset"));
    }
    let mut sigmas = Vec::with_capacity(dataset.len());
    for inst in dataset.instances() {
        let mu = extract_features(params, &inst.features)?;
        sigmas.push(predict_sigma(params, &mu, sigma_floor)?);
    }
    sigmas.sort_by(|a, b| a.partial_cmp(b).expect("sigma is finite"));
    let n = sigmas.len();
    Ok(if n % 2 == 1 { sigmas[n / 2] } else { 0.5 * (sigmas[n / 2 - 1] + sigmas[n / 2]) })
}

fn train_step(
    state: &mut TrainState,
    items: &[BatchItem],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    cycle: usize,
    step_in_cycle: usize,
) -> Result<LossBundle> {
    let gates = cfg.ablation.gates();
    let kappa = kappa(model_cfg.n_classes)?;
    let m = if gates.needs_samples() { cfg.m_samples } else { 0 };

    let mut tape = Tape::new();
    let nodes = register_params(&mut tape, &state.params)?;
    let mut totals = Vec::with_capacity(items.len());
    let mut sums = LossBundle::default();
    let weight = 1.0 / items.len() as f64;

    let annotate = |e: CvpError| match e {
        CvpError::NonFinite(msg) => CvpError::non_finite(format!(
            "cycle {cycle}, step {step_in_cycle}: {msg}"
        )),
        other => other,
    };

    for item in items {
        let mut noise =
            NoiseSource::for_context(cfg.seed, cycle as u64, state.global_step, item.id as u64);
        let fwd = forward_cvp_taped(
            &mut tape,
            &nodes,
            &item.features,
            m,
            &mut noise,
            model_cfg.sigma_floor,
        )
        .map_err(annotate)?;
        let loss =
            instance_loss(&mut tape, &fwd, item.label, cfg.alpha, kappa, gates).map_err(annotate)?;
        totals.push((weight, loss.total));
        sums.add(&loss.bundle);
    }

    let root = tape.weighted_sum(&totals).map_err(annotate)?;
    tape.backward(root).map_err(annotate)?;

    let grads: Vec<Vec<f64>> = nodes.ids().iter().map(|&id| tape.grad(id)).collect();
    let lr = lr_at(state.global_step, cfg);
    let mut tensors = state.params.tensors_mut();
    state.opt.step(&mut tensors, &grads, lr)?;

    sums.scale(weight);
    Ok(sums)
}

/// Run one full cycle (pseudo-label regeneration if in the adaptation
/// phase, then `T_cycle` steps, then the metrics row).
///
/// `target` may be `None` only while every remaining cycle is pretraining.
pub fn advance_cycle(
    state: &mut TrainState,
    source: &DomainDataset,
    target: Option<&DomainDataset>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<()> {
    let cycle = state.cycle;
    if cycle >= cfg.total_cycles() {
        return Err(CvpError::config(format!(
            "cycle {cycle} is past the configured {} cycles",
            cfg.total_cycles()
        )));
    }
    if source.is_empty() {
        return Err(CvpError::data("cannot train on an empty source set"));
    }
    let is_adapt = cycle >= cfg.pretrain_cycles;
    let target = match (is_adapt, target) {
        (true, None) => {
            return Err(CvpError::config("adaptation cycle needs a target dataset"))
        }
        (_, t) => t,
    };

    if is_adapt {
        // Always with the current weights, exactly once per cycle.
        state.pseudo_labels = pseudo_label(&state.params, target.unwrap())?;
    }

    let mut sums = LossBundle::default();
    for s in 0..cfg.steps_per_cycle {
        let mut rng = stream_rng(cfg.seed, Stream::Batch, &[cycle as u64, s as u64]);
        let items = if is_adapt {
            mixed_batch(
                source,
                target.unwrap(),
                &state.pseudo_labels,
                cfg.batch_size,
                &mut rng,
            )?
        } else {
            source_batch(source, cfg.batch_size.min(source.len()), &mut rng)?
        };
        let bundle = train_step(state, &items, model_cfg, cfg, cycle, s)?;
        sums.add(&bundle);
        state.global_step += 1;
    }
    sums.scale(1.0 / cfg.steps_per_cycle as f64);

    let sigma_src = median_sigma(&state.params, source, model_cfg.sigma_floor)?;
    let (sigma_tgt, tgt_acc) = match (is_adapt, target) {
        (true, Some(t)) => (
            Some(median_sigma(&state.params, t, model_cfg.sigma_floor)?),
            accuracy(&state.params, t)?,
        ),
        _ => (None, None),
    };
    let src_acc = accuracy(&state.params, source)?.unwrap_or(0.0);

    state.history.push(MetricsRecord {
        cycle,
        step: state.global_step,
        l_ce_mu: sums.l_ce_mu,
        l_ce_phi: sums.l_ce_phi,
        l_ant: sums.l_ant,
        total: sums.total,
        sigma_src_median: sigma_src,
        sigma_tgt_median: sigma_tgt,
        src_acc,
        tgt_acc,
        lr: lr_at(state.global_step.saturating_sub(1), cfg),
    });
    state.cycle += 1;
    Ok(())
}

/// Source-only phase: runs every remaining pretraining cycle.
pub fn pretrain(
    state: &mut TrainState,
    source: &DomainDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<()> {
    while state.cycle < cfg.pretrain_cycles {
        advance_cycle(state, source, None, model_cfg, cfg)?;
    }
    Ok(())
}

/// Adaptation phase: runs every remaining cycle after pretraining.
pub fn adapt(
    state: &mut TrainState,
    source: &DomainDataset,
    target: &DomainDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<()> {
    if state.cycle < cfg.pretrain_cycles {
        return Err(CvpError::config("adapt called before pretraining finished"));
    }
    while state.cycle < cfg.total_cycles() {
        advance_cycle(state, source, Some(target), model_cfg, cfg)?;
    }
    Ok(())
}

// ── metrics CSV ──────────────────────────────────────────────────────────

pub const METRICS_HEADER: &str =
    "cycle,step,l_ce_mu,l_ce_phi,l_ant,total,sigma_src_median,sigma_tgt_median,src_acc,tgt_acc,lr";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

/// Write the per-cycle log. Floats use shortest-round-trip formatting, so
/// identical histories produce byte-identical files.
pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.cycle,
            r.step,
            r.l_ce_mu,
            r.l_ce_phi,
            r.l_ant,
            r.total,
            r.sigma_src_median,
            fmt_opt(r.sigma_tgt_median),
            r.src_acc,
            fmt_opt(r.tgt_acc),
            r.lr
        )?;
    }
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(CvpError::data(format!(
                "bad metrics header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 11 {
            return Err(CvpError::data(format!(
                "metrics line {}: expected 11 columns, found {}",
                i + 2,
                cols.len()
            )));
        }
        let req = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| CvpError::data(format!("metrics line {}: bad number '{s}'", i + 2)))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() { Ok(None) } else { req(s).map(Some) }
        };
        out.push(MetricsRecord {
            cycle: cols[0]
                .parse()
                .map_err(|_| CvpError::data(format!("metrics line {}: bad cycle", i + 2)))?,
            step: cols[1]
                .parse()
                .map_err(|_| CvpError::data(format!("metrics line {}: bad step", i + 2)))?,
            l_ce_mu: req(cols[2])?,
            l_ce_phi: req(cols[3])?,
            l_ant: req(cols[4])?,
            total: req(cols[5])?,
            sigma_src_median: req(cols[6])?,
            sigma_tgt_median: opt(cols[7])?,
            src_acc: req(cols[8])?,
            tgt_acc: opt(cols[9])?,
            lr: req(cols[10])?,
        });
    }
    Ok(out)
}

// ── checkpoints ──────────────────────────────────────────────────────────

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container for an interrupted or finished run. JSON floats
/// are written in shortest-round-trip form, so 64-bit values survive the
/// round-trip bit-exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
    pub opt_steps: u64,
    pub cycle: usize,
    pub global_step: u64,
    pub history: Vec<MetricsRecord>,
}

pub fn save_checkpoint(
    path: &Path,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    state: &TrainState,
) -> Result<()> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model_cfg.clone(),
        train: train_cfg.clone(),
        params: state.params.tensors().iter().map(|t| t.to_vec()).collect(),
        velocity: state.opt.velocity().to_vec(),
        opt_steps: state.opt.steps(),
        cycle: state.cycle,
        global_step: state.global_step,
        history: state.history.clone(),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, &ckpt)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, TrainConfig, TrainState)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let ckpt: Checkpoint = serde_json::from_reader(file)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CvpError::data(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    ckpt.train.validate()?;
    let params = ModelParams::from_flat(&ckpt.model, &ckpt.params)?;
    let lens = params.tensor_lens();
    if ckpt.velocity.len() != lens.len()
        || ckpt.velocity.iter().zip(&lens).any(|(v, &l)| v.len() != l)
    {
        return Err(CvpError::shape("checkpoint velocity does not match model"));
    }
    let opt = SgdNesterov::from_parts(ckpt.train.momentum, ckpt.velocity, ckpt.opt_steps);
    let state = TrainState {
        params,
        opt,
        cycle: ckpt.cycle,
        global_step: ckpt.global_step,
        pseudo_labels: BTreeMap::new(),
        history: ckpt.history,
    };
    Ok((ckpt.model, ckpt.train, state))
}
