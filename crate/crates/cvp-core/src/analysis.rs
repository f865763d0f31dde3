//! Post-hoc evaluation of a trained model.
//!
//! Three families of diagnostics:
//!
//! - boundary smoothness: the oscillation-of-classification metric counts
//!   argmax flips along a K-step linear interpolation between two features;
//!   the suite sums it over all distinct pairs drawn per class,
//! - uncertainty correlation: Pearson r between σ and five classifier-space
//!   measures (max logit, ground-truth logit, top-two logit gap, and the
//!   Monte-Carlo-dropout predictive mean and std, the latter negated since
//!   a large spread means *less* certainty),
//! - σ trajectories: per-cycle medians from the metrics log, with the
//!   adaptation-start drop, the target-σ minimum and the recovery point
//!   annotated.
//!
//! Everything here reads immutable parameter snapshots through the plain
//! forward route; nothing touches a tape.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels;
use crate::data::DomainDataset;
use crate::error::{CvpError, Result};
use crate::model::{
    argmax, classifier_hidden, classify, extract_features, logits_from_hidden, predict_sigma,
    ModelConfig, ModelParams,
};
use crate::rng::{stream_rng, Stream};
use crate::trainer::MetricsRecord;

// ── boundary smoothness ──────────────────────────────────────────────────

/// The K points of a linear interpolation between two feature vectors,
/// including both endpoints.
pub fn interpolation_path(a: &[f64], b: &[f64], k: usize) -> Result<Vec<Vec<f64>>> {
    if k < 2 {
        return Err(CvpError::config("interpolation needs K >= 2"));
    }
    if a.len() != b.len() {
        return Err(CvpError::shape(format!(
            "interpolation endpoints have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok((0..k)
        .map(|step| {
            let t = step as f64 / (k - 1) as f64;
            a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect()
        })
        .collect())
}

/// Fraction of argmax changes along the interpolation between two features:
/// (1/K)·Σ_{k=1}^{K−1} 1[argmax f_Cl(μ_k) ≠ argmax f_Cl(μ_{k+1})].
/// Ranges over [0, (K−1)/K].
pub fn oscillation(params: &ModelParams, mu_i: &[f64], mu_j: &[f64], k: usize) -> Result<f64> {
    let path = interpolation_path(mu_i, mu_j, k)?;
    let mut changes = 0usize;
    let mut prev = argmax(&classify(params, &path[0])?);
    for point in &path[1..] {
        let cls = argmax(&classify(params, point)?);
        if cls != prev {
            changes += 1;
        }
        prev = cls;
    }
    Ok(changes as f64 / k as f64)
}

/// Pick `per_class` instances per class (seeded), uses evaluation labels.
fn select_per_class(
    dataset: &DomainDataset,
    per_class: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    use rand::seq::SliceRandom;
    let mut rng = stream_rng(seed, Stream::Select, &[per_class as u64]);
    let mut selected = Vec::new();
    for class in 0..dataset.n_classes() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.eval_label(i) == Some(class))
            .collect();
        if members.len() < per_class {
            return Err(CvpError::data(format!(
                "class {class} has {} labeled instances, need {per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for &i in members.iter().take(per_class) {
            selected.push(dataset.instances()[i].features.clone());
        }
    }
    Ok(selected)
}

/// Sum of the oscillation metric over all distinct unordered pairs of the
/// selected instances' features (`per_class` per class).
pub fn oscillation_suite(
    params: &ModelParams,
    dataset: &DomainDataset,
    per_class: usize,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let features: Vec<Vec<f64>> = select_per_class(dataset, per_class, seed)?
        .into_iter()
        .map(|x| extract_features(params, &x))
        .collect::<Result<_>>()?;
    let mut sum = 0.0;
    for i in 0..features.len() {
        for j in (i + 1)..features.len() {
            sum += oscillation(params, &features[i], &features[j], k)?;
        }
    }
    Ok(sum)
}

// ── Monte-Carlo dropout ──────────────────────────────────────────────────

/// T stochastic passes with independent dropout masks on the classifier
/// hidden activation. Returns the averaged probability at the averaged
/// prediction (`MCD_μ`) and the std of that probability across passes
/// (`MCD_σ`).
pub fn mcd_predict(
    params: &ModelParams,
    x: &[f64],
    passes: usize,
    dropout_rate: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, f64)> {
    if passes < 2 {
        return Err(CvpError::config("MCD needs at least 2 passes"));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(CvpError::config("dropout_rate must be in [0, 1)"));
    }
    let mu = extract_features(params, x)?;
    let hidden = classifier_hidden(params, &mu)?;
    let keep = 1.0 - dropout_rate;

    if dropout_rate == 0.0 {
        // Every mask keeps every unit, so all passes are the same forward;
        // averaging would only add rounding noise to the exact answer.
        let probs = kernels::softmax(&logits_from_hidden(params, &hidden)?);
        return Ok((probs[argmax(&probs)], 0.0));
    }

    let mut prob_rows = Vec::with_capacity(passes);
    for _ in 0..passes {
        let masked: Vec<f64> = hidden
            .iter()
            .map(|&h| if rng.random_bool(keep) { h / keep } else { 0.0 })
            .collect();
        let logits = logits_from_hidden(params, &masked)?;
        prob_rows.push(kernels::softmax(&logits));
    }

    let n_classes = prob_rows[0].len();
    let mut avg = vec![0.0; n_classes];
    for row in &prob_rows {
        for (a, p) in avg.iter_mut().zip(row) {
            *a += p;
        }
    }
    for a in avg.iter_mut() {
        *a /= passes as f64;
    }
    let pred = argmax(&avg);
    let mcd_mu = avg[pred];
    let var = prob_rows
        .iter()
        .map(|row| {
            let d = row[pred] - mcd_mu;
            d * d
        })
        .sum::<f64>()
        / passes as f64;
    Ok((mcd_mu, var.sqrt()))
}

// ── correlation report ───────────────────────────────────────────────────

/// Pearson correlation, or an explicit reason it is undefined. Undefined
/// outcomes are never silently collapsed to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Correlation {
    Defined { r: f64 },
    Undefined { reason: String },
}

impl Correlation {
    pub fn value(&self) -> Option<f64> {
        match self {
            Correlation::Defined { r } => Some(*r),
            Correlation::Undefined { .. } => None,
        }
    }
}

/// Two-pass Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    if x.len() != y.len() || x.len() < 2 {
        return Correlation::Undefined { reason: "need two equally long series".into() };
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Correlation::Undefined { reason: "zero variance series".into() };
    }
    Correlation::Defined { r: cov / (vx.sqrt() * vy.sqrt()) }
}

/// One row of the per-instance uncertainty table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceUncertainty {
    pub id: usize,
    pub sigma: f64,
    /// Raw value of the maximum logit (L).
    pub max_logit: f64,
    /// Raw logit of the ground-truth class (L_GT); absent without labels.
    pub gt_logit: Option<f64>,
    /// Difference of the top two logits (L_diff).
    pub logit_gap: f64,
    pub mcd_mean: f64,
    pub mcd_std: f64,
}

/// σ against the five classifier-space uncertainty measures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub per_instance: Vec<InstanceUncertainty>,
    pub r_max_logit: Correlation,
    pub r_gt_logit: Correlation,
    pub r_logit_gap: Correlation,
    pub r_mcd_mean: Correlation,
    /// Correlation with −MCD_σ (negated: a small spread means certainty).
    pub r_neg_mcd_std: Correlation,
}

/// Compute σ and measures 1–5 for every instance, then correlate.
pub fn correlate(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    dataset: &DomainDataset,
    mcd_passes: usize,
    seed: u64,
) -> Result<UncertaintyReport> {
    if dataset.is_empty() {
        return Err(CvpError::data("cannot correlate over an empty dataset"));
    }
    let mut rows = Vec::with_capacity(dataset.len());
    for (i, inst) in dataset.instances().iter().enumerate() {
        let mu = extract_features(params, &inst.features)?;
        let sigma = predict_sigma(params, &mu, model_cfg.sigma_floor)?;
        let logits = classify(params, &mu)?;
        let top = argmax(&logits);
        let max_logit = logits[top];
        let runner_up = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != top)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let gt_logit = dataset.eval_label(i).map(|l| logits[l]);
        let mut rng = stream_rng(seed, Stream::Dropout, &[inst.id as u64]);
        let (mcd_mean, mcd_std) =
            mcd_predict(params, &inst.features, mcd_passes, model_cfg.mcd_dropout_rate, &mut rng)?;
        rows.push(InstanceUncertainty {
            id: inst.id,
            sigma,
            max_logit,
            gt_logit,
            logit_gap: max_logit - runner_up,
            mcd_mean,
            mcd_std,
        });
    }

    let sigmas: Vec<f64> = rows.iter().map(|r| r.sigma).collect();
    let against = |vals: Vec<f64>| pearson(&sigmas, &vals);

    let r_gt_logit = if rows.iter().all(|r| r.gt_logit.is_some()) {
        against(rows.iter().map(|r| r.gt_logit.unwrap()).collect())
    } else {
        Correlation::Undefined { reason: "labels unavailable".into() }
    };

    Ok(UncertaintyReport {
        r_max_logit: against(rows.iter().map(|r| r.max_logit).collect()),
        r_gt_logit,
        r_logit_gap: against(rows.iter().map(|r| r.logit_gap).collect()),
        r_mcd_mean: against(rows.iter().map(|r| r.mcd_mean).collect()),
        r_neg_mcd_std: against(rows.iter().map(|r| -r.mcd_std).collect()),
        per_instance: rows,
    })
}

// ── σ trajectory ─────────────────────────────────────────────────────────

/// A target-σ value this far below the reference counts as the
/// adaptation-start drop.
pub const DROP_RATIO: f64 = 0.8;
/// Target σ climbing this far above its minimum counts as recovery.
pub const RECOVERY_RATIO: f64 = 1.2;

/// Per-cycle σ medians with phase annotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaTrajectory {
    pub cycles: Vec<usize>,
    pub sigma_src: Vec<f64>,
    pub sigma_tgt: Vec<Option<f64>>,
    pub adapt_start_cycle: usize,
    /// First adaptation cycle whose target σ fell below `DROP_RATIO` times
    /// the reference level (source σ at the end of pretraining, or the first
    /// target value when there was no pretraining).
    pub drop_cycle: Option<usize>,
    /// Adaptation cycle with the smallest target σ.
    pub min_tgt_cycle: Option<usize>,
    /// First cycle after the minimum where target σ exceeds
    /// `RECOVERY_RATIO` times the minimum.
    pub recovery_cycle: Option<usize>,
    /// Final source σ minus final target σ.
    pub final_gap: Option<f64>,
}

/// Summarize a metrics log. `adapt_start_cycle` is the first adaptation
/// cycle index (= the configured number of pretraining cycles).
pub fn sigma_trajectory(records: &[MetricsRecord], adapt_start_cycle: usize) -> Result<SigmaTrajectory> {
    if records.is_empty() {
        return Err(CvpError::data("metrics log is empty"));
    }
    let cycles: Vec<usize> = records.iter().map(|r| r.cycle).collect();
    let sigma_src: Vec<f64> = records.iter().map(|r| r.sigma_src_median).collect();
    let sigma_tgt: Vec<Option<f64>> = records.iter().map(|r| r.sigma_tgt_median).collect();

    let adapt: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| r.cycle >= adapt_start_cycle)
        .filter_map(|r| r.sigma_tgt_median.map(|s| (r.cycle, s)))
        .collect();

    let reference = records
        .iter()
        .filter(|r| r.cycle < adapt_start_cycle)
        .next_back()
        .map(|r| r.sigma_src_median)
        .or_else(|| adapt.first().map(|&(_, s)| s));

    let drop_cycle = reference.and_then(|reference| {
        adapt
            .iter()
            .find(|&&(_, s)| s <= DROP_RATIO * reference)
            .map(|&(c, _)| c)
    });

    let min_tgt = adapt
        .iter()
        .copied()
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("sigma is finite"));
    let recovery_cycle = min_tgt.and_then(|(mc, mv)| {
        adapt
            .iter()
            .find(|&&(c, s)| c > mc && s >= RECOVERY_RATIO * mv)
            .map(|&(c, _)| c)
    });

    let final_gap = records
        .last()
        .and_then(|r| r.sigma_tgt_median.map(|t| r.sigma_src_median - t));

    Ok(SigmaTrajectory {
        cycles,
        sigma_src,
        sigma_tgt,
        adapt_start_cycle,
        drop_cycle,
        min_tgt_cycle: min_tgt.map(|(c, _)| c),
        recovery_cycle,
        final_gap,
    })
}
