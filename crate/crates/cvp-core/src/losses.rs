//! The training objective.
//!
//! Per instance, three terms over a [`TapedCvpForward`]:
//!
//! - `l_ce_mu`: softmax cross-entropy of the mean feature's logits,
//! - `l_ce_phi`: mean cross-entropy over the M sampled features, weighted
//!   by `α` in the total,
//! - `l_ant`: smooth-L1 regression of σ toward `ψ = max(0, κ − l_ce_phi)`,
//!   with `κ = ln N_C` the cross-entropy of a random oracle.
//!
//! `ψ` is treated as a constant regression target: gradients do not flow
//! from `l_ant` back through the sample logits, only into the σ path.
//! Letting them flow would reward making the classifier wrong in order to
//! lower the target.
//!
//! `total = l_ce_mu + α·l_ce_phi + l_ant`, with terms gated by the ablation
//! setup. A gated-off term is reported as 0 so the identity above holds for
//! every logged value.

use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, NodeId, Tape};
use crate::error::{CvpError, Result};
use crate::model::TapedCvpForward;

/// ln(N_C): the expected cross-entropy of a random oracle over N_C classes,
/// used as the upper anchor for the ψ target.
pub fn kappa(n_classes: usize) -> Result<f64> {
    if n_classes == 0 {
        return Err(CvpError::config("kappa needs at least one class"));
    }
    Ok((n_classes as f64).ln())
}

/// Which loss terms take part in training. `l_ce_mu` is always active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossGates {
    /// Include `α·l_ce_phi` in the total.
    pub samples_ce: bool,
    /// Include `l_ant` in the total.
    pub ant: bool,
}

impl LossGates {
    /// Whether feature sampling is needed at all. `l_ant` alone still
    /// requires samples: its target ψ is derived from their cross-entropy.
    pub fn needs_samples(&self) -> bool {
        self.samples_ce || self.ant
    }
}

/// The loss setups of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// `l_ce_mu` only: plain classifier + pseudo-label training.
    Basic,
    /// `l_ce_mu` + `l_ant`: σ is trained but the cluster assumption is not
    /// enforced on the samples.
    NoSamplesCe,
    /// All three terms.
    #[default]
    Full,
}

impl Ablation {
    pub fn gates(self) -> LossGates {
        match self {
            Ablation::Basic => LossGates { samples_ce: false, ant: false },
            Ablation::NoSamplesCe => LossGates { samples_ce: false, ant: true },
            Ablation::Full => LossGates { samples_ce: true, ant: true },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Basic => "basic",
            Ablation::NoSamplesCe => "no-samples-ce",
            Ablation::Full => "full",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = CvpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Ablation::Basic),
            "no-samples-ce" => Ok(Ablation::NoSamplesCe),
            "full" => Ok(Ablation::Full),
            other => Err(CvpError::config(format!(
                "unknown ablation '{other}' (expected basic, no-samples-ce or full)"
            ))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-instance loss values. Gated-off terms are zero.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_ce_mu: f64,
    pub l_ce_phi: f64,
    pub psi: f64,
    pub l_ant: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn add(&mut self, other: &LossBundle) {
        self.l_ce_mu += other.l_ce_mu;
        self.l_ce_phi += other.l_ce_phi;
        self.psi += other.psi;
        self.l_ant += other.l_ant;
        self.total += other.total;
    }

    pub fn scale(&mut self, c: f64) {
        self.l_ce_mu *= c;
        self.l_ce_phi *= c;
        self.psi *= c;
        self.l_ant *= c;
        self.total *= c;
    }
}

/// Taped per-instance loss: the root node plus recorded values.
#[derive(Debug, Clone)]
pub struct InstanceLoss {
    pub total: NodeId,
    pub bundle: LossBundle,
}

// ── plain evaluation (oracles, analysis) ────────────────────────────────

/// Mean softmax cross-entropy over sample logits rows (Eq. form (1/M)·Σ).
pub fn samples_loss_value(label: usize, logits_samples: &[Vec<f64>]) -> Result<f64> {
    if logits_samples.is_empty() {
        return Err(CvpError::config("samples loss needs at least one sample"));
    }
    let mut acc = 0.0;
    for row in logits_samples {
        if label >= row.len() {
            return Err(CvpError::data(format!(
                "label {label} out of range for {} classes",
                row.len()
            )));
        }
        acc += kernels::softmax_cross_entropy(row, label);
    }
    Ok(acc / logits_samples.len() as f64)
}

/// ψ = max(0, κ − samples_loss).
pub fn psi_value(kappa: f64, samples_loss: f64) -> f64 {
    (kappa - samples_loss).max(0.0)
}

/// Smooth-L1 between σ and its regression target ψ.
pub fn antagonistic_value(sigma: f64, psi: f64) -> f64 {
    kernels::smooth_l1(sigma, psi)
}

// ── taped composition ────────────────────────────────────────────────────

/// Build the per-instance total on the tape.
///
/// With sampling gated on, the ψ target is computed from the current value
/// of the samples loss and recorded as a constant, so `l_ant` updates only
/// the σ path.
pub fn instance_loss(
    tape: &mut Tape,
    forward: &TapedCvpForward,
    label: usize,
    alpha: f64,
    kappa: f64,
    gates: LossGates,
) -> Result<InstanceLoss> {
    let l_mu = tape.softmax_cross_entropy(forward.logits_mu, label)?;
    let mut terms: Vec<(f64, NodeId)> = vec![(1.0, l_mu)];
    let mut bundle = LossBundle { l_ce_mu: tape.scalar(l_mu), ..LossBundle::default() };

    if gates.needs_samples() {
        if forward.logits_samples.is_empty() {
            return Err(CvpError::config(
                "loss gates require sampled features but the forward has none",
            ));
        }
        let m = forward.logits_samples.len();
        let ces: Vec<(f64, NodeId)> = forward
            .logits_samples
            .iter()
            .map(|&l| Ok((1.0 / m as f64, tape.softmax_cross_entropy(l, label)?)))
            .collect::<Result<_>>()?;
        let l_phi = tape.weighted_sum(&ces)?;
        let l_phi_value = tape.scalar(l_phi);

        if gates.samples_ce {
            terms.push((alpha, l_phi));
            bundle.l_ce_phi = l_phi_value;
        }

        if gates.ant {
            let psi = psi_value(kappa, l_phi_value);
            let psi_node = tape.scalar_constant(psi)?;
            let l_ant = tape.smooth_l1(forward.sigma, psi_node)?;
            terms.push((1.0, l_ant));
            bundle.psi = psi;
            bundle.l_ant = tape.scalar(l_ant);
        }
    }

    let total = tape.weighted_sum(&terms)?;
    bundle.total = tape.scalar(total);
    Ok(InstanceLoss { total, bundle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_cvp_taped, init_model, register_params, ModelConfig};
    use crate::sampler::NoiseSource;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn kappa_closed_forms() {
        assert_eq!(kappa(1).unwrap(), 0.0);
        assert_abs_diff_eq!(kappa(12).unwrap(), 2.4849066497880004, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa(123).unwrap(), 4.812184355372417, epsilon = 1e-15);
        assert!(kappa(0).is_err());
    }

    #[test]
    fn samples_loss_uniform_equals_kappa() {
        let rows = vec![vec![0.0; 10]; 5];
        let l = samples_loss_value(3, &rows).unwrap();
        assert_abs_diff_eq!(l, kappa(10).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn samples_loss_saturated_is_near_zero() {
        let mut row = vec![0.0; 4];
        row[2] = 1000.0;
        let l = samples_loss_value(2, &vec![row; 3]).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn samples_loss_frozen_value() {
        // mean of CE([1,2,3],0) and CE([3,1,1],0), evaluated by an
        // independent high-precision script: (2.40760596444438 +
        // 0.2395447662218845) / 2.
        let rows = vec![vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 1.0]];
        let l = samples_loss_value(0, &rows).unwrap();
        assert_abs_diff_eq!(l, 1.3235753653331324, epsilon = 1e-14);
    }

    #[test]
    fn samples_loss_label_out_of_range() {
        assert!(samples_loss_value(5, &[vec![0.0; 3]]).is_err());
    }

    #[test]
    fn psi_clamp_and_anchors() {
        let k = kappa(10).unwrap();
        assert_eq!(psi_value(k, k), 0.0);
        assert_eq!(psi_value(k, k + 3.0), 0.0);
        assert_abs_diff_eq!(psi_value(k, 0.0), k, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_value(k, 1.0), 1.3025850929940457, epsilon = 1e-14);
    }

    #[test]
    fn antagonistic_branches() {
        assert_eq!(antagonistic_value(1.7, 1.7), 0.0);
        assert_abs_diff_eq!(antagonistic_value(0.1, 2.3), 2.2, epsilon = 1e-12);
        assert_abs_diff_eq!(antagonistic_value(1.5, 1.0), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn antagonism_raises_sigma_below_target() {
        // With σ < ψ, descending l_ant must increase σ: ∂l_ant/∂σ < 0.
        let mut tape = Tape::new();
        let sigma = tape.leaf(&[0.3]).unwrap();
        let psi = tape.scalar_constant(0.9).unwrap();
        let l = tape.smooth_l1(sigma, psi).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(sigma)[0] < 0.0);
    }

    fn tiny_model() -> (ModelConfig, crate::model::ModelParams) {
        let cfg = ModelConfig {
            input_dim: 2,
            feature_dim: 3,
            extractor_hidden: vec![4],
            classifier_hidden: 4,
            n_classes: 3,
            seed: 5,
            ..ModelConfig::default()
        };
        let params = init_model(&cfg).unwrap();
        (cfg, params)
    }

    #[test]
    fn total_composition_identity() {
        let (cfg, params) = tiny_model();
        let k = kappa(cfg.n_classes).unwrap();
        for (alpha, gates) in [
            (0.5, Ablation::Full.gates()),
            (0.0, Ablation::Full.gates()),
            (0.5, Ablation::NoSamplesCe.gates()),
            (0.5, Ablation::Basic.gates()),
        ] {
            let mut tape = Tape::new();
            let nodes = register_params(&mut tape, &params).unwrap();
            let mut noise = NoiseSource::from_seed(2);
            let m = if gates.needs_samples() { 8 } else { 0 };
            let fwd = forward_cvp_taped(&mut tape, &nodes, &[0.4, -1.1], m, &mut noise, 1e-6)
                .unwrap();
            let loss = instance_loss(&mut tape, &fwd, 1, alpha, k, gates).unwrap();
            let b = loss.bundle;
            assert!(
                (b.total - (b.l_ce_mu + alpha * b.l_ce_phi + b.l_ant)).abs() < 1e-12,
                "composition identity violated for gates {gates:?}"
            );
            assert!(b.l_ce_mu >= 0.0 && b.l_ce_phi >= 0.0 && b.l_ant >= 0.0);
            assert!(b.psi >= 0.0 && b.psi <= k + 1e-15);
        }
    }

    #[test]
    fn basic_gates_zero_out_sample_terms() {
        let (cfg, params) = tiny_model();
        let k = kappa(cfg.n_classes).unwrap();
        let mut tape = Tape::new();
        let nodes = register_params(&mut tape, &params).unwrap();
        let mut noise = NoiseSource::from_seed(2);
        let fwd = forward_cvp_taped(&mut tape, &nodes, &[0.4, -1.1], 0, &mut noise, 1e-6).unwrap();
        let loss = instance_loss(&mut tape, &fwd, 0, 0.5, k, Ablation::Basic.gates()).unwrap();
        assert_eq!(loss.bundle.l_ce_phi, 0.0);
        assert_eq!(loss.bundle.l_ant, 0.0);
        assert_eq!(loss.bundle.psi, 0.0);
        assert_abs_diff_eq!(loss.bundle.total, loss.bundle.l_ce_mu, epsilon = 1e-15);
    }

    #[test]
    fn gates_without_samples_error() {
        let (cfg, params) = tiny_model();
        let k = kappa(cfg.n_classes).unwrap();
        let mut tape = Tape::new();
        let nodes = register_params(&mut tape, &params).unwrap();
        let mut noise = NoiseSource::from_seed(2);
        let fwd = forward_cvp_taped(&mut tape, &nodes, &[0.4, -1.1], 0, &mut noise, 1e-6).unwrap();
        let res = instance_loss(&mut tape, &fwd, 0, 0.5, k, Ablation::Full.gates());
        assert!(matches!(res, Err(CvpError::Config(_))));
    }

    #[test]
    fn untrained_uniform_model_closed_form() {
        // Zero weights: every logit is zero, so l_ce_mu = l_ce_phi = κ,
        // ψ = 0, σ = softplus(0) = ln 2 and l_ant = ½(ln 2)².
        let (cfg, mut params) = tiny_model();
        for t in params.tensors_mut() {
            t.fill(0.0);
        }
        let k = kappa(cfg.n_classes).unwrap();
        let alpha = 0.5;
        let mut tape = Tape::new();
        let nodes = register_params(&mut tape, &params).unwrap();
        let mut noise = NoiseSource::from_seed(4);
        let fwd = forward_cvp_taped(&mut tape, &nodes, &[0.4, -1.1], 8, &mut noise, 1e-6).unwrap();
        let loss = instance_loss(&mut tape, &fwd, 2, alpha, k, Ablation::Full.gates()).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(loss.bundle.l_ce_mu, k, epsilon = 1e-12);
        assert_abs_diff_eq!(loss.bundle.l_ce_phi, k, epsilon = 1e-12);
        assert_eq!(loss.bundle.psi, 0.0);
        assert_abs_diff_eq!(loss.bundle.l_ant, 0.5 * ln2 * ln2, epsilon = 1e-12);
        assert_abs_diff_eq!(loss.bundle.total, k * (1.0 + alpha) + 0.5 * ln2 * ln2, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn psi_is_monotone_nonincreasing(k in 0.1f64..5.0, l1 in 0.0f64..6.0, delta in 0.0f64..6.0) {
            let l2 = l1 + delta;
            prop_assert!(psi_value(k, l1) >= psi_value(k, l2));
            prop_assert!(psi_value(k, k + delta) == 0.0);
            prop_assert!(psi_value(k, l1) >= 0.0 && psi_value(k, l1) <= k);
        }
    }
}
