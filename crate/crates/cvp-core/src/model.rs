//! The three subnetworks and their parameters.
//!
//! - feature extractor: an MLP mapping raw inputs to a `D`-dimensional
//!   feature `μ` (hidden layers ReLU-activated, final layer linear),
//! - uncertainty head: two affine layers `D → D → 1` with a ReLU in
//!   between; the scalar output is softplus-activated and floored to keep
//!   `σ` strictly positive,
//! - classifier: `D → H → N_C`, ReLU hidden, raw logits out (softmax is
//!   applied only inside losses and analysis).
//!
//! Forward passes exist in two routes that share the same kernels and agree
//! bitwise: a plain route over `&ModelParams` for inference and analysis,
//! and a taped route that registers every op on a [`Tape`] for training.

use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, NodeId, Tape};
use crate::error::{CvpError, Result};
use crate::rng::{stream_rng, Stream};
use crate::sampler::NoiseSource;
use rand::Rng;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CvpError::shape(format!(
                "matrix {rows}x{cols} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }
}

/// Sizes and seeds that fully determine a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Raw input dimension `d`.
    pub input_dim: usize,
    /// Feature dimension `D` (the space σ lives in).
    pub feature_dim: usize,
    /// Hidden widths of the feature extractor.
    pub extractor_hidden: Vec<usize>,
    /// Hidden width of the classifier.
    pub classifier_hidden: usize,
    /// Number of classes `N_C`.
    pub n_classes: usize,
    /// Evaluation-only Monte-Carlo dropout rate on the classifier hidden
    /// activation. The trained network itself has no dropout.
    pub mcd_dropout_rate: f64,
    /// Lower clamp on σ so sampling stays well-defined under underflow.
    pub sigma_floor: f64,
    /// Initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 2,
            feature_dim: 16,
            extractor_hidden: vec![64, 64],
            classifier_hidden: 32,
            n_classes: 2,
            mcd_dropout_rate: 0.5,
            sigma_floor: 1e-6,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.classifier_hidden == 0 {
            return Err(CvpError::config("all layer sizes must be >= 1"));
        }
        if self.extractor_hidden.iter().any(|&h| h == 0) {
            return Err(CvpError::config("extractor hidden sizes must be >= 1"));
        }
        if self.n_classes < 2 {
            return Err(CvpError::config("n_classes must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.mcd_dropout_rate) {
            return Err(CvpError::config("mcd_dropout_rate must be in [0, 1)"));
        }
        if !(self.sigma_floor > 0.0) || !self.sigma_floor.is_finite() {
            return Err(CvpError::config("sigma_floor must be positive and finite"));
        }
        Ok(())
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// All trainable tensors, grouped by subnetwork.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub extractor: Vec<Linear>,
    pub sigma_head: Vec<Linear>,
    pub classifier: Vec<Linear>,
}

/// Weight scale applied to layers that are not followed by a ReLU (feature
/// output, σ pre-activation, logits). Keeping these small makes a fresh
/// model behave like a near-uniform classifier, which the κ anchor assumes.
const OUTPUT_LAYER_GAIN: f64 = 0.25;

fn init_linear(rng: &mut impl Rng, rows: usize, cols: usize, gain: f64) -> Linear {
    let bound = gain * (6.0 / cols as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Linear { w: Matrix { rows, cols, data }, b: vec![0.0; rows] }
}

/// He-style fan-in scaled uniform init, zero biases, deterministic per seed.
pub fn init_model(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Init, &[]);

    let mut extractor = Vec::new();
    let mut in_dim = cfg.input_dim;
    for &h in &cfg.extractor_hidden {
        extractor.push(init_linear(&mut rng, h, in_dim, 1.0));
        in_dim = h;
    }
    extractor.push(init_linear(&mut rng, cfg.feature_dim, in_dim, OUTPUT_LAYER_GAIN));

    let d = cfg.feature_dim;
    let sigma_head = vec![
        init_linear(&mut rng, d, d, 1.0),
        init_linear(&mut rng, 1, d, OUTPUT_LAYER_GAIN),
    ];

    let classifier = vec![
        init_linear(&mut rng, cfg.classifier_hidden, d, 1.0),
        init_linear(&mut rng, cfg.n_classes, cfg.classifier_hidden, OUTPUT_LAYER_GAIN),
    ];

    Ok(ModelParams { extractor, sigma_head, classifier })
}

impl ModelParams {
    fn linears(&self) -> impl Iterator<Item = &Linear> {
        self.extractor.iter().chain(self.sigma_head.iter()).chain(self.classifier.iter())
    }

    /// Flat views of every tensor in canonical order
    /// (extractor, σ head, classifier; weights before biases per layer).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in self.linears() {
            out.push(l.w.data.as_slice());
            out.push(l.b.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self
            .extractor
            .iter_mut()
            .chain(self.sigma_head.iter_mut())
            .chain(self.classifier.iter_mut())
        {
            out.push(l.w.data.as_mut_slice());
            out.push(l.b.as_mut_slice());
        }
        out
    }

    pub fn tensor_lens(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rebuild parameters from flat arrays in canonical order (checkpoint
    /// load). Shapes are dictated by `cfg`.
    pub fn from_flat(cfg: &ModelConfig, flat: &[Vec<f64>]) -> Result<ModelParams> {
        let mut template = init_model(cfg)?;
        let lens = template.tensor_lens();
        if flat.len() != lens.len() {
            return Err(CvpError::shape(format!(
                "checkpoint has {} tensors, model needs {}",
                flat.len(),
                lens.len()
            )));
        }
        for (i, (slot, src)) in template.tensors_mut().into_iter().zip(flat).enumerate() {
            if slot.len() != src.len() {
                return Err(CvpError::shape(format!(
                    "checkpoint tensor {i} has length {}, expected {}",
                    src.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(src);
        }
        Ok(template)
    }
}

fn check_input(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(CvpError::shape(format!("{name}: input length {got}, expected {want}")));
    }
    Ok(())
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CvpError::non_finite(format!("{name} produced NaN/Inf")))
    }
}

// ── plain (tape-free) forward route ─────────────────────────────────────

/// μ = extractor(x).
pub fn extract_features(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    check_input("extract_features", x.len(), params.extractor[0].w.cols)?;
    let mut h = x.to_vec();
    let last = params.extractor.len() - 1;
    for (i, l) in params.extractor.iter().enumerate() {
        h = kernels::affine(&l.w.data, l.w.rows, l.w.cols, &h, &l.b);
        if i < last {
            h = kernels::relu(&h);
        }
    }
    check_finite("extract_features", &h)?;
    Ok(h)
}

/// σ = max(softplus(f_Σ(μ)), floor).
pub fn predict_sigma(params: &ModelParams, mu: &[f64], sigma_floor: f64) -> Result<f64> {
    check_input("predict_sigma", mu.len(), params.sigma_head[0].w.cols)?;
    let l0 = &params.sigma_head[0];
    let h = kernels::relu(&kernels::affine(&l0.w.data, l0.w.rows, l0.w.cols, mu, &l0.b));
    let l1 = &params.sigma_head[1];
    let z = kernels::affine(&l1.w.data, l1.w.rows, l1.w.cols, &h, &l1.b)[0];
    let sigma = kernels::softplus(z).max(sigma_floor);
    check_finite("predict_sigma", &[sigma])?;
    Ok(sigma)
}

/// Raw logits for a feature vector.
pub fn classify(params: &ModelParams, feature: &[f64]) -> Result<Vec<f64>> {
    let h = classifier_hidden(params, feature)?;
    logits_from_hidden(params, &h)
}

/// Post-ReLU hidden activation of the classifier (the site MCD masks).
pub fn classifier_hidden(params: &ModelParams, feature: &[f64]) -> Result<Vec<f64>> {
    check_input("classify", feature.len(), params.classifier[0].w.cols)?;
    let l0 = &params.classifier[0];
    Ok(kernels::relu(&kernels::affine(&l0.w.data, l0.w.rows, l0.w.cols, feature, &l0.b)))
}

/// Final affine layer of the classifier.
pub fn logits_from_hidden(params: &ModelParams, hidden: &[f64]) -> Result<Vec<f64>> {
    let l1 = &params.classifier[1];
    check_input("logits_from_hidden", hidden.len(), l1.w.cols)?;
    let logits = kernels::affine(&l1.w.data, l1.w.rows, l1.w.cols, hidden, &l1.b);
    check_finite("classify", &logits)?;
    Ok(logits)
}

/// Predicted class for a raw input.
pub fn predict_class(params: &ModelParams, x: &[f64]) -> Result<usize> {
    let mu = extract_features(params, x)?;
    let logits = classify(params, &mu)?;
    Ok(argmax(&logits))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-instance forward bundle: mean feature, certainty scalar, sampled
/// features, and logits for the mean and each sample.
#[derive(Debug, Clone)]
pub struct CvpForward {
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub samples: Vec<Vec<f64>>,
    pub logits_mu: Vec<f64>,
    pub logits_samples: Vec<Vec<f64>>,
}

/// Full CVP forward without a tape. With `m == 0` this is plain
/// classification (no sampling; `samples` and `logits_samples` empty).
pub fn forward_cvp(
    params: &ModelParams,
    x: &[f64],
    m: usize,
    noise: &mut NoiseSource,
    sigma_floor: f64,
) -> Result<CvpForward> {
    let mu = extract_features(params, x)?;
    let sigma = predict_sigma(params, &mu, sigma_floor)?;
    let logits_mu = classify(params, &mu)?;
    let mut samples = Vec::with_capacity(m);
    let mut logits_samples = Vec::with_capacity(m);
    if m > 0 {
        for eps in crate::sampler::draw_noise(noise, m, mu.len()) {
            let phi: Vec<f64> = mu.iter().zip(&eps).map(|(mi, ei)| mi + sigma * ei).collect();
            logits_samples.push(classify(params, &phi)?);
            samples.push(phi);
        }
    }
    Ok(CvpForward { mu, sigma, samples, logits_mu, logits_samples })
}

// ── taped forward route ──────────────────────────────────────────────────

/// Tape handles for every parameter tensor, in canonical order.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub extractor: Vec<(NodeId, NodeId)>,
    pub sigma_head: Vec<(NodeId, NodeId)>,
    pub classifier: Vec<(NodeId, NodeId)>,
}

impl ParamNodes {
    /// Node ids in the same order as [`ModelParams::tensors`].
    pub fn ids(&self) -> Vec<NodeId> {
        self.extractor
            .iter()
            .chain(self.sigma_head.iter())
            .chain(self.classifier.iter())
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

/// Register every parameter tensor as a leaf on the tape.
pub fn register_params(tape: &mut Tape, params: &ModelParams) -> Result<ParamNodes> {
    let mut reg = |layers: &[Linear]| -> Result<Vec<(NodeId, NodeId)>> {
        layers
            .iter()
            .map(|l| {
                let w = tape.leaf_matrix(&l.w.data, l.w.rows, l.w.cols)?;
                let b = tape.leaf(&l.b)?;
                Ok((w, b))
            })
            .collect()
    };
    Ok(ParamNodes {
        extractor: reg(&params.extractor)?,
        sigma_head: reg(&params.sigma_head)?,
        classifier: reg(&params.classifier)?,
    })
}

pub fn extract_features_taped(tape: &mut Tape, nodes: &ParamNodes, x: &[f64]) -> Result<NodeId> {
    let mut h = tape.constant(x)?;
    let last = nodes.extractor.len() - 1;
    for (i, &(w, b)) in nodes.extractor.iter().enumerate() {
        h = tape.affine(w, h, b)?;
        if i < last {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

pub fn predict_sigma_taped(
    tape: &mut Tape,
    nodes: &ParamNodes,
    mu: NodeId,
    sigma_floor: f64,
) -> Result<NodeId> {
    let (w0, b0) = nodes.sigma_head[0];
    let a0 = tape.affine(w0, mu, b0)?;
    let h = tape.relu(a0)?;
    let (w1, b1) = nodes.sigma_head[1];
    let z = tape.affine(w1, h, b1)?;
    let sp = tape.softplus(z)?;
    tape.clamp_min(sp, sigma_floor)
}

pub fn classify_taped(tape: &mut Tape, nodes: &ParamNodes, feature: NodeId) -> Result<NodeId> {
    let (w0, b0) = nodes.classifier[0];
    let a0 = tape.affine(w0, feature, b0)?;
    let h = tape.relu(a0)?;
    let (w1, b1) = nodes.classifier[1];
    tape.affine(w1, h, b1)
}

/// Taped counterpart of [`CvpForward`]: node handles into the tape.
#[derive(Debug, Clone)]
pub struct TapedCvpForward {
    pub mu: NodeId,
    pub sigma: NodeId,
    pub samples: Vec<NodeId>,
    pub logits_mu: NodeId,
    pub logits_samples: Vec<NodeId>,
}

/// Full CVP forward on the tape. All ops of one instance land in the same
/// record so one backward pass reaches extractor, σ head and classifier.
pub fn forward_cvp_taped(
    tape: &mut Tape,
    nodes: &ParamNodes,
    x: &[f64],
    m: usize,
    noise: &mut NoiseSource,
    sigma_floor: f64,
) -> Result<TapedCvpForward> {
    let mu = extract_features_taped(tape, nodes, x)?;
    let sigma = predict_sigma_taped(tape, nodes, mu, sigma_floor)?;
    let logits_mu = classify_taped(tape, nodes, mu)?;
    let d = tape.value(mu).len();
    let mut samples = Vec::with_capacity(m);
    let mut logits_samples = Vec::with_capacity(m);
    if m > 0 {
        for phi in crate::sampler::draw_taped(tape, mu, sigma, m, noise, d)? {
            logits_samples.push(classify_taped(tape, nodes, phi)?);
            samples.push(phi);
        }
    }
    Ok(TapedCvpForward { mu, sigma, samples, logits_mu, logits_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::NoiseSource;
    use approx::assert_abs_diff_eq;

    fn zeroed(cfg: &ModelConfig) -> ModelParams {
        let mut p = init_model(cfg).unwrap();
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        p
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = ModelConfig::default();
        let a = init_model(&cfg).unwrap();
        let b = init_model(&cfg).unwrap();
        assert_eq!(a, b);

        let c = init_model(&ModelConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shape_contract_follows_config() {
        let cfg = ModelConfig {
            feature_dim: 8,
            n_classes: 3,
            ..ModelConfig::default()
        };
        let p = init_model(&cfg).unwrap();
        assert_eq!(p.sigma_head[0].w.rows, 8);
        assert_eq!(p.sigma_head[0].w.cols, 8);
        assert_eq!(p.sigma_head[1].w.rows, 1);
        assert_eq!(p.sigma_head[1].w.cols, 8);
        assert_eq!(p.classifier[1].w.rows, 3);
        // same config → same parameter count
        assert_eq!(p.n_params(), init_model(&cfg).unwrap().n_params());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = ModelConfig { n_classes: 1, ..ModelConfig::default() };
        assert!(init_model(&bad).is_err());
        let bad = ModelConfig { mcd_dropout_rate: 1.0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_weights_give_zero_feature_and_uniform_logits() {
        let cfg = ModelConfig::default();
        let p = zeroed(&cfg);
        let mu = extract_features(&p, &[0.3, -0.8]).unwrap();
        assert!(mu.iter().all(|&v| v == 0.0));
        let logits = classify(&p, &mu).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        let probs = kernels::softmax(&logits);
        for pr in probs {
            assert_abs_diff_eq!(pr, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_sigma_head_gives_ln_two() {
        let cfg = ModelConfig::default();
        let p = zeroed(&cfg);
        let sigma = predict_sigma(&p, &vec![0.0; cfg.feature_dim], cfg.sigma_floor).unwrap();
        assert_abs_diff_eq!(sigma, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn sigma_is_strictly_positive_for_extreme_params() {
        let cfg = ModelConfig::default();
        let mut p = init_model(&cfg).unwrap();
        // push the σ pre-activation far negative
        p.sigma_head[1].b[0] = -1e4;
        let sigma = predict_sigma(&p, &vec![1.0; cfg.feature_dim], cfg.sigma_floor).unwrap();
        assert_eq!(sigma, cfg.sigma_floor);
        assert!(sigma > 0.0);
    }

    #[test]
    fn forward_cvp_m0_is_plain_classification() {
        let cfg = ModelConfig::default();
        let p = init_model(&cfg).unwrap();
        let x = [0.4, 1.2];
        let mut noise = NoiseSource::from_seed(9);
        let f = forward_cvp(&p, &x, 0, &mut noise, cfg.sigma_floor).unwrap();
        assert!(f.samples.is_empty());
        assert!(f.logits_samples.is_empty());
        let mu = extract_features(&p, &x).unwrap();
        let logits = classify(&p, &mu).unwrap();
        assert_eq!(f.mu, mu);
        assert_eq!(f.logits_mu, logits);
    }

    #[test]
    fn forward_cvp_is_deterministic_per_seed() {
        let cfg = ModelConfig::default();
        let p = init_model(&cfg).unwrap();
        let x = [0.4, 1.2];
        let run = || {
            let mut noise = NoiseSource::from_seed(42);
            forward_cvp(&p, &x, 64, &mut noise, cfg.sigma_floor).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.logits_samples, b.logits_samples);
    }

    #[test]
    fn floored_sigma_keeps_samples_at_mu() {
        let cfg = ModelConfig::default();
        let mut p = init_model(&cfg).unwrap();
        p.sigma_head[1].b[0] = -1e4;
        let x = [0.4, 1.2];
        let mut noise = NoiseSource::from_seed(3);
        let f = forward_cvp(&p, &x, 16, &mut noise, cfg.sigma_floor).unwrap();
        assert_eq!(f.sigma, cfg.sigma_floor);
        let bound = cfg.sigma_floor * (cfg.feature_dim as f64).sqrt() * 10.0;
        for s in &f.samples {
            let dist: f64 = s
                .iter()
                .zip(&f.mu)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(dist < bound, "sample strayed {dist} > {bound}");
        }
    }

    #[test]
    fn taped_forward_matches_plain_forward_bitwise() {
        let cfg = ModelConfig::default();
        let p = init_model(&cfg).unwrap();
        let x = [0.7, -0.2];

        let mut plain_noise = NoiseSource::from_seed(11);
        let plain = forward_cvp(&p, &x, 8, &mut plain_noise, cfg.sigma_floor).unwrap();

        let mut tape = Tape::new();
        let nodes = register_params(&mut tape, &p).unwrap();
        let mut taped_noise = NoiseSource::from_seed(11);
        let taped =
            forward_cvp_taped(&mut tape, &nodes, &x, 8, &mut taped_noise, cfg.sigma_floor).unwrap();

        assert_eq!(tape.value(taped.mu), plain.mu.as_slice());
        assert_eq!(tape.scalar(taped.sigma), plain.sigma);
        assert_eq!(tape.value(taped.logits_mu), plain.logits_mu.as_slice());
        for (tid, pv) in taped.logits_samples.iter().zip(&plain.logits_samples) {
            assert_eq!(tape.value(*tid), pv.as_slice());
        }
    }

    #[test]
    fn sample_gradients_reach_all_subnetworks() {
        let cfg = ModelConfig::default();
        let p = init_model(&cfg).unwrap();
        let mut tape = Tape::new();
        let nodes = register_params(&mut tape, &p).unwrap();
        let mut noise = NoiseSource::from_seed(5);
        let f = forward_cvp_taped(&mut tape, &nodes, &[0.9, 0.1], 4, &mut noise, cfg.sigma_floor)
            .unwrap();
        // loss over sample logits only
        let ces: Vec<(f64, NodeId)> = f
            .logits_samples
            .iter()
            .map(|&l| Ok((0.25, tape.softmax_cross_entropy(l, 0)?)))
            .collect::<Result<_>>()
            .unwrap();
        let root = tape.weighted_sum(&ces).unwrap();
        tape.backward(root).unwrap();

        let nonzero = |ids: &[(NodeId, NodeId)]| {
            ids.iter()
                .any(|&(w, b)| tape.grad(w).iter().chain(tape.grad(b).iter()).any(|&g| g != 0.0))
        };
        assert!(nonzero(&nodes.extractor), "no gradient reached the extractor");
        assert!(nonzero(&nodes.sigma_head), "no gradient reached the sigma head");
        assert!(nonzero(&nodes.classifier), "no gradient reached the classifier");
    }

    #[test]
    fn fresh_model_mean_cross_entropy_near_log_n() {
        // Monte-Carlo estimate over uniform-random inputs and labels: a fresh
        // model should behave like a near-uniform classifier.
        let cfg = ModelConfig { n_classes: 12, ..ModelConfig::default() };
        let p = init_model(&cfg).unwrap();
        let mut rng = stream_rng(123, Stream::Init, &[7]);
        let n = 1000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x: Vec<f64> = (0..cfg.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let label = rng.random_range(0..cfg.n_classes);
            let mu = extract_features(&p, &x).unwrap();
            let logits = classify(&p, &mu).unwrap();
            acc += kernels::softmax_cross_entropy(&logits, label);
        }
        let mean = acc / n as f64;
        let kappa = (cfg.n_classes as f64).ln();
        assert!(
            (mean - kappa).abs() < 0.05 * kappa,
            "mean CE {mean} not within 5% of ln12 {kappa}"
        );
    }

    #[test]
    fn from_flat_roundtrip() {
        let cfg = ModelConfig::default();
        let p = init_model(&cfg).unwrap();
        let flat: Vec<Vec<f64>> = p.tensors().iter().map(|t| t.to_vec()).collect();
        let q = ModelParams::from_flat(&cfg, &flat).unwrap();
        assert_eq!(p, q);
    }
}
