//! Reparameterized sampling from N(μ, (σ·I)²).
//!
//! Samples are expressed as φ = μ + σ·ε with ε drawn per coordinate from a
//! standard normal, so the stochastic node is a constant on the tape and
//! gradients flow to both μ and σ (∂φ/∂μ = I, ∂φ/∂σ = ε).
//!
//! Noise streams are derived, not carried: a [`NoiseSource`] built with
//! [`NoiseSource::for_context`] reproduces the exact ε sequence for a given
//! (seed, cycle, step, instance), which is what makes checkpoint resume
//! replay runs bit-exactly.

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{NodeId, Tape};
use crate::error::{CvpError, Result};
use crate::rng::{stream_rng, Stream};

/// Seeded source of standard-normal noise.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha12Rng,
}

impl NoiseSource {
    pub fn from_seed(seed: u64) -> Self {
        NoiseSource { rng: stream_rng(seed, Stream::Noise, &[]) }
    }

    /// Substream keyed by training position, so every instance at every step
    /// of every cycle has its own replayable noise.
    pub fn for_context(seed: u64, cycle: u64, step: u64, instance: u64) -> Self {
        NoiseSource { rng: stream_rng(seed, Stream::Noise, &[cycle, step, instance]) }
    }

    /// One vector of i.i.d. standard-normal coordinates.
    pub fn standard_normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(&mut self.rng)).collect()
    }
}

/// φ = μ + σ·ε, elementwise.
pub fn shift(mu: &[f64], sigma: f64, eps: &[f64]) -> Vec<f64> {
    mu.iter().zip(eps).map(|(m, e)| m + sigma * e).collect()
}

/// M noise vectors of dimension `d`.
pub fn draw_noise(noise: &mut NoiseSource, m: usize, d: usize) -> Vec<Vec<f64>> {
    (0..m).map(|_| noise.standard_normal(d)).collect()
}

/// M plain (tape-free) samples from N(μ, (σ·I)²).
pub fn draw(mu: &[f64], sigma: f64, m: usize, noise: &mut NoiseSource) -> Result<Vec<Vec<f64>>> {
    if !(sigma > 0.0) {
        return Err(CvpError::config(format!("sampler needs sigma > 0, got {sigma}")));
    }
    if m == 0 {
        return Err(CvpError::config("sampler needs M >= 1"));
    }
    Ok(draw_noise(noise, m, mu.len())
        .into_iter()
        .map(|eps| shift(mu, sigma, &eps))
        .collect())
}

/// M taped samples; each is a `reparam` node over the μ and σ nodes.
pub fn draw_taped(
    tape: &mut Tape,
    mu: NodeId,
    sigma: NodeId,
    m: usize,
    noise: &mut NoiseSource,
    d: usize,
) -> Result<Vec<NodeId>> {
    let s = tape.scalar(sigma);
    if !(s > 0.0) {
        return Err(CvpError::config(format!("sampler needs sigma > 0, got {s}")));
    }
    (0..m)
        .map(|_| {
            let eps = noise.standard_normal(d);
            tape.reparam(mu, sigma, eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::kernels;

    #[test]
    fn zero_noise_is_identity() {
        let mu = vec![1.5, -0.5, 2.0];
        assert_eq!(shift(&mu, 3.0, &[0.0, 0.0, 0.0]), mu);
    }

    #[test]
    fn identical_seed_gives_identical_stream() {
        let mut a = NoiseSource::for_context(7, 1, 2, 3);
        let mut b = NoiseSource::for_context(7, 1, 2, 3);
        assert_eq!(a.standard_normal(32), b.standard_normal(32));

        let mut c = NoiseSource::for_context(7, 1, 2, 4);
        assert_ne!(a.standard_normal(32), c.standard_normal(32));
    }

    #[test]
    fn affine_closure_under_mean_shift() {
        let mu = vec![0.2, -1.0, 0.7, 3.0];
        let c = 2.5;
        let shifted: Vec<f64> = mu.iter().map(|v| v + c).collect();
        let a = draw(&mu, 1.3, 8, &mut NoiseSource::from_seed(21)).unwrap();
        let b = draw(&shifted, 1.3, 8, &mut NoiseSource::from_seed(21)).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            for (va, vb) in sa.iter().zip(sb) {
                assert!((va + c - vb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_sigma_and_zero_m() {
        let mut n = NoiseSource::from_seed(0);
        assert!(draw(&[0.0], 0.0, 4, &mut n).is_err());
        assert!(draw(&[0.0], -1.0, 4, &mut n).is_err());
        assert!(draw(&[0.0], 1.0, 0, &mut n).is_err());
    }

    #[test]
    fn monte_carlo_moments_and_isotropy() {
        // μ=0, σ=2, D=4, M=100000: per-coordinate mean ≈ 0, std ≈ 2,
        // off-diagonal correlations ≈ 0.
        let d = 4;
        let m = 100_000;
        let samples = draw(&vec![0.0; d], 2.0, m, &mut NoiseSource::from_seed(1234)).unwrap();

        let mut mean = vec![0.0; d];
        for s in &samples {
            for (acc, v) in mean.iter_mut().zip(s) {
                *acc += v;
            }
        }
        for v in mean.iter_mut() {
            *v /= m as f64;
        }
        for &mu_i in &mean {
            assert!(mu_i.abs() < 0.02, "coordinate mean {mu_i} too far from 0");
        }

        let mut cov = vec![vec![0.0; d]; d];
        for s in &samples {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]);
                }
            }
        }
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v /= (m - 1) as f64;
            }
        }
        for i in 0..d {
            let std = cov[i][i].sqrt();
            assert!((std - 2.0).abs() < 0.02, "std {std} deviates from 2 by > 1%");
            for j in 0..d {
                if i != j {
                    let rho = cov[i][j] / (cov[i][i] * cov[j][j]).sqrt();
                    assert!(rho.abs() < 0.02, "off-diagonal correlation {rho}");
                }
            }
        }
    }

    #[test]
    fn sigma_gradient_matches_score_identity() {
        // For L = Σ_m c·CE(φ_m), backward's dL/dσ must equal
        // Σ_m c·⟨∇_φ CE(φ_m), ε_m⟩ with ∇_φ CE = softmax(φ) − onehot.
        let mu_v = vec![0.4, -0.3, 0.9];
        let sigma_v = 0.8;
        let m = 6;
        let target = 1;

        let mut noise = NoiseSource::from_seed(77);
        let eps: Vec<Vec<f64>> = draw_noise(&mut noise, m, mu_v.len());

        let mut tape = Tape::new();
        let mu = tape.leaf(&mu_v).unwrap();
        let sigma = tape.leaf(&[sigma_v]).unwrap();
        let mut terms = Vec::new();
        for e in &eps {
            let phi = tape.reparam(mu, sigma, e.clone()).unwrap();
            let ce = tape.softmax_cross_entropy(phi, target).unwrap();
            terms.push((1.0 / m as f64, ce));
        }
        let root = tape.weighted_sum(&terms).unwrap();
        tape.backward(root).unwrap();
        let d_sigma = tape.grad(sigma)[0];

        let mut expected = 0.0;
        for e in &eps {
            let phi = shift(&mu_v, sigma_v, e);
            let mut g = kernels::softmax(&phi);
            g[target] -= 1.0;
            expected += g.iter().zip(e).map(|(gi, ei)| gi * ei).sum::<f64>() / m as f64;
        }
        assert!((d_sigma - expected).abs() < 1e-12, "{d_sigma} vs {expected}");
    }
}
