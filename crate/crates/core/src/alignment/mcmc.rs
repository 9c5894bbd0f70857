use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{compiled_score, loss_from_scores, BoltzmannModel, PreferenceDataset, TrustRegion};
use crate::envkit::Trajectory;
use crate::reward::CompiledTemplate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub chain_length: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Proposal std as a fraction of each trust-region width.
    pub proposal_scale: f64,
    /// Largest relative change in loss between the posterior mean of the
    /// first 80% of kept samples and of all kept samples for the chain to
    /// count as converged.
    pub convergence_tol: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chain_length: 2000,
            burn_in: 500,
            thin: 5,
            proposal_scale: 0.1,
            convergence_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhResult {
    /// Kept samples after burn-in and thinning.
    pub samples: Vec<Vec<f64>>,
    /// Posterior mean of the kept samples, clipped to the trust region.
    pub estimate: Vec<f64>,
    pub acceptance_rate: f64,
    pub converged: bool,
    /// Loss at `estimate`.
    pub loss: f64,
    /// Relative loss change between the posterior mean of the first 80% of
    /// kept samples and `estimate`.
    pub loss_change: f64,
    pub diagnostic: Option<String>,
}

impl MhResult {
    pub fn sample_min(&self) -> Vec<f64> {
        self.fold(f64::INFINITY, f64::min)
    }

    pub fn sample_max(&self) -> Vec<f64> {
        self.fold(f64::NEG_INFINITY, f64::max)
    }

    fn fold(&self, init: f64, f: fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = vec![init; self.estimate.len()];
        for s in &self.samples {
            for (o, &x) in out.iter_mut().zip(s) {
                *o = f(*o, x);
            }
        }
        out
    }
}

fn mean(samples: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for s in samples {
        for (a, b) in m.iter_mut().zip(s) {
            *a += b;
        }
    }
    let n = samples.len().max(1) as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Random-walk Metropolis-Hastings on `exp(-loss)` with a uniform prior on
/// the trust region, started at `start`.
#[allow(clippy::too_many_arguments)]
pub fn mh_fit(
    template: &CompiledTemplate,
    trajs: &[Trajectory],
    data: &PreferenceDataset,
    region: &TrustRegion,
    start: &[f64],
    model: &BoltzmannModel,
    config: &McmcConfig,
    seed: u64,
) -> MhResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = start.len();
    let stds: Vec<f64> = region
        .widths()
        .iter()
        .map(|w| w * config.proposal_scale)
        .collect();
    let loss = |theta: &[f64]| {
        let scores: Vec<f64> = trajs
            .iter()
            .map(|t| compiled_score(template, theta, t))
            .collect();
        loss_from_scores(model, &scores, data)
    };

    let mut theta = region.clip(start);
    let mut current = loss(&theta);
    let mut accepted = 0usize;
    let mut samples = Vec::new();
    let thin = config.thin.max(1);
    for it in 0..config.chain_length {
        let proposal: Vec<f64> = theta
            .iter()
            .zip(&stds)
            .map(|(&x, &s)| {
                let z: f64 = rng.sample(StandardNormal);
                x + s * z
            })
            .collect();
        let u: f64 = rng.gen();
        if region.contains(&proposal) {
            let l = loss(&proposal);
            if u.ln() < current - l {
                theta = proposal;
                current = l;
                accepted += 1;
            }
        }
        if it >= config.burn_in && (it - config.burn_in) % thin == 0 {
            samples.push(theta.clone());
        }
    }

    let acceptance_rate = accepted as f64 / config.chain_length.max(1) as f64;
    if accepted == 0 || samples.is_empty() {
        let estimate = region.clip(start);
        return MhResult {
            loss: loss(&estimate),
            estimate,
            samples,
            acceptance_rate,
            converged: false,
            loss_change: f64::INFINITY,
            diagnostic: Some("no proposal was accepted; keeping the current parameters".into()),
        };
    }
    let estimate = region.clip(&mean(&samples, dim));
    let head = (samples.len() * 4).div_ceil(5);
    let head_loss = loss(&region.clip(&mean(&samples[..head], dim)));
    let final_loss = loss(&estimate);
    let loss_change = (final_loss - head_loss).abs() / head_loss.abs().max(1.0);
    let converged = loss_change <= config.convergence_tol;
    MhResult {
        samples,
        estimate,
        acceptance_rate,
        converged,
        loss: final_loss,
        loss_change,
        diagnostic: None,
    }
}
