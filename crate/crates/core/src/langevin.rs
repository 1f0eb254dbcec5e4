//! Short-run Langevin flow: T gradient-plus-noise steps toward the EBM.
//!
//! Each step applies `x ← x + (δ²/2)·∇_x f(x) + δ·noise_scale·ε` with a
//! fresh standard-normal ε per chain per step. Noise for a step is drawn
//! with one `gaussian_sample(rng, n, d)` call before the update, so a run
//! of `T = a + b` steps equals running `a` steps, then `b` more with the
//! continued stream. When `noise_scale == 0` no draws are consumed.

use serde::{Deserialize, Serialize};

use crate::ebm::EbmModel;
use crate::error::{Error, Result};
use crate::rng::{gaussian_sample, uniform_sample, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handling of the noise term during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Textbook Langevin: full noise every step.
    Full,
    /// Noise removed entirely (the gradient-flow variant).
    Off,
    /// Noise decays over epochs with `max(1 − epoch/K, 0)^20`.
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinConfig {
    /// Number of Langevin steps T.
    pub steps: usize,
    /// Step size δ in data units.
    pub step_size: f64,
    pub noise_mode: NoiseMode,
    /// Decay horizon K in epochs (used when `noise_mode = Decay`).
    pub decay_epochs: usize,
    /// Multiplier applied to δ when sampling from a trained checkpoint.
    pub test_step_ratio: f64,
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("langevin step size must be positive"));
        }
        if self.noise_mode == NoiseMode::Decay && self.decay_epochs == 0 {
            return Err(Error::invalid("decay horizon K must be at least 1"));
        }
        if !(self.test_step_ratio > 0.0) {
            return Err(Error::invalid("test step ratio must be positive"));
        }
        Ok(())
    }

    /// Copy with the test-time step size `δ·test_step_ratio`.
    pub fn at_test(&self) -> Self {
        Self {
            step_size: self.step_size * self.test_step_ratio,
            ..*self
        }
    }

    /// Noise scale in force at a given training epoch.
    pub fn noise_scale_at(&self, epoch: usize) -> f64 {
        match self.noise_mode {
            NoiseMode::Full => 1.0,
            NoiseMode::Off => 0.0,
            NoiseMode::Decay => noise_decay_ratio(epoch, self.decay_epochs),
        }
    }
}

/// Noise decay schedule `max(1 − epoch/K, 0)^20`; once the base hits zero
/// it stays zero.
pub fn noise_decay_ratio(epoch: usize, k: usize) -> f64 {
    assert!(k >= 1, "decay horizon K must be at least 1");
    let base = 1.0 - epoch as f64 / k as f64;
    if base <= 0.0 {
        0.0
    } else {
        base.powi(20)
    }
}

/// Coordinates beyond this magnitude abort the chain instead of being
/// clamped (clamping would bias the moment-matching diagnostics).
const TRUST_RADIUS: f64 = 1e6;

/// Runs exactly `cfg.steps` Langevin updates from `x0`. Pure given the
/// rng state; chains advance in lockstep and the result is independent of
/// internal parallelism.
pub fn langevin_flow<S: Scalar>(
    ebm: &EbmModel<S>,
    x0: &Tensor<S>,
    cfg: &LangevinConfig,
    noise_scale: f64,
    rng: &mut Rng,
) -> Result<Tensor<S>> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&noise_scale) {
        return Err(Error::invalid(format!(
            "noise scale must lie in [0, 1], got {noise_scale}"
        )));
    }
    let (n, d) = x0.dims2()?;
    if d != ebm.dim() {
        return Err(Error::ShapeMismatch {
            op: "langevin_flow",
            lhs: vec![n, d],
            rhs: vec![n, ebm.dim()],
        });
    }
    x0.ensure_finite("langevin_flow")?;

    let delta = S::of(cfg.step_size);
    let half_sq = S::of(0.5 * cfg.step_size * cfg.step_size);
    let noise_coef = S::of(cfg.step_size * noise_scale);
    let trust = S::of(TRUST_RADIUS);

    let mut x = x0.clone();
    let _ = delta;
    for step in 0..cfg.steps {
        let (_, grad) = ebm.value_and_grad(&x)?;
        let noise = if noise_scale > 0.0 {
            Some(gaussian_sample::<S>(rng, n, d))
        } else {
            None
        };
        let xd = x.data_mut();
        for i in 0..n {
            for j in 0..d {
                let idx = i * d + j;
                let g = grad.data()[idx];
                if !g.is_finite() {
                    return Err(Error::ChainDiverged { step, chain: i });
                }
                let mut v = xd[idx] + half_sq * g;
                if let Some(eps) = &noise {
                    v = v + noise_coef * eps.data()[idx];
                }
                if v.abs() > trust {
                    return Err(Error::ChainDiverged { step, chain: i });
                }
                xd[idx] = v;
            }
        }
    }
    Ok(x)
}

/// Chain initializer for the short-run EBM baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ChainInit {
    Uniform { lo: f64, hi: f64 },
    Gaussian,
}

/// Short-run EBM generator: draw x₀ from p₀, then run the Langevin flow.
pub fn shortrun_sample<S: Scalar>(
    ebm: &EbmModel<S>,
    cfg: &LangevinConfig,
    init: ChainInit,
    n: usize,
    noise_scale: f64,
    rng: &mut Rng,
) -> Result<Tensor<S>> {
    if n == 0 {
        return Err(Error::EmptyBatch("shortrun_sample"));
    }
    let x0 = match init {
        ChainInit::Uniform { lo, hi } => uniform_sample(rng, n, ebm.dim(), lo, hi)?,
        ChainInit::Gaussian => gaussian_sample(rng, n, ebm.dim()),
    };
    langevin_flow(ebm, &x0, cfg, noise_scale, rng)
}
