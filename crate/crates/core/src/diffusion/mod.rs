//! SDEdit-style guided sampling with high-frequency replacement.
//!
//! The sampler starts from a noised reference `alpha(t_s) z_r + beta(t_s) eps`
//! and walks `t = t_s ..= 1`. While `t > t_stop` the high-frequency band of the
//! running latent is replaced by that of the noised reference, and an optional
//! mask pins pixels outside the editable region to the noised reference.
//! The denoiser is abstracted behind [`Denoiser`] so stubs, analytic priors and
//! external backends share one loop.

mod analytic;
pub mod experiment;

pub use analytic::{AnalyticGaussianDenoiser, SpectralComponent, SpectralMixtureDenoiser};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    downsample_mask, freq_swap_with, lf_swap_variant_with, Boundary, Field2D, GaussianKernel,
};

/// Discretized `(alpha(t), beta(t))` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl NoiseSchedule {
    /// Rectified-flow interpolation: `alpha = 1 - t/T`, `beta = t/T`.
    pub fn linear(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let t = steps as f64;
        Ok(Self {
            alpha: (0..=steps).map(|i| 1.0 - i as f64 / t).collect(),
            beta: (0..=steps).map(|i| i as f64 / t).collect(),
        })
    }

    /// Builds a schedule from an explicit `(alpha, beta)` table indexed by `t`.
    pub fn from_table(table: &[(f64, f64)]) -> Result<Self> {
        if table.len() < 2 {
            return Err(Error::invalid("schedule table needs entries for t = 0 and t = 1"));
        }
        for (t, &(a, b)) in table.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                return Err(Error::invalid(format!("schedule entry {t} outside [0, 1]")));
            }
            if t > 0 {
                let (pa, pb) = table[t - 1];
                if a > pa || b < pb {
                    return Err(Error::invalid(format!(
                        "schedule must have alpha non-increasing and beta non-decreasing (t = {t})"
                    )));
                }
            }
        }
        if table[0] != (1.0, 0.0) {
            return Err(Error::invalid("schedule must start at alpha = 1, beta = 0"));
        }
        Ok(Self {
            alpha: table.iter().map(|p| p.0).collect(),
            beta: table.iter().map(|p| p.1).collect(),
        })
    }

    /// Total number of steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn table(&self) -> Vec<(f64, f64)> {
        self.alpha.iter().copied().zip(self.beta.iter().copied()).collect()
    }
}

/// Which frequency band of the running latent is taken from the noised
/// reference while `t > t_stop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SwapBand {
    #[default]
    High,
    /// Experiment variant: the low band comes from the reference.
    Low,
}

/// How the reference noise is drawn across steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReuse {
    /// One draw for the whole run, reused at every step.
    #[default]
    Fixed,
    /// A fresh draw for each step's noised reference.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub steps: usize,
    pub t_start: usize,
    pub t_stop: usize,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub band: SwapBand,
    #[serde(default)]
    pub noise: NoiseReuse,
    #[serde(skip, default)]
    pub boundary: Boundary,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            steps: 30,
            t_start: 29,
            t_stop: 18,
            sigma: 4.0,
            seed: 0,
            band: SwapBand::High,
            noise: NoiseReuse::Fixed,
            boundary: Boundary::Reflect,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.steps != schedule.steps() {
            return Err(Error::invalid(format!(
                "sampler expects {} steps but schedule has {}",
                self.steps,
                schedule.steps()
            )));
        }
        if !(self.t_stop <= self.t_start && self.t_start <= self.steps) {
            return Err(Error::invalid(format!(
                "need 0 <= t_stop ({}) <= t_start ({}) <= steps ({})",
                self.t_stop, self.t_start, self.steps
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid("sampler sigma must be positive"));
        }
        Ok(())
    }
}

/// One denoising transition `z_t -> z_{t-1}`.
pub trait Denoiser {
    fn denoise_step(&mut self, latent: &Field2D, t: usize, prompt: &str) -> Result<Field2D>;
}

impl<F> Denoiser for F
where
    F: FnMut(&Field2D, usize, &str) -> Result<Field2D>,
{
    fn denoise_step(&mut self, latent: &Field2D, t: usize, prompt: &str) -> Result<Field2D> {
        self(latent, t, prompt)
    }
}

/// Standard normal field from `(seed, stream)`.
pub fn gaussian_noise(width: usize, height: usize, channels: usize, seed: u64, stream: u64) -> Field2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Field2D::from_fn(width, height, channels, |_, _, _| StandardNormal.sample(&mut rng))
}

// stream ids; analytic denoisers use their own range
const STREAM_REFERENCE: u64 = 0;
const STREAM_PER_STEP: u64 = 1 << 20;

/// `alpha(t) z_r + beta(t) eps`.
pub fn noise_to(z_r: &Field2D, t: usize, eps: &Field2D, s: &NoiseSchedule) -> Result<Field2D> {
    z_r.ensure_same_shape(eps)?;
    if t > s.steps() {
        return Err(Error::invalid(format!("step {t} outside schedule 0..={}", s.steps())));
    }
    let (a, b) = (s.alpha(t), s.beta(t));
    z_r.zip_map(eps, |z, e| a * z + b * e)
}

/// Per-step view of the sampler state, for instrumentation and tests.
pub struct StepRecord<'a> {
    pub t: usize,
    /// Noised reference at this step.
    pub reference: &'a Field2D,
    /// Latent handed to the denoiser at this step (after swap and blend).
    pub latent: &'a Field2D,
    pub swapped: bool,
}

/// Plain SDEdit: noise to `t_start`, then denoise to 0.
pub fn sdedit(
    z_r: &Field2D,
    denoiser: &mut dyn Denoiser,
    schedule: &NoiseSchedule,
    params: &SamplerParams,
    prompt: &str,
) -> Result<Field2D> {
    params.validate(schedule)?;
    let eps = reference_noise(z_r, params, params.t_start);
    let mut z = noise_to(z_r, params.t_start, &eps, schedule)?;
    for t in (1..=params.t_start).rev() {
        z = run_step(denoiser, &z, t, prompt)?;
    }
    Ok(z)
}

pub fn hfs_sample(
    z_r: &Field2D,
    mask: Option<&Field2D>,
    denoiser: &mut dyn Denoiser,
    schedule: &NoiseSchedule,
    params: &SamplerParams,
    kernel: &GaussianKernel,
    prompt: &str,
) -> Result<Field2D> {
    hfs_sample_observed(z_r, mask, denoiser, schedule, params, kernel, prompt, &mut |_| {})
}

/// [`hfs_sample`] with a callback invoked once per step with the noised
/// reference and the latent about to be denoised.
#[allow(clippy::too_many_arguments)]
pub fn hfs_sample_observed(
    z_r: &Field2D,
    mask: Option<&Field2D>,
    denoiser: &mut dyn Denoiser,
    schedule: &NoiseSchedule,
    params: &SamplerParams,
    kernel: &GaussianKernel,
    prompt: &str,
    observer: &mut dyn FnMut(StepRecord<'_>),
) -> Result<Field2D> {
    params.validate(schedule)?;
    let mask = match mask {
        None => None,
        Some(m) if m.width() == z_r.width() && m.height() == z_r.height() => {
            if m.channels() != 1 || !m.is_binary() {
                return Err(Error::invalid("sampler mask must be binary and single channel"));
            }
            Some(m.clone())
        }
        Some(m) => Some(downsample_mask(m, z_r.width(), z_r.height())?),
    };

    let fixed_eps = reference_noise(z_r, params, params.t_start);
    let mut z_hat = noise_to(z_r, params.t_start, &fixed_eps, schedule)?;
    for t in (1..=params.t_start).rev() {
        let reference = match params.noise {
            NoiseReuse::Fixed => noise_to(z_r, t, &fixed_eps, schedule)?,
            NoiseReuse::PerStep => noise_to(z_r, t, &reference_noise(z_r, params, t), schedule)?,
        };
        let swapped = t > params.t_stop;
        let mut z = if swapped {
            match params.band {
                SwapBand::High => freq_swap_with(&z_hat, &reference, kernel, params.boundary)?,
                SwapBand::Low => lf_swap_variant_with(&z_hat, &reference, kernel, params.boundary)?,
            }
        } else {
            z_hat
        };
        if let Some(m) = &mask {
            z = Field2D::masked_blend(m, &z, &reference)?;
        }
        observer(StepRecord {
            t,
            reference: &reference,
            latent: &z,
            swapped,
        });
        z_hat = run_step(denoiser, &z, t, prompt)?;
    }
    Ok(z_hat)
}

fn reference_noise(z_r: &Field2D, params: &SamplerParams, t: usize) -> Field2D {
    let stream = match params.noise {
        NoiseReuse::Fixed => STREAM_REFERENCE,
        NoiseReuse::PerStep => STREAM_PER_STEP + t as u64,
    };
    gaussian_noise(z_r.width(), z_r.height(), z_r.channels(), params.seed, stream)
}

fn run_step(denoiser: &mut dyn Denoiser, z: &Field2D, t: usize, prompt: &str) -> Result<Field2D> {
    let next = denoiser.denoise_step(z, t, prompt).map_err(|e| match e {
        Error::Denoiser { .. } => e,
        other => Error::Denoiser {
            step: t,
            message: other.to_string(),
        },
    })?;
    if next.shape() != z.shape() {
        return Err(Error::Denoiser {
            step: t,
            message: format!("output shape {} differs from input {}", next.shape(), z.shape()),
        });
    }
    Ok(next)
}
