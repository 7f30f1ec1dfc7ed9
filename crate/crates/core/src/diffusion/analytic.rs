use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::{gaussian_noise, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::field::{fft2, ifft2_real, Field2D};

const STREAM_RENOISE: u64 = 1 << 40;
const STREAM_COMPONENT: u64 = 2 << 40;
const STREAM_POSTERIOR: u64 = 3 << 40;

/// Exact denoiser for an element-wise Gaussian prior `N(mu, diag(var))`.
///
/// Each transition computes the posterior mean of the clean signal given
/// `z_t = alpha(t) x + beta(t) eps` and re-noises it to level `t - 1` with
/// noise derived from `(seed, t)`.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianDenoiser {
    mu: Field2D,
    var: Field2D,
    schedule: NoiseSchedule,
    seed: u64,
}

impl AnalyticGaussianDenoiser {
    pub fn new(mu: Field2D, var: Field2D, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        mu.ensure_same_shape(&var)?;
        if var.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("prior variance must be positive"));
        }
        Ok(Self {
            mu,
            var,
            schedule,
            seed,
        })
    }

    /// `E[x | z_t]` under the prior.
    pub fn posterior_mean(&self, z_t: &Field2D, t: usize) -> Result<Field2D> {
        z_t.ensure_same_shape(&self.mu)?;
        let a = self.schedule.alpha(t);
        let b = self.schedule.beta(t);
        let mut out = self.mu.clone();
        for ((o, &z), &v) in out.data_mut().iter_mut().zip(z_t.data()).zip(self.var.data()) {
            let mu = *o;
            *o = mu + a * v / (a * a * v + b * b) * (z - a * mu);
        }
        Ok(out)
    }
}

fn renoise(m: Field2D, t: usize, schedule: &NoiseSchedule, seed: u64) -> Field2D {
    let (a, b) = (schedule.alpha(t - 1), schedule.beta(t - 1));
    if b == 0.0 {
        return if a == 1.0 { m } else { m.scale(a) };
    }
    let eps = gaussian_noise(m.width(), m.height(), m.channels(), seed, STREAM_RENOISE + t as u64);
    m.zip_map(&eps, |x, e| a * x + b * e).expect("same shape")
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn denoise_step(&mut self, latent: &Field2D, t: usize, _prompt: &str) -> Result<Field2D> {
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::invalid(format!("denoise step {t} out of range")));
        }
        let m = self.posterior_mean(latent, t)?;
        Ok(renoise(m, t, &self.schedule, self.seed))
    }
}

/// Zero-mean stationary Gaussian described by its power per DFT coefficient
/// (same normalization as [`crate::field::rapsd`]: `E|F|^2 / N`).
#[derive(Debug, Clone)]
pub struct SpectralComponent {
    pub weight: f64,
    pub spectrum: Vec<f64>,
}

/// Toy generator with two or more image "domains": a mixture of stationary
/// Gaussians, each diagonal in the Fourier basis.
///
/// Each transition samples a clean signal from the exact posterior
/// `p(x | z_t)` (component first, then the Gaussian conditional) and re-noises
/// it to level `t - 1`, so marginals stay on the prior's noising path. Domain
/// membership is inferred from the whole latent, so the content of one band
/// steers what gets synthesized in the others. Single-channel latents only.
#[derive(Debug, Clone)]
pub struct SpectralMixtureDenoiser {
    width: usize,
    height: usize,
    components: Vec<SpectralComponent>,
    schedule: NoiseSchedule,
    seed: u64,
    last_responsibilities: Vec<f64>,
}

impl SpectralMixtureDenoiser {
    pub fn new(
        width: usize,
        height: usize,
        components: Vec<SpectralComponent>,
        schedule: NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        for c in &components {
            if c.spectrum.len() != width * height {
                return Err(Error::shape(width * height, c.spectrum.len()));
            }
            if !(c.weight > 0.0) || c.spectrum.iter().any(|&s| !(s >= 0.0)) {
                return Err(Error::invalid("mixture weights must be positive and spectra non-negative"));
            }
        }
        let n = components.len();
        Ok(Self {
            width,
            height,
            components,
            schedule,
            seed,
            last_responsibilities: vec![1.0 / n as f64; n],
        })
    }

    /// Posterior component probabilities from the most recent step.
    pub fn responsibilities(&self) -> &[f64] {
        &self.last_responsibilities
    }

    fn check(&self, z_t: &Field2D) -> Result<()> {
        if z_t.width() != self.width || z_t.height() != self.height || z_t.channels() != 1 {
            return Err(Error::shape(format!("{}x{}x1", self.width, self.height), z_t.shape()));
        }
        Ok(())
    }

    /// `p(k | z_t)` for every component.
    fn component_posterior(&self, spec: &[Complex64], t: usize) -> Vec<f64> {
        let a = self.schedule.alpha(t);
        let b = self.schedule.beta(t);
        let n = (self.width * self.height) as f64;
        // each coefficient contributes half a complex Gaussian term, which
        // counts every real degree of freedom once
        let mut logp: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let mut acc = c.weight.ln();
                for (z, &s) in spec.iter().zip(&c.spectrum) {
                    let v = a * a * s + b * b;
                    if v > 0.0 {
                        acc += -0.5 * (z.norm_sqr() / n / v + v.ln());
                    }
                }
                acc
            })
            .collect();
        let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logp.iter_mut().for_each(|l| *l = (*l - max).exp());
        let total: f64 = logp.iter().sum();
        logp.iter().map(|l| l / total).collect()
    }

    /// `E[x | z_t]`, averaging the per-component conditional means.
    pub fn posterior_mean(&mut self, z_t: &Field2D, t: usize) -> Result<Field2D> {
        self.check(z_t)?;
        let (a, b) = (self.schedule.alpha(t), self.schedule.beta(t));
        let spec = fft2(z_t)?;
        let gamma = self.component_posterior(&spec, t);
        let mut out = vec![Complex64::new(0.0, 0.0); spec.len()];
        for (g, c) in gamma.iter().zip(&self.components) {
            for ((o, z), &s) in out.iter_mut().zip(&spec).zip(&c.spectrum) {
                let v = a * a * s + b * b;
                let gain = if v > 0.0 { a * s / v } else { 0.0 };
                *o += z * (g * gain);
            }
        }
        self.last_responsibilities = gamma;
        Ok(ifft2_real(&out, self.width, self.height))
    }

    /// Draws `x ~ p(x | z_t)` with randomness from `(seed, t)`.
    pub fn posterior_sample(&mut self, z_t: &Field2D, t: usize) -> Result<Field2D> {
        self.check(z_t)?;
        let (a, b) = (self.schedule.alpha(t), self.schedule.beta(t));
        let spec = fft2(z_t)?;
        let gamma = self.component_posterior(&spec, t);

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(STREAM_COMPONENT + t as u64);
        let u: f64 = rng.gen();
        let mut k = gamma.len() - 1;
        let mut acc = 0.0;
        for (i, g) in gamma.iter().enumerate() {
            acc += g;
            if u < acc {
                k = i;
                break;
            }
        }
        let white = fft2(&gaussian_noise(self.width, self.height, 1, self.seed, STREAM_POSTERIOR + t as u64))?;
        let c = &self.components[k];
        let out: Vec<Complex64> = spec
            .iter()
            .zip(&white)
            .zip(&c.spectrum)
            .map(|((z, w), &s)| {
                let v = a * a * s + b * b;
                if v > 0.0 {
                    z * (a * s / v) + w * (s * b * b / v).sqrt()
                } else {
                    w * s.sqrt()
                }
            })
            .collect();
        self.last_responsibilities = gamma;
        Ok(ifft2_real(&out, self.width, self.height))
    }
}

impl Denoiser for SpectralMixtureDenoiser {
    fn denoise_step(&mut self, latent: &Field2D, t: usize, _prompt: &str) -> Result<Field2D> {
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::invalid(format!("denoise step {t} out of range")));
        }
        let x = self.posterior_sample(latent, t)?;
        Ok(renoise(x, t, &self.schedule, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_step_returns_posterior_mean() {
        let s = NoiseSchedule::linear(10).unwrap();
        let mu = Field2D::filled(3, 3, 1, 0.5);
        let var = Field2D::filled(3, 3, 1, 2.0);
        let mut d = AnalyticGaussianDenoiser::new(mu, var, s, 9).unwrap();
        let z = Field2D::from_fn(3, 3, 1, |x, y, _| (x + y) as f64);
        let m = d.posterior_mean(&z, 1).unwrap();
        assert_eq!(d.denoise_step(&z, 1, "").unwrap(), m);
    }

    #[test]
    fn clean_endpoint_observes_signal() {
        let s = NoiseSchedule::linear(10).unwrap();
        let d = AnalyticGaussianDenoiser::new(
            Field2D::filled(2, 2, 1, -3.0),
            Field2D::filled(2, 2, 1, 0.25),
            s,
            0,
        )
        .unwrap();
        let z0 = Field2D::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(d.posterior_mean(&z0, 0).unwrap().max_abs_diff(&z0) < 1e-12);
    }

    #[test]
    fn scalar_posterior_oracle() {
        // alpha = beta = 1/sqrt(2), mu = 0, var = 1: m = z / sqrt(2)
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = NoiseSchedule::from_table(&[(1.0, 0.0), (h, h)]).unwrap();
        let d = AnalyticGaussianDenoiser::new(Field2D::zeros(2, 1, 1), Field2D::filled(2, 1, 1, 1.0), s, 0)
            .unwrap();
        let z = Field2D::from_vec(2, 1, 1, vec![1.0, -4.0]).unwrap();
        let m = d.posterior_mean(&z, 1).unwrap();
        assert!((m.get(0, 0, 0) - h).abs() < 1e-15);
        assert!((m.get(1, 0, 0) + 4.0 * h).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_variance() {
        let s = NoiseSchedule::linear(4).unwrap();
        assert!(AnalyticGaussianDenoiser::new(Field2D::zeros(2, 2, 1), Field2D::zeros(2, 2, 1), s, 0).is_err());
    }

    #[test]
    fn single_white_component_matches_elementwise_prior() {
        // a flat spectrum is the i.i.d. N(0, 1) prior
        let s = NoiseSchedule::linear(10).unwrap();
        let mut mix = SpectralMixtureDenoiser::new(
            8,
            8,
            vec![SpectralComponent {
                weight: 1.0,
                spectrum: vec![1.0; 64],
            }],
            s.clone(),
            4,
        )
        .unwrap();
        let gauss =
            AnalyticGaussianDenoiser::new(Field2D::zeros(8, 8, 1), Field2D::filled(8, 8, 1, 1.0), s, 4).unwrap();
        let z = gaussian_noise(8, 8, 1, 1, 0);
        let a = mix.posterior_mean(&z, 6).unwrap();
        let b = gauss.posterior_mean(&z, 6).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn responsibilities_pick_the_matching_domain() {
        let s = NoiseSchedule::linear(10).unwrap();
        let white = vec![1.0; 256];
        let mut lowpass = vec![0.0; 256];
        lowpass[0] = 256.0;
        let mut mix = SpectralMixtureDenoiser::new(
            16,
            16,
            vec![
                SpectralComponent { weight: 0.5, spectrum: white },
                SpectralComponent { weight: 0.5, spectrum: lowpass },
            ],
            s,
            0,
        )
        .unwrap();
        // a clean white-noise sample at t = 1 is overwhelmingly from the white component
        let z = gaussian_noise(16, 16, 1, 2, 0).scale(0.9);
        mix.posterior_mean(&z, 1).unwrap();
        assert!(mix.responsibilities()[0] > 0.999);
    }
}
