//! Refiner and normal-predictor contracts with in-process implementations.

use serde::{Deserialize, Serialize};

use crate::diffusion::{hfs_sample, AnalyticGaussianDenoiser, NoiseSchedule, SamplerParams};
use crate::error::{Error, Result};
use crate::field::{gaussian_kernel, lowpass, Field2D};
use crate::mesh::TriMesh;
use crate::raster::{rasterize, OrthoCamera};

/// Everything a texture refiner gets for one view.
pub struct RefineRequest<'a> {
    /// Current RGB render of the view.
    pub color: &'a Field2D,
    /// Depth along the view direction, `+inf` on background.
    pub depth: &'a Field2D,
    /// 1 where the view may change the texture.
    pub mask: &'a Field2D,
    /// RGB render of the first scheduled view, for backends that condition
    /// on it.
    pub base_color: &'a Field2D,
    pub prompt: &'a str,
    pub sampler: &'a SamplerParams,
}

pub trait Refiner {
    /// Returns an RGB image of the same size as `req.color`.
    fn refine(&mut self, req: &RefineRequest) -> Result<Field2D>;
}

pub trait NormalPredictor {
    /// Camera-frame normals for `color` as seen from `cam`. Pixels without an
    /// estimate are zero.
    fn predict(&mut self, color: &Field2D, cam: &OrthoCamera) -> Result<Field2D>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StubMode {
    #[default]
    Identity,
    Unsharp,
    HfsPixel,
}

pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn refine(&mut self, req: &RefineRequest) -> Result<Field2D> {
        Ok(req.color.clone())
    }
}

/// `x + k (x - lowpass_sigma(x))`, clipped to `[0, 1]`.
pub struct UnsharpRefiner {
    pub k: f64,
    pub sigma: f64,
}

impl UnsharpRefiner {
    pub fn sharpen(&self, x: &Field2D) -> Result<Field2D> {
        let low = lowpass(x, &gaussian_kernel(self.sigma)?)?;
        x.zip_map(&low, |v, l| (v + self.k * (v - l)).clamp(0.0, 1.0))
    }
}

impl Refiner for UnsharpRefiner {
    fn refine(&mut self, req: &RefineRequest) -> Result<Field2D> {
        self.sharpen(req.color)
    }
}

/// Pixel-space HFS-SDEdit with a per-channel Gaussian prior fit to the
/// masked pixels of the request.
pub struct HfsPixelRefiner;

impl Refiner for HfsPixelRefiner {
    fn refine(&mut self, req: &RefineRequest) -> Result<Field2D> {
        let x = req.color;
        let ch = x.channels();
        let mut mean = vec![0.0; ch];
        let mut sq = vec![0.0; ch];
        let mut count = 0.0;
        let use_mask = req.mask.count_nonzero() > 0;
        for (i, px) in x.data().chunks_exact(ch).enumerate() {
            if use_mask && req.mask.data()[i] < 0.5 {
                continue;
            }
            count += 1.0;
            for c in 0..ch {
                mean[c] += px[c];
                sq[c] += px[c] * px[c];
            }
        }
        let var: Vec<f64> = (0..ch).map(|c| (sq[c] / count - (mean[c] / count).powi(2)).max(1e-4)).collect();
        let mean: Vec<f64> = mean.iter().map(|m| m / count).collect();
        let mu = Field2D::from_fn(x.width(), x.height(), ch, |_, _, c| mean[c]);
        let v = Field2D::from_fn(x.width(), x.height(), ch, |_, _, c| var[c]);
        let schedule = NoiseSchedule::linear(req.sampler.steps)?;
        let mut den = AnalyticGaussianDenoiser::new(mu, v, schedule.clone(), req.sampler.seed)?;
        let kernel = gaussian_kernel(req.sampler.sigma)?;
        let out = hfs_sample(x, Some(req.mask), &mut den, &schedule, req.sampler, &kernel, req.prompt)?;
        Ok(out.map(|v| v.clamp(0.0, 1.0)))
    }
}

pub fn stub_refiner(mode: StubMode, unsharp_k: f64, sigma: f64) -> Box<dyn Refiner> {
    match mode {
        StubMode::Identity => Box::new(IdentityRefiner),
        StubMode::Unsharp => Box::new(UnsharpRefiner { k: unsharp_k, sigma }),
        StubMode::HfsPixel => Box::new(HfsPixelRefiner),
    }
}

/// Predicts `(0, 0, 1)` everywhere, which adds no detail under UDN blending.
pub struct FlatPredictor;

impl NormalPredictor for FlatPredictor {
    fn predict(&mut self, color: &Field2D, _cam: &OrthoCamera) -> Result<Field2D> {
        Ok(Field2D::from_fn(color.width(), color.height(), 3, |_, _, c| if c == 2 { 1.0 } else { 0.0 }))
    }
}

/// Face normals of a reference mesh as seen from the camera, for oracle
/// experiments. Face rather than interpolated normals, so the map is the
/// exact gradient of the reference's depth.
pub struct OraclePredictor {
    pub reference: TriMesh,
}

impl NormalPredictor for OraclePredictor {
    fn predict(&mut self, color: &Field2D, cam: &OrthoCamera) -> Result<Field2D> {
        let g = rasterize(&self.reference, cam, color.width(), color.height(), false)?;
        let mut n = Field2D::zeros(color.width(), color.height(), 3);
        for (px, &f) in n.data_mut().chunks_exact_mut(3).zip(&g.face) {
            if f == u32::MAX {
                continue;
            }
            if let Some(unit) = self.reference.face_cross(f as usize).try_normalize(1e-300) {
                px.copy_from_slice(cam.to_camera(&unit).as_slice());
            }
        }
        Ok(n)
    }
}

pub(crate) fn check_refined(out: &Field2D, req: &RefineRequest) -> Result<()> {
    if out.shape() != req.color.shape() {
        return Err(Error::Backend(format!(
            "refiner returned {:?}, expected {:?}",
            out.shape(),
            req.color.shape()
        )));
    }
    if !out.all_finite() {
        return Err(Error::Backend("refiner returned non-finite values".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request<'a>(color: &'a Field2D, depth: &'a Field2D, mask: &'a Field2D, sampler: &'a SamplerParams) -> RefineRequest<'a> {
        RefineRequest {
            color,
            depth,
            mask,
            base_color: color,
            prompt: "",
            sampler,
        }
    }

    #[test]
    fn identity_and_constant_unsharp() {
        let x = Field2D::from_fn(8, 8, 3, |x, y, c| ((x * y + c) % 5) as f64 / 4.0);
        let (d, m, s) = (Field2D::zeros(8, 8, 1), Field2D::filled(8, 8, 1, 1.0), SamplerParams::default());
        assert_eq!(IdentityRefiner.refine(&request(&x, &d, &m, &s)).unwrap(), x);
        let c = Field2D::filled(8, 8, 3, 0.3);
        let out = UnsharpRefiner { k: 1.0, sigma: 2.0 }.refine(&request(&c, &d, &m, &s)).unwrap();
        assert!(out.max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn unsharp_step_overshoot_matches_convolution() {
        // 1D step along x, reflect boundary; the oracle convolves by hand
        let (w, sigma) = (64usize, 4.0f64);
        let step = |x: usize| if x < w / 2 { 0.25 } else { 0.75 };
        let img = Field2D::from_fn(w, 32, 1, |x, _, _| step(x));
        let out = UnsharpRefiner { k: 1.0, sigma }.sharpen(&img).unwrap();
        let r = (3.0 * sigma).ceil() as i64;
        let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let norm: f64 = taps.iter().sum();
        let reflect = |i: i64| -> usize {
            let n = w as i64;
            let mut i = i;
            while i < 0 || i >= n {
                i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
            }
            i as usize
        };
        for x in [w / 2 - 2, w / 2 - 1, w / 2, w / 2 + 1] {
            let low: f64 = (-r..=r).map(|i| taps[(i + r) as usize] * step(reflect(x as i64 + i))).sum::<f64>() / norm;
            let want = step(x) + (step(x) - low);
            assert!((out.get(x, 1, 0) - want).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn hfs_pixel_keeps_unmasked_pixels_close() {
        let x = Field2D::from_fn(16, 16, 3, |x, y, c| 0.2 + 0.05 * ((x + 2 * y + c) % 7) as f64);
        let mask = Field2D::from_fn(16, 16, 1, |x, _, _| if x < 8 { 1.0 } else { 0.0 });
        let d = Field2D::zeros(16, 16, 1);
        let s = SamplerParams::default();
        let out = HfsPixelRefiner.refine(&request(&x, &d, &mask, &s)).unwrap();
        assert_eq!(out.shape(), x.shape());
        let again = HfsPixelRefiner.refine(&request(&x, &d, &mask, &s)).unwrap();
        assert_eq!(out, again);
    }
}
