//! Dense 2D fields: images, latents, depth maps, normal maps and masks.
//!
//! A [`Field2D`] is a row-major grid of `f64` samples with `channels`
//! interleaved values per pixel. Filtering, frequency swapping and spectral
//! analysis live in the submodules.

mod filter;
pub mod io;
mod spectrum;

pub use filter::{
    downsample_mask, freq_swap, freq_swap_with, gaussian_kernel, lf_swap_variant,
    lf_swap_variant_with, lowpass, lowpass_with, Boundary, GaussianKernel,
};
pub use spectrum::{fft2, ifft2_real, rapsd, RapsdCurve};

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Field2D {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

impl fmt::Debug for Field2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field2D")
            .field("shape", &self.shape().to_string())
            .finish_non_exhaustive()
    }
}

impl Field2D {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(
                format!("{} samples", width * height * channels),
                format!("{} samples", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a field without the finiteness check; used for depth buffers
    /// that carry `+inf` on background pixels.
    pub fn from_vec_unchecked(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> Shape {
        Shape {
            width: self.width,
            height: self.height,
            channels: self.channels,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.index(x, y, 0);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn ensure_same_shape(&self, other: &Field2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn ensure_same_size(&self, other: &Field2D) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2D {
        Field2D {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field2D, f: impl Fn(f64, f64) -> f64) -> Result<Field2D> {
        self.ensure_same_shape(other)?;
        Ok(Field2D {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            width: self.width,
            height: self.height,
            channels: self.channels,
        })
    }

    pub fn add(&self, other: &Field2D) -> Result<Field2D> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field2D) -> Result<Field2D> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Field2D {
        self.map(|v| v * s)
    }

    /// Extracts one channel as a single-channel field.
    pub fn channel(&self, c: usize) -> Field2D {
        assert!(c < self.channels);
        Field2D {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    pub fn from_channels(planes: &[Field2D]) -> Result<Field2D> {
        let first = planes.first().ok_or_else(|| Error::invalid("no channels"))?;
        for p in planes {
            if p.channels != 1 {
                return Err(Error::invalid("from_channels expects single-channel planes"));
            }
            first.ensure_same_size(p)?;
        }
        let n = planes.len();
        let mut data = vec![0.0; first.pixel_count() * n];
        for (c, p) in planes.iter().enumerate() {
            for (i, v) in p.data.iter().enumerate() {
                data[i * n + c] = *v;
            }
        }
        Ok(Field2D {
            width: first.width,
            height: first.height,
            channels: n,
            data,
        })
    }

    /// Mean over channels, producing a single-channel field.
    pub fn channel_mean(&self) -> Field2D {
        let c = self.channels as f64;
        Field2D {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .data
                .chunks_exact(self.channels)
                .map(|px| px.iter().sum::<f64>() / c)
                .collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Field2D) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every sample is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Per-pixel blend `mask * a + (1 - mask) * b`; `mask` is single channel
    /// and broadcast over the channels of `a` and `b`.
    pub fn masked_blend(mask: &Field2D, a: &Field2D, b: &Field2D) -> Result<Field2D> {
        a.ensure_same_shape(b)?;
        mask.ensure_same_size(a)?;
        if mask.channels != 1 {
            return Err(Error::invalid("blend mask must be single channel"));
        }
        let ch = a.channels;
        let mut out = a.clone();
        for (p, &m) in mask.data.iter().enumerate() {
            for c in 0..ch {
                let i = p * ch + c;
                out.data[i] = m * a.data[i] + (1.0 - m) * b.data[i];
            }
        }
        Ok(out)
    }

    /// Rotates the grid by 90 degrees counter-clockwise (as displayed with
    /// rows running downward).
    pub fn rotate90_ccw(&self) -> Field2D {
        let (w, h) = (self.width, self.height);
        let mut out = Field2D::zeros(h, w, self.channels);
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    out.set(y, w - 1 - x, c, self.get(x, y, c));
                }
            }
        }
        out
    }
}
