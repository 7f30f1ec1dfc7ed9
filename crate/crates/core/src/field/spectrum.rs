use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::Field2D;
use crate::error::{Error, Result};

/// Radially averaged power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct RapsdCurve {
    /// Radial frequency of each bin in cycles per image.
    pub radial_frequency: Vec<f64>,
    /// Mean `|DFT|^2 / N` over the frequencies that fall into each bin.
    pub power: Vec<f64>,
    /// Number of DFT coefficients counted in each bin.
    pub counts: Vec<usize>,
}

impl RapsdCurve {
    pub fn bins(&self) -> usize {
        self.power.len()
    }

    /// Mean power over bins `lo..hi`.
    pub fn band_mean(&self, lo: usize, hi: usize) -> f64 {
        let hi = hi.min(self.bins());
        if lo >= hi {
            return 0.0;
        }
        self.power[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("radius,power\n");
        for (r, p) in self.radial_frequency.iter().zip(&self.power) {
            s.push_str(&format!("{r},{p}\n"));
        }
        s
    }
}

/// Forward 2D DFT of a single-channel field (unnormalized, row-major output).
pub fn fft2(f: &Field2D) -> Result<Vec<Complex64>> {
    if f.channels() != 1 {
        return Err(Error::invalid("fft2 expects a single-channel field"));
    }
    let mut buf: Vec<Complex64> = f.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut buf, f.width(), f.height(), false);
    Ok(buf)
}

/// Inverse of [`fft2`] keeping the real part, normalized by `1 / (w h)`.
pub fn ifft2_real(spec: &[Complex64], width: usize, height: usize) -> Field2D {
    assert_eq!(spec.len(), width * height);
    let mut buf = spec.to_vec();
    transform_2d(&mut buf, width, height, true);
    let n = (width * height) as f64;
    Field2D::from_vec_unchecked(width, height, 1, buf.iter().map(|c| c.re / n).collect())
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform_2d(buf: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    let (row_fft, col_fft) = PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        if inverse {
            (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
        } else {
            (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
        }
    });
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Signed integer frequency of DFT index `k` on an `n`-point grid.
#[inline]
pub(crate) fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Power spectrum binned over integer-radius annuli (radius rounded to the
/// nearest integer, in cycles per image). No windowing; DC lands in bin 0.
pub fn rapsd(f: &Field2D) -> Result<RapsdCurve> {
    if f.is_empty() {
        return Err(Error::invalid("rapsd of an empty field"));
    }
    if f.channels() != 1 {
        return Err(Error::invalid("rapsd expects a single-channel field"));
    }
    let (w, h) = (f.width(), f.height());
    if w < 4 || h < 4 {
        return Err(Error::invalid("rapsd needs at least 4x4 pixels"));
    }
    let spec = fft2(f)?;
    let n = (w * h) as f64;
    let bins = w.min(h) / 2;
    let mut sum = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for ky in 0..h {
        let fy = signed_freq(ky, h);
        for kx in 0..w {
            let fx = signed_freq(kx, w);
            let b = (fx * fx + fy * fy).sqrt().round() as usize;
            if b < bins {
                sum[b] += spec[ky * w + kx].norm_sqr() / n;
                counts[b] += 1;
            }
        }
    }
    let power = sum
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(RapsdCurve {
        radial_frequency: (0..bins).map(|b| b as f64).collect(),
        power,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    #[test]
    fn fft_round_trip() {
        let f = Field2D::from_fn(12, 8, 1, |x, y, _| (x as f64).sin() + y as f64 * 0.25);
        let s = fft2(&f).unwrap();
        let g = ifft2_real(&s, 12, 8);
        assert!(g.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = rapsd(&Field2D::filled(32, 32, 1, 3.0)).unwrap();
        assert_eq!(c.bins(), 16);
        assert!((c.power[0] - 9.0 * 1024.0).abs() < 1e-6);
        assert!(c.power[1..].iter().all(|&p| p < 1e-18));
    }

    #[test]
    fn sinusoid_peaks_at_its_radius() {
        for k in [3usize, 7, 12] {
            let f = Field2D::from_fn(64, 64, 1, |x, _, _| {
                (2.0 * PI * k as f64 * x as f64 / 64.0).cos()
            });
            let c = rapsd(&f).unwrap();
            let argmax = (0..c.bins())
                .max_by(|&a, &b| c.power[a].partial_cmp(&c.power[b]).unwrap())
                .unwrap();
            assert_eq!(argmax, k);
            // brute-force DFT oracle: all energy at (+-k, 0), |F|^2/N = N/4 each
            let expect = 2.0 * (64.0 * 64.0 / 4.0) / c.counts[k] as f64;
            assert!((c.power[k] - expect).abs() < 1e-6 * expect);
        }
    }

    #[test]
    fn white_noise_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = Field2D::from_fn(256, 256, 1, |_, _, _| StandardNormal.sample(&mut rng));
        let c = rapsd(&f).unwrap();
        let band = &c.power[5..=100];
        let mean = band.iter().sum::<f64>() / band.len() as f64;
        let var = band.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / band.len() as f64;
        assert!(var.sqrt() / mean < 0.2, "cv = {}", var.sqrt() / mean);
        assert!((mean - 1.0).abs() < 0.05);
    }

    #[test]
    fn binned_power_bookkeeping() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Field2D::from_fn(20, 16, 1, |_, _, _| StandardNormal.sample(&mut rng));
        let c = rapsd(&f).unwrap();
        let spec = fft2(&f).unwrap();
        let n = 320.0;
        let mut total = 0.0;
        let mut count = 0usize;
        for ky in 0..16 {
            for kx in 0..20 {
                let r = (signed_freq(kx, 20).powi(2) + signed_freq(ky, 16).powi(2)).sqrt();
                if (r.round() as usize) < c.bins() {
                    total += spec[ky * 20 + kx].norm_sqr() / n;
                    count += 1;
                }
            }
        }
        let binned: f64 = c.power.iter().zip(&c.counts).map(|(p, &k)| p * k as f64).sum();
        let nb: usize = c.counts.iter().sum();
        assert_eq!(nb, count);
        assert!((binned / nb as f64 - total / count as f64).abs() < 1e-6 * total / count as f64);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(rapsd(&Field2D::zeros(3, 8, 1)).is_err());
        assert!(rapsd(&Field2D::zeros(8, 8, 2)).is_err());
        assert!(rapsd(&Field2D::zeros(0, 0, 1)).is_err());
    }
}
