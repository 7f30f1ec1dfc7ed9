use super::Field2D;
use crate::error::{Error, Result};

/// Boundary extension used by separable convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Half-sample symmetric reflection: `c b a | a b c | c b a`.
    #[default]
    Reflect,
    /// Periodic extension.
    Wrap,
}

/// Normalized, symmetric, truncated 1D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub sigma: f64,
    pub radius: usize,
    pub taps: Vec<f64>,
}

impl GaussianKernel {
    /// The unit impulse: a single tap of weight 1, so filtering is the identity.
    pub fn identity() -> Self {
        Self {
            sigma: 0.0,
            radius: 0,
            taps: vec![1.0],
        }
    }

    /// Continuous transfer value of the truncated kernel at `freq` cycles per
    /// sample (the DTFT of the taps).
    pub fn transfer(&self, freq: f64) -> f64 {
        let r = self.radius as isize;
        self.taps
            .iter()
            .enumerate()
            .map(|(i, w)| w * (2.0 * std::f64::consts::PI * freq * (i as isize - r) as f64).cos())
            .sum()
    }
}

/// Sampled Gaussian with radius `ceil(3 sigma)`, renormalized after truncation.
pub fn gaussian_kernel(sigma: f64) -> Result<GaussianKernel> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / denom).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    // exact symmetry after the division
    for i in 0..radius {
        let avg = 0.5 * (taps[i] + taps[2 * radius - i]);
        taps[i] = avg;
        taps[2 * radius - i] = avg;
    }
    Ok(GaussianKernel { sigma, radius, taps })
}

#[inline]
fn extend(i: isize, n: usize, boundary: Boundary) -> usize {
    let n = n as isize;
    match boundary {
        Boundary::Wrap => i.rem_euclid(n) as usize,
        Boundary::Reflect => {
            let period = 2 * n;
            let m = i.rem_euclid(period);
            (if m < n { m } else { period - 1 - m }) as usize
        }
    }
}

pub fn lowpass(f: &Field2D, k: &GaussianKernel) -> Result<Field2D> {
    lowpass_with(f, k, Boundary::Reflect)
}

/// Separable Gaussian convolution applied to each channel independently.
pub fn lowpass_with(f: &Field2D, k: &GaussianKernel, boundary: Boundary) -> Result<Field2D> {
    if f.is_empty() {
        return Err(Error::invalid("lowpass of an empty field"));
    }
    let (w, h, ch) = (f.width(), f.height(), f.channels());
    if k.radius > w.min(h) {
        return Err(Error::shape(
            format!("kernel radius <= {}", w.min(h)),
            format!("radius {}", k.radius),
        ));
    }
    let r = k.radius as isize;
    let src = f.data();

    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (t, wt) in k.taps.iter().enumerate() {
                    let sx = extend(x as isize + t as isize - r, w, boundary);
                    acc += wt * src[(row + sx) * ch + c];
                }
                tmp[(row + x) * ch + c] = acc;
            }
        }
    }

    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (t, wt) in k.taps.iter().enumerate() {
                    let sy = extend(y as isize + t as isize - r, h, boundary);
                    acc += wt * tmp[(sy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    Ok(Field2D::from_vec_unchecked(w, h, ch, out))
}

/// High-frequency replacement: `(delta - G) * donor + G * base`.
///
/// Evaluated as `donor + G * (base - donor)`, which is exact when the two
/// inputs coincide.
pub fn freq_swap(base: &Field2D, donor: &Field2D, k: &GaussianKernel) -> Result<Field2D> {
    freq_swap_with(base, donor, k, Boundary::Reflect)
}

pub fn freq_swap_with(
    base: &Field2D,
    donor: &Field2D,
    k: &GaussianKernel,
    boundary: Boundary,
) -> Result<Field2D> {
    base.ensure_same_shape(donor)?;
    let diff = base.sub(donor)?;
    lowpass_with(&diff, k, boundary)?.add(donor)
}

/// Low-frequency replacement: `G * donor + (delta - G) * base`.
pub fn lf_swap_variant(base: &Field2D, donor: &Field2D, k: &GaussianKernel) -> Result<Field2D> {
    lf_swap_variant_with(base, donor, k, Boundary::Reflect)
}

pub fn lf_swap_variant_with(
    base: &Field2D,
    donor: &Field2D,
    k: &GaussianKernel,
    boundary: Boundary,
) -> Result<Field2D> {
    base.ensure_same_shape(donor)?;
    let diff = donor.sub(base)?;
    lowpass_with(&diff, k, boundary)?.add(base)
}

/// Area-average a binary mask onto a `target_w x target_h` grid and threshold
/// at 0.5. Ties (exactly 0.5) map to 1.
pub fn downsample_mask(m: &Field2D, target_w: usize, target_h: usize) -> Result<Field2D> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::invalid("downsample target must be non-empty"));
    }
    if m.channels() != 1 {
        return Err(Error::invalid("mask must be single channel"));
    }
    if !m.is_binary() {
        return Err(Error::invalid("mask must be binary"));
    }
    let (sw, sh) = (m.width(), m.height());
    let col = overlap_weights(sw, target_w);
    let row = overlap_weights(sh, target_h);
    let mut out = Field2D::zeros(target_w, target_h, 1);
    for (ty, ry) in row.iter().enumerate() {
        for (tx, rx) in col.iter().enumerate() {
            let mut acc = 0.0;
            let mut area = 0.0;
            for &(sy, wy) in ry {
                for &(sx, wx) in rx {
                    acc += wy * wx * m.get(sx, sy, 0);
                    area += wy * wx;
                }
            }
            let avg = acc / area;
            // 1e-12 guards ties against rounding in the fractional overlaps
            out.set(tx, ty, 0, if avg >= 0.5 - 1e-12 { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

/// For each target cell, the source cells it overlaps and their overlap length.
fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|t| {
            let lo = t as f64 * scale;
            let hi = (t + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let ov = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (ov > 0.0).then_some((s, ov))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernel_sigma4_has_25_taps() {
        let k = gaussian_kernel(4.0).unwrap();
        assert_eq!(k.radius, 12);
        assert_eq!(k.taps.len(), 25);
        assert_abs_diff_eq!(k.taps.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn kernel_narrow_is_delta_like() {
        let k = gaussian_kernel(0.1).unwrap();
        assert!(k.taps[k.radius] > 1.0 - 1e-12);
        for (i, t) in k.taps.iter().enumerate() {
            if i != k.radius {
                assert!(*t < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_sigma2_matches_direct_evaluation() {
        let k = gaussian_kernel(2.0).unwrap();
        let raw: Vec<f64> = (-6..=6).map(|x: i32| (-(x * x) as f64 / 8.0).exp()).collect();
        let s: f64 = raw.iter().sum();
        for (a, b) in k.taps.iter().zip(raw.iter()) {
            assert_abs_diff_eq!(*a, b / s, epsilon = 1e-15);
        }
    }

    #[test]
    fn kernel_rejects_bad_sigma() {
        assert!(gaussian_kernel(0.0).is_err());
        assert!(gaussian_kernel(-1.0).is_err());
        assert!(gaussian_kernel(f64::NAN).is_err());
        assert!(gaussian_kernel(f64::INFINITY).is_err());
    }

    #[test]
    fn reflect_indexing() {
        let idx: Vec<usize> = (-3..7).map(|i| extend(i, 4, Boundary::Reflect)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        let idx: Vec<usize> = (-2..6).map(|i| extend(i, 4, Boundary::Wrap)).collect();
        assert_eq!(idx, vec![2, 3, 0, 1, 2, 3, 0, 1]);
    }

    #[test]
    fn lowpass_constant_is_constant() {
        let f = Field2D::filled(20, 15, 3, 0.7);
        let k = gaussian_kernel(3.0).unwrap();
        let g = lowpass(&f, &k).unwrap();
        assert!(g.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn lowpass_delta_is_outer_product_of_taps() {
        let k = gaussian_kernel(2.0).unwrap();
        let n = 31;
        let c = 15;
        let mut f = Field2D::zeros(n, n, 1);
        f.set(c, c, 0, 1.0);
        let g = lowpass(&f, &k).unwrap();
        let r = k.radius as isize;
        for y in 0..n {
            for x in 0..n {
                let dx = x as isize - c as isize;
                let dy = y as isize - c as isize;
                let expect = if dx.abs() <= r && dy.abs() <= r {
                    k.taps[(dx + r) as usize] * k.taps[(dy + r) as usize]
                } else {
                    0.0
                };
                assert_abs_diff_eq!(g.get(x, y, 0), expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn lowpass_rejects_oversized_kernel() {
        let f = Field2D::zeros(8, 30, 1);
        let k = gaussian_kernel(4.0).unwrap();
        assert!(lowpass(&f, &k).is_err());
        assert!(lowpass(&Field2D::zeros(0, 0, 1), &GaussianKernel::identity()).is_err());
    }

    #[test]
    fn lowpass_sinusoid_scaled_by_transfer() {
        // Periodic sinusoid with an integer number of cycles: wrap-boundary
        // convolution scales it by the kernel's DTFT at that frequency.
        let n = 64;
        let cycles = 5.0;
        let f = Field2D::from_fn(n, n, 1, |x, _, _| {
            (2.0 * std::f64::consts::PI * cycles * x as f64 / n as f64).sin()
        });
        let k = gaussian_kernel(2.0).unwrap();
        let g = lowpass_with(&f, &k, Boundary::Wrap).unwrap();
        let h = k.transfer(cycles / n as f64);
        let expect = f.scale(h);
        assert!(g.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn freq_swap_identities() {
        let base = Field2D::from_fn(16, 16, 2, |x, y, c| ((x * 3 + y * 5 + c) % 7) as f64);
        let k = gaussian_kernel(1.5).unwrap();
        assert_eq!(freq_swap(&base, &base, &k).unwrap(), base);

        let donor = Field2D::from_fn(16, 16, 2, |x, y, _| (x as f64 * 0.3).cos() + y as f64);
        let id = GaussianKernel::identity();
        assert!(freq_swap(&base, &donor, &id).unwrap().max_abs_diff(&base) < 1e-12);

        let flat = Field2D::filled(16, 16, 2, 3.25);
        let lp = lowpass(&base, &k).unwrap();
        assert!(freq_swap(&base, &flat, &k).unwrap().max_abs_diff(&lp) < 1e-12);
    }

    #[test]
    fn freq_swap_shape_mismatch() {
        let k = gaussian_kernel(1.0).unwrap();
        assert!(freq_swap(&Field2D::zeros(8, 8, 1), &Field2D::zeros(8, 8, 2), &k).is_err());
        assert!(lf_swap_variant(&Field2D::zeros(8, 9, 1), &Field2D::zeros(8, 8, 1), &k).is_err());
    }

    #[test]
    fn lf_swap_partitions_identity() {
        let b = Field2D::from_fn(12, 10, 1, |x, y, _| (x * y) as f64 * 0.1);
        let d = Field2D::from_fn(12, 10, 1, |x, y, _| (x as f64 - y as f64).sin());
        let k = gaussian_kernel(1.2).unwrap();
        assert_eq!(lf_swap_variant(&b, &b, &k).unwrap(), b);
        let hf = freq_swap(&b, &d, &k).unwrap();
        let lf = lf_swap_variant(&b, &d, &k).unwrap();
        let resid = hf.add(&lf).unwrap().sub(&b).unwrap().sub(&d).unwrap();
        assert!(resid.data().iter().all(|v| v.abs() < 1e-6));

        // constant base: output minus lowpass(donor) is the (zero) highpass of base
        let c = Field2D::filled(12, 10, 1, 2.0);
        let out = lf_swap_variant(&c, &d, &k).unwrap();
        let lpd = lowpass(&d, &k).unwrap();
        let highpass_c = c.sub(&lowpass(&c, &k).unwrap()).unwrap();
        assert!(out.sub(&lpd).unwrap().max_abs_diff(&highpass_c) < 1e-12);
    }

    #[test]
    fn downsample_mask_cases() {
        let ones = Field2D::filled(10, 6, 1, 1.0);
        let d = downsample_mask(&ones, 3, 4).unwrap();
        assert!(d.data().iter().all(|&v| v == 1.0));
        let zeros = Field2D::zeros(10, 6, 1);
        assert!(downsample_mask(&zeros, 5, 3).unwrap().data().iter().all(|&v| v == 0.0));

        // one-pixel checkerboard: every 2x2 block averages to exactly 0.5
        let cb = Field2D::from_fn(8, 8, 1, |x, y, _| ((x + y) % 2) as f64);
        let d = downsample_mask(&cb, 4, 4).unwrap();
        assert!(d.data().iter().all(|&v| v == 1.0));

        assert!(downsample_mask(&ones, 0, 3).is_err());
        assert!(downsample_mask(&Field2D::filled(2, 2, 1, 0.5), 1, 1).is_err());
    }

    #[test]
    fn downsample_mask_fractional_overlap() {
        // 3 -> 2: target cell 0 covers [0, 1.5) so it sees all of pixel 0 and
        // half of pixel 1.
        let m = Field2D::from_vec(3, 1, 1, vec![0.0, 1.0, 1.0]).unwrap();
        let d = downsample_mask(&m, 2, 1).unwrap();
        // cell 0: (0 * 1 + 1 * 0.5) / 1.5 = 1/3 -> 0 ; cell 1: 1 -> 1
        assert_eq!(d.data(), &[0.0, 1.0]);
    }
}
