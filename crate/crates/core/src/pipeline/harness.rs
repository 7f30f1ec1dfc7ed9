//! Synthetic fixtures, degradation, and evaluation metrics.

use serde::{Deserialize, Serialize};

use super::bundle::ModelBundle;
use crate::error::{Error, Result};
use crate::field::io::quantize8;
use crate::field::{gaussian_kernel, lowpass, Field2D};
use crate::mesh::decimate::{blur_vertex_colors, decimate};
use crate::mesh::io::quantize_colors;
use crate::mesh::primitives::{bumpy_sphere, with_procedural_colors};
use crate::mesh::Sphere;
use crate::raster::OrthoCamera;
use crate::texture::render_textured;
use crate::visibility::fibonacci_directions;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureParams {
    /// Cube-sphere grid per face; 29 gives 10092 faces.
    pub subdivisions: u32,
    pub amplitude: f64,
    pub frequency: f64,
    /// Spatial period of the procedural color pattern.
    pub color_period: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            subdivisions: 29,
            amplitude: 0.04,
            frequency: 12.0,
            color_period: 0.5,
        }
    }
}

/// High-quality reference: a bumpy sphere with procedural vertex colors and
/// no views.
pub fn fixture_bundle(p: &FixtureParams) -> Result<ModelBundle> {
    if p.subdivisions == 0 || !(p.color_period > 0.0) || !(p.amplitude.abs() < 0.5) {
        return Err(Error::invalid("fixture needs subdivisions >= 1, color_period > 0, |amplitude| < 0.5"));
    }
    let mut mesh = with_procedural_colors(bumpy_sphere(p.subdivisions, p.amplitude, p.frequency), p.color_period);
    quantize_colors(&mut mesh);
    let mut b = ModelBundle::new(mesh);
    b.meta = serde_json::json!({ "fixture": p });
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradeParams {
    pub face_ratio: f64,
    /// Blur in render pixels at `render_res`.
    pub tex_sigma: f64,
    pub render_res: usize,
}

impl Default for DegradeParams {
    fn default() -> Self {
        Self {
            face_ratio: 0.2,
            tex_sigma: 8.0,
            render_res: 256,
        }
    }
}

/// Pixel pitch of a framing view of `sphere` at `res` pixels.
pub fn framing_pitch(sphere: &Sphere, res: usize) -> Result<f64> {
    Ok(OrthoCamera::framing(sphere, crate::Vec3::z())?.pixel_pitch(res))
}

/// Decimates the mesh and low-passes its appearance. Vertex colors are
/// blurred over the surface with the world length of `tex_sigma` pixels in a
/// framing view; view textures are blurred in image space.
pub fn degrade(bundle: &ModelBundle, p: &DegradeParams) -> Result<ModelBundle> {
    bundle.validate()?;
    if !(p.tex_sigma >= 0.0) || p.render_res == 0 {
        return Err(Error::invalid("tex_sigma must be non-negative and render_res positive"));
    }
    let sphere = bundle
        .mesh
        .bounding_sphere()
        .ok_or_else(|| Error::invalid("bundle mesh is empty"))?;
    let sigma_world = p.tex_sigma * framing_pitch(&sphere, p.render_res)?;
    let mut mesh = decimate(&bundle.mesh, p.face_ratio)?;
    if mesh.colors.is_some() && sigma_world > 0.0 {
        mesh = blur_vertex_colors(&mesh, sigma_world)?;
    }
    quantize_colors(&mut mesh);
    let mut out = bundle.clone();
    out.mesh = mesh;
    if p.tex_sigma > 0.0 {
        let k = gaussian_kernel(p.tex_sigma)?;
        for v in &mut out.views {
            if let Some(t) = &v.texture {
                v.texture = Some(quantize8(&lowpass(t, &k)?));
            }
        }
    }
    if !out.meta.is_object() {
        out.meta = serde_json::json!({});
    }
    out.meta["degrade"] = serde_json::json!({
        "face_ratio": p.face_ratio,
        "tex_sigma": p.tex_sigma,
        "render_res": p.render_res,
        "sigma_world": sigma_world,
        "faces_in": bundle.mesh.faces.len(),
        "faces_out": out.mesh.faces.len(),
    });
    Ok(out)
}

/// Peak signal-to-noise ratio in dB for values in `[0, 1]`, over the pixels
/// where `mask` is set. Identical inputs give `+inf`.
pub fn psnr(a: &Field2D, b: &Field2D, mask: &Field2D) -> Result<f64> {
    a.ensure_same_shape(b)?;
    a.ensure_same_size(mask)?;
    let ch = a.channels();
    let mut se = 0.0;
    let mut n = 0usize;
    for (i, (pa, pb)) in a.data().chunks_exact(ch).zip(b.data().chunks_exact(ch)).enumerate() {
        if mask.data()[i] < 0.5 {
            continue;
        }
        se += pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        n += ch;
    }
    if n == 0 {
        return Err(Error::invalid("PSNR mask is empty"));
    }
    let mse = se / n as f64;
    Ok(-10.0 * mse.log10())
}

/// `n` framing cameras on the Fibonacci lattice, for evaluation renders.
pub fn evaluation_cameras(sphere: &Sphere, n: usize) -> Result<Vec<OrthoCamera>> {
    fibonacci_directions(n)
        .into_iter()
        .map(|d| OrthoCamera::framing(sphere, d))
        .collect()
}

/// Mean PSNR of textured renders of `bundle` against `reference` over the
/// pixels both foregrounds cover.
pub fn render_psnr(bundle: &ModelBundle, reference: &ModelBundle, cams: &[OrthoCamera], res: usize) -> Result<f64> {
    if cams.is_empty() {
        return Err(Error::invalid("no evaluation cameras"));
    }
    let (ps, ps_ref) = (bundle.projectors()?, reference.projectors()?);
    let mut total = 0.0;
    for cam in cams {
        let a = render_textured(&bundle.mesh, &ps, cam, res, res)?;
        let b = render_textured(&reference.mesh, &ps_ref, cam, res, res)?;
        let both = a.channel(3).zip_map(&b.channel(3), |x, y| if x > 0.0 && y > 0.0 { 1.0 } else { 0.0 })?;
        let rgb = |f: &Field2D| Field2D::from_channels(&[f.channel(0), f.channel(1), f.channel(2)]);
        total += psnr(&rgb(&a)?, &rgb(&b)?, &both)?;
    }
    Ok(total / cams.len() as f64)
}
