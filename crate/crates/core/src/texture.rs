//! Projection mapping: per-view textures projected onto the mesh and blended
//! per fragment.
//!
//! Each projector contributes `smoothstep(0.3, 1, n · toward_j)`, scaled by
//! 1 for refined views and 1e-8 otherwise, and zeroed when the fragment is
//! occluded in that view or the sampled texel is not opaque.

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::mesh::TriMesh;
use crate::raster::{rasterize, OrthoCamera};
use crate::Vec3;

pub const UNREFINED_WEIGHT: f64 = 1e-8;
pub const ALIGN_LO: f64 = 0.3;
pub const ALIGN_HI: f64 = 1.0;
/// Bilinear alpha at or above this counts as opaque.
pub const OPAQUE: f64 = 0.999;
/// Occlusion tolerance relative to the bounding-sphere radius.
pub const EPS_REL: f64 = 1e-3;

pub fn smoothstep(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::invalid(format!("smoothstep needs a < b, got {a} and {b}")));
    }
    let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
    Ok(t * t * (3.0 - 2.0 * t))
}

fn align_weight(x: f64) -> f64 {
    let t = ((x - ALIGN_LO) / (ALIGN_HI - ALIGN_LO)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear lookup in pixel coordinates (texel centers at `+0.5`), clamped
/// to the edge.
pub fn sample_bilinear(f: &Field2D, u: f64, v: f64) -> Vec<f64> {
    let (w, h) = (f.width(), f.height());
    let x = (u - 0.5).clamp(0.0, (w - 1) as f64);
    let y = (v - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    (0..f.channels())
        .map(|c| {
            let top = f.get(x0, y0, c) * (1.0 - fx) + f.get(x1, y0, c) * fx;
            let bot = f.get(x0, y1, c) * (1.0 - fx) + f.get(x1, y1, c) * fx;
            top * (1.0 - fy) + bot * fy
        })
        .collect()
}

/// Depth at `(u, v)`: bilinear when all four neighbors are covered,
/// otherwise the containing pixel.
fn depth_at(depth: &Field2D, u: f64, v: f64) -> f64 {
    let (w, h) = (depth.width(), depth.height());
    let x = (u - 0.5).clamp(0.0, (w - 1) as f64);
    let y = (v - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let q = [depth.get(x0, y0, 0), depth.get(x1, y0, 0), depth.get(x0, y1, 0), depth.get(x1, y1, 0)];
    if q.iter().all(|d| d.is_finite()) {
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        (q[0] * (1.0 - fx) + q[1] * fx) * (1.0 - fy) + (q[2] * (1.0 - fx) + q[3] * fx) * fy
    } else {
        depth.get((u as usize).min(w - 1), (v as usize).min(h - 1), 0)
    }
}

/// True when `frag` is hidden from `cam` (or projects outside its frame).
pub fn check_occlusion(frag: &Vec3, cam: &OrthoCamera, depth: &Field2D, eps: f64) -> bool {
    let (w, h) = (depth.width(), depth.height());
    let (u, v, d) = cam.project(frag, w, h);
    if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
        return true;
    }
    d > depth_at(depth, u, v) + eps
}

#[derive(Debug, Clone)]
pub struct Projector {
    pub camera: OrthoCamera,
    /// RGBA in `[0, 1]`.
    pub texture: Field2D,
    /// Depth of the textured mesh seen from `camera`, same size as `texture`.
    pub depth: Field2D,
    pub refined: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ProjectorSet {
    pub views: Vec<Projector>,
}

/// Appends an opaque alpha channel to RGB, or alpha from `mask`.
pub fn to_rgba(rgb: &Field2D, mask: Option<&Field2D>) -> Result<Field2D> {
    match rgb.channels() {
        4 => Ok(rgb.clone()),
        3 => {
            let alpha = match mask {
                Some(m) => {
                    rgb.ensure_same_size(m)?;
                    m.channel(0)
                }
                None => Field2D::filled(rgb.width(), rgb.height(), 1, 1.0),
            };
            let mut planes: Vec<Field2D> = (0..3).map(|c| rgb.channel(c)).collect();
            planes.push(alpha);
            Field2D::from_channels(&planes)
        }
        c => Err(Error::invalid(format!("texture must be RGB or RGBA, got {c} channels"))),
    }
}

impl ProjectorSet {
    /// Builds projectors, rendering each depth map from `mesh`.
    pub fn build(mesh: &TriMesh, views: impl IntoIterator<Item = (OrthoCamera, Field2D, bool)>) -> Result<Self> {
        let mut out = Vec::new();
        for (camera, texture, refined) in views {
            let texture = to_rgba(&texture, None)?;
            let g = rasterize(mesh, &camera, texture.width(), texture.height(), false)?;
            out.push(Projector {
                camera,
                texture,
                depth: g.depth,
                refined,
            });
        }
        Ok(Self { views: out })
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.views.iter().enumerate() {
            p.camera.validate()?;
            if p.texture.channels() != 4 || p.depth.channels() != 1 {
                return Err(Error::invalid(format!("projector {i}: expected RGBA texture and 1-channel depth")));
            }
            p.texture.ensure_same_size(&p.depth)?;
        }
        Ok(())
    }
}

/// Weighted texels contributing to a fragment (zero-weight views omitted).
pub fn fragment_contributions(frag: &Vec3, n: &Vec3, ps: &ProjectorSet, eps: f64) -> Vec<(f64, [f64; 3])> {
    let mut out = Vec::new();
    for p in &ps.views {
        let align = n.dot(&p.camera.toward()).clamp(0.0, 1.0);
        let mut w = align_weight(align);
        if !p.refined {
            w *= UNREFINED_WEIGHT;
        }
        if w == 0.0 || check_occlusion(frag, &p.camera, &p.depth, eps) {
            continue;
        }
        let (u, v, _) = p.camera.project(frag, p.texture.width(), p.texture.height());
        let t = sample_bilinear(&p.texture, u, v);
        if t[3] < OPAQUE {
            continue;
        }
        out.push((w, [t[0], t[1], t[2]]));
    }
    out
}

/// Normalized blend; `(0, 0, 0, 0)` when the total weight is at most 1e-8.
pub fn blend_contributions(c: &[(f64, [f64; 3])]) -> [f64; 4] {
    let total: f64 = c.iter().map(|(w, _)| w).sum();
    if total <= UNREFINED_WEIGHT {
        return [0.0; 4];
    }
    let mut rgb = [0.0; 3];
    for (w, t) in c {
        for k in 0..3 {
            rgb[k] += w * t[k];
        }
    }
    [rgb[0] / total, rgb[1] / total, rgb[2] / total, 1.0]
}

pub fn blend_fragment(frag: &Vec3, n: &Vec3, ps: &ProjectorSet, eps: f64) -> [f64; 4] {
    blend_contributions(&fragment_contributions(frag, n, ps, eps))
}

pub fn default_eps(mesh: &TriMesh) -> f64 {
    mesh.bounding_sphere().map_or(1e-6, |s| EPS_REL * s.radius)
}

/// RGBA image of `mesh` from `cam_out` with projected textures; uncovered
/// and background pixels are transparent.
pub fn bake_view(mesh: &TriMesh, ps: &ProjectorSet, cam_out: &OrthoCamera, w: usize, h: usize) -> Result<Field2D> {
    bake_view_eps(mesh, ps, cam_out, w, h, default_eps(mesh))
}

pub fn bake_view_eps(
    mesh: &TriMesh,
    ps: &ProjectorSet,
    cam_out: &OrthoCamera,
    w: usize,
    h: usize,
    eps: f64,
) -> Result<Field2D> {
    ps.validate()?;
    let g = rasterize(mesh, cam_out, w, h, false)?;
    let mut out = Field2D::zeros(w, h, 4);
    if ps.views.is_empty() {
        return Ok(out);
    }
    for y in 0..h {
        for x in 0..w {
            if !g.is_foreground(x, y) {
                continue;
            }
            let frag = cam_out.unproject(x as f64 + 0.5, y as f64 + 0.5, g.depth.get(x, y, 0), w, h);
            let n = g.normal_at(x, y);
            let n = n.try_normalize(1e-12).unwrap_or(n);
            out.pixel_mut(x, y).copy_from_slice(&blend_fragment(&frag, &n, ps, eps));
        }
    }
    Ok(out)
}

/// Final RGBA rendering: projected textures where they cover the surface,
/// interpolated vertex colors (or mid gray) elsewhere on the foreground.
pub fn render_textured(mesh: &TriMesh, ps: &ProjectorSet, cam: &OrthoCamera, w: usize, h: usize) -> Result<Field2D> {
    let mut out = bake_view(mesh, ps, cam, w, h)?;
    let g = rasterize(mesh, cam, w, h, mesh.colors.is_some())?;
    for y in 0..h {
        for x in 0..w {
            if !g.is_foreground(x, y) || out.get(x, y, 3) > 0.0 {
                continue;
            }
            let rgb = match &g.color {
                Some(c) => [c.get(x, y, 0), c.get(x, y, 1), c.get(x, y, 2)],
                None => [0.5; 3],
            };
            out.pixel_mut(x, y).copy_from_slice(&[rgb[0], rgb[1], rgb[2], 1.0]);
        }
    }
    Ok(out)
}

/// RGB of an RGBA image with the pixels where alpha is zero filled outward
/// from the covered ones: each pass gives every unfilled pixel next to a
/// filled one the mean of its filled 4-neighbors. Image filters applied to
/// the result then see no silhouette edge. All-transparent input gives zeros.
pub fn pad_background(rgba: &Field2D) -> Result<Field2D> {
    if rgba.channels() != 4 {
        return Err(Error::invalid("pad_background needs an RGBA image"));
    }
    let (w, h) = (rgba.width(), rgba.height());
    let mut out = Field2D::from_channels(&[rgba.channel(0), rgba.channel(1), rgba.channel(2)])?;
    let mut filled: Vec<bool> = (0..w * h).map(|i| rgba.data()[4 * i + 3] > 0.0).collect();
    if !filled.iter().any(|&f| f) {
        return Ok(Field2D::zeros(w, h, 3));
    }
    let mut frontier: Vec<usize> = Vec::new();
    loop {
        frontier.clear();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if filled[i] {
                    continue;
                }
                let near = [(x > 0, i.wrapping_sub(1)), (x + 1 < w, i + 1), (y > 0, i.wrapping_sub(w)), (y + 1 < h, i + w)];
                if near.iter().any(|&(ok, j)| ok && filled[j]) {
                    frontier.push(i);
                }
            }
        }
        if frontier.is_empty() {
            return Ok(out);
        }
        let mut values = Vec::with_capacity(frontier.len());
        for &i in &frontier {
            let (x, y) = (i % w, i / w);
            let near = [(x > 0, i.wrapping_sub(1)), (x + 1 < w, i + 1), (y > 0, i.wrapping_sub(w)), (y + 1 < h, i + w)];
            let mut sum = [0.0; 3];
            let mut n = 0.0;
            for &(ok, j) in &near {
                if ok && filled[j] {
                    for c in 0..3 {
                        sum[c] += out.data()[3 * j + c];
                    }
                    n += 1.0;
                }
            }
            values.push(sum.map(|s| s / n));
        }
        for (&i, v) in frontier.iter().zip(values) {
            out.data_mut()[3 * i..3 * i + 3].copy_from_slice(&v);
            filled[i] = true;
        }
    }
}
