//! Oriented point sets: lifting depth patches and sampling kept surface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::random_barycentric;
use super::TriMesh;
use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::raster::{rasterize, OrthoCamera};
use crate::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrientedPointSet {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Per-point confidence, strictly positive.
    pub weights: Vec<f64>,
}

impl OrientedPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vec3, n: Vec3, w: f64) {
        self.points.push(p);
        self.normals.push(n);
        self.weights.push(w);
    }

    pub fn extend(&mut self, other: &OrientedPointSet) {
        self.points.extend_from_slice(&other.points);
        self.normals.extend_from_slice(&other.normals);
        self.weights.extend_from_slice(&other.weights);
    }

    pub fn with_weight(mut self, w: f64) -> Self {
        self.weights.iter_mut().for_each(|x| *x = w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.normals.len() != self.points.len() || self.weights.len() != self.points.len() {
            return Err(Error::invalid("point set arrays differ in length"));
        }
        if self.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("point weights must be positive"));
        }
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !self.points.iter().all(finite) || !self.normals.iter().all(finite) {
            return Err(Error::invalid("point set contains non-finite values"));
        }
        Ok(())
    }
}

/// Lifts every reliable pixel to a world point with its world normal.
/// `normals` is in the camera frame.
pub fn depth_to_points(
    depth: &Field2D,
    normals: &Field2D,
    reliable: &Field2D,
    cam: &OrthoCamera,
) -> Result<OrientedPointSet> {
    depth.ensure_same_size(normals)?;
    depth.ensure_same_size(reliable)?;
    if normals.channels() != 3 {
        return Err(Error::invalid("normal map must have 3 channels"));
    }
    let (w, h) = (depth.width(), depth.height());
    let mut out = OrientedPointSet::default();
    for y in 0..h {
        for x in 0..w {
            if reliable.get(x, y, 0) < 0.5 {
                continue;
            }
            let d = depth.get(x, y, 0);
            if !d.is_finite() {
                return Err(Error::invalid(format!("reliable pixel ({x}, {y}) has no depth")));
            }
            let p = cam.unproject(x as f64 + 0.5, y as f64 + 0.5, d, w, h);
            let c = normals.pixel(x, y);
            let n = cam.to_world(&Vec3::new(c[0], c[1], c[2]));
            let n = n.try_normalize(1e-12).unwrap_or_else(|| cam.toward());
            out.push(p, n, 1.0);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("reliable mask is empty"));
    }
    Ok(out)
}

/// Area-weighted samples of `mesh` that are not covered by `exclude_mask`
/// as seen from `cam`: samples projecting outside the mask, back-facing, or
/// hidden behind other surface there are kept.
///
/// Each face receives `floor(area * density)` samples plus one more with the
/// fractional probability, so counts are unbiased and deterministic per seed.
pub fn sample_mesh_outside(
    mesh: &TriMesh,
    cam: &OrthoCamera,
    exclude_mask: &Field2D,
    density: f64,
    seed: u64,
) -> Result<OrientedPointSet> {
    if !(density > 0.0) || !density.is_finite() {
        return Err(Error::invalid("sample density must be positive"));
    }
    let (w, h) = (exclude_mask.width(), exclude_mask.height());
    let any_masked = exclude_mask.count_nonzero() > 0;
    let g = if any_masked { Some(rasterize(mesh, cam, w, h, false)?) } else { None };
    let pitch = cam.pixel_pitch(w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OrientedPointSet::default();
    for f in 0..mesh.faces.len() {
        let expected = mesh.face_area(f) * density;
        let mut count = expected.floor() as usize;
        if rng.gen::<f64>() < expected - expected.floor() {
            count += 1;
        }
        if count == 0 {
            continue;
        }
        let face = mesh.faces[f];
        let [a, b, c] = mesh.triangle(f);
        let fn_ = mesh.face_cross(f).normalize();
        let cos = -fn_.dot(&cam.forward);
        let front = cos > 0.0;
        // depth varies by up to tan(theta) per pixel across a slanted face
        let slack = pitch * (1.0 + (1.0 - cos * cos).sqrt() / cos.max(0.02));
        for _ in 0..count {
            let bc = random_barycentric(&mut rng);
            let p = a * bc[0] + b * bc[1] + c * bc[2];
            let n = (mesh.normals[face[0] as usize] * bc[0]
                + mesh.normals[face[1] as usize] * bc[1]
                + mesh.normals[face[2] as usize] * bc[2])
                .try_normalize(1e-12)
                .unwrap_or(fn_);
            if let Some(g) = &g {
                if front && covered(g, cam, exclude_mask, &p, f, slack) {
                    continue;
                }
            }
            out.push(p, n, 1.0);
        }
    }
    Ok(out)
}

fn covered(g: &crate::raster::GBuffer, cam: &OrthoCamera, mask: &Field2D, p: &Vec3, face: usize, slack: f64) -> bool {
    let (w, h) = (mask.width(), mask.height());
    let (u, v, depth) = cam.project(p, w, h);
    if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
        return false;
    }
    let (x, y) = (u as usize, v as usize);
    if mask.get(x, y, 0) < 0.5 {
        return false;
    }
    let i = y * w + x;
    g.face[i] == face as u32 || depth <= g.depth.data()[i] + slack
}
