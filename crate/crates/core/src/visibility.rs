//! Which pixels still need refinement, and which view to refine next.
//!
//! Direction convention: a view's viewing direction is the unit vector from
//! the surface toward the camera (`-forward` under orthography). A pixel counts
//! as already refined by view `j` when its normal lies within `acos(tau)` of
//! that direction.

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::mesh::{Sphere, TriMesh};
use crate::raster::{rasterize, GBuffer, OrthoCamera};
use crate::Vec3;

pub const SPARSE_POLAR_DEG: [f64; 3] = [45.0, 90.0, 135.0];
pub const SPARSE_AZIMUTH_DEG: [f64; 4] = [0.0, 45.0, 180.0, 270.0];

/// Unit direction for polar angle `theta` (from `+z`) and azimuth `phi`
/// (from `+x` toward `+y`), both in degrees.
pub fn spherical_direction(theta_deg: f64, phi_deg: f64) -> Vec3 {
    let (t, p) = (theta_deg.to_radians(), phi_deg.to_radians());
    Vec3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos())
}

/// The 12-view schedule, polar-major in the listed order. Each camera sits on
/// its direction from the sphere center and looks at the center.
pub fn sparse_schedule(sphere: &Sphere) -> Result<Vec<OrthoCamera>> {
    let mut out = Vec::with_capacity(12);
    for &theta in &SPARSE_POLAR_DEG {
        for &phi in &SPARSE_AZIMUTH_DEG {
            out.push(OrthoCamera::framing(sphere, spherical_direction(theta, phi))?);
        }
    }
    Ok(out)
}

/// `n` near-uniform unit directions on a Fibonacci spiral (deterministic).
pub fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// `dot(normal, toward_j)` on foreground pixels, `-1` on background.
pub fn cosine_map(g: &GBuffer, cam_j: &OrthoCamera) -> Field2D {
    let toward = cam_j.toward();
    Field2D::from_fn(g.width(), g.height(), 1, |x, y, _| {
        if g.is_foreground(x, y) {
            g.normal_at(x, y).dot(&toward)
        } else {
            -1.0
        }
    })
}

/// Foreground pixels that no previous view has seen within `acos(tau)` of
/// face-on.
pub fn refinement_mask(g: &GBuffer, prev: &[OrthoCamera], tau: f64) -> Result<Field2D> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1], got {tau}")));
    }
    let towards: Vec<Vec3> = prev.iter().map(|c| c.toward()).collect();
    Ok(Field2D::from_fn(g.width(), g.height(), 1, |x, y, _| {
        if !g.is_foreground(x, y) {
            return 0.0;
        }
        let n = g.normal_at(x, y);
        if towards.iter().all(|t| n.dot(t) < tau) {
            1.0
        } else {
            0.0
        }
    }))
}

/// `Σ mask·clamp(cos_cand, 0, 1) / Σ foreground`, or 0 for an empty view.
pub fn view_ratio_from(g: &GBuffer, cand: &OrthoCamera, prev: &[OrthoCamera], tau: f64) -> Result<f64> {
    let mask = refinement_mask(g, prev, tau)?;
    let toward = cand.toward();
    let mut num = 0.0;
    let mut den = 0.0;
    for y in 0..g.height() {
        for x in 0..g.width() {
            if !g.is_foreground(x, y) {
                continue;
            }
            den += 1.0;
            if mask.get(x, y, 0) > 0.5 {
                num += g.normal_at(x, y).dot(&toward).clamp(0.0, 1.0);
            }
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

pub fn view_ratio(
    mesh: &TriMesh,
    cand: &OrthoCamera,
    prev: &[OrthoCamera],
    tau: f64,
    resolution: usize,
) -> Result<f64> {
    let g = rasterize(mesh, cand, resolution, resolution, false)?;
    view_ratio_from(&g, cand, prev, tau)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Next {
        camera: OrthoCamera,
        candidate: usize,
        ratio: f64,
    },
    Done {
        max_ratio: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams {
    pub n_candidates: usize,
    pub stop_ratio: f64,
    pub tau: f64,
    /// Raster size used to score candidates.
    pub resolution: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            n_candidates: 100,
            stop_ratio: 0.02,
            tau: 0.5,
            resolution: 128,
        }
    }
}

/// Candidate cameras on the Fibonacci lattice around the mesh.
pub fn candidate_cameras(mesh: &TriMesh, n: usize) -> Result<Vec<OrthoCamera>> {
    let sphere = mesh
        .bounding_sphere()
        .ok_or_else(|| Error::invalid("mesh has no vertices"))?;
    fibonacci_directions(n)
        .into_iter()
        .map(|d| OrthoCamera::framing(&sphere, d))
        .collect()
}

/// Ratio of every lattice candidate, in lattice order.
pub fn candidate_ratios(mesh: &TriMesh, prev: &[OrthoCamera], p: &SelectionParams) -> Result<Vec<(OrthoCamera, f64)>> {
    candidate_cameras(mesh, p.n_candidates)?
        .into_iter()
        .map(|c| Ok((c, view_ratio(mesh, &c, prev, p.tau, p.resolution)?)))
        .collect()
}

/// Argmax over the lattice (ties to the lowest index), or `Done` when the best
/// ratio falls below `stop_ratio`.
pub fn select_next_view(mesh: &TriMesh, prev: &[OrthoCamera], p: &SelectionParams) -> Result<Selection> {
    if p.n_candidates == 0 {
        return Err(Error::invalid("n_candidates must be at least 1"));
    }
    let scored = candidate_ratios(mesh, prev, p)?;
    Ok(pick(&scored, p.stop_ratio))
}

pub(crate) fn pick(scored: &[(OrthoCamera, f64)], stop_ratio: f64) -> Selection {
    let mut best = 0;
    for (i, (_, r)) in scored.iter().enumerate() {
        if *r > scored[best].1 {
            best = i;
        }
    }
    let (camera, ratio) = scored[best];
    if ratio < stop_ratio {
        Selection::Done { max_ratio: ratio }
    } else {
        Selection::Next {
            camera,
            candidate: best,
            ratio,
        }
    }
}

/// Views visited so far with their refinement state.
#[derive(Debug, Clone, Default)]
pub struct ViewState {
    pub views: Vec<OrthoCamera>,
    pub refined: Vec<bool>,
    pub textures: Vec<Option<Field2D>>,
    pub masks: Vec<Option<Field2D>>,
}

impl ViewState {
    pub fn push(&mut self, cam: OrthoCamera) -> usize {
        self.views.push(cam);
        self.refined.push(false);
        self.textures.push(None);
        self.masks.push(None);
        self.views.len() - 1
    }

    pub fn mark_refined(&mut self, i: usize, texture: Field2D, mask: Field2D) -> Result<()> {
        if i >= self.views.len() {
            return Err(Error::invalid(format!("view {i} does not exist")));
        }
        self.textures[i] = Some(texture);
        self.masks[i] = Some(mask);
        self.refined[i] = true;
        Ok(())
    }

    pub fn refined_views(&self) -> Vec<OrthoCamera> {
        self.views
            .iter()
            .zip(&self.refined)
            .filter(|(_, r)| **r)
            .map(|(c, _)| *c)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.views.len();
        if self.refined.len() != n || self.textures.len() != n || self.masks.len() != n {
            return Err(Error::invalid("view state lists differ in length"));
        }
        if self.refined.iter().zip(&self.textures).any(|(r, t)| *r && t.is_none()) {
            return Err(Error::invalid("refined view without a texture"));
        }
        Ok(())
    }
}
