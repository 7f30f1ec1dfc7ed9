//! Merging a refined depth patch into the mesh, and moving vertex colors
//! across meshes.

use super::metrics::TriangleIndex;
use super::points::{sample_mesh_outside, OrientedPointSet};
use super::poisson::{poisson_reconstruct, Grid, PoissonParams};
use super::TriMesh;
use crate::error::Result;
use crate::field::Field2D;
use crate::raster::OrthoCamera;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StitchParams {
    pub poisson: PoissonParams,
    /// Weight of refined points relative to samples of the kept surface.
    pub refined_weight: f64,
    /// Kept-surface samples per grid-cell face area.
    pub samples_per_cell: f64,
    pub seed: u64,
}

impl Default for StitchParams {
    fn default() -> Self {
        Self {
            poisson: PoissonParams::default(),
            refined_weight: 4.0,
            samples_per_cell: 4.0,
            seed: 0,
        }
    }
}

/// Reconstructs a mesh from `refined` plus samples of `m` outside
/// `exclude_mask` as seen from `cam`. Vertex colors carry over from `m`.
pub fn stitch(
    m: &TriMesh,
    refined: &OrientedPointSet,
    cam: &OrthoCamera,
    exclude_mask: &Field2D,
    params: &StitchParams,
) -> Result<TriMesh> {
    refined.validate()?;
    let mut extent: Vec<Vec3> = m.vertices.clone();
    extent.extend_from_slice(&refined.points);
    let grid = Grid::fitting(&extent, params.poisson.grid_res)?;
    let density = params.samples_per_cell / (grid.cell * grid.cell);
    let mut all = refined.clone().with_weight(params.refined_weight);
    all.extend(&sample_mesh_outside(m, cam, exclude_mask, density, params.seed)?);
    let out = poisson_reconstruct(&all, &params.poisson)?;
    if m.colors.is_some() {
        transfer_colors(&out, m)
    } else {
        Ok(out)
    }
}

/// Barycentric coordinates of `p` (assumed in the plane of `abc`).
pub fn barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let (v0, v1, v2) = (b - a, c - a, p - a);
    let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
    let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
    let den = d00 * d11 - d01 * d01;
    if den.abs() < 1e-300 {
        return [1.0, 0.0, 0.0];
    }
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    [1.0 - v - w, v, w]
}

/// Colors each vertex of `target` from the closest point on `source`.
pub fn transfer_colors(target: &TriMesh, source: &TriMesh) -> Result<TriMesh> {
    let Some(src) = &source.colors else {
        return Ok(target.clone());
    };
    let index = TriangleIndex::new(source)?;
    let colors = target
        .vertices
        .iter()
        .map(|v| {
            let (q, f, _) = index.closest(v);
            let [a, b, c] = source.triangle(f);
            let w = barycentric(&q, &a, &b, &c);
            let face = source.faces[f];
            (0..3).fold(Vec3::zeros(), |acc, k| acc + src[face[k] as usize] * w[k])
        })
        .collect();
    target.clone().with_colors(colors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, with_procedural_colors};

    #[test]
    fn barycentric_round_trip() {
        let (a, b, c) = (Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0), Vec3::new(0.0, 3.0, 1.0));
        let p = a * 0.2 + b * 0.3 + c * 0.5;
        let w = barycentric(&p, &a, &b, &c);
        assert!((w[0] - 0.2).abs() < 1e-12 && (w[1] - 0.3).abs() < 1e-12 && (w[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn colors_transfer_onto_itself() {
        let m = with_procedural_colors(icosphere(2), 0.7);
        let t = transfer_colors(&TriMesh::new(m.vertices.clone(), m.faces.clone()).unwrap(), &m).unwrap();
        let (a, b) = (m.colors.unwrap(), t.colors.unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).norm() < 1e-9));
    }

    #[test]
    fn empty_patch_reconstructs_mesh() {
        let m = icosphere(3);
        let cam = OrthoCamera::new(Vec3::new(0.0, 0.0, 3.0), -Vec3::z(), Vec3::y(), 1.2).unwrap();
        let p = StitchParams {
            poisson: PoissonParams {
                grid_res: 32,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = stitch(&m, &OrientedPointSet::default(), &cam, &Field2D::zeros(16, 16, 1), &p).unwrap();
        assert!(out.is_watertight());
        let d = crate::mesh::metrics::mesh_distance(&out, &m, 2000, 0).unwrap();
        assert!(d.hausdorff < 2.0 * 2.2 / 25.0, "{d:?}");
    }
}
