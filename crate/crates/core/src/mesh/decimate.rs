//! Degradation helpers: vertex-clustering decimation and vertex-color blur.

use std::collections::HashMap;

use super::metrics::PointIndex;
use super::{remap_faces, TriMesh};
use crate::error::{Error, Result};
use crate::Vec3;

/// Merges all vertices falling into the same cube of side `cell` (grid
/// shifted by `offset` cells) into their mean.
pub fn cluster_vertices(mesh: &TriMesh, cell: f64, offset: f64) -> Result<TriMesh> {
    let b = mesh.bounding_box().ok_or_else(|| Error::invalid("mesh has no vertices"))?;
    let mut ids: HashMap<(i64, i64, i64), u32> = HashMap::new();
    let mut sums: Vec<(Vec3, Vec3, usize)> = Vec::new();
    let mut remap = Vec::with_capacity(mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let q = (v - b.min) / cell + Vec3::repeat(offset);
        let key = (q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64);
        let id = *ids.entry(key).or_insert_with(|| {
            sums.push((Vec3::zeros(), Vec3::zeros(), 0));
            (sums.len() - 1) as u32
        });
        let s = &mut sums[id as usize];
        s.0 += v;
        if let Some(c) = &mesh.colors {
            s.1 += c[i];
        }
        s.2 += 1;
        remap.push(id);
    }
    let faces = remap_faces(&mesh.faces, &remap);
    let verts = sums.iter().map(|s| s.0 / s.2 as f64).collect();
    let out = TriMesh::new(verts, faces)?;
    let out = match &mesh.colors {
        Some(_) => out.with_colors(sums.iter().map(|s| s.1 / s.2 as f64).collect())?,
        None => out,
    };
    Ok(out.compact())
}

/// Decimation to `face_ratio` of the input face count (within ±10 %).
/// Returns the mesh and the cluster cell size used.
pub fn decimate_with_cell(mesh: &TriMesh, face_ratio: f64) -> Result<(TriMesh, f64)> {
    if !(face_ratio > 0.0 && face_ratio <= 1.0) {
        return Err(Error::invalid("face_ratio must lie in (0, 1]"));
    }
    if face_ratio == 1.0 {
        return Ok((mesh.clone(), 0.0));
    }
    let target = face_ratio * mesh.faces.len() as f64;
    let diag = mesh
        .bounding_box()
        .ok_or_else(|| Error::invalid("mesh has no vertices"))?
        .extent()
        .norm();
    let mut best: Option<(f64, TriMesh, f64)> = None;
    for offset in [0.0, 0.5, 0.25, 0.75] {
        // face count shrinks as the cell grows; bisect in log space
        let (mut lo, mut hi) = ((diag * 1e-6).ln(), diag.ln());
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let cell = mid.exp();
            let m = cluster_vertices(mesh, cell, offset)?;
            let count = m.faces.len() as f64;
            let miss = (count - target).abs() / target;
            if best.as_ref().map_or(true, |b| miss < b.0) {
                best = Some((miss, m, cell));
            }
            if count > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if best.as_ref().is_some_and(|b| b.0 <= 0.02) {
            break;
        }
    }
    let (miss, m, cell) = best.expect("at least one trial");
    if miss > 0.1 || m.faces.len() < 4 {
        return Err(Error::invalid(format!(
            "cannot decimate to {face_ratio} of {} faces (closest: {})",
            mesh.faces.len(),
            m.faces.len()
        )));
    }
    Ok((m, cell))
}

pub fn decimate(mesh: &TriMesh, face_ratio: f64) -> Result<TriMesh> {
    Ok(decimate_with_cell(mesh, face_ratio)?.0)
}

/// Gaussian blur of vertex colors over the surface with world-space `sigma`,
/// each vertex weighted by its share of the adjacent face area.
pub fn blur_vertex_colors(mesh: &TriMesh, sigma: f64) -> Result<TriMesh> {
    let Some(colors) = &mesh.colors else {
        return Err(Error::invalid("mesh has no vertex colors"));
    };
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma must be non-negative"));
    }
    if sigma == 0.0 {
        return Ok(mesh.clone());
    }
    let mut area = vec![0.0; mesh.vertices.len()];
    for (f, face) in mesh.faces.iter().enumerate() {
        let a = mesh.face_area(f) / 3.0;
        face.iter().for_each(|&v| area[v as usize] += a);
    }
    let index = PointIndex::new(&mesh.vertices)?;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let out: Vec<Vec3> = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut acc = Vec3::zeros();
            let mut wsum = 0.0;
            index.within(v, 3.0 * sigma, |j, d| {
                let w = area[j].max(1e-300) * (-d * d * inv).exp();
                acc += colors[j] * w;
                wsum += w;
            });
            if wsum > 0.0 {
                acc / wsum
            } else {
                colors[i]
            }
        })
        .collect();
    mesh.clone().with_colors(out)
}
