//! Triangle meshes: representation, I/O, fixtures, sampling, reconstruction
//! and the degradation helpers.

pub mod decimate;
pub mod io;
pub mod metrics;
pub mod points;
pub mod poisson;
pub mod primitives;
pub mod stitch;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    /// Unit vertex normals, one per vertex.
    pub normals: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Optional linear RGB in `[0, 1]`, one per vertex.
    pub colors: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = pts.into_iter();
        let first = *it.next()?;
        let mut b = Aabb { min: first, max: first };
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl TriMesh {
    /// Builds a mesh and computes area-weighted vertex normals.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mut m = TriMesh {
            normals: Vec::new(),
            vertices,
            faces,
            colors: None,
        };
        m.check_indices()?;
        m.recompute_normals();
        Ok(m)
    }

    pub fn with_colors(mut self, colors: Vec<Vec3>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::shape(self.vertices.len(), colors.len()));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    fn check_indices(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some((i, f)) = self
            .faces
            .iter()
            .enumerate()
            .find(|(_, f)| f.iter().any(|&v| v as usize >= n))
        {
            return Err(Error::invalid(format!("face {i} {f:?} indexes past {n} vertices")));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("non-finite vertex position"));
        }
        Ok(())
    }

    /// Checks the structural invariants (indices, finiteness, unit normals).
    pub fn validate(&self) -> Result<()> {
        self.check_indices()?;
        if self.normals.len() != self.vertices.len() {
            return Err(Error::shape(self.vertices.len(), self.normals.len()));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.vertices.len() {
                return Err(Error::shape(self.vertices.len(), c.len()));
            }
        }
        for (i, n) in self.normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-4 {
                return Err(Error::invalid(format!("vertex normal {i} is not unit length")));
            }
        }
        Ok(())
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Unnormalized face normal, twice the area in length.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Area-weighted average of adjacent face normals. Vertices without a
    /// non-degenerate face get `+z`.
    pub fn recompute_normals(&mut self) {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for f in 0..self.faces.len() {
            let n = self.face_cross(f);
            for &v in &self.faces[f] {
                acc[v as usize] += n;
            }
        }
        self.normals = acc
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 1e-300 {
                    n / len
                } else {
                    Vec3::z()
                }
            })
            .collect();
    }

    pub fn bounding_box(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    /// Sphere around the box center enclosing every vertex (not minimal).
    pub fn bounding_sphere(&self) -> Option<Sphere> {
        let center = self.bounding_box()?.center();
        let radius = self
            .vertices
            .iter()
            .map(|v| (v - center).norm())
            .fold(0.0, f64::max);
        Some(Sphere { center, radius })
    }

    /// Signed enclosed volume; positive for outward-oriented closed meshes.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Every undirected edge is shared by exactly two faces, traversed in
    /// opposite directions.
    pub fn is_watertight(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Merges vertices closer than `tol` (grid hashing), averaging their
    /// positions and colors, and drops faces that collapse.
    pub fn weld(&self, tol: f64) -> TriMesh {
        let cell = tol.max(1e-300);
        let key = |p: &Vec3| {
            (
                (p.x / cell).round() as i64,
                (p.y / cell).round() as i64,
                (p.z / cell).round() as i64,
            )
        };
        let mut ids: HashMap<(i64, i64, i64), u32> = HashMap::new();
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut sum: Vec<Vec3> = Vec::new();
        let mut csum: Vec<Vec3> = Vec::new();
        let mut count: Vec<f64> = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            let id = *ids.entry(key(v)).or_insert_with(|| {
                sum.push(Vec3::zeros());
                csum.push(Vec3::zeros());
                count.push(0.0);
                (sum.len() - 1) as u32
            });
            sum[id as usize] += v;
            if let Some(c) = &self.colors {
                csum[id as usize] += c[i];
            }
            count[id as usize] += 1.0;
            remap.push(id);
        }
        let vertices: Vec<Vec3> = sum.iter().zip(&count).map(|(s, &n)| s / n).collect();
        let faces = remap_faces(&self.faces, &remap);
        let mut out = TriMesh::new(vertices, faces).expect("remapped indices are in range");
        if self.colors.is_some() {
            out.colors = Some(csum.iter().zip(&count).map(|(s, &n)| s / n).collect());
        }
        out
    }

    /// Drops vertices no face references.
    pub fn compact(&self) -> TriMesh {
        let mut used = vec![u32::MAX; self.vertices.len()];
        let mut next = 0u32;
        for f in &self.faces {
            for &v in f {
                if used[v as usize] == u32::MAX {
                    used[v as usize] = next;
                    next += 1;
                }
            }
        }
        let mut vertices = vec![Vec3::zeros(); next as usize];
        let mut normals = vec![Vec3::z(); next as usize];
        let mut colors = self.colors.as_ref().map(|_| vec![Vec3::zeros(); next as usize]);
        for (old, &new) in used.iter().enumerate() {
            if new != u32::MAX {
                vertices[new as usize] = self.vertices[old];
                normals[new as usize] = self.normals[old];
                if let (Some(dst), Some(src)) = (colors.as_mut(), self.colors.as_ref()) {
                    dst[new as usize] = src[old];
                }
            }
        }
        TriMesh {
            vertices,
            normals,
            faces: self.faces.iter().map(|f| f.map(|v| used[v as usize])).collect(),
            colors,
        }
    }

    pub fn flipped(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            normals: self.normals.iter().map(|n| -n).collect(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            colors: self.colors.clone(),
        }
    }
}

/// Applies a vertex remap, dropping faces that become degenerate and exact
/// duplicates (same vertex set and winding).
pub(crate) fn remap_faces(faces: &[[u32; 3]], remap: &[u32]) -> Vec<[u32; 3]> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(faces.len());
    for f in faces {
        let g = f.map(|v| remap[v as usize]);
        if g[0] == g[1] || g[1] == g[2] || g[0] == g[2] {
            continue;
        }
        // canonical rotation keeps winding
        let r = (0..3).min_by_key(|&k| g[k]).unwrap();
        let canon = [g[r], g[(r + 1) % 3], g[(r + 2) % 3]];
        if seen.insert(canon) {
            out.push(g);
        }
    }
    out
}
