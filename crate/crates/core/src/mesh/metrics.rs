//! Surface sampling, nearest-point queries and mesh distances.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Aabb, TriMesh};
use crate::error::{Error, Result};
use crate::Vec3;

/// Closest point to `p` on triangle `abc`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

type Cell = (i64, i64, i64);

/// Uniform-grid bucket index over items with bounding boxes.
struct Buckets {
    origin: Vec3,
    cell: f64,
    min: Cell,
    max: Cell,
    map: HashMap<Cell, Vec<u32>>,
}

impl Buckets {
    fn new(bounds: Aabb, cell: f64) -> Self {
        let mut b = Buckets {
            origin: bounds.min,
            cell,
            min: (0, 0, 0),
            max: (0, 0, 0),
            map: HashMap::new(),
        };
        b.max = b.cell_of(&bounds.max);
        b
    }

    fn cell_of(&self, p: &Vec3) -> Cell {
        let q = (p - self.origin) / self.cell;
        (q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64)
    }

    fn insert(&mut self, id: u32, lo: &Vec3, hi: &Vec3) {
        let (a, b) = (self.cell_of(lo), self.cell_of(hi));
        for x in a.0..=b.0 {
            for y in a.1..=b.1 {
                for z in a.2..=b.2 {
                    self.map.entry((x, y, z)).or_default().push(id);
                }
            }
        }
    }

    /// Visits items ring by ring around `p` until `best()` is provably final.
    fn search(&self, p: &Vec3, mut visit: impl FnMut(u32), best: &dyn Fn() -> f64) {
        let c = self.cell_of(p);
        // rings needed to cover the whole grid from c
        let reach = [
            (c.0 - self.min.0).abs(),
            (c.0 - self.max.0).abs(),
            (c.1 - self.min.1).abs(),
            (c.1 - self.max.1).abs(),
            (c.2 - self.min.2).abs(),
            (c.2 - self.max.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap();
        for r in 0..=reach {
            for x in c.0 - r..=c.0 + r {
                for y in c.1 - r..=c.1 + r {
                    for z in c.2 - r..=c.2 + r {
                        let on_shell = (x - c.0).abs() == r || (y - c.1).abs() == r || (z - c.2).abs() == r;
                        if !on_shell {
                            continue;
                        }
                        if let Some(v) = self.map.get(&(x, y, z)) {
                            v.iter().for_each(|&i| visit(i));
                        }
                    }
                }
            }
            // anything in ring r+1 or beyond is at least r cells away
            if best() <= r as f64 * self.cell {
                return;
            }
        }
    }
}

/// Nearest-surface queries against a triangle mesh.
pub struct TriangleIndex<'a> {
    mesh: &'a TriMesh,
    buckets: Buckets,
}

impl<'a> TriangleIndex<'a> {
    pub fn new(mesh: &'a TriMesh) -> Result<Self> {
        let bounds = mesh.bounding_box().ok_or_else(|| Error::invalid("mesh has no vertices"))?;
        if mesh.faces.is_empty() {
            return Err(Error::invalid("mesh has no faces"));
        }
        let diag = bounds.extent().norm().max(1e-12);
        let cell = (diag / (mesh.faces.len() as f64).sqrt()).max(diag * 1e-3);
        let mut buckets = Buckets::new(bounds, cell);
        for (i, _) in mesh.faces.iter().enumerate() {
            let [a, b, c] = mesh.triangle(i);
            buckets.insert(i as u32, &a.inf(&b).inf(&c), &a.sup(&b).sup(&c));
        }
        Ok(Self { mesh, buckets })
    }

    /// Closest surface point, its face and the distance.
    pub fn closest(&self, p: &Vec3) -> (Vec3, usize, f64) {
        let best = std::cell::Cell::new((Vec3::zeros(), usize::MAX, f64::INFINITY));
        self.buckets.search(
            p,
            |f| {
                let [a, b, c] = self.mesh.triangle(f as usize);
                let q = closest_point_on_triangle(p, &a, &b, &c);
                let d = (q - p).norm();
                if d < best.get().2 || (d == best.get().2 && (f as usize) < best.get().1) {
                    best.set((q, f as usize, d));
                }
            },
            &|| best.get().2,
        );
        best.get()
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.closest(p).2
    }
}

/// Nearest-neighbor queries over a point cloud.
pub struct PointIndex<'a> {
    points: &'a [Vec3],
    buckets: Buckets,
}

impl<'a> PointIndex<'a> {
    pub fn new(points: &'a [Vec3]) -> Result<Self> {
        let bounds = Aabb::from_points(points).ok_or_else(|| Error::invalid("empty point set"))?;
        let diag = bounds.extent().norm().max(1e-12);
        let cell = (diag / (points.len() as f64).cbrt()).max(diag * 1e-3);
        let mut buckets = Buckets::new(bounds, cell);
        for (i, p) in points.iter().enumerate() {
            buckets.insert(i as u32, p, p);
        }
        Ok(Self { points, buckets })
    }

    pub fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let best = std::cell::Cell::new((usize::MAX, f64::INFINITY));
        self.buckets.search(
            p,
            |i| {
                let d = (self.points[i as usize] - p).norm();
                if d < best.get().1 || (d == best.get().1 && (i as usize) < best.get().0) {
                    best.set((i as usize, d));
                }
            },
            &|| best.get().1,
        );
        best.get()
    }

    /// All points within `radius` of `p`.
    pub fn within(&self, p: &Vec3, radius: f64, mut visit: impl FnMut(usize, f64)) {
        let r = (radius / self.buckets.cell).ceil() as i64;
        let c = self.buckets.cell_of(p);
        for x in c.0 - r..=c.0 + r {
            for y in c.1 - r..=c.1 + r {
                for z in c.2 - r..=c.2 + r {
                    if let Some(v) = self.buckets.map.get(&(x, y, z)) {
                        for &i in v {
                            let d = (self.points[i as usize] - p).norm();
                            if d <= radius {
                                visit(i as usize, d);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Area-weighted uniform samples: (point, face index, barycentric weights).
pub fn sample_surface(mesh: &TriMesh, count: usize, seed: u64) -> Result<Vec<(Vec3, usize, [f64; 3])>> {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let dist = WeightedIndex::new(&areas).map_err(|e| Error::invalid(format!("cannot sample surface: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let f = dist.sample(&mut rng);
            let b = random_barycentric(&mut rng);
            let [a, bb, c] = mesh.triangle(f);
            (a * b[0] + bb * b[1] + c * b[2], f, b)
        })
        .collect())
}

pub(crate) fn random_barycentric(rng: &mut impl Rng) -> [f64; 3] {
    let (mut r1, mut r2): (f64, f64) = (rng.gen(), rng.gen());
    if r1 + r2 > 1.0 {
        r1 = 1.0 - r1;
        r2 = 1.0 - r2;
    }
    [1.0 - r1 - r2, r1, r2]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshDistance {
    /// Mean of the two directed mean distances.
    pub chamfer: f64,
    /// Maximum of the two directed maximum distances.
    pub hausdorff: f64,
}

/// Sampled point-to-surface distances in both directions. Vertices of each
/// mesh are included alongside `samples` random surface points.
pub fn mesh_distance(a: &TriMesh, b: &TriMesh, samples: usize, seed: u64) -> Result<MeshDistance> {
    let (ab_mean, ab_max) = directed(a, b, samples, seed)?;
    let (ba_mean, ba_max) = directed(b, a, samples, seed.wrapping_add(1))?;
    Ok(MeshDistance {
        chamfer: 0.5 * (ab_mean + ba_mean),
        hausdorff: ab_max.max(ba_max),
    })
}

fn directed(from: &TriMesh, to: &TriMesh, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let index = TriangleIndex::new(to)?;
    let pts = sample_surface(from, samples, seed)?;
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for (p, _, _) in &pts {
        let d = index.distance(p);
        sum += d;
        max = max.max(d);
    }
    for v in &from.vertices {
        max = max.max(index.distance(v));
    }
    Ok((sum / pts.len().max(1) as f64, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, quad};

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let q = closest_point_on_triangle(&Vec3::new(0.2, 0.2, 3.0), &a, &b, &c);
        assert!((q - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
        let q = closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(q, a);
        let q = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
        let q = closest_point_on_triangle(&Vec3::new(0.5, -2.0, 1.0), &a, &b, &c);
        assert!((q - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn index_matches_brute_force() {
        let m = icosphere(2);
        let idx = TriangleIndex::new(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let brute = (0..m.faces.len())
                .map(|f| {
                    let [a, b, c] = m.triangle(f);
                    (closest_point_on_triangle(&p, &a, &b, &c) - p).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((idx.distance(&p) - brute).abs() < 1e-12);
        }
        let pts: Vec<Vec3> = m.vertices.clone();
        let pidx = PointIndex::new(&pts).unwrap();
        for _ in 0..100 {
            let p = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let brute = pts.iter().map(|q| (q - p).norm()).fold(f64::INFINITY, f64::min);
            assert!((pidx.nearest(&p).1 - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_between_offset_quads() {
        let a = quad(1.0);
        let mut b = quad(1.0);
        for v in &mut b.vertices {
            v.z += 0.25;
        }
        let d = mesh_distance(&a, &b, 500, 1).unwrap();
        assert!((d.chamfer - 0.25).abs() < 1e-12 && (d.hausdorff - 0.25).abs() < 1e-12);
        let same = mesh_distance(&a, &a, 500, 1).unwrap();
        assert!(same.chamfer < 1e-12);
    }

    #[test]
    fn samples_are_area_uniform() {
        let q = quad(1.0);
        let s = sample_surface(&q, 20000, 9).unwrap();
        let left = s.iter().filter(|(p, _, _)| p.x < 0.0).count() as f64 / 20000.0;
        assert!((left - 0.5).abs() < 0.02);
    }
}
