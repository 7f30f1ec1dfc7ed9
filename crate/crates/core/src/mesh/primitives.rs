//! Procedural test meshes.

use std::collections::HashMap;

use super::TriMesh;
use crate::Vec3;

/// Subdivided icosahedron on the unit sphere: `10·4^k + 2` vertices,
/// `20·4^k` faces.
pub fn icosphere(subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(verts, faces).expect("icosphere indices are valid")
}

/// Axis-aligned cube centered at the origin: 8 vertices, 12 faces.
pub fn cube(half: f64) -> TriMesh {
    let v: Vec<Vec3> = (0..8)
        .map(|i| {
            let s = |b: u32| if i >> b & 1 == 1 { half } else { -half };
            Vec3::new(s(0), s(1), s(2))
        })
        .collect();
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let faces = quads
        .iter()
        .flat_map(|&[a, b, c, d]| [[a, b, c], [a, c, d]])
        .collect();
    TriMesh::new(v, faces).expect("cube indices are valid")
}

/// Cube with every face split into an `n × n` grid of quads (two triangles
/// each): `6n² + 2` vertices and `12n²` faces. Shared edges are welded.
pub fn subdivided_cube(n: u32, half: f64) -> TriMesh {
    let n = n.max(1);
    let mut index: HashMap<[u32; 3], u32> = HashMap::new();
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |key: [u32; 3], verts: &mut Vec<Vec3>| {
        *index.entry(key).or_insert_with(|| {
            let p = key.map(|k| -half + 2.0 * half * k as f64 / n as f64);
            verts.push(Vec3::new(p[0], p[1], p[2]));
            (verts.len() - 1) as u32
        })
    };
    // (normal axis, side, u axis, v axis) with u × v along the outward normal
    for axis in 0..3 {
        let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0u32, n] {
            let outward_positive = side == n;
            for i in 0..n {
                for j in 0..n {
                    let key = |di: u32, dj: u32| {
                        let mut k = [0u32; 3];
                        k[axis] = side;
                        k[ua] = i + di;
                        k[va] = j + dj;
                        k
                    };
                    let a = vid(key(0, 0), &mut verts);
                    let b = vid(key(1, 0), &mut verts);
                    let c = vid(key(1, 1), &mut verts);
                    let d = vid(key(0, 1), &mut verts);
                    if outward_positive {
                        faces.extend([[a, b, c], [a, c, d]]);
                    } else {
                        faces.extend([[a, c, b], [a, d, c]]);
                    }
                }
            }
        }
    }
    TriMesh::new(verts, faces).expect("cube grid indices are valid")
}

/// Subdivided cube projected onto the unit sphere (`12n²` faces; `n = 29`
/// gives 10092).
pub fn cube_sphere(n: u32) -> TriMesh {
    let mut m = subdivided_cube(n, 1.0);
    for v in &mut m.vertices {
        *v = v.normalize();
    }
    m.recompute_normals();
    m
}

/// Radial displacement used by [`bumpy_sphere`].
pub fn bump_height(dir: &Vec3, amplitude: f64, frequency: f64) -> f64 {
    amplitude * (frequency * dir.x).sin() * (frequency * dir.y).sin() * (frequency * dir.z).sin()
}

/// Unit cube-sphere with smooth radial bumps `r = 1 + a·sin(fx)sin(fy)sin(fz)`.
pub fn bumpy_sphere(n: u32, amplitude: f64, frequency: f64) -> TriMesh {
    let mut m = cube_sphere(n);
    for v in &mut m.vertices {
        let d = v.normalize();
        *v = d * (1.0 + bump_height(&d, amplitude, frequency));
    }
    m.recompute_normals();
    m
}

/// Smooth procedural RGB in `[0.1, 0.9]` with spatial period `period`.
pub fn procedural_color(p: &Vec3, period: f64) -> Vec3 {
    let w = 2.0 * std::f64::consts::PI / period;
    Vec3::new(
        0.5 + 0.4 * (w * p.x).sin() * (w * p.y).cos(),
        0.5 + 0.4 * (w * p.y + 1.0).sin() * (w * p.z).cos(),
        0.5 + 0.4 * (w * p.z + 2.0).sin() * (w * p.x).cos(),
    )
}

pub fn with_procedural_colors(mesh: TriMesh, period: f64) -> TriMesh {
    let colors = mesh.vertices.iter().map(|p| procedural_color(p, period)).collect();
    mesh.with_colors(colors).expect("one color per vertex")
}

/// Square `[-h, h]²` in the plane `z = 0` facing `+z`, as two triangles.
pub fn quad(half: f64) -> TriMesh {
    let v = vec![
        Vec3::new(-half, -half, 0.0),
        Vec3::new(half, -half, 0.0),
        Vec3::new(half, half, 0.0),
        Vec3::new(-half, half, 0.0),
    ];
    TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).expect("quad indices are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        for k in 0..4 {
            let m = icosphere(k);
            assert_eq!(m.vertices.len() as u32, 10 * 4u32.pow(k) + 2);
            assert_eq!(m.faces.len() as u32, 20 * 4u32.pow(k));
            assert!(m.is_watertight());
            assert!(m.signed_volume() > 0.0);
        }
        assert_eq!(icosphere(3).vertices.len(), 642);
    }

    #[test]
    fn cube_is_closed_and_outward() {
        let c = cube(0.5);
        assert_eq!((c.vertices.len(), c.faces.len()), (8, 12));
        assert!(c.is_watertight());
        assert!((c.signed_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cube_sphere_counts() {
        let m = cube_sphere(29);
        assert_eq!(m.faces.len(), 10092);
        assert_eq!(m.vertices.len(), 6 * 29 * 29 + 2);
        assert!(m.is_watertight());
        let exact = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((m.signed_volume() - exact).abs() < 0.01 * exact);
    }

    #[test]
    fn subdivided_cube_volume() {
        let m = subdivided_cube(4, 1.0);
        assert!(m.is_watertight());
        assert!((m.signed_volume() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn bumps_stay_within_amplitude() {
        let m = bumpy_sphere(8, 0.05, 6.0);
        assert!(m.vertices.iter().all(|v| (v.norm() - 1.0).abs() <= 0.05 + 1e-12));
        assert!(m.is_watertight());
    }
}
