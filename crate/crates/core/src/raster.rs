//! Orthographic software rasterizer producing depth, normal, foreground and
//! color buffers.
//!
//! Image conventions: pixel `(x, y)` covers `[x, x+1) × [y, y+1)` with its
//! sample at the center, `x` grows along `right` and `y` grows against `up`
//! (rows run top to bottom).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::mesh::{Sphere, TriMesh};
use crate::Vec3;

/// Footprint half extent as a multiple of the bounding-sphere radius.
pub const FRAMING_MARGIN: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoCamera {
    pub center: Vec3,
    pub forward: Vec3,
    pub up: Vec3,
    pub right: Vec3,
    pub half_extent: f64,
    pub near: f64,
    pub far: f64,
}

impl OrthoCamera {
    /// Orthonormalizes `up` against `forward`; `right = forward × up`, so
    /// (right, up, -forward) is a right-handed frame.
    pub fn new(center: Vec3, forward: Vec3, up: Vec3, half_extent: f64) -> Result<Self> {
        let f = forward
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("camera forward is zero"))?;
        let u = (up - f * f.dot(&up))
            .try_normalize(1e-9)
            .ok_or_else(|| Error::invalid("camera up is parallel to forward"))?;
        let cam = OrthoCamera {
            center,
            forward: f,
            up: u,
            right: f.cross(&u),
            half_extent,
            near: f64::MIN,
            far: f64::MAX,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn look_at(eye: Vec3, target: Vec3, up_hint: Vec3, half_extent: f64) -> Result<Self> {
        Self::new(eye, target - eye, up_hint, half_extent)
    }

    /// Camera on direction `dir` from the sphere center at twice the radius,
    /// looking at the center, with the clip range covering the sphere.
    /// World `+z` is used as up unless nearly parallel, then `+y`.
    pub fn framing(sphere: &Sphere, dir: Vec3) -> Result<Self> {
        let d = dir
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("view direction is zero"))?;
        let r = sphere.radius.max(1e-12);
        let hint = if d.z.abs() > 0.999 { Vec3::y() } else { Vec3::z() };
        let mut cam = Self::new(sphere.center + d * (2.0 * r), -d, hint, FRAMING_MARGIN * r)?;
        cam.near = 0.0;
        cam.far = 4.0 * r;
        Ok(cam)
    }

    pub fn with_clip(mut self, near: f64, far: f64) -> Result<Self> {
        self.near = near;
        self.far = far;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (f, u, r) = (self.forward, self.up, self.right);
        let ortho = [f.dot(&u), f.dot(&r), u.dot(&r)].iter().all(|d| d.abs() < 1e-9);
        let unit = [f, u, r].iter().all(|v| (v.norm() - 1.0).abs() < 1e-9);
        if !(ortho && unit) || (r - f.cross(&u)).norm() > 1e-9 {
            return Err(Error::invalid("camera basis is not orthonormal and right-handed"));
        }
        if !(self.half_extent > 0.0) || !self.half_extent.is_finite() {
            return Err(Error::invalid("camera half_extent must be positive"));
        }
        if !(self.near < self.far) {
            return Err(Error::invalid("camera near must be below far"));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("camera center is not finite"));
        }
        Ok(())
    }

    /// Unit vector from the surface toward the camera.
    pub fn toward(&self) -> Vec3 {
        -self.forward
    }

    /// World units per pixel along the image width.
    pub fn pixel_pitch(&self, width: usize) -> f64 {
        2.0 * self.half_extent / width as f64
    }

    /// Pixel coordinates and depth along `forward`.
    pub fn project(&self, p: &Vec3, width: usize, height: usize) -> (f64, f64, f64) {
        let d = p - self.center;
        let u = (d.dot(&self.right) / self.half_extent + 1.0) * width as f64 / 2.0;
        let v = (1.0 - d.dot(&self.up) / self.half_extent) * height as f64 / 2.0;
        (u, v, d.dot(&self.forward))
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64, width: usize, height: usize) -> Vec3 {
        let x = (2.0 * u / width as f64 - 1.0) * self.half_extent;
        let y = (1.0 - 2.0 * v / height as f64) * self.half_extent;
        self.center + self.right * x + self.up * y + self.forward * depth
    }

    /// World direction to camera frame (x right, y up, z toward the camera).
    pub fn to_camera(&self, n: &Vec3) -> Vec3 {
        Vec3::new(n.dot(&self.right), n.dot(&self.up), -n.dot(&self.forward))
    }

    pub fn to_world(&self, n: &Vec3) -> Vec3 {
        self.right * n.x + self.up * n.y - self.forward * n.z
    }

    /// Rotates the image plane about `forward` by `angle` radians.
    pub fn rolled(&self, angle: f64) -> OrthoCamera {
        let (s, c) = angle.sin_cos();
        let up = self.up * c + self.right * s;
        OrthoCamera {
            up,
            right: self.forward.cross(&up),
            ..*self
        }
    }
}

#[derive(Debug, Clone)]
pub struct GBuffer {
    /// Depth along `forward`; `+inf` where empty.
    pub depth: Field2D,
    /// Unit world-frame normals (zero where empty).
    pub normal: Field2D,
    pub foreground: Field2D,
    pub color: Option<Field2D>,
    /// Winning face per pixel, `u32::MAX` where empty.
    pub face: Vec<u32>,
    /// Zero-area triangles skipped during the fill.
    pub degenerate_faces: usize,
}

impl GBuffer {
    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.foreground.get(x, y, 0) > 0.5
    }

    pub fn normal_at(&self, x: usize, y: usize) -> Vec3 {
        let p = self.normal.pixel(x, y);
        Vec3::new(p[0], p[1], p[2])
    }

    /// Normals rotated into the camera frame (x right, y up, z toward camera).
    pub fn camera_normals(&self, cam: &OrthoCamera) -> Field2D {
        let mut out = Field2D::zeros(self.width(), self.height(), 3);
        for y in 0..self.height() {
            for x in 0..self.width() {
                if self.is_foreground(x, y) {
                    let n = cam.to_camera(&self.normal_at(x, y));
                    out.pixel_mut(x, y).copy_from_slice(n.as_slice());
                }
            }
        }
        out
    }

    /// Depth with background set to `fill` (for PFM export or display).
    pub fn depth_filled(&self, fill: f64) -> Field2D {
        self.depth.map(|d| if d.is_finite() { d } else { fill })
    }
}

/// Edge function of `p` against the directed edge `a → b`. Evaluated from the
/// lexicographically smaller endpoint so a shared edge yields exactly negated
/// values in its two triangles.
#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    if (a.0, a.1) <= (b.0, b.1) {
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
    } else {
        -((a.0 - b.0) * (p.1 - b.1) - (a.1 - b.1) * (p.0 - b.0))
    }
}

/// With rows growing downward and positive orientation, an edge is top
/// (horizontal, pointing right) or left (pointing up).
#[inline]
fn is_top_left(a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

#[inline]
fn covers(w: f64, top_left: bool) -> bool {
    w > 0.0 || (w == 0.0 && top_left)
}

/// Z-buffered fill of every triangle (no back-face culling). Normals and
/// colors are interpolated barycentrically; normals are renormalized. Depth
/// ties go to the lower face index, which makes every buffer independent of
/// submission order.
pub fn rasterize(mesh: &TriMesh, cam: &OrthoCamera, width: usize, height: usize, want_color: bool) -> Result<GBuffer> {
    if mesh.is_empty() {
        return Err(Error::invalid("cannot rasterize an empty mesh"));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("raster size must be positive"));
    }
    mesh.validate()?;
    cam.validate()?;
    let n_px = width * height;
    let mut depth = vec![f64::INFINITY; n_px];
    let mut face = vec![u32::MAX; n_px];
    let mut bary = vec![[0.0f64; 3]; n_px];
    let projected: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(|p| cam.project(p, width, height)).collect();
    let mut degenerate = 0;

    for (fi, f) in mesh.faces.iter().enumerate() {
        let cross = mesh.face_cross(fi);
        let scale = (0..3)
            .map(|k| (mesh.vertices[f[k] as usize] - mesh.vertices[f[(k + 1) % 3] as usize]).norm_squared())
            .fold(0.0, f64::max);
        if cross.norm() <= 1e-12 * scale || scale == 0.0 {
            degenerate += 1;
            continue;
        }
        let mut idx = [f[0] as usize, f[1] as usize, f[2] as usize];
        let pt = |i: usize| (projected[i].0, projected[i].1);
        let mut area = edge(pt(idx[0]), pt(idx[1]), pt(idx[2]));
        if area == 0.0 {
            continue; // edge-on
        }
        if area < 0.0 {
            idx.swap(1, 2);
            area = -area;
        }
        let (a, b, c) = (pt(idx[0]), pt(idx[1]), pt(idx[2]));
        let za = projected[idx[0]].2;
        let zb = projected[idx[1]].2;
        let zc = projected[idx[2]].2;
        let tl = [is_top_left(b, c), is_top_left(c, a), is_top_left(a, b)];

        let min_x = a.0.min(b.0).min(c.0);
        let max_x = a.0.max(b.0).max(c.0);
        let min_y = a.1.min(b.1).min(c.1);
        let max_y = a.1.max(b.1).max(c.1);
        // pixel x covers sample x + 0.5
        let x0 = (min_x - 0.5).ceil().max(0.0) as i64;
        let x1 = ((max_x - 0.5).floor() as i64).min(width as i64 - 1);
        let y0 = (min_y - 0.5).ceil().max(0.0) as i64;
        let y1 = ((max_y - 0.5).floor() as i64).min(height as i64 - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        // weights permuted back to the face's own vertex order
        let order = if idx[1] == f[1] as usize { [0, 1, 2] } else { [0, 2, 1] };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                let w0 = edge(b, c, p);
                let w1 = edge(c, a, p);
                let w2 = edge(a, b, p);
                if !(covers(w0, tl[0]) && covers(w1, tl[1]) && covers(w2, tl[2])) {
                    continue;
                }
                let l = [w0 / area, w1 / area, w2 / area];
                let z = l[0] * za + l[1] * zb + l[2] * zc;
                if z < cam.near || z > cam.far {
                    continue;
                }
                let i = y as usize * width + x as usize;
                if z < depth[i] || (z == depth[i] && (fi as u32) < face[i]) {
                    depth[i] = z;
                    face[i] = fi as u32;
                    bary[i] = [l[order[0]], l[order[1]], l[order[2]]];
                }
            }
        }
    }

    let mut normal = vec![0.0; n_px * 3];
    let mut color = (want_color && mesh.colors.is_some()).then(|| vec![0.0; n_px * 3]);
    let mut fg = vec![0.0; n_px];
    for i in 0..n_px {
        if face[i] == u32::MAX {
            continue;
        }
        fg[i] = 1.0;
        let f = mesh.faces[face[i] as usize];
        let l = bary[i];
        let mut n = Vec3::zeros();
        for k in 0..3 {
            n += mesh.normals[f[k] as usize] * l[k];
        }
        let n = n.try_normalize(1e-300).unwrap_or_else(|| mesh.face_cross(face[i] as usize).normalize());
        normal[i * 3..i * 3 + 3].copy_from_slice(n.as_slice());
        if let (Some(out), Some(cols)) = (color.as_mut(), mesh.colors.as_ref()) {
            let mut c = Vec3::zeros();
            for k in 0..3 {
                c += cols[f[k] as usize] * l[k];
            }
            out[i * 3..i * 3 + 3].copy_from_slice(c.as_slice());
        }
    }
    Ok(GBuffer {
        depth: Field2D::from_vec_unchecked(width, height, 1, depth),
        normal: Field2D::from_vec_unchecked(width, height, 3, normal),
        foreground: Field2D::from_vec_unchecked(width, height, 1, fg),
        color: color.map(|c| Field2D::from_vec_unchecked(width, height, 3, c)),
        face,
        degenerate_faces: degenerate,
    })
}

/// Lambert-shaded grey preview lit from the camera, for debugging output.
pub fn shade_preview(g: &GBuffer, cam: &OrthoCamera) -> Field2D {
    let light = cam.toward();
    Field2D::from_fn(g.width(), g.height(), 3, |x, y, _| {
        if g.is_foreground(x, y) {
            0.15 + 0.85 * g.normal_at(x, y).dot(&light).abs()
        } else {
            0.0
        }
    })
}
