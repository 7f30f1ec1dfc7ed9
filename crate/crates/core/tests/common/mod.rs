#![allow(dead_code)]

use elevate3d::Field2D;

/// Spherical cap seen from above: radius `r` px, cap footprint radius `rc` px.
/// Returns (camera normals, depth, mask, cap height in world units).
pub fn sphere_cap(size: usize, r: f64, rc: f64, pitch: f64) -> (Field2D, Field2D, Field2D, f64) {
    let c = size as f64 / 2.0;
    let base = (r * r - rc * rc).sqrt();
    let inside = |x: usize, y: usize| {
        let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
        (dx * dx + dy * dy < rc * rc).then_some((dx, dy))
    };
    let height = |dx: f64, dy: f64| (r * r - dx * dx - dy * dy).sqrt();
    let n = Field2D::from_fn(size, size, 3, |x, y, ch| match inside(x, y) {
        Some((dx, dy)) => [dx / r, -dy / r, height(dx, dy) / r][ch],
        None => 0.0,
    });
    let depth = Field2D::from_fn(size, size, 1, |x, y, _| match inside(x, y) {
        Some((dx, dy)) => -(height(dx, dy) - base) * pitch,
        None => 0.0,
    });
    let mask = Field2D::from_fn(size, size, 1, |x, y, _| inside(x, y).map_or(0.0, |_| 1.0));
    (n, depth, mask, (r - base) * pitch)
}

/// Tilted plane with a height jump of `step` px at column `at`.
/// Returns (normals, depth, mask) in pixel units (pitch 1).
pub fn step_surface(w: usize, h: usize, slope: f64, step: f64, at: usize) -> (Field2D, Field2D, Field2D) {
    let l = (slope * slope + 1.0).sqrt();
    let n = Field2D::from_fn(w, h, 3, |_, _, c| [-slope / l, 0.0, 1.0 / l][c]);
    let d = Field2D::from_fn(w, h, 1, |x, _, _| -(slope * x as f64 + if x >= at { step } else { 0.0 }));
    (n, d, Field2D::filled(w, h, 1, 1.0))
}

pub fn rmse_on(a: &Field2D, b: &Field2D, mask: &Field2D) -> f64 {
    let mut s = 0.0;
    let mut k = 0usize;
    for i in 0..mask.data().len() {
        if mask.data()[i] > 0.5 {
            s += (a.data()[i] - b.data()[i]).powi(2);
            k += 1;
        }
    }
    (s / k.max(1) as f64).sqrt()
}
