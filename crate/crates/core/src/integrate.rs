//! Depth from normals with a depth prior, discontinuity-aware.
//!
//! Unknowns are heights `z = -depth / pitch` in pixel units (positive toward
//! the camera), so the normal slopes are `dz/du = -nx/nz` and `dz/dv = ny/nz`
//! (rows grow downward). The energy per masked pixel `i` is
//!
//! ```text
//!   w_u (D+u z - p)² + (1 - w_u)(D-u z - p)²
//! + w_v (D+v z - q)² + (1 - w_v)(D-v z - q)²  + lambda (z - d)²
//! ```
//!
//! with one-sided differences that exist only when the neighbor is masked.
//! Weights follow the bilateral rule `w = sigmoid(k nz² ((D- z)² - (D+ z)²))`,
//! i.e. the squared one-sided differences are taken in the `nz`-scaled form
//! of the integration method: the side with the smaller jump is trusted.

use log::debug;

use crate::error::{Error, Result};
use crate::field::Field2D;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationOptions {
    /// World units per pixel.
    pub pitch: f64,
    /// Sigmoid stiffness of the weight update.
    pub k: f64,
    pub max_outer: usize,
    /// Outer stop: change of z between iterations relative to its range.
    pub outer_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Pixels with `nz` at or below this are left out of the data term.
    pub min_nz: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            pitch: 1.0,
            k: 2.0,
            max_outer: 50,
            outer_tol: 1e-6,
            cg_tol: 1e-8,
            cg_max_iter: 5000,
            min_nz: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntegrationResult {
    /// Depth along the camera forward axis, world units; `+inf` off-mask.
    pub depth: Field2D,
    pub w_u: Field2D,
    pub w_v: Field2D,
    pub iterations: usize,
    /// Final objective at the returned depth and weights.
    pub residual: f64,
    /// Objective after each accepted outer iteration.
    pub energies: Vec<f64>,
    /// Masked pixels dropped from the data term for grazing normals.
    pub grazing: usize,
}

/// Masked-pixel indexing and the 4-neighborhood.
struct Grid {
    width: usize,
    pixels: Vec<usize>,
    /// right, left, down, up neighbor unknown ids
    nbr: Vec<[u32; 4]>,
}

impl Grid {
    fn new(mask: &Field2D) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut id = vec![NONE; w * h];
        let mut pixels = Vec::new();
        for (i, &m) in mask.data().iter().enumerate() {
            if m > 0.5 {
                id[i] = pixels.len() as u32;
                pixels.push(i);
            }
        }
        let nbr = pixels
            .iter()
            .map(|&i| {
                let (x, y) = (i % w, i / w);
                [
                    if x + 1 < w { id[i + 1] } else { NONE },
                    if x > 0 { id[i - 1] } else { NONE },
                    if y + 1 < h { id[i + w] } else { NONE },
                    if y > 0 { id[i - w] } else { NONE },
                ]
            })
            .collect();
        Grid { width: w, pixels, nbr }
    }

    fn len(&self) -> usize {
        self.pixels.len()
    }
}

/// Per-unknown data of the quadratic.
struct Problem<'a> {
    grid: &'a Grid,
    /// target slopes (p along u, q along v); None when grazing
    slope: Vec<Option<(f64, f64)>>,
    prior: Vec<f64>,
    lambda: f64,
}

impl Problem<'_> {
    /// Iterates the data terms as (weight, from, to, target): c (z_to - z_from - target)².
    fn for_each_term(&self, wu: &[f64], wv: &[f64], mut f: impl FnMut(f64, usize, usize, f64)) {
        for i in 0..self.grid.len() {
            let Some((p, q)) = self.slope[i] else { continue };
            let [r, l, d, u] = self.grid.nbr[i];
            if r != NONE {
                f(wu[i], i, r as usize, p);
            }
            if l != NONE {
                f(1.0 - wu[i], l as usize, i, p);
            }
            if d != NONE {
                f(wv[i], i, d as usize, q);
            }
            if u != NONE {
                f(1.0 - wv[i], u as usize, i, q);
            }
        }
    }

    fn energy(&self, z: &[f64], wu: &[f64], wv: &[f64]) -> f64 {
        let mut e = 0.0;
        self.for_each_term(wu, wv, |c, a, b, t| e += c * (z[b] - z[a] - t).powi(2));
        e + self.lambda * z.iter().zip(&self.prior).map(|(z, d)| (z - d).powi(2)).sum::<f64>()
    }

    /// Gradient of the energy at `z` (used by tests and the line check).
    fn gradient(&self, z: &[f64], wu: &[f64], wv: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = z.iter().zip(&self.prior).map(|(z, d)| 2.0 * self.lambda * (z - d)).collect();
        self.for_each_term(wu, wv, |c, a, b, t| {
            let r = 2.0 * c * (z[b] - z[a] - t);
            g[b] += r;
            g[a] -= r;
        });
        g
    }

    /// Assembles `H delta = rhs` for the offset `delta = z - prior` (H is
    /// half the Hessian, a 5-point stencil). Only differences of the prior
    /// enter, so a constant shift of the prior leaves the system unchanged.
    fn assemble(&self, wu: &[f64], wv: &[f64]) -> System<'_> {
        let n = self.grid.len();
        let mut diag = vec![self.lambda; n];
        let mut off = vec![[0.0f64; 4]; n];
        let mut rhs = vec![0.0; n];
        let slot = |grid: &Grid, a: usize, b: usize| grid.nbr[a].iter().position(|&x| x as usize == b).unwrap();
        self.for_each_term(wu, wv, |c, a, b, t| {
            diag[a] += c;
            diag[b] += c;
            off[a][slot(self.grid, a, b)] -= c;
            off[b][slot(self.grid, b, a)] -= c;
            let r = c * (t - (self.prior[b] - self.prior[a]));
            rhs[b] += r;
            rhs[a] -= r;
        });
        System {
            nbr: &self.grid.nbr,
            diag,
            off,
            rhs,
        }
    }
}

struct System<'a> {
    nbr: &'a [[u32; 4]],
    diag: Vec<f64>,
    off: Vec<[f64; 4]>,
    rhs: Vec<f64>,
}

impl System<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            let mut s = self.diag[i] * x[i];
            for k in 0..4 {
                let j = self.nbr[i][k];
                if j != NONE {
                    s += self.off[i][k] * x[j as usize];
                }
            }
            out[i] = s;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient from the initial guess in `x`.
/// Returns (iterations, relative residual).
fn conjugate_gradient(sys: &System, x: &mut [f64], tol: f64, max_iter: usize) -> (usize, f64) {
    let n = x.len();
    let inv: Vec<f64> = sys.diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut ax = vec![0.0; n];
    sys.apply(x, &mut ax);
    let mut r: Vec<f64> = sys.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let b_norm = dot(&sys.rhs, &sys.rhs).sqrt().max(1e-300);
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= tol {
            return (it, rel);
        }
        sys.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return (it, rel);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (max_iter, dot(&r, &r).sqrt() / b_norm)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn update_weights(grid: &Grid, z: &[f64], k: f64, nz2: &[f64], wu: &mut [f64], wv: &mut [f64]) {
    for i in 0..grid.len() {
        let k = k * nz2[i];
        let [r, l, d, u] = grid.nbr[i];
        let diff = |j: u32| if j == NONE { 0.0 } else { z[j as usize] - z[i] };
        let (fu, bu) = (diff(r), -diff(l));
        let (fv, bv) = (diff(d), -diff(u));
        wu[i] = sigmoid(k * (bu * bu - fu * fu));
        wv[i] = sigmoid(k * (bv * bv - fv * fv));
    }
}

fn check_inputs(n: &Field2D, d: &Field2D, mask: &Field2D, lambda: f64) -> Result<()> {
    if n.channels() != 3 {
        return Err(Error::invalid("normal map must have 3 channels"));
    }
    n.ensure_same_size(d)?;
    n.ensure_same_size(mask)?;
    if d.channels() != 1 || mask.channels() != 1 {
        return Err(Error::invalid("depth and mask must be single channel"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be a finite non-negative number"));
    }
    if mask.count_nonzero() == 0 {
        return Err(Error::invalid("integration mask is empty"));
    }
    Ok(())
}

/// Minimizes the bilaterally weighted energy by IRLS with CG inner solves.
///
/// `n` holds camera-frame normals (z toward the camera), `d` the prior depth
/// along `forward`. An outer iteration whose weight update would raise the
/// objective is rolled back and ends the loop.
pub fn integrate_normals(
    n: &Field2D,
    d: &Field2D,
    mask: &Field2D,
    lambda: f64,
    opts: &IntegrationOptions,
) -> Result<IntegrationResult> {
    check_inputs(n, d, mask, lambda)?;
    if !(opts.pitch > 0.0) {
        return Err(Error::invalid("pixel pitch must be positive"));
    }
    let grid = Grid::new(mask);
    let mut grazing = 0;
    let mut slope = Vec::with_capacity(grid.len());
    let mut prior = Vec::with_capacity(grid.len());
    for &i in &grid.pixels {
        let (x, y) = (i % grid.width, i / grid.width);
        let depth = d.get(x, y, 0);
        if !depth.is_finite() {
            return Err(Error::invalid(format!("prior depth is not finite at ({x}, {y})")));
        }
        prior.push(-depth / opts.pitch);
        let p = n.pixel(x, y);
        if p[2] <= opts.min_nz || !p.iter().all(|v| v.is_finite()) {
            grazing += 1;
            slope.push(None);
        } else {
            slope.push(Some((-p[0] / p[2], p[1] / p[2])));
        }
    }
    if grazing > 0 {
        debug!("{grazing} grazing pixels left out of the data term");
    }
    // nz² of each unit normal, zero for grazing pixels (weights stay at 0.5)
    let nz2: Vec<f64> = slope
        .iter()
        .map(|s| s.map_or(0.0, |(p, q)| 1.0 / (1.0 + p * p + q * q)))
        .collect();
    let problem = Problem {
        grid: &grid,
        slope,
        prior,
        lambda,
    };

    let m = grid.len();
    let mut delta = vec![0.0; m];
    let mut z = problem.prior.clone();
    let mut wu = vec![0.5; m];
    let mut wv = vec![0.5; m];
    let mut energies = Vec::new();
    let mut energy = problem.energy(&z, &wu, &wv);
    let mut iterations = 0;
    for outer in 0..opts.max_outer {
        let sys = problem.assemble(&wu, &wv);
        let prev = z.clone();
        let prev_delta = delta.clone();
        let (cg_iters, rel) = conjugate_gradient(&sys, &mut delta, opts.cg_tol, opts.cg_max_iter);
        for ((z, p), d) in z.iter_mut().zip(&problem.prior).zip(&delta) {
            *z = p + d;
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("conjugate gradient diverged".into()));
        }
        if rel > opts.cg_tol {
            debug!("outer {outer}: CG stopped at relative residual {rel:.3e} after {cg_iters} iterations");
        }
        let (mut nu, mut nv) = (wu.clone(), wv.clone());
        update_weights(&grid, &z, opts.k, &nz2, &mut nu, &mut nv);
        let e_new = problem.energy(&z, &nu, &nv);
        if e_new > energy * (1.0 + 1e-12) + 1e-300 && outer > 0 {
            debug!("outer {outer}: objective would rise ({energy:.6e} -> {e_new:.6e}), stopping");
            z = prev;
            break;
        }
        wu = nu;
        wv = nv;
        energy = e_new;
        energies.push(energy);
        iterations = outer + 1;
        let change = delta.iter().zip(&prev_delta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        // relative to the height range so the test is translation invariant
        let (lo, hi) = z.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let scale = ((hi - lo) * (m as f64).sqrt()).max(1e-12);
        if change / scale < opts.outer_tol {
            break;
        }
    }

    let (w, h) = (mask.width(), mask.height());
    let mut depth = Field2D::from_vec_unchecked(w, h, 1, vec![f64::INFINITY; w * h]);
    let mut w_u = Field2D::zeros(w, h, 1);
    let mut w_v = Field2D::zeros(w, h, 1);
    for (k, &i) in grid.pixels.iter().enumerate() {
        depth.data_mut()[i] = -z[k] * opts.pitch;
        w_u.data_mut()[i] = wu[k];
        w_v.data_mut()[i] = wv[k];
    }
    Ok(IntegrationResult {
        depth,
        w_u,
        w_v,
        iterations,
        residual: energy,
        energies,
        grazing,
    })
}

/// Objective and its gradient (with respect to `z`) for fixed weights.
/// Unlike [`integrate_normals`], `d` and `z` are heights in pixel units,
/// not depths.
pub fn fixed_weight_energy(
    n: &Field2D,
    d: &Field2D,
    mask: &Field2D,
    lambda: f64,
    w_u: &Field2D,
    w_v: &Field2D,
    z: &Field2D,
) -> Result<(f64, Field2D)> {
    check_inputs(n, d, mask, lambda)?;
    let grid = Grid::new(mask);
    let take = |f: &Field2D| grid.pixels.iter().map(|&i| f.data()[i]).collect::<Vec<f64>>();
    let slope = grid
        .pixels
        .iter()
        .map(|&i| {
            let p = &n.data()[i * 3..i * 3 + 3];
            (p[2] > 1e-4).then(|| (-p[0] / p[2], p[1] / p[2]))
        })
        .collect();
    let problem = Problem {
        grid: &grid,
        slope,
        prior: take(d),
        lambda,
    };
    let (zz, wu, wv) = (take(z), take(w_u), take(w_v));
    let g = problem.gradient(&zz, &wu, &wv);
    let mut grad = Field2D::zeros(mask.width(), mask.height(), 1);
    for (k, &i) in grid.pixels.iter().enumerate() {
        grad.data_mut()[i] = g[k];
    }
    Ok((problem.energy(&zz, &wu, &wv), grad))
}

/// Pixels whose both weights lie in `[lo, hi]`, eroded with a 3×3 box
/// (out-of-frame counts as unreliable).
pub fn reliability_mask(r: &IntegrationResult, lo: f64, hi: f64) -> Field2D {
    let (w, h) = (r.w_u.width(), r.w_u.height());
    let ok = Field2D::from_fn(w, h, 1, |x, y, _| {
        let (a, b) = (r.w_u.get(x, y, 0), r.w_v.get(x, y, 0));
        let inside = r.depth.get(x, y, 0).is_finite();
        if inside && (lo..=hi).contains(&a) && (lo..=hi).contains(&b) {
            1.0
        } else {
            0.0
        }
    });
    erode3(&ok)
}

pub fn erode3(m: &Field2D) -> Field2D {
    let (w, h) = (m.width() as i64, m.height() as i64);
    Field2D::from_fn(m.width(), m.height(), 1, |x, y, _| {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h || m.get(nx as usize, ny as usize, 0) < 0.5 {
                    return 0.0;
                }
            }
        }
        1.0
    })
}

/// Unit normal from UDN blending: `normalize(bx + dx, by + dy, bz)`, or the
/// base when that vanishes.
pub fn udn(base: [f64; 3], detail: [f64; 3]) -> [f64; 3] {
    let v = [base[0] + detail[0], base[1] + detail[1], base[2]];
    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if len > 1e-12 {
        [v[0] / len, v[1] / len, v[2] / len]
    } else {
        base
    }
}

pub fn udn_blend(base: &Field2D, detail: &Field2D) -> Result<Field2D> {
    if base.channels() != 3 {
        return Err(Error::invalid("normal maps must have 3 channels"));
    }
    base.ensure_same_shape(detail)?;
    let mut out = base.clone();
    for (o, d) in out.data_mut().chunks_exact_mut(3).zip(detail.data().chunks_exact(3)) {
        if o.iter().all(|&v| v == 0.0) {
            continue; // background
        }
        let r = udn([o[0], o[1], o[2]], [d[0], d[1], d[2]]);
        o.copy_from_slice(&r);
    }
    Ok(out)
}
