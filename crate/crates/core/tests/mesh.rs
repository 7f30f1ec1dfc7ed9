use elevate3d::integrate::{integrate_normals, reliability_mask, IntegrationOptions};
use elevate3d::mesh::io::{load_mesh, save_mesh};
use elevate3d::mesh::metrics::{mesh_distance, TriangleIndex};
use elevate3d::mesh::points::depth_to_points;
use elevate3d::mesh::poisson::{Grid, PoissonParams};
use elevate3d::mesh::primitives::{bumpy_sphere, icosphere, with_procedural_colors};
use elevate3d::mesh::stitch::{stitch, StitchParams};
use elevate3d::mesh::TriMesh;
use elevate3d::raster::{rasterize, OrthoCamera};
use elevate3d::{Field2D, Vec3};
use proptest::prelude::*;

fn lift_view(m: &TriMesh, cam: &OrthoCamera, res: usize) -> (elevate3d::mesh::points::OrientedPointSet, Field2D) {
    let g = rasterize(m, cam, res, res, false).unwrap();
    let n = g.camera_normals(cam);
    let d = g.depth_filled(0.0);
    let opts = IntegrationOptions {
        pitch: cam.pixel_pitch(res),
        ..Default::default()
    };
    let r = integrate_normals(&n, &d, &g.foreground, 1e6, &opts).unwrap();
    let rel = reliability_mask(&r, 0.4, 0.6);
    (depth_to_points(&r.depth, &n, &rel, cam).unwrap(), rel)
}

#[test]
fn identity_round_trip_within_two_cells() {
    let m = bumpy_sphere(20, 0.05, 4.0);
    let cam = OrthoCamera::framing(&m.bounding_sphere().unwrap(), Vec3::new(0.3, -1.0, 0.4)).unwrap();
    let (pts, rel) = lift_view(&m, &cam, 192);
    let params = StitchParams::default();
    let out = stitch(&m, &pts, &cam, &rel, &params).unwrap();
    assert!(out.is_watertight());
    let mut all = m.vertices.clone();
    all.extend_from_slice(&pts.points);
    let cell = Grid::fitting(&all, 64).unwrap().cell;
    let d = mesh_distance(&out, &m, 20000, 1).unwrap();
    assert!(d.hausdorff <= 2.0 * cell, "hausdorff {} vs cell {cell}", d.hausdorff);

    // a second pass barely moves the surface
    let (pts2, rel2) = lift_view(&out, &cam, 192);
    let again = stitch(&out, &pts2, &cam, &rel2, &params).unwrap();
    let idx = TriangleIndex::new(&out).unwrap();
    let rms = (again.vertices.iter().map(|v| idx.distance(v).powi(2)).sum::<f64>() / again.vertices.len() as f64).sqrt();
    assert!(rms < 0.5 * cell, "rms {rms} vs cell {cell}");
}

#[test]
fn lifted_sphere_points_lie_on_sphere() {
    // analytic depth of a unit sphere, no mesh involved
    let res = 128;
    let cam = OrthoCamera::new(Vec3::new(0.0, 0.0, 3.0), -Vec3::z(), Vec3::y(), 1.2).unwrap();
    let mut depth = Field2D::zeros(res, res, 1);
    let mut normals = Field2D::zeros(res, res, 3);
    let mut mask = Field2D::zeros(res, res, 1);
    for y in 0..res {
        for x in 0..res {
            let p = cam.unproject(x as f64 + 0.5, y as f64 + 0.5, 0.0, res, res);
            let r2 = p.x * p.x + p.y * p.y;
            if r2 < 0.81 {
                let z = (1.0 - r2).sqrt();
                depth.set(x, y, 0, 3.0 - z);
                let c = cam.to_camera(&Vec3::new(p.x, p.y, z));
                normals.pixel_mut(x, y).copy_from_slice(&[c.x, c.y, c.z]);
                mask.set(x, y, 0, 1.0);
            }
        }
    }
    let pts = depth_to_points(&depth, &normals, &mask, &cam).unwrap();
    assert_eq!(pts.len(), mask.count_nonzero());
    for (p, n) in pts.points.iter().zip(&pts.normals) {
        assert!((p.norm() - 1.0).abs() < 1e-3);
        assert!((n - p.normalize()).norm() < 1e-9);
    }
}

#[test]
fn ply_and_obj_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let m = with_procedural_colors(icosphere(2), 0.8);
    let ply = dir.path().join("m.ply");
    save_mesh(&m, &ply).unwrap();
    let back = load_mesh(&ply).unwrap();
    assert_eq!(back.vertices, m.vertices);
    assert_eq!(back.faces, m.faces);
    let obj = dir.path().join("m.obj");
    save_mesh(&m, &obj).unwrap();
    let back = load_mesh(&obj).unwrap();
    assert!(back.vertices.iter().zip(&m.vertices).all(|(a, b)| (a - b).norm() < 1e-6));
    assert!(load_mesh(dir.path().join("m.stl")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn decimation_keeps_bounds(ratio in 0.15f64..0.9) {
        let m = icosphere(3);
        let (d, cell) = elevate3d::mesh::decimate::decimate_with_cell(&m, ratio).unwrap();
        let target = ratio * m.faces.len() as f64;
        prop_assert!((d.faces.len() as f64 - target).abs() <= 0.1 * target);
        let (a, b) = (m.bounding_box().unwrap(), d.bounding_box().unwrap());
        prop_assert!((a.min - b.min).amax() <= cell && (a.max - b.max).amax() <= cell);
    }

    #[test]
    fn poisson_is_watertight_on_closed_inputs(k in 2u32..4, scale in 0.5f64..3.0) {
        let s = icosphere(k);
        let mut pts = elevate3d::mesh::points::OrientedPointSet::default();
        for (p, _, _) in elevate3d::mesh::metrics::sample_surface(&s, 4000, k as u64).unwrap() {
            let d = p.normalize();
            pts.push(d * scale, d, 1.0);
        }
        let out = elevate3d::mesh::poisson::poisson_reconstruct(&pts, &PoissonParams { grid_res: 32, ..Default::default() }).unwrap();
        prop_assert!(out.is_watertight());
        prop_assert!(out.signed_volume() > 0.0);
    }
}
