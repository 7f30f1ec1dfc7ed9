use elevate3d::mesh::primitives::{icosphere, with_procedural_colors};
use elevate3d::raster::{rasterize, OrthoCamera};
use elevate3d::texture::{bake_view, fragment_contributions, to_rgba, ProjectorSet};
use elevate3d::visibility::spherical_direction;
use elevate3d::{Field2D, Vec3};
use proptest::prelude::*;

fn textured_view(m: &elevate3d::mesh::TriMesh, cam: &OrthoCamera, res: usize) -> Field2D {
    let g = rasterize(m, cam, res, res, true).unwrap();
    to_rgba(g.color.as_ref().unwrap(), Some(&g.foreground)).unwrap()
}

#[test]
fn self_projection_round_trip() {
    let m = with_procedural_colors(icosphere(4), 0.6);
    let sphere = m.bounding_sphere().unwrap();
    let cam = OrthoCamera::framing(&sphere, spherical_direction(60.0, 30.0)).unwrap();
    let tex = textured_view(&m, &cam, 128);
    let other = OrthoCamera::framing(&sphere, spherical_direction(120.0, 200.0)).unwrap();
    let ps = ProjectorSet::build(
        &m,
        [(cam.clone(), tex.clone(), true), (other.clone(), textured_view(&m, &other, 128), false)],
    )
    .unwrap();
    let out = bake_view(&m, &ps, &cam, 128, 128).unwrap();
    let (mut covered, mut fg) = (0, 0);
    for y in 0..128 {
        for x in 0..128 {
            if tex.get(x, y, 3) < 1.0 {
                assert_eq!(out.get(x, y, 3), 0.0);
                continue;
            }
            fg += 1;
            if out.get(x, y, 3) > 0.0 {
                covered += 1;
                for c in 0..3 {
                    assert!((out.get(x, y, c) - tex.get(x, y, c)).abs() <= 1.0 / 255.0);
                }
            }
        }
    }
    // only grazing pixels (alignment below 0.3) drop out
    assert!(covered as f64 > 0.85 * fg as f64, "{covered} of {fg}");
}

#[test]
fn zero_projectors_give_transparent_output() {
    let m = icosphere(2);
    let cam = OrthoCamera::framing(&m.bounding_sphere().unwrap(), Vec3::z()).unwrap();
    let out = bake_view(&m, &ProjectorSet::default(), &cam, 32, 32).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn identical_textures_blend_to_themselves() {
    let m = icosphere(3);
    let sphere = m.bounding_sphere().unwrap();
    let a = OrthoCamera::framing(&sphere, spherical_direction(80.0, 0.0)).unwrap();
    let b = OrthoCamera::framing(&sphere, spherical_direction(80.0, 40.0)).unwrap();
    let tex = |cam: &OrthoCamera| {
        let g = rasterize(&m, cam, 64, 64, false).unwrap();
        to_rgba(&Field2D::filled(64, 64, 3, 0.25), Some(&g.foreground)).unwrap()
    };
    let ps = ProjectorSet::build(&m, [(a.clone(), tex(&a), true), (b.clone(), tex(&b), true)]).unwrap();
    let out = bake_view(&m, &ps, &a, 64, 64).unwrap();
    for px in out.data().chunks_exact(4) {
        if px[3] > 0.0 {
            assert!((px[0] - 0.25).abs() < 1e-12);
        }
    }
}

fn random_set(seed: u64) -> (elevate3d::mesh::TriMesh, ProjectorSet, Vec<OrthoCamera>) {
    let m = icosphere(3);
    let sphere = m.bounding_sphere().unwrap();
    let mut views = Vec::new();
    let mut cams = Vec::new();
    for k in 0..4u64 {
        let cam = OrthoCamera::framing(&sphere, spherical_direction(30.0 + 40.0 * k as f64, (seed * 37 + k * 90) as f64)).unwrap();
        let g = rasterize(&m, &cam, 48, 48, false).unwrap();
        let rgb = Field2D::from_fn(48, 48, 3, |x, y, c| ((x * (c + 1) + y * (k as usize + 2) + seed as usize) % 17) as f64 / 16.0);
        views.push((cam.clone(), to_rgba(&rgb, Some(&g.foreground)).unwrap(), k % 2 == 0));
        cams.push(cam);
    }
    let ps = ProjectorSet::build(&m, views).unwrap();
    (m, ps, cams)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn permutation_invariant(seed in 0u64..100, shift in 1usize..4) {
        let (m, ps, cams) = random_set(seed);
        let mut rotated = ps.clone();
        rotated.views.rotate_left(shift);
        let a = bake_view(&m, &ps, &cams[1], 48, 48).unwrap();
        let b = bake_view(&m, &rotated, &cams[1], 48, 48).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-7);
    }

    #[test]
    fn output_is_convex_combination(seed in 0u64..100, px in 0usize..48, py in 0usize..48) {
        let (m, ps, cams) = random_set(seed);
        let g = rasterize(&m, &cams[0], 48, 48, false).unwrap();
        prop_assume!(g.is_foreground(px, py));
        let frag = cams[0].unproject(px as f64 + 0.5, py as f64 + 0.5, g.depth.get(px, py, 0), 48, 48);
        let n = g.normal_at(px, py).normalize();
        let contrib = fragment_contributions(&frag, &n, &ps, 1e-3);
        let out = elevate3d::texture::blend_contributions(&contrib);
        if out[3] > 0.0 {
            for c in 0..3 {
                let lo = contrib.iter().map(|(_, t)| t[c]).fold(f64::MAX, f64::min);
                let hi = contrib.iter().map(|(_, t)| t[c]).fold(f64::MIN, f64::max);
                prop_assert!(out[c] >= lo - 1e-12 && out[c] <= hi + 1e-12);
            }
        }
    }
}
