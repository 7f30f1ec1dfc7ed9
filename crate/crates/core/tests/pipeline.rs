use std::cell::RefCell;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use elevate3d::pipeline::bridge::{serve_echo, BridgeBackend, BridgeClient};
use elevate3d::pipeline::harness::{degrade, fixture_bundle, DegradeParams, FixtureParams};
use elevate3d::pipeline::refine::{NormalBlend, PredictorKind};
use elevate3d::pipeline::stubs::{FlatPredictor, IdentityRefiner, OraclePredictor};
use elevate3d::pipeline::{refine, run_refine, ModelBundle, RefineConfig};
use elevate3d::texture::render_textured;
use elevate3d::Field2D;

fn small_bundle() -> (ModelBundle, ModelBundle) {
    let hq = fixture_bundle(&FixtureParams {
        subdivisions: 8,
        amplitude: 0.03,
        frequency: 4.0,
        ..Default::default()
    })
    .unwrap();
    let lq = degrade(
        &hq,
        &DegradeParams {
            render_res: 64,
            tex_sigma: 2.0,
            ..Default::default()
        },
    )
    .unwrap();
    (hq, lq)
}

fn small_cfg() -> RefineConfig {
    RefineConfig {
        render_res: 64,
        selection_res: 32,
        grid_res: 32,
        n_candidates: 20,
        max_views: 3,
        ..Default::default()
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "textures", "masks"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn full_stop_ratio_refines_nothing() {
    let (_, lq) = small_bundle();
    let cfg = RefineConfig {
        stop_ratio: 1.0,
        ..small_cfg()
    };
    let (out, rep) = refine(lq.clone(), &cfg, &mut IdentityRefiner, &mut FlatPredictor, None).unwrap();
    assert!(rep.views.is_empty());
    assert_eq!(out.mesh, lq.mesh);
    assert_eq!(out.views, lq.views);
    assert_ne!(out.meta, lq.meta);
    assert!(out.meta["refine"]["stop"].is_object());
}

#[test]
fn fixed_seed_gives_byte_identical_bundles() {
    let (_, lq) = small_bundle();
    let cfg = RefineConfig {
        stub_mode: elevate3d::pipeline::StubMode::HfsPixel,
        ..small_cfg()
    };
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let (out, _) = run_refine(lq.clone(), &cfg, None).unwrap();
        out.save(dir.path().join(name)).unwrap();
    }
    let (a, b) = (files(&dir.path().join("a")), files(&dir.path().join("b")));
    assert!(a.len() >= 5);
    assert_eq!(a, b);
}

#[test]
fn checkpoint_matches_returned_bundle() {
    let (_, lq) = small_bundle();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck");
    let (out, rep) = run_refine(lq, &small_cfg(), Some(&ck)).unwrap();
    assert!(!rep.views.is_empty());
    let back = ModelBundle::load(&ck).unwrap();
    assert!(back.mesh.vertices == out.mesh.vertices, "vertices differ");
    assert!(back.mesh.faces == out.mesh.faces, "faces differ");
    assert!(back.mesh.normals == out.mesh.normals, "normals differ");
    assert!(back.mesh.colors == out.mesh.colors, "colors differ");
    assert!(back.views == out.views, "views differ");
    assert!(back.meta == out.meta, "meta differs");
}

#[test]
fn identity_and_oracle_keep_texture_registered() {
    let (hq, lq) = small_bundle();
    let cfg = RefineConfig {
        predictor: PredictorKind::Oracle,
        oracle_mesh: Some("unused".into()),
        normal_blend: NormalBlend::Replace,
        ..small_cfg()
    };
    let mut oracle = OraclePredictor {
        reference: hq.mesh.clone(),
    };
    let (out, rep) = refine(lq.clone(), &cfg, &mut IdentityRefiner, &mut oracle, None).unwrap();
    assert!(rep.views.iter().any(|v| v.lifted_points > 0));
    assert_ne!(out.mesh, lq.mesh);
    let ps = out.projectors().unwrap();
    for v in out.views.iter().filter(|v| v.refined) {
        let tex = v.texture.as_ref().unwrap();
        let mask = v.mask.as_ref().unwrap();
        let r = render_textured(&out.mesh, &ps, &v.camera, tex.width(), tex.height()).unwrap();
        // stay away from silhouettes and mask borders, where the refined mesh
        // may have moved by a pixel
        let keep = erode(&erode(&mask.zip_map(&r.channel(3), |m, a| if m > 0.5 && a > 0.0 { 1.0 } else { 0.0 }).unwrap()));
        let (mut sum, mut n) = (0.0, 0.0);
        for y in 0..tex.height() {
            for x in 0..tex.width() {
                if keep.get(x, y, 0) > 0.5 {
                    for c in 0..3 {
                        sum += (r.get(x, y, c) - tex.get(x, y, c)).abs();
                        n += 1.0;
                    }
                }
            }
        }
        assert!(n > 0.0);
        assert!(sum / n < 2.0 / 255.0, "MAE {}", sum / n * 255.0);
    }
}

fn erode(m: &Field2D) -> Field2D {
    Field2D::from_fn(m.width(), m.height(), 1, |x, y, _| {
        let all = (-1i64..=1).all(|dy| {
            (-1i64..=1).all(|dx| {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                xx >= 0 && yy >= 0 && (xx as usize) < m.width() && (yy as usize) < m.height() && m.get(xx as usize, yy as usize, 0) > 0.5
            })
        });
        if all {
            1.0
        } else {
            0.0
        }
    })
}

#[test]
fn echo_bridge_reproduces_stub_identity() {
    let (_, lq) = small_bundle();
    let cfg = small_cfg();
    let (stub, _) = refine(lq.clone(), &cfg, &mut IdentityRefiner, &mut FlatPredictor, None).unwrap();

    let (req_r, req_w) = std::io::pipe().unwrap();
    let (resp_r, resp_w) = std::io::pipe().unwrap();
    let server = std::thread::spawn(move || serve_echo(BufReader::new(req_r), resp_w));
    let client = RefCell::new(BridgeClient::new(BufReader::new(resp_r), req_w));
    client.borrow_mut().handshake().unwrap();
    let backend = BridgeBackend { client: &client };
    let (bridged, _) = refine(lq, &cfg, &mut backend.clone(), &mut backend.clone(), None).unwrap();
    client.borrow_mut().shutdown().unwrap();
    drop(client);
    server.join().unwrap().unwrap();

    assert_eq!(bridged.mesh, stub.mesh);
    assert_eq!(bridged.views, stub.views);
}
