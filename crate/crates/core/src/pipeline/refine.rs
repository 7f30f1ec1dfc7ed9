//! The per-view refinement loop.

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::bundle::{BundleView, ModelBundle};
use super::bridge::BridgeProcess;
use super::stubs::{stub_refiner, FlatPredictor, NormalPredictor, OraclePredictor, RefineRequest, Refiner, StubMode};
use crate::diffusion::{NoiseSchedule, SamplerParams};
use crate::error::{Error, Result};
use crate::field::io::quantize8;
use crate::field::Field2D;
use crate::integrate::{integrate_normals, reliability_mask, udn, IntegrationOptions};
use crate::mesh::io::{load_mesh, quantize_colors};
use crate::mesh::points::depth_to_points;
use crate::mesh::poisson::PoissonParams;
use crate::mesh::stitch::{stitch, StitchParams};
use crate::raster::{rasterize, GBuffer, OrthoCamera};
use crate::texture::{pad_background, render_textured};
use crate::visibility::{refinement_mask, select_next_view, sparse_schedule, view_ratio, Selection, SelectionParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Stub,
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[default]
    Flat,
    /// Normals rasterized from `oracle_mesh`.
    Oracle,
    Bridge,
}

/// How predicted normals are combined with the rasterized ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalBlend {
    /// Predicted normals are detail on top of the mesh normals.
    #[default]
    Udn,
    /// Predicted normals are used as they are.
    Replace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub steps: usize,
    pub t_start: usize,
    pub t_stop: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub tau: f64,
    pub stop_ratio: f64,
    pub n_candidates: usize,
    pub grid_res: usize,
    pub render_res: usize,
    pub selection_res: usize,
    pub max_views: usize,
    pub seed: u64,
    pub backend: Backend,
    pub stub_mode: StubMode,
    pub unsharp_k: f64,
    pub unsharp_sigma: f64,
    pub predictor: PredictorKind,
    pub oracle_mesh: Option<PathBuf>,
    pub bridge_cmd: Option<String>,
    pub prompt: String,
    pub normal_blend: NormalBlend,
    /// Poisson weight of lifted points relative to kept-surface samples.
    pub refined_weight: f64,
    pub screen: f64,
    /// Bilateral weights inside this band count as reliable.
    pub reliability_band: [f64; 2],
    /// Only pixels whose blended normal faces the camera at least this much
    /// (camera-frame `z`) are integrated and lifted.
    pub min_facing: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            t_start: 29,
            t_stop: 18,
            sigma: 4.0,
            lambda: 0.008,
            tau: 0.5,
            stop_ratio: 0.02,
            n_candidates: 100,
            grid_res: 64,
            render_res: 256,
            selection_res: 128,
            max_views: 32,
            seed: 0,
            backend: Backend::Stub,
            stub_mode: StubMode::Identity,
            unsharp_k: 1.0,
            unsharp_sigma: 4.0,
            predictor: PredictorKind::Flat,
            oracle_mesh: None,
            bridge_cmd: None,
            prompt: String::new(),
            normal_blend: NormalBlend::Udn,
            refined_weight: 4.0,
            screen: 4.0,
            reliability_band: [0.4, 0.6],
            min_facing: 0.5,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RefineConfig {
    /// Parses a config; missing fields take their defaults. Values are
    /// checked by [`RefineConfig::validate`], which [`refine`] also calls.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn sampler(&self, seed: u64) -> SamplerParams {
        SamplerParams {
            steps: self.steps,
            t_start: self.t_start,
            t_stop: self.t_stop,
            sigma: self.sigma,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let schedule = NoiseSchedule::linear(self.steps).map_err(|e| config_err(e.to_string()))?;
        self.sampler(self.seed)
            .validate(&schedule)
            .map_err(|e| config_err(e.to_string()))?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(config_err("lambda must be finite and non-negative"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(config_err("tau must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.stop_ratio) {
            return Err(config_err("stop_ratio must lie in [0, 1]"));
        }
        if self.n_candidates == 0 {
            return Err(config_err("n_candidates must be at least 1"));
        }
        if !(32..=256).contains(&self.grid_res) {
            return Err(config_err("grid_res must lie in [32, 256]"));
        }
        if self.render_res < 16 || self.selection_res < 8 {
            return Err(config_err("render_res must be >= 16 and selection_res >= 8"));
        }
        if !(self.unsharp_sigma > 0.0) || !self.unsharp_k.is_finite() {
            return Err(config_err("unsharp_sigma must be positive and unsharp_k finite"));
        }
        if !(self.refined_weight > 0.0) || !(self.screen >= 0.0) {
            return Err(config_err("refined_weight must be positive and screen non-negative"));
        }
        let [lo, hi] = self.reliability_band;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(config_err("reliability_band must be an ordered pair in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.min_facing) {
            return Err(config_err("min_facing must lie in [0, 1)"));
        }
        if self.predictor == PredictorKind::Oracle && self.oracle_mesh.is_none() {
            return Err(config_err("predictor \"oracle\" needs oracle_mesh"));
        }
        let needs_bridge = self.backend == Backend::Bridge || self.predictor == PredictorKind::Bridge;
        if needs_bridge && self.bridge_cmd.as_deref().is_none_or(str::is_empty) {
            return Err(config_err("bridge backends need bridge_cmd"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSource {
    Sparse,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewLog {
    /// Index in the bundle's view list.
    pub index: usize,
    pub source: ViewSource,
    /// Lattice index for auto-selected views.
    pub candidate: Option<usize>,
    pub ratio: f64,
    pub seed: u64,
    pub mask_pixels: usize,
    pub lifted_points: usize,
    pub integration_iterations: usize,
    pub integration_residual: f64,
    pub energies: Vec<f64>,
    pub grazing: usize,
    pub faces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    /// Best candidate ratio fell below `stop_ratio`.
    Converged { max_ratio: f64 },
    MaxViews,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub views: Vec<ViewLog>,
    pub stop: StopReason,
}

/// Output of one view's texture and geometry step.
struct ViewOutcome {
    mesh: Option<crate::mesh::TriMesh>,
    texture: Field2D,
    mask: Field2D,
    log: ViewLog,
}

/// Camera-frame normals of `g`, replaced or detailed by `predicted`.
/// Pixels where the prediction is zero keep the mesh normal.
pub fn blend_normals(g: &GBuffer, cam: &OrthoCamera, predicted: &Field2D, mode: NormalBlend) -> Result<Field2D> {
    let base = g.camera_normals(cam);
    base.ensure_same_shape(predicted)?;
    let mut out = base.clone();
    for (i, px) in out.data_mut().chunks_exact_mut(3).enumerate() {
        let b = [px[0], px[1], px[2]];
        let p = &predicted.data()[3 * i..3 * i + 3];
        if b == [0.0; 3] || p.iter().all(|&v| v == 0.0) {
            continue;
        }
        let d = [p[0], p[1], p[2]];
        let n = match mode {
            NormalBlend::Udn => udn(b, d),
            NormalBlend::Replace => {
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                [d[0] / len, d[1] / len, d[2] / len]
            }
        };
        if n.iter().all(|v| v.is_finite()) {
            px.copy_from_slice(&n);
        }
    }
    Ok(out)
}

fn intersect(a: &Field2D, b: &Field2D) -> Result<Field2D> {
    a.zip_map(b, |x, y| if x > 0.5 && y > 0.5 { 1.0 } else { 0.0 })
}

struct Runner<'a> {
    cfg: &'a RefineConfig,
    refiner: &'a mut dyn Refiner,
    predictor: &'a mut dyn NormalPredictor,
    base_color: Option<Field2D>,
}

impl Runner<'_> {
    fn process_view(&mut self, bundle: &ModelBundle, cam: &OrthoCamera, seed: u64) -> Result<ViewOutcome> {
        let cfg = self.cfg;
        let res = cfg.render_res;
        let mesh = &bundle.mesh;
        let g = rasterize(mesh, cam, res, res, false)?;
        let mask = refinement_mask(&g, &bundle.refined_cameras(), cfg.tau)?;

        let color = pad_background(&render_textured(mesh, &bundle.projectors()?, cam, res, res)?)?;
        let base = self.base_color.get_or_insert_with(|| color.clone()).clone();
        let sampler = cfg.sampler(seed);
        let request = RefineRequest {
            color: &color,
            depth: &g.depth,
            mask: &mask,
            base_color: &base,
            prompt: &cfg.prompt,
            sampler: &sampler,
        };
        let refined = self.refiner.refine(&request)?;
        super::stubs::check_refined(&refined, &request)?;
        let texture = quantize8(&refined);

        let predicted = self.predictor.predict(&texture, cam)?;
        if predicted.shape() != g.normal.shape() || !predicted.all_finite() {
            return Err(Error::Backend(format!("predictor returned {:?} or non-finite normals", predicted.shape())));
        }
        let normals = blend_normals(&g, cam, &predicted, cfg.normal_blend)?;
        let domain = Field2D::from_fn(res, res, 1, |x, y, _| {
            if g.is_foreground(x, y) && normals.get(x, y, 2) >= cfg.min_facing {
                1.0
            } else {
                0.0
            }
        });
        if domain.count_nonzero() == 0 {
            return Err(Error::Numerical(format!("no pixel faces the camera by {}", cfg.min_facing)));
        }
        let opts = IntegrationOptions {
            pitch: cam.pixel_pitch(res),
            ..Default::default()
        };
        let integ = integrate_normals(&normals, &g.depth, &domain, cfg.lambda, &opts)?;
        let [lo, hi] = cfg.reliability_band;
        let lift = intersect(&reliability_mask(&integ, lo, hi), &mask)?;

        let mut log = ViewLog {
            index: bundle.views.len(),
            source: ViewSource::Sparse,
            candidate: None,
            ratio: 0.0,
            seed,
            mask_pixels: mask.count_nonzero(),
            lifted_points: lift.count_nonzero(),
            integration_iterations: integ.iterations,
            integration_residual: integ.residual,
            energies: integ.energies.clone(),
            grazing: integ.grazing,
            faces: mesh.faces.len(),
        };
        let new_mesh = if log.lifted_points == 0 {
            warn!("view {}: no reliable pixels to lift, geometry kept", log.index);
            None
        } else {
            let pts = depth_to_points(&integ.depth, &normals, &lift, cam)?;
            let params = StitchParams {
                poisson: PoissonParams {
                    grid_res: cfg.grid_res,
                    screen: cfg.screen,
                    ..Default::default()
                },
                refined_weight: cfg.refined_weight,
                seed,
                ..Default::default()
            };
            let m = stitch(mesh, &pts, cam, &lift, &params)?;
            log.faces = m.faces.len();
            Some(m)
        };
        Ok(ViewOutcome {
            mesh: new_mesh,
            texture,
            mask,
            log,
        })
    }
}

fn write_meta(bundle: &mut ModelBundle, cfg: &RefineConfig, logs: &[ViewLog], stop: Option<&StopReason>) -> Result<()> {
    if !bundle.meta.is_object() {
        bundle.meta = serde_json::json!({});
    }
    bundle.meta["refine"] = serde_json::json!({
        "config": cfg,
        "views": logs,
        "stop": stop,
    });
    Ok(())
}

fn checkpoint(bundle: &ModelBundle, dir: Option<&Path>) -> Result<()> {
    if let Some(dir) = dir {
        bundle.save(dir)?;
    }
    Ok(())
}

/// Refines `bundle` view by view: the sparse schedule first, then
/// auto-selected views until no candidate reaches `stop_ratio` or
/// `max_views` views have been refined in this run.
///
/// With `checkpoint_dir`, the bundle is saved after every completed view. A
/// failing view aborts the run with its error and leaves the last checkpoint.
pub fn refine(
    mut bundle: ModelBundle,
    cfg: &RefineConfig,
    refiner: &mut dyn Refiner,
    predictor: &mut dyn NormalPredictor,
    checkpoint_dir: Option<&Path>,
) -> Result<(ModelBundle, RefineReport)> {
    cfg.validate()?;
    bundle.validate()?;
    let sphere = bundle
        .mesh
        .bounding_sphere()
        .ok_or_else(|| Error::invalid("bundle mesh is empty"))?;
    let selection = SelectionParams {
        n_candidates: cfg.n_candidates,
        stop_ratio: cfg.stop_ratio,
        tau: cfg.tau,
        resolution: cfg.selection_res,
    };
    let mut runner = Runner {
        cfg,
        refiner,
        predictor,
        base_color: None,
    };
    let mut logs: Vec<ViewLog> = Vec::new();
    let mut sparse = sparse_schedule(&sphere)?.into_iter();

    let stop = loop {
        if logs.len() >= cfg.max_views {
            break StopReason::MaxViews;
        }
        let prev = bundle.refined_cameras();
        let (cam, source, candidate, ratio) = match sparse.next() {
            Some(cam) => {
                let ratio = view_ratio(&bundle.mesh, &cam, &prev, cfg.tau, cfg.selection_res)?;
                if ratio < cfg.stop_ratio {
                    info!("sparse view skipped, ratio {ratio:.4}");
                    continue;
                }
                (cam, ViewSource::Sparse, None, ratio)
            }
            None => match select_next_view(&bundle.mesh, &prev, &selection)? {
                Selection::Done { max_ratio } => break StopReason::Converged { max_ratio },
                Selection::Next {
                    camera,
                    candidate,
                    ratio,
                } => (camera, ViewSource::Auto, Some(candidate), ratio),
            },
        };
        let seed = cfg.seed.wrapping_add(bundle.views.len() as u64);
        let outcome = runner.process_view(&bundle, &cam, seed).inspect_err(|e| {
            warn!("view {} aborted: {e}", bundle.views.len());
        })?;
        let mut log = outcome.log;
        log.source = source;
        log.candidate = candidate;
        log.ratio = ratio;
        info!(
            "view {} ({:?}, ratio {:.4}): {} masked, {} lifted, {} faces",
            log.index, source, ratio, log.mask_pixels, log.lifted_points, log.faces
        );
        if let Some(mut m) = outcome.mesh {
            quantize_colors(&mut m);
            bundle.mesh = m;
        }
        bundle.views.push(BundleView {
            camera: cam,
            refined: true,
            texture: Some(outcome.texture),
            mask: Some(outcome.mask),
        });
        logs.push(log);
        write_meta(&mut bundle, cfg, &logs, None)?;
        checkpoint(&bundle, checkpoint_dir)?;
    };
    write_meta(&mut bundle, cfg, &logs, Some(&stop))?;
    checkpoint(&bundle, checkpoint_dir)?;
    Ok((bundle, RefineReport { views: logs, stop }))
}

/// Builds the refiner and predictor named by `cfg`, starting the bridge
/// process if either needs it, and runs [`refine`].
pub fn run_refine(
    bundle: ModelBundle,
    cfg: &RefineConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(ModelBundle, RefineReport)> {
    cfg.validate()?;
    let process = if cfg.backend == Backend::Bridge || cfg.predictor == PredictorKind::Bridge {
        let cmd = cfg.bridge_cmd.as_deref().unwrap_or_default();
        Some(BridgeProcess::spawn(cmd)?)
    } else {
        None
    };
    let bridge = || process.as_ref().expect("bridge started above").backend();
    let mut refiner: Box<dyn Refiner + '_> = match cfg.backend {
        Backend::Stub => stub_refiner(cfg.stub_mode, cfg.unsharp_k, cfg.unsharp_sigma),
        Backend::Bridge => Box::new(bridge()),
    };
    let mut predictor: Box<dyn NormalPredictor + '_> = match cfg.predictor {
        PredictorKind::Flat => Box::new(FlatPredictor),
        PredictorKind::Oracle => {
            let path = cfg.oracle_mesh.as_ref().expect("validated");
            let reference = load_mesh(path).map_err(|e| config_err(format!("oracle_mesh: {e}")))?;
            Box::new(OraclePredictor { reference })
        }
        PredictorKind::Bridge => Box::new(bridge()),
    };
    refine(bundle, cfg, refiner.as_mut(), predictor.as_mut(), checkpoint_dir)
}
