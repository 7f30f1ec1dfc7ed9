use std::fs;
use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use elevate3d::diffusion::{NoiseSchedule, SamplerParams};
use elevate3d::field::io::{read_mask_png, read_pfm, read_png, write_pfm, write_png};
use elevate3d::field::{rapsd, Field2D};
use elevate3d::integrate::{integrate_normals, IntegrationOptions};
use elevate3d::pipeline::bridge::serve_echo;
use elevate3d::pipeline::harness::{degrade, fixture_bundle, DegradeParams, FixtureParams};
use elevate3d::pipeline::refine::Backend;
use elevate3d::pipeline::stubs::HfsPixelRefiner;
use elevate3d::pipeline::{run_refine, ModelBundle, RefineConfig, RefineRequest, Refiner};
use elevate3d::raster::OrthoCamera;
use elevate3d::texture::{bake_view, render_textured};
use elevate3d::visibility::spherical_direction;

#[derive(Parser)]
#[command(name = "elevate3d", version, about = "Texture and geometry refinement for low-quality textured meshes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Refine a bundle view by view.
    Refine {
        #[arg(long)]
        bundle: PathBuf,
        /// JSON config; unspecified fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long)]
        bridge_cmd: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output bundle, checkpointed after every view. Defaults to --bundle.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-view report here as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decimate a bundle's mesh and blur its appearance.
    Degrade {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        faces: f64,
        #[arg(long, default_value_t = 8.0)]
        tex_sigma: f64,
        #[arg(long, default_value_t = 256)]
        render_res: usize,
        /// Defaults to --bundle.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the bumpy-sphere test bundle.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 29)]
        subdivisions: u32,
        #[arg(long, default_value_t = 0.04)]
        amplitude: f64,
        #[arg(long, default_value_t = 12.0)]
        frequency: f64,
    },
    /// Radially averaged power spectral density of an image, as CSV.
    Rapsd {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel-space SDEdit with high-frequency swap, using a Gaussian prior
    /// fit to the (masked) input.
    Sdedit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        steps: usize,
        #[arg(long, default_value_t = 29)]
        t_start: usize,
        #[arg(long, default_value_t = 18)]
        t_stop: usize,
        #[arg(long, default_value_t = 4.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Plain SDEdit (no swap steps).
        #[arg(long)]
        plain: bool,
    },
    /// Textured render of a bundle from a spherical direction.
    Render {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bake the bundle's projected textures into a view; uncovered pixels
    /// get the default color.
    Bake {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate a camera-frame normal map against a depth prior.
    Integrate {
        /// 3-channel PFM.
        #[arg(long)]
        normals: PathBuf,
        /// 1-channel PFM; non-finite values are off the domain.
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 0.008)]
        lambda: f64,
        /// World units per pixel.
        #[arg(long, default_value_t = 1.0)]
        pitch: f64,
        #[arg(long)]
        out: PathBuf,
        /// Write the bilateral weights (u, v) as a 2-channel PFM.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Serve the identity bridge on stdin/stdout.
    BridgeEcho,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Stub,
    Bridge,
}

#[derive(clap::Args)]
struct ViewArgs {
    /// Polar angle from +z, degrees.
    #[arg(long, default_value_t = 60.0)]
    theta: f64,
    /// Azimuth from +x, degrees.
    #[arg(long, default_value_t = 30.0)]
    phi: f64,
    #[arg(long, default_value_t = 256)]
    res: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use elevate3d::Error as E;
    match e.chain().find_map(|c| c.downcast_ref::<E>()) {
        Some(E::Config(_)) => 2,
        Some(E::Backend(_)) => 3,
        Some(E::Numerical(_) | E::Denoiser { .. }) => 4,
        _ => 1,
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Refine {
            bundle,
            config,
            backend,
            bridge_cmd,
            seed,
            out,
            report,
        } => {
            let mut cfg = match &config {
                Some(p) => RefineConfig::load(p)?,
                None => RefineConfig::default(),
            };
            if let Some(b) = backend {
                cfg.backend = match b {
                    BackendArg::Stub => Backend::Stub,
                    BackendArg::Bridge => Backend::Bridge,
                };
            }
            if bridge_cmd.is_some() {
                cfg.bridge_cmd = bridge_cmd;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let input = ModelBundle::load(&bundle).with_context(|| format!("loading {}", bundle.display()))?;
            let out = out.unwrap_or(bundle);
            let (_, rep) = run_refine(input, &cfg, Some(&out))?;
            info!("{} views refined, {:?}", rep.views.len(), rep.stop);
            let json = serde_json::to_string_pretty(&rep)?;
            match report {
                Some(p) => fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
        }
        Cmd::Degrade {
            bundle,
            faces,
            tex_sigma,
            render_res,
            out,
        } => {
            let b = ModelBundle::load(&bundle)?;
            let p = DegradeParams {
                face_ratio: faces,
                tex_sigma,
                render_res,
            };
            let d = degrade(&b, &p)?;
            info!("{} -> {} faces", b.mesh.faces.len(), d.mesh.faces.len());
            d.save(out.as_deref().unwrap_or(&bundle))?;
        }
        Cmd::Fixture {
            out,
            subdivisions,
            amplitude,
            frequency,
        } => {
            let b = fixture_bundle(&FixtureParams {
                subdivisions,
                amplitude,
                frequency,
                ..Default::default()
            })?;
            info!("{} faces", b.mesh.faces.len());
            b.save(&out)?;
        }
        Cmd::Rapsd { image, out } => {
            let img = read_png(&image)?;
            let gray = if img.channels() >= 3 {
                Field2D::from_channels(&[img.channel(0), img.channel(1), img.channel(2)])?.channel_mean()
            } else {
                img.channel(0)
            };
            fs::write(&out, rapsd(&gray)?.to_csv())?;
        }
        Cmd::Sdedit {
            image,
            out,
            mask,
            steps,
            t_start,
            t_stop,
            sigma,
            seed,
            plain,
        } => {
            let img = read_png(&image)?;
            let rgb = if img.channels() >= 3 {
                Field2D::from_channels(&[img.channel(0), img.channel(1), img.channel(2)])?
            } else {
                img.channel(0)
            };
            let mask = match mask {
                Some(p) => read_mask_png(&p)?,
                None => Field2D::filled(rgb.width(), rgb.height(), 1, 1.0),
            };
            let sampler = SamplerParams {
                steps,
                t_start,
                t_stop: if plain { t_start } else { t_stop },
                sigma,
                seed,
                ..Default::default()
            };
            let schedule = NoiseSchedule::linear(steps).map_err(|e| elevate3d::Error::Config(e.to_string()))?;
            sampler.validate(&schedule).map_err(|e| elevate3d::Error::Config(e.to_string()))?;
            let depth = Field2D::zeros(rgb.width(), rgb.height(), 1);
            let req = RefineRequest {
                color: &rgb,
                depth: &depth,
                mask: &mask,
                base_color: &rgb,
                prompt: "",
                sampler: &sampler,
            };
            write_png(&out, &HfsPixelRefiner.refine(&req)?)?;
        }
        Cmd::Render { bundle, view, out } => {
            let b = ModelBundle::load(&bundle)?;
            let cam = view_camera(&b, &view)?;
            write_png(&out, &render_textured(&b.mesh, &b.projectors()?, &cam, view.res, view.res)?)?;
        }
        Cmd::Bake { bundle, view, out } => {
            let b = ModelBundle::load(&bundle)?;
            let cam = view_camera(&b, &view)?;
            write_png(&out, &bake_view(&b.mesh, &b.projectors()?, &cam, view.res, view.res)?)?;
        }
        Cmd::Integrate {
            normals,
            depth,
            mask,
            lambda,
            pitch,
            out,
            weights,
        } => {
            let n = read_pfm(&normals)?;
            let d = read_pfm(&depth)?;
            if n.channels() != 3 || d.channels() != 1 {
                bail!("normals must be 3-channel and depth 1-channel");
            }
            let mask = match mask {
                Some(p) => read_mask_png(&p)?,
                None => d.map(|v| if v.is_finite() { 1.0 } else { 0.0 }),
            };
            let opts = IntegrationOptions {
                pitch,
                ..Default::default()
            };
            let r = integrate_normals(&n, &d.map(|v| if v.is_finite() { v } else { 0.0 }), &mask, lambda, &opts)?;
            info!("{} outer iterations, objective {:.6e}", r.iterations, r.residual);
            write_pfm(&out, &r.depth)?;
            if let Some(p) = weights {
                write_pfm(&p, &Field2D::from_channels(&[r.w_u, r.w_v])?)?;
            }
        }
        Cmd::BridgeEcho => {
            serve_echo(BufReader::new(io::stdin().lock()), io::stdout().lock())?;
        }
    }
    Ok(())
}

fn view_camera(b: &ModelBundle, v: &ViewArgs) -> Result<OrthoCamera> {
    let sphere = b.mesh.bounding_sphere().context("bundle mesh is empty")?;
    Ok(OrthoCamera::framing(&sphere, spherical_direction(v.theta, v.phi))?)
}
