//! `splatedit` command-line driver.

mod args;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use serde::Deserialize;
use splatedit::editing::{apply_edit, EditOp};
use splatedit::io::{self, SceneMeta};
use splatedit::priors::PriorBackends;
use splatedit::semantics::{query_bbox, query_text};
use splatedit::trainer::{optimize_with, prepare, TrainConfig};
use splatedit::{rasterize, Camera, Error, GaussianScene, Image};
use splatedit_server::AppState;

use args::{Backend, Cli, Command, TrainArgs};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on bad usage and 0 for --help.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Backend { .. } => 3,
        Error::Io(io) if !matches!(io.kind(), std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidData) => 1,
        _ => 2,
    }
}

fn priors(backend: &Backend) -> PriorBackends {
    match backend {
        Backend::Mock => PriorBackends::mock(),
        Backend::Remote(url) => PriorBackends::remote(splatedit::priors::remote::RemoteConfig::new(url.clone())),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// The TOML file first, then any flag that was given.
fn train_config(a: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig, Error> {
    let mut cfg = match &a.config {
        Some(path) => toml::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?,
        None => TrainConfig::default(),
    };
    let overrides = [
        (a.lambda_recon, &mut cfg.lambda_recon),
        (a.lambda_sds, &mut cfg.lambda_sds),
        (a.lambda_distill, &mut cfg.lambda_distill),
        (a.cfg_scale, &mut cfg.cfg_scale),
    ];
    for (flag, field) in overrides {
        if let Some(v) = flag {
            *field = v;
        }
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = &a.prompt {
        cfg.prompt = p.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// fx = fy = width with a centred principal point, unless a camera file is given.
fn input_camera(image: &Image, path: Option<&PathBuf>) -> Result<Camera, Error> {
    let camera = match path {
        Some(p) => read_json::<Camera>(p)?,
        None => {
            let (w, h) = (image.width as f64, image.height as f64);
            Camera::new(w, w, w / 2.0, h / 2.0, image.width, image.height)
        }
    };
    if (camera.width, camera.height) != (image.width, image.height) {
        return Err(Error::InvalidArgument(format!(
            "camera is {}x{}, image is {}x{}",
            camera.width, camera.height, image.width, image.height
        )));
    }
    camera.validate()?;
    Ok(camera)
}

fn meta(camera: &Camera, priors: &PriorBackends, seed: u64) -> SceneMeta {
    SceneMeta {
        camera: Some(camera.clone()),
        backends: Some(priors.info.clone()),
        seed: Some(seed),
    }
}

fn scene_camera(meta: &SceneMeta, path: Option<&PathBuf>) -> Result<Camera, Error> {
    match path {
        Some(p) => read_json(p),
        None => meta.camera.clone().ok_or_else(|| Error::InvalidArgument("scene has no camera, pass --camera".into())),
    }
}

fn write_json(value: &impl serde::Serialize, out: Option<&PathBuf>) -> Result<(), Error> {
    let text = serde_json::to_string(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => writeln!(std::io::stdout(), "{text}")?,
    }
    Ok(())
}

/// An edit file holds one op or a list of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum EditFile {
    One(EditOp),
    Many(Vec<EditOp>),
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Lift { io: f, camera, train } => {
            let image = Image::load(&f.input)?;
            let camera = input_camera(&image, camera.as_ref())?;
            let cfg = train_config(&train, cli.seed)?;
            let p = priors(&cli.backend);
            let (scene, trainer) = prepare(&image, &camera, &cfg, &p)?;
            for (k, e) in trainer.expansions.iter().enumerate() {
                log::info!("expansion {k}: {e:?}");
            }
            let bytes = io::save(&scene, &meta(&camera, &p, cfg.seed), &f.out)?;
            eprintln!("lifted {} gaussians, {bytes} bytes", scene.len());
        }
        Command::Train { io: f, camera, report, train } => {
            let image = Image::load(&f.input)?;
            let camera = input_camera(&image, camera.as_ref())?;
            let cfg = train_config(&train, cli.seed)?;
            let p = priors(&cli.backend);
            let (scene, trainer, rep) = optimize_with(&image, &camera, &cfg, &p, |_, r| {
                log::info!("step {} total {:.4}", r.step, r.total);
                true
            })?;
            io::save(&scene, &meta(&camera, &p, cfg.seed), &f.out)?;
            let report = report.unwrap_or_else(|| f.out.with_extension("jsonl"));
            rep.write_jsonl(fs::File::create(&report)?)?;
            let psnr = trainer.reference_psnr(&scene)?;
            eprintln!("trained {} steps, reference psnr {psnr:.2?}", rep.steps.len());
        }
        Command::Render { io: f, trajectory } => {
            let (scene, meta) = io::load(&f.input)?;
            let cameras: Vec<Camera> = match &trajectory {
                Some(p) => read_json(p)?,
                None => vec![scene_camera(&meta, None)?],
            };
            if cameras.is_empty() {
                return Err(Error::InvalidArgument("trajectory is empty".into()));
            }
            render_frames(&scene, &cameras, &f.out)?;
        }
        Command::Query { input, out, text, tau, rect, k, rho, camera } => {
            let (scene, meta) = io::load(&input)?;
            let sel = match (text, rect) {
                (Some(text), None) => query_text(&scene, &priors(&cli.backend), &text, tau)?,
                (None, Some(rect)) => {
                    let cam = scene_camera(&meta, camera.as_ref())?;
                    query_bbox(&scene, &cam, rect.0, k, rho, cli.seed.unwrap_or(0))?
                }
                _ => unreachable!("clap requires exactly one of --text and --rect"),
            };
            write_json(&sel, out.as_ref())?;
        }
        Command::Edit { io: f, ops } => {
            let (mut scene, meta) = io::load(&f.input)?;
            let ops = match read_json::<EditFile>(&ops)? {
                EditFile::One(op) => vec![op],
                EditFile::Many(ops) => ops,
            };
            for op in &ops {
                apply_edit(&mut scene, op)?;
            }
            io::save(&scene, &meta, &f.out)?;
            eprintln!("applied {} edits", ops.len());
        }
        Command::Serve { addr } => {
            let backend = cli.backend.clone();
            let state = AppState::new(Arc::new(move || priors(&backend)));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(splatedit_server::serve(addr, state))?;
        }
    }
    Ok(())
}

/// A single camera and an `.png` path write one file; otherwise `out` is a
/// directory of numbered frames.
fn render_frames(scene: &GaussianScene, cameras: &[Camera], out: &Path) -> Result<(), Error> {
    let single = cameras.len() == 1 && out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if !single {
        fs::create_dir_all(out)?;
    }
    for (i, cam) in cameras.iter().enumerate() {
        let img = rasterize(scene, cam)?.rgb;
        let path = if single { out.to_path_buf() } else { out.join(format!("frame_{i:04}.png")) };
        img.save_png(&path)?;
    }
    eprintln!("rendered {} frames", cameras.len());
    Ok(())
}
