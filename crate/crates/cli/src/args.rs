use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use splatedit::semantics::{PixelRect, DEFAULT_K, DEFAULT_RHO, DEFAULT_TAU};

#[derive(Debug, Parser)]
#[command(name = "splatedit", version, about = "Lift, train, query and edit Gaussian scenes from a single image")]
pub struct Cli {
    /// `mock` or the base URL of a remote prior service.
    #[arg(long, global = true, default_value = "mock")]
    pub backend: Backend,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone)]
pub enum Backend {
    Mock,
    Remote(String),
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "mock" {
            Ok(Backend::Mock)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Backend::Remote(s.trim_end_matches('/').to_string()))
        } else {
            Err(format!("expected `mock` or an http(s) URL, got `{s}`"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rect(pub PixelRect);

impl FromStr for Rect {
    type Err = String;

    /// `x0,y0,x1,y1` in pixels.
    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p}: {e}")))
            .collect::<Result<_, _>>()?;
        match v[..] {
            [x0, y0, x1, y1] => Ok(Rect(PixelRect { x0, y0, x1, y1 })),
            _ => Err("expected x0,y0,x1,y1".into()),
        }
    }
}

#[derive(Debug, Args)]
pub struct InOut {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with training config keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lambda_recon: Option<f64>,
    #[arg(long)]
    pub lambda_sds: Option<f64>,
    #[arg(long)]
    pub lambda_distill: Option<f64>,
    /// Classifier-free guidance scale (default 5).
    #[arg(long)]
    pub cfg_scale: Option<f64>,
    #[arg(long)]
    pub prompt: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lift an image to Gaussians and expand over the imagined views.
    Lift {
        #[command(flatten)]
        io: InOut,
        /// Camera JSON; defaults to fx = fy = image width.
        #[arg(long)]
        camera: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Lift and optimise; writes the scene and a JSONL step report.
    Train {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        camera: Option<PathBuf>,
        /// Defaults to the output path with a `.jsonl` extension.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Render a scene along a JSON list of cameras.
    Render {
        #[command(flatten)]
        io: InOut,
        /// Defaults to the camera stored in the scene.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Select Gaussians by text or by a pixel box; prints Selection JSON.
    Query {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, required_unless_present = "rect", conflicts_with = "rect")]
        text: Option<String>,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// x0,y0,x1,y1 in pixels of the scene camera.
        #[arg(long)]
        rect: Option<Rect>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_RHO)]
        rho: f64,
        #[arg(long)]
        camera: Option<PathBuf>,
    },
    /// Apply an EditOp JSON file (one op or a list) and re-export.
    Edit {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        ops: PathBuf,
    },
    /// Run the HTTP/WebSocket service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}
