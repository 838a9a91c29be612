//! Interfaces to the pretrained models the pipeline depends on, with
//! deterministic mock implementations and a JSON-over-HTTP client.

mod fill;
pub mod mock;
pub mod remote;
pub mod wire;

use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, Mask};

pub use fill::{harmonic_fill, thin_plate_fill};

/// Canonical phrases the relevancy score compares a query against.
pub const CANONICAL_PHRASES: [&str; 4] = ["object", "things", "stuff", "texture"];

pub const DEFAULT_FULL_DIM: usize = 512;
pub const DEFAULT_CFG_SCALE: f64 = 5.0;
/// Diffusion steps sampled for score distillation.
pub const T_MIN: u32 = 20;
pub const T_MAX: u32 = 980;
pub const NUM_TRAIN_TIMESTEPS: u32 = 1000;

/// Cumulative signal level ᾱ_t of the linear schedule.
pub fn alpha_bar(t: u32) -> f64 {
    1.0 - f64::from(t) / f64::from(NUM_TRAIN_TIMESTEPS)
}

pub fn check_timestep(t: u32) -> Result<()> {
    if (T_MIN..=T_MAX).contains(&t) {
        Ok(())
    } else {
        Err(Error::invalid(format!("diffusion step {t} outside [{T_MIN}, {T_MAX}]")))
    }
}

pub trait DepthEstimator: Send + Sync {
    /// Positive relative depth; larger is farther.
    fn estimate_depth(&self, image: &Image) -> Result<DepthMap>;
}

pub trait RgbInpainter: Send + Sync {
    /// Fills the pixels where `mask` is true; the rest is returned unchanged.
    fn inpaint_rgb(&self, image: &Image, mask: &Mask) -> Result<Image>;
}

pub trait DepthInpainter: Send + Sync {
    /// Completes `depth` keeping the pixels where `fixed` is true bit-exact.
    fn inpaint_depth(&self, depth: &DepthMap, fixed: &Mask, guide: &Image) -> Result<DepthMap>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &Image) -> Result<Vec<Mask>>;
}

pub trait Embedder: Send + Sync {
    fn full_dim(&self) -> usize;
    /// Unit-norm embedding of the masked region of `image`.
    fn embed_image(&self, image: &Image, mask: &Mask) -> Result<Vec<f64>>;
    /// Unit-norm embedding of a text prompt.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

pub trait Denoiser: Send + Sync {
    /// Predicted noise for the noisy image `x_t` at diffusion step `t`.
    fn denoise(&self, x_t: &Image, t: u32, prompt: &str, cfg_scale: f64) -> Result<Image>;

    /// Hands the backend the user's input image before training starts.
    /// Real backends ignore it.
    fn condition_on(&self, _reference: &Image) {}
}

/// Which implementation backs a capability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Remote { url: String },
}

/// Backend identity per capability, stored with saved scenes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub depth: BackendKind,
    pub inpaint_rgb: BackendKind,
    pub inpaint_depth: BackendKind,
    pub segment: BackendKind,
    pub embed: BackendKind,
    pub denoise: BackendKind,
}

impl BackendInfo {
    pub fn uniform(kind: BackendKind) -> Self {
        Self {
            depth: kind.clone(),
            inpaint_rgb: kind.clone(),
            inpaint_depth: kind.clone(),
            segment: kind.clone(),
            embed: kind.clone(),
            denoise: kind,
        }
    }
}

/// One backend invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub backend: String,
    /// SHA-256 of the call's inputs, hex.
    pub digest: String,
    pub latency_ms: f64,
}

/// The bundle of prior backends. Calls made through it are logged.
#[derive(Clone)]
pub struct PriorBackends {
    pub depth: Arc<dyn DepthEstimator>,
    pub rgb_inpainter: Arc<dyn RgbInpainter>,
    pub depth_inpainter: Arc<dyn DepthInpainter>,
    pub segmenter: Arc<dyn Segmenter>,
    pub embedder: Arc<dyn Embedder>,
    pub denoiser: Arc<dyn Denoiser>,
    pub info: BackendInfo,
    log: Arc<Mutex<Vec<CallRecord>>>,
}

impl std::fmt::Debug for PriorBackends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PriorBackends").field("info", &self.info).finish_non_exhaustive()
    }
}

impl PriorBackends {
    /// All-mock bundle with default settings.
    pub fn mock() -> Self {
        Self {
            depth: Arc::new(mock::MockDepthEstimator),
            rgb_inpainter: Arc::new(mock::MockRgbInpainter::default()),
            depth_inpainter: Arc::new(mock::MockDepthInpainter::default()),
            segmenter: Arc::new(mock::MockSegmenter::default()),
            embedder: Arc::new(mock::MockEmbedder::default()),
            denoiser: Arc::new(mock::MockDenoiser::default()),
            info: BackendInfo::uniform(BackendKind::Mock),
            log: Arc::default(),
        }
    }

    /// Every capability served by one remote endpoint.
    pub fn remote(cfg: remote::RemoteConfig) -> Self {
        let client = Arc::new(remote::RemoteClient::new(cfg));
        Self {
            depth: client.clone(),
            rgb_inpainter: client.clone(),
            depth_inpainter: client.clone(),
            segmenter: client.clone(),
            embedder: client.clone(),
            info: BackendInfo::uniform(BackendKind::Remote {
                url: client.base_url().to_string(),
            }),
            denoiser: client,
            log: Arc::default(),
        }
    }

    pub fn with_denoiser(mut self, denoiser: Arc<dyn Denoiser>, kind: BackendKind) -> Self {
        self.denoiser = denoiser;
        self.info.denoise = kind;
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>, kind: BackendKind) -> Self {
        self.embedder = embedder;
        self.info.embed = kind;
        self
    }

    pub fn with_segmenter(mut self, segmenter: Arc<dyn Segmenter>, kind: BackendKind) -> Self {
        self.segmenter = segmenter;
        self.info.segment = kind;
        self
    }

    /// Snapshot of the call log.
    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }

    fn record<T>(&self, backend: &str, digest: Sha256, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        let digest = format!("{:x}", digest.finalize());
        log::debug!("prior call {backend} digest={} latency={latency_ms:.2}ms", &digest[..16]);
        self.log.lock().expect("call log poisoned").push(CallRecord {
            backend: backend.to_string(),
            digest,
            latency_ms,
        });
        out
    }

    pub fn estimate_depth(&self, image: &Image) -> Result<DepthMap> {
        let mut h = Sha256::new();
        digest_image(&mut h, image);
        self.record("depth", h, || self.depth.estimate_depth(image))
    }

    pub fn inpaint_rgb(&self, image: &Image, mask: &Mask) -> Result<Image> {
        let mut h = Sha256::new();
        digest_image(&mut h, image);
        digest_mask(&mut h, mask);
        self.record("inpaint_rgb", h, || self.rgb_inpainter.inpaint_rgb(image, mask))
    }

    pub fn inpaint_depth(&self, depth: &DepthMap, fixed: &Mask, guide: &Image) -> Result<DepthMap> {
        let mut h = Sha256::new();
        for v in &depth.data {
            h.update(v.to_le_bytes());
        }
        digest_mask(&mut h, fixed);
        digest_image(&mut h, guide);
        self.record("inpaint_depth", h, || self.depth_inpainter.inpaint_depth(depth, fixed, guide))
    }

    pub fn segment(&self, image: &Image) -> Result<Vec<Mask>> {
        let mut h = Sha256::new();
        digest_image(&mut h, image);
        self.record("segment", h, || self.segmenter.segment(image))
    }

    pub fn embed_image(&self, image: &Image, mask: &Mask) -> Result<Vec<f64>> {
        let mut h = Sha256::new();
        digest_image(&mut h, image);
        digest_mask(&mut h, mask);
        self.record("embed_image", h, || self.embedder.embed_image(image, mask))
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        self.record("embed_text", h, || self.embedder.embed_text(text))
    }

    pub fn denoise(&self, x_t: &Image, t: u32, prompt: &str, cfg_scale: f64) -> Result<Image> {
        check_timestep(t)?;
        let mut h = Sha256::new();
        digest_image(&mut h, x_t);
        h.update(t.to_le_bytes());
        h.update(prompt.as_bytes());
        h.update(cfg_scale.to_le_bytes());
        self.record("denoise", h, || self.denoiser.denoise(x_t, t, prompt, cfg_scale))
    }

    /// Passes the user's input image to the denoiser.
    pub fn condition_on(&self, reference: &Image) {
        self.denoiser.condition_on(reference);
    }

    pub fn full_dim(&self) -> usize {
        self.embedder.full_dim()
    }

    /// Embeddings of the canonical phrases.
    pub fn canonical_embeddings(&self) -> Result<Vec<Vec<f64>>> {
        CANONICAL_PHRASES.iter().map(|p| self.embed_text(p)).collect()
    }
}

fn digest_image(h: &mut Sha256, image: &Image) {
    h.update((image.width as u64).to_le_bytes());
    h.update((image.height as u64).to_le_bytes());
    for px in &image.data {
        for v in px {
            h.update(v.to_le_bytes());
        }
    }
}

fn digest_mask(h: &mut Sha256, mask: &Mask) {
    h.update((mask.width as u64).to_le_bytes());
    h.update((mask.height as u64).to_le_bytes());
    h.update(mask.data.iter().map(|&b| u8::from(b)).collect::<Vec<_>>());
}

/// Fails unless `mask` has the same resolution as the image.
pub(crate) fn check_mask(image: &Image, mask: &Mask) -> Result<()> {
    if image.width != mask.width || image.height != mask.height {
        return Err(Error::invalid(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width, mask.height, image.width, image.height
        )));
    }
    Ok(())
}
