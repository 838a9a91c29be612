//! Blocking client for a remotely hosted prior stack.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::*;
use super::{DepthEstimator, DepthInpainter, Denoiser, Embedder, RgbInpainter, Segmenter};
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, Mask};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8100`; endpoints live under `/v1/`.
    pub url: String,
    pub timeout: Duration,
    /// Extra attempts after a transport failure or 5xx response.
    pub retries: u32,
    pub max_in_flight: usize,
    pub full_dim: usize,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(30),
            retries: 1,
            max_in_flight: 4,
            full_dim: super::DEFAULT_FULL_DIM,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock poisoned");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteClient {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    slots: Slots,
}

const MAX_RESPONSE_BYTES: u64 = 512 << 20;

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Slots {
            free: Mutex::new(cfg.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        Self { cfg, agent, slots }
    }

    pub fn base_url(&self) -> &str {
        &self.cfg.url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, req: &Req) -> Result<Resp> {
        let url = format!("{}/v1/{endpoint}", self.cfg.url.trim_end_matches('/'));
        let _slot = self.slots.acquire();
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                log::warn!("retrying {endpoint} after: {last}");
            }
            match self.agent.post(&url).send_json(req) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let body = resp.body_mut().with_config().limit(MAX_RESPONSE_BYTES);
                    if status == 200 {
                        return body
                            .read_json::<Resp>()
                            .map_err(|e| Error::backend(endpoint, format!("malformed response: {e}")));
                    }
                    let detail = body
                        .read_json::<ErrorResponse>()
                        .map(|e| e.error)
                        .unwrap_or_else(|_| "no detail".to_string());
                    last = format!("http {status}: {detail}");
                    if status < 500 {
                        break;
                    }
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::backend(endpoint, last))
    }
}

impl DepthEstimator for RemoteClient {
    fn estimate_depth(&self, image: &Image) -> Result<DepthMap> {
        let r: DepthResponse = self.post(
            "depth",
            &ImageRequest {
                image: Plane::from_image(image),
            },
        )?;
        r.depth.to_scalar()
    }
}

impl RgbInpainter for RemoteClient {
    fn inpaint_rgb(&self, image: &Image, mask: &Mask) -> Result<Image> {
        let r: ImageResponse = self.post(
            "inpaint_rgb",
            &MaskedImageRequest {
                image: Plane::from_image(image),
                mask: Plane::from_mask(mask),
            },
        )?;
        let mut out = r.image.to_image()?;
        if !out.same_shape(image) {
            return Err(Error::backend("inpaint_rgb", "response resolution differs from request"));
        }
        // Pixels outside the mask are returned unchanged whatever the server did.
        for ((o, i), &m) in out.data.iter_mut().zip(&image.data).zip(&mask.data) {
            if !m {
                *o = *i;
            }
        }
        Ok(out)
    }
}

impl DepthInpainter for RemoteClient {
    fn inpaint_depth(&self, depth: &DepthMap, fixed: &Mask, guide: &Image) -> Result<DepthMap> {
        if fixed.is_empty() {
            return Err(Error::invalid("inpaint_depth: fixed mask is empty, nothing anchors the fill"));
        }
        let r: DepthResponse = self.post(
            "inpaint_depth",
            &InpaintDepthRequest {
                depth: Plane::from_scalar(depth),
                fixed: Plane::from_mask(fixed),
                guide: Plane::from_image(guide),
            },
        )?;
        let mut out = r.depth.to_scalar()?;
        if out.width != depth.width || out.height != depth.height {
            return Err(Error::backend("inpaint_depth", "response resolution differs from request"));
        }
        for ((o, d), &keep) in out.data.iter_mut().zip(&depth.data).zip(&fixed.data) {
            if keep {
                *o = *d;
            }
        }
        Ok(out)
    }
}

impl Segmenter for RemoteClient {
    fn segment(&self, image: &Image) -> Result<Vec<Mask>> {
        let r: MasksResponse = self.post(
            "segment",
            &ImageRequest {
                image: Plane::from_image(image),
            },
        )?;
        r.masks.iter().map(Plane::to_mask).collect()
    }
}

impl RemoteClient {
    fn check_embedding(&self, endpoint: &str, v: Vec<f64>) -> Result<Vec<f64>> {
        if v.len() != self.cfg.full_dim {
            return Err(Error::backend(
                endpoint,
                format!("embedding width {} differs from configured {}", v.len(), self.cfg.full_dim),
            ));
        }
        Ok(v)
    }
}

impl Embedder for RemoteClient {
    fn full_dim(&self) -> usize {
        self.cfg.full_dim
    }

    fn embed_image(&self, image: &Image, mask: &Mask) -> Result<Vec<f64>> {
        let r: EmbeddingResponse = self.post(
            "embed_image",
            &MaskedImageRequest {
                image: Plane::from_image(image),
                mask: Plane::from_mask(mask),
            },
        )?;
        self.check_embedding("embed_image", r.embedding)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let r: EmbeddingResponse = self.post("embed_text", &TextRequest { text: text.to_string() })?;
        self.check_embedding("embed_text", r.embedding)
    }
}

impl Denoiser for RemoteClient {
    fn denoise(&self, x_t: &Image, t: u32, prompt: &str, cfg_scale: f64) -> Result<Image> {
        let r: ImageResponse = self.post(
            "denoise",
            &DenoiseRequest {
                image: Plane::from_image(x_t),
                t,
                prompt: prompt.to_string(),
                cfg_scale,
            },
        )?;
        r.image.to_image()
    }
}
