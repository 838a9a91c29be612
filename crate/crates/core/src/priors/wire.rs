//! JSON wire format of the remote prior API.
//!
//! Every raster travels as a [`Plane`]: base64 of little-endian `f32`
//! samples, pixel-major with interleaved channels. Masks are single-channel
//! planes holding 0 or 1.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::PriorBackends;
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, Mask};

pub const ENDPOINTS: [&str; 7] = ["depth", "inpaint_rgb", "inpaint_depth", "segment", "embed_image", "embed_text", "denoise"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: String,
}

impl Plane {
    pub fn encode(width: usize, height: usize, channels: usize, values: impl Iterator<Item = f64>) -> Self {
        let mut bytes = Vec::with_capacity(width * height * channels * 4);
        for v in values {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Self {
            width,
            height,
            channels,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::invalid(format!("plane payload is not base64: {e}")))?;
        let expect = self.width * self.height * self.channels * 4;
        if bytes.len() != expect {
            return Err(Error::invalid(format!("plane payload has {} bytes, expected {expect}", bytes.len())));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }

    fn expect_channels(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::invalid(format!("plane has {} channels, expected {channels}", self.channels)));
        }
        Ok(())
    }

    pub fn from_image(img: &Image) -> Self {
        Self::encode(img.width, img.height, 3, img.data.iter().flatten().copied())
    }

    pub fn to_image(&self) -> Result<Image> {
        self.expect_channels(3)?;
        let v = self.values()?;
        Ok(Image {
            width: self.width,
            height: self.height,
            data: v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }

    pub fn from_scalar(map: &DepthMap) -> Self {
        Self::encode(map.width, map.height, 1, map.data.iter().copied())
    }

    pub fn to_scalar(&self) -> Result<DepthMap> {
        self.expect_channels(1)?;
        Ok(DepthMap {
            width: self.width,
            height: self.height,
            data: self.values()?,
        })
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self::encode(mask.width, mask.height, 1, mask.data.iter().map(|&b| f64::from(u8::from(b))))
    }

    pub fn to_mask(&self) -> Result<Mask> {
        self.expect_channels(1)?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self.values()?.into_iter().map(|v| v >= 0.5).collect(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageRequest {
    pub image: Plane,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskedImageRequest {
    pub image: Plane,
    pub mask: Plane,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InpaintDepthRequest {
    pub depth: Plane,
    pub fixed: Plane,
    pub guide: Plane,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TextRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DenoiseRequest {
    pub image: Plane,
    pub t: u32,
    pub prompt: String,
    pub cfg_scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image: Plane,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DepthResponse {
    pub depth: Plane,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MasksResponse {
    pub masks: Vec<Plane>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Serves one request against local backends. Lets any HTTP framework host
/// the remote API on top of a [`PriorBackends`] bundle.
pub fn handle(endpoint: &str, body: serde_json::Value, priors: &PriorBackends) -> Result<serde_json::Value> {
    use serde_json::{from_value, to_value};
    let out = match endpoint {
        "depth" => {
            let r: ImageRequest = from_value(body)?;
            let d = priors.estimate_depth(&r.image.to_image()?)?;
            to_value(DepthResponse {
                depth: Plane::from_scalar(&d),
            })?
        }
        "inpaint_rgb" => {
            let r: MaskedImageRequest = from_value(body)?;
            let img = priors.inpaint_rgb(&r.image.to_image()?, &r.mask.to_mask()?)?;
            to_value(ImageResponse {
                image: Plane::from_image(&img),
            })?
        }
        "inpaint_depth" => {
            let r: InpaintDepthRequest = from_value(body)?;
            let d = priors.inpaint_depth(&r.depth.to_scalar()?, &r.fixed.to_mask()?, &r.guide.to_image()?)?;
            to_value(DepthResponse {
                depth: Plane::from_scalar(&d),
            })?
        }
        "segment" => {
            let r: ImageRequest = from_value(body)?;
            let masks = priors.segment(&r.image.to_image()?)?;
            to_value(MasksResponse {
                masks: masks.iter().map(Plane::from_mask).collect(),
            })?
        }
        "embed_image" => {
            let r: MaskedImageRequest = from_value(body)?;
            let embedding = priors.embed_image(&r.image.to_image()?, &r.mask.to_mask()?)?;
            to_value(EmbeddingResponse { embedding })?
        }
        "embed_text" => {
            let r: TextRequest = from_value(body)?;
            to_value(EmbeddingResponse {
                embedding: priors.embed_text(&r.text)?,
            })?
        }
        "denoise" => {
            let r: DenoiseRequest = from_value(body)?;
            let img = priors.denoise(&r.image.to_image()?, r.t, &r.prompt, r.cfg_scale)?;
            to_value(ImageResponse {
                image: Plane::from_image(&img),
            })?
        }
        other => return Err(Error::invalid(format!("unknown prior endpoint `{other}`"))),
    };
    Ok(out)
}
