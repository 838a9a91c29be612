use crate::camera::Camera;
use crate::editing::{layout_augment, object_selections, AugmentSpec};
use crate::error::{Error, Result};
use crate::image::{FeatureMap, Image, Mask};
use crate::priors::PriorBackends;
use crate::raster::{self, ParamGrads, RenderGrads};
use crate::scene::GaussianScene;

use super::{fit_codec, EmbeddingCodec};

/// Upper bound on ‖e‖ enforced after every embedding update.
pub const EMBEDDING_BOUND: f64 = 8.0;

/// Step size of the embedding update.
pub const DEFAULT_EMBED_LR: f64 = 5e-2;

/// Segment masks of a view and the full-width embedding of each masked crop.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTargets {
    pub masks: Vec<Mask>,
    pub targets: Vec<Vec<f64>>,
}

impl DistillTargets {
    pub fn empty() -> Self {
        Self {
            masks: Vec::new(),
            targets: Vec::new(),
        }
    }

    /// Number of masks covering each pixel.
    pub fn multiplicity(&self, pixels: usize) -> Vec<f64> {
        let mut m = vec![0.0; pixels];
        for mask in &self.masks {
            for (v, &b) in m.iter_mut().zip(&mask.data) {
                if b {
                    *v += 1.0;
                }
            }
        }
        m
    }
}

pub fn prepare_targets(image: &Image, priors: &PriorBackends) -> Result<DistillTargets> {
    let masks = priors.segment(image)?;
    let targets = masks
        .iter()
        .map(|m| priors.embed_image(image, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistillTargets { masks, targets })
}

/// Fits a codec of width `min(codec_dim, samples, full width)` to the targets
/// of all views, resets the scene embeddings to that width and attaches the
/// codec. Returns the width, or 0 when there are no targets.
pub fn attach_codec(scene: &mut GaussianScene, views: &[DistillTargets], codec_dim: usize) -> Result<usize> {
    let samples: Vec<Vec<f64>> = views.iter().flat_map(|v| v.targets.iter().cloned()).collect();
    let Some(full) = samples.first().map(Vec::len) else {
        return Ok(0);
    };
    let d = codec_dim.min(samples.len()).min(full);
    scene.reset_embeddings(d);
    scene.set_codec(fit_codec(&samples, d)?)?;
    Ok(d)
}

/// `L = Σᵢ Σ_{p∈Mᵢ} ‖E[p] − encode(targetᵢ)‖²` and `∂L/∂E` per pixel.
pub fn distill_loss(rendered: &FeatureMap, masks: &[Mask], targets: &[Vec<f64>], codec: &EmbeddingCodec) -> Result<(f64, Vec<f64>)> {
    if masks.len() != targets.len() {
        return Err(Error::invalid(format!("{} masks but {} targets", masks.len(), targets.len())));
    }
    let dim = rendered.dim;
    if codec.compressed_dim() != dim {
        return Err(Error::invalid(format!(
            "feature map width {dim} differs from codec width {}",
            codec.compressed_dim()
        )));
    }
    let mut grad = vec![0.0; rendered.data.len()];
    let mut loss = 0.0;
    for (mask, target) in masks.iter().zip(targets) {
        if mask.width != rendered.width || mask.height != rendered.height {
            return Err(Error::invalid("mask resolution differs from the feature map"));
        }
        if target.len() != codec.full_dim() {
            return Err(Error::invalid("target embedding width differs from the codec"));
        }
        let enc = codec.encode(target);
        for (p, _) in mask.data.iter().enumerate().filter(|(_, &m)| m) {
            let e = rendered.pixel(p);
            for k in 0..dim {
                let d = e[k] - enc[k];
                loss += d * d;
                grad[p * dim + k] += 2.0 * d;
            }
        }
    }
    Ok((loss, grad))
}

/// Distillation loss and parameter gradients for one (possibly augmented)
/// scene view.
pub fn distill_grads(view: &GaussianScene, camera: &Camera, targets: &DistillTargets, codec: &EmbeddingCodec) -> Result<(f64, ParamGrads)> {
    let pass = raster::render(view, camera)?;
    let (loss, grad) = distill_loss(&pass.output().feature, &targets.masks, &targets.targets, codec)?;
    let grads = pass.backward(view, &RenderGrads::feature_only(grad))?;
    Ok((loss, grads))
}

/// Gradient step on the embeddings only, then a clamp to [`EMBEDDING_BOUND`].
///
/// Plain descent rather than an exact least-squares solve: neighbouring
/// splats overlap, so the exact fit deconvolves and rings at object edges,
/// while a small step recovers the per-object mean first.
pub(crate) fn embedding_step(scene: &mut GaussianScene, grads: &ParamGrads, lr: f64) {
    let dim = grads.embed_dim;
    let mut updated = false;
    for (i, g) in scene.gaussians_untracked().iter_mut().enumerate() {
        let grad = grads.embedding_of(i);
        if grad.iter().all(|&v| v == 0.0) {
            continue;
        }
        updated = true;
        let mut e: Vec<f64> = g.embedding.iter().zip(grad).map(|(&v, gr)| f64::from(v) - lr * gr).collect();
        let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > EMBEDDING_BOUND {
            e.iter_mut().for_each(|v| *v *= EMBEDDING_BOUND / n);
        }
        for k in 0..dim {
            g.embedding[k] = e[k] as f32;
        }
    }
    if updated {
        scene.touch();
    }
}

/// One distillation step on the embeddings only. Without augmentation the
/// supervision comes from segmenting `image`; with it, from segmenting the
/// render of the augmented layout, since objects have moved. Returns the loss
/// before the update.
pub fn distill_step(
    scene: &mut GaussianScene,
    image: &Image,
    camera: &Camera,
    priors: &PriorBackends,
    codec: &EmbeddingCodec,
    lr: f64,
    augment: Option<(&AugmentSpec, u64)>,
) -> Result<f64> {
    if scene.embed_dim() != codec.compressed_dim() {
        return Err(Error::invalid("scene embedding width differs from the codec"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let (loss, grads) = match augment {
        Some((spec, step)) => {
            let objects = object_selections(scene);
            let view = layout_augment(scene, &objects, spec, step)?;
            let rendered = raster::rasterize(&view.scene, camera)?.rgb;
            let targets = prepare_targets(&rendered, priors)?;
            distill_grads(&view.scene, camera, &targets, codec)?
        }
        None => {
            if image.width != camera.width || image.height != camera.height {
                return Err(Error::invalid("view image resolution differs from the camera"));
            }
            let targets = prepare_targets(image, priors)?;
            distill_grads(scene, camera, &targets, codec)?
        }
    };
    embedding_step(scene, &grads, lr);
    Ok(loss)
}
