//! Language features: the embedding codec, relevancy scoring, text and
//! bounding-box queries, and feature distillation into Gaussians.

mod codec;
mod distill;
mod kmeans;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::priors::PriorBackends;
use crate::scene::GaussianScene;

pub use codec::{fit_codec, reconstruction_mse, EmbeddingCodec};
pub use distill::{attach_codec, distill_grads, distill_loss, distill_step, prepare_targets, DistillTargets, DEFAULT_EMBED_LR, EMBEDDING_BOUND};
pub(crate) use distill::embedding_step;
pub use kmeans::kmeans;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_K: usize = 3;
pub const DEFAULT_RHO: f64 = 0.1;
pub const KMEANS_ITERS: usize = 50;

/// How a selection was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionSource {
    Text { text: String, tau: f64 },
    Bbox { rect: PixelRect, k: usize, rho: f64 },
    Object { id: i32 },
    Indices,
}

/// A set of Gaussian indices: the unit every edit operates on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Sorted, unique.
    pub indices: Vec<usize>,
    /// One score per index.
    pub scores: Vec<f64>,
    pub source: SelectionSource,
    /// Scene layout revision the indices refer to.
    pub layout_revision: u64,
}

impl Selection {
    /// Explicit index set; duplicates are merged.
    pub fn from_indices(scene: &GaussianScene, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= scene.len()) {
            return Err(Error::invalid(format!("index {bad} out of range for {} gaussians", scene.len())));
        }
        Ok(Self {
            scores: vec![1.0; indices.len()],
            indices,
            source: SelectionSource::Indices,
            layout_revision: scene.layout_revision(),
        })
    }

    /// Every Gaussian carrying `object_id`.
    pub fn object(scene: &GaussianScene, object_id: i32) -> Self {
        let indices = scene.object_members(object_id);
        Self {
            scores: vec![1.0; indices.len()],
            indices,
            source: SelectionSource::Object { id: object_id },
            layout_revision: scene.layout_revision(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_current(&self, scene: &GaussianScene) -> bool {
        self.layout_revision == scene.layout_revision()
    }

    pub(crate) fn check_current(&self, scene: &GaussianScene) -> Result<()> {
        if !self.is_current(scene) {
            return Err(Error::state(format!(
                "selection refers to layout revision {}, scene is at {}",
                self.layout_revision,
                scene.layout_revision()
            )));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("selection indices must be sorted and unique"));
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= scene.len()) {
            return Err(Error::invalid(format!("selection index {bad} out of range")));
        }
        Ok(())
    }

    /// Intersection over union of two index sets.
    pub fn iou(&self, other: &[usize]) -> f64 {
        let a: std::collections::BTreeSet<_> = self.indices.iter().collect();
        let b: std::collections::BTreeSet<_> = other.iter().collect();
        let union = a.union(&b).count();
        if union == 0 {
            1.0
        } else {
            a.intersection(&b).count() as f64 / union as f64
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid("relevancy: zero or non-finite embedding"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `minᵢ exp(e·e_l) / (exp(e·e_l) + exp(e·canonᵢ))` over unit-normalised inputs.
pub fn relevancy_score(e: &[f64], e_text: &[f64], canon: &[Vec<f64>]) -> Result<f64> {
    if canon.is_empty() {
        return Err(Error::invalid("relevancy: no canonical phrases"));
    }
    let e = unit(e)?;
    let s_text = dot(&e, &unit(e_text)?);
    let mut best = f64::INFINITY;
    for c in canon {
        let s_c = dot(&e, &unit(c)?);
        // exp(a)/(exp(a)+exp(b)) = 1/(1+exp(b−a)).
        best = best.min(1.0 / (1.0 + (s_c - s_text).exp()));
    }
    Ok(best)
}

/// Relevancy of every Gaussian to `text`; inactive Gaussians score 0.
pub fn relevancy_scores(scene: &GaussianScene, priors: &PriorBackends, text: &str) -> Result<Vec<f64>> {
    let codec = scene
        .codec()
        .ok_or_else(|| Error::state("embedding codec is not fitted yet"))?;
    let e_text = unit(&priors.embed_text(text)?)?;
    let canon: Vec<Vec<f64>> = priors.canonical_embeddings()?.iter().map(|c| unit(c)).collect::<Result<_>>()?;
    Ok(scene
        .gaussians()
        .par_iter()
        .map(|g| {
            if !g.active {
                return 0.0;
            }
            let z: Vec<f64> = g.embedding.iter().map(|&v| f64::from(v)).collect();
            relevancy_score(&codec.decode(&z), &e_text, &canon).unwrap_or(0.0)
        })
        .collect())
}

/// Gaussians whose relevancy to `text` is at least `tau`.
pub fn query_text(scene: &GaussianScene, priors: &PriorBackends, text: &str, tau: f64) -> Result<Selection> {
    if !tau.is_finite() {
        return Err(Error::invalid("tau must be finite"));
    }
    let scores = relevancy_scores(scene, priors, text)?;
    let (indices, scores): (Vec<usize>, Vec<f64>) = scores
        .into_iter()
        .enumerate()
        .filter(|&(i, s)| scene.gaussians()[i].active && s >= tau)
        .unzip();
    Ok(Selection {
        indices,
        scores,
        source: SelectionSource::Text {
            text: text.to_string(),
            tau,
        },
        layout_revision: scene.layout_revision(),
    })
}

/// Gaussians projecting into `rect`, clustered by embedding; clusters holding
/// fewer than `rho` of the candidates are discarded.
pub fn query_bbox(scene: &GaussianScene, camera: &Camera, rect: PixelRect, k: usize, rho: f64, seed: u64) -> Result<Selection> {
    camera.validate()?;
    let (w, h) = (camera.width as f64, camera.height as f64);
    if !(rect.x0 >= 0.0 && rect.y0 >= 0.0 && rect.x0 < rect.x1 && rect.y0 < rect.y1 && rect.x1 <= w && rect.y1 <= h) {
        return Err(Error::invalid(format!("bbox {rect:?} is not a rectangle inside the {w}x{h} viewport")));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid("rho must lie in [0, 1]"));
    }
    let source = SelectionSource::Bbox { rect, k, rho };
    let candidates: Vec<usize> = scene
        .gaussians()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.active)
        .filter_map(|(i, g)| {
            let (u, v, z) = camera.project_point(&g.center_vec()).ok()?;
            let inside = u >= rect.x0 && u < rect.x1 && v >= rect.y0 && v < rect.y1 && z > camera.z_near && z < camera.z_far;
            inside.then_some(i)
        })
        .collect();
    if candidates.is_empty() {
        return Ok(Selection {
            indices: Vec::new(),
            scores: Vec::new(),
            source,
            layout_revision: scene.layout_revision(),
        });
    }
    let points: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&i| scene.gaussians()[i].embedding.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let labels = kmeans(&points, k, KMEANS_ITERS, seed);
    let clusters = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; clusters];
    for &l in &labels {
        counts[l] += 1;
    }
    let n = candidates.len() as f64;
    let mut indices = Vec::new();
    let mut scores = Vec::new();
    for (&i, &l) in candidates.iter().zip(&labels) {
        if counts[l] as f64 >= rho * n {
            indices.push(i);
            scores.push(counts[l] as f64 / n);
        }
    }
    Ok(Selection {
        indices,
        scores,
        source,
        layout_revision: scene.layout_revision(),
    })
}
