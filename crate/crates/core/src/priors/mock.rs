//! Deterministic stand-ins for the pretrained models. Each is a pure function
//! of its inputs.

use std::collections::VecDeque;
use std::sync::RwLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{alpha_bar, check_mask, fill, DepthEstimator, DepthInpainter, Denoiser, Embedder, RgbInpainter, Segmenter};
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, Mask};

pub const FILL_TOL: f64 = 1e-6;
pub const FILL_MAX_ITER: usize = 10_000;

/// Relative depth `2 − luminance`: brighter pixels are nearer.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockDepthEstimator;

impl DepthEstimator for MockDepthEstimator {
    fn estimate_depth(&self, image: &Image) -> Result<DepthMap> {
        let lum = image.luminance();
        Ok(DepthMap {
            width: image.width,
            height: image.height,
            data: lum.into_iter().map(|l| 2.0 - l).collect(),
        })
    }
}

/// Per-channel harmonic (Laplace) fill.
#[derive(Debug, Clone, Copy)]
pub struct MockRgbInpainter {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MockRgbInpainter {
    fn default() -> Self {
        Self {
            tol: FILL_TOL,
            max_iter: FILL_MAX_ITER,
        }
    }
}

impl RgbInpainter for MockRgbInpainter {
    fn inpaint_rgb(&self, image: &Image, mask: &Mask) -> Result<Image> {
        check_mask(image, mask)?;
        if mask.is_empty() {
            return Ok(image.clone());
        }
        if mask.count() == mask.data.len() {
            return Err(Error::invalid("inpaint_rgb: mask covers the whole image"));
        }
        let mut out = image.clone();
        for ch in 0..3 {
            let plane: Vec<f64> = image.data.iter().map(|p| p[ch]).collect();
            let filled = fill::harmonic_fill(&plane, image.width, image.height, &mask.data, self.tol, self.max_iter);
            for (p, (o, &m)) in out.data.iter_mut().zip(&mask.data).enumerate() {
                if m {
                    o[ch] = filled[p];
                }
            }
        }
        Ok(out)
    }
}

/// Thin-plate fill of the free region; fixed pixels are copied bit-exact.
#[derive(Debug, Clone, Copy)]
pub struct MockDepthInpainter {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MockDepthInpainter {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: FILL_MAX_ITER,
        }
    }
}

impl DepthInpainter for MockDepthInpainter {
    fn inpaint_depth(&self, depth: &DepthMap, fixed: &Mask, guide: &Image) -> Result<DepthMap> {
        if depth.width != fixed.width || depth.height != fixed.height {
            return Err(Error::invalid("inpaint_depth: fixed mask resolution differs from depth"));
        }
        check_mask(guide, fixed)?;
        if fixed.is_empty() {
            return Err(Error::invalid("inpaint_depth: fixed mask is empty, nothing anchors the fill"));
        }
        let free = fixed.not();
        let filled = fill::thin_plate_fill(&depth.data, depth.width, depth.height, &free.data, self.tol, self.max_iter);
        let data = depth
            .data
            .iter()
            .zip(&fixed.data)
            .zip(filled)
            .map(|((&d, &keep), f)| if keep { d } else { f })
            .collect();
        Ok(DepthMap {
            width: depth.width,
            height: depth.height,
            data,
        })
    }
}

/// Connected components (4-neighbour) of the colour-quantised image, largest
/// first. Components smaller than `min_pixels` are dropped.
#[derive(Debug, Clone, Copy)]
pub struct MockSegmenter {
    /// Quantisation steps per channel.
    pub levels: f64,
    pub min_pixels: usize,
}

impl Default for MockSegmenter {
    fn default() -> Self {
        Self {
            levels: 4.0,
            min_pixels: 6,
        }
    }
}

impl Segmenter for MockSegmenter {
    fn segment(&self, image: &Image) -> Result<Vec<Mask>> {
        let (w, h) = (image.width, image.height);
        let key: Vec<[i64; 3]> = image
            .data
            .iter()
            .map(|p| p.map(|c| (c.clamp(0.0, 1.0) * self.levels).round() as i64))
            .collect();
        let mut label = vec![usize::MAX; w * h];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..w * h {
            if label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = Vec::new();
            label[start] = id;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                members.push(p);
                let (col, row) = (p % w, p / w);
                let mut visit = |q: usize| {
                    if label[q] == usize::MAX && key[q] == key[p] {
                        label[q] = id;
                        queue.push_back(q);
                    }
                };
                if col > 0 {
                    visit(p - 1);
                }
                if col + 1 < w {
                    visit(p + 1);
                }
                if row > 0 {
                    visit(p - w);
                }
                if row + 1 < h {
                    visit(p + w);
                }
            }
            comps.push(members);
        }
        // Stable order: size descending, then first pixel.
        let mut order: Vec<usize> = (0..comps.len()).filter(|&c| comps[c].len() >= self.min_pixels).collect();
        order.sort_by(|&a, &b| comps[b].len().cmp(&comps[a].len()).then(a.cmp(&b)));
        Ok(order
            .into_iter()
            .map(|c| {
                let mut m = Mask::filled(w, h, false);
                for &p in &comps[c] {
                    m.data[p] = true;
                }
                m
            })
            .collect())
    }
}

/// Named colours the mock image encoder recognises.
pub const COLOR_NAMES: [(&str, [f64; 3]); 13] = [
    ("black", [0.0, 0.0, 0.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("gray", [0.5, 0.5, 0.5]),
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("magenta", [1.0, 0.0, 1.0]),
    ("orange", [1.0, 0.5, 0.0]),
    ("purple", [0.5, 0.0, 0.5]),
    ("brown", [0.55, 0.27, 0.07]),
    ("pink", [1.0, 0.75, 0.8]),
];

/// Name of the vocabulary colour nearest to `rgb`.
pub fn nearest_color_name(rgb: [f64; 3]) -> &'static str {
    let d2 = |c: [f64; 3]| (0..3).map(|k| (c[k] - rgb[k]).powi(2)).sum::<f64>();
    COLOR_NAMES
        .iter()
        .min_by(|a, b| d2(a.1).total_cmp(&d2(b.1)))
        .map(|(n, _)| *n)
        .expect("non-empty vocabulary")
}

/// Hash-seeded random unit vectors.
///
/// Text embeds to the normalised sum of its token vectors. An image region
/// embeds to the vector of its nearest colour name mixed with a shared
/// "image-ness" direction of weight `generic_weight`; the canonical phrases
/// carry the same shared direction, which is what makes them a meaningful
/// baseline in the relevancy score.
#[derive(Debug, Clone, Copy)]
pub struct MockEmbedder {
    pub dim: usize,
    /// Squared weight β of the shared direction in image embeddings.
    pub generic_weight: f64,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self {
            dim: super::DEFAULT_FULL_DIM,
            generic_weight: 0.3,
        }
    }
}

const GENERIC_TOKEN: &str = "\u{0}generic";

impl MockEmbedder {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let digest = Sha256::new().chain_update(b"splatedit-mock-embedder\0").chain_update(token.as_bytes()).finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalized(v)
    }

    fn tokens(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= n;
    }
    v
}

impl Embedder for MockEmbedder {
    fn full_dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, image: &Image, mask: &Mask) -> Result<Vec<f64>> {
        check_mask(image, mask)?;
        let count = mask.count();
        if count == 0 {
            return Err(Error::invalid("embed_image: empty mask"));
        }
        let mut mean = [0.0; 3];
        for (p, &m) in image.data.iter().zip(&mask.data) {
            if m {
                for k in 0..3 {
                    mean[k] += p[k];
                }
            }
        }
        let mean = mean.map(|v| v / count as f64);
        let name = self.token_vector(nearest_color_name(mean));
        let generic = self.token_vector(GENERIC_TOKEN);
        let (a, b) = ((1.0 - self.generic_weight).sqrt(), self.generic_weight.sqrt());
        Ok(normalized(name.iter().zip(&generic).map(|(n, g)| a * n + b * g).collect()))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = Self::tokens(text);
        if tokens.is_empty() {
            return Err(Error::invalid("embed_text: prompt has no tokens"));
        }
        let mut sum = vec![0.0; self.dim];
        for t in &tokens {
            for (s, v) in sum.iter_mut().zip(self.token_vector(t)) {
                *s += v;
            }
        }
        if tokens.len() == 1 && super::CANONICAL_PHRASES.contains(&tokens[0].as_str()) {
            for (s, g) in sum.iter_mut().zip(self.token_vector(GENERIC_TOKEN)) {
                *s += g;
            }
        }
        Ok(normalized(sum))
    }
}

/// Target-seeking denoiser: for a fixed target `Z` it predicts
/// `ε̂ = (x_t − √ᾱ_t Z) / √(1 − ᾱ_t)`, the exact noise if `x_t` was built from
/// `Z`. Score distillation with it therefore pulls renders toward `Z`.
///
/// Without an explicit target it adopts the image passed to `condition_on`.
#[derive(Debug, Default)]
pub struct MockDenoiser {
    target: RwLock<Option<Image>>,
    pinned: bool,
}

impl MockDenoiser {
    pub fn with_target(target: Image) -> Self {
        Self {
            target: RwLock::new(Some(target)),
            pinned: true,
        }
    }

    pub fn target(&self) -> Option<Image> {
        self.target.read().expect("target lock poisoned").clone()
    }
}

impl Denoiser for MockDenoiser {
    fn denoise(&self, x_t: &Image, t: u32, _prompt: &str, _cfg_scale: f64) -> Result<Image> {
        let guard = self.target.read().expect("target lock poisoned");
        let target = guard
            .as_ref()
            .ok_or_else(|| Error::backend("denoise", "mock denoiser has no target image"))?;
        if !x_t.same_shape(target) {
            return Err(Error::backend("denoise", "noisy image and target differ in resolution"));
        }
        let ab = alpha_bar(t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let data = x_t
            .data
            .iter()
            .zip(&target.data)
            .map(|(x, z)| [0, 1, 2].map(|k| (x[k] - sa * z[k]) / sn))
            .collect();
        Ok(Image {
            width: x_t.width,
            height: x_t.height,
            data,
        })
    }

    fn condition_on(&self, reference: &Image) {
        if !self.pinned {
            *self.target.write().expect("target lock poisoned") = Some(reference.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_gives_constant_depth() {
        let d = MockDepthEstimator.estimate_depth(&Image::filled(5, 4, [0.3, 0.6, 0.2])).unwrap();
        assert!(d.data.iter().all(|&v| v == d.data[0] && v > 0.0));
    }

    #[test]
    fn two_colour_image_segments_into_two_masks() {
        let img = Image::from_fn(10, 6, |c, _| if c < 4 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] });
        let masks = MockSegmenter::default().segment(&img).unwrap();
        assert_eq!(masks.len(), 2);
        assert_eq!(masks[0].count(), 36);
        assert_eq!(masks[1].count(), 24);
        assert!(masks[0].data.iter().zip(&masks[1].data).all(|(a, b)| a ^ b));
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let e = MockEmbedder::default();
        let a = e.embed_text("cat").unwrap();
        assert!((a.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        assert_eq!(a, e.embed_text("Cat").unwrap());
        assert!(e.embed_text("  ").is_err());
    }

    #[test]
    fn denoiser_recovers_true_noise() {
        let z = Image::from_fn(4, 3, |c, r| [0.1 * c as f64, 0.2 * r as f64, 0.5]);
        let eps = Image::from_fn(4, 3, |c, r| [(c as f64 - r as f64) * 0.3, 0.7, -1.2]);
        let t = 500;
        let ab = alpha_bar(t);
        let x_t = Image::from_fn(4, 3, |c, r| {
            let (zz, ee) = (z.get(c, r), eps.get(c, r));
            [0, 1, 2].map(|k| ab.sqrt() * zz[k] + (1.0 - ab).sqrt() * ee[k])
        });
        let d = MockDenoiser::with_target(z);
        let pred = d.denoise(&x_t, t, "", 5.0).unwrap();
        for (p, e) in pred.data.iter().zip(&eps.data) {
            for k in 0..3 {
                assert!((p[k] - e[k]).abs() < 1e-12);
            }
        }
    }
}
