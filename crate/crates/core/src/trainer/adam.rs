use serde::{Deserialize, Serialize};

use crate::raster::ParamGrads;
use crate::scene::GaussianScene;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-15;
const MIN_OPACITY: f64 = 1e-4;
const MAX_OPACITY: f64 = 1.0 - 1e-4;
const MIN_SCALE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub center: f64,
    /// In log-scale space.
    pub scale: f64,
    pub rotation: f64,
    /// In logit space.
    pub opacity: f64,
    pub color: f64,
    /// Plain gradient step; embeddings are not part of the Adam state.
    pub embedding: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            center: 1.6e-4,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            embedding: 1e-1,
        }
    }
}

/// Moments of one Gaussian, over `[x(3), log s(3), q(4), logit α(1), c(..)]`.
#[derive(Debug, Clone)]
struct Row {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

/// Adam with per-Gaussian moments that only advance when the Gaussian
/// receives a non-zero gradient, so a zero gradient leaves the scene untouched.
/// Embeddings are not handled here.
#[derive(Debug, Clone)]
pub struct SparseAdam {
    pub lr: LearningRates,
    center_scale: f64,
    rows: Vec<Row>,
}

impl SparseAdam {
    pub fn new(lr: LearningRates, extent: f64) -> Self {
        Self {
            lr,
            center_scale: extent,
            rows: Vec::new(),
        }
    }

    /// Applies one update from gradients with respect to `(x, s, q, α, c)`.
    /// Returns the number of Gaussians updated.
    pub fn step(&mut self, scene: &mut GaussianScene, grads: &ParamGrads) -> usize {
        let n = scene.len();
        assert_eq!(grads.len(), n, "gradient count differs from scene size");
        let width = 11 + grads.sh_len;
        if self.rows.len() < n {
            self.rows.resize(
                n,
                Row {
                    m: vec![0.0; width],
                    v: vec![0.0; width],
                    t: 0,
                },
            );
        }
        let lrs: Vec<f64> = [self.lr.center * self.center_scale; 3]
            .into_iter()
            .chain([self.lr.scale; 3])
            .chain([self.lr.rotation; 4])
            .chain([self.lr.opacity])
            .chain(std::iter::repeat_n(self.lr.color, grads.sh_len))
            .collect();
        let mut updated = 0;
        let mut g = vec![0.0; width];
        for (i, gauss) in scene.gaussians_untracked().iter_mut().enumerate() {
            let s = gauss.scale_vec();
            let a = f64::from(gauss.opacity);
            g[..3].copy_from_slice(&grads.center[i]);
            for k in 0..3 {
                g[3 + k] = grads.scale[i][k] * s[k];
            }
            g[6..10].copy_from_slice(&grads.rotation[i]);
            g[10] = grads.opacity[i] * a * (1.0 - a);
            g[11..].copy_from_slice(grads.sh_of(i));
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            updated += 1;
            let row = &mut self.rows[i];
            row.t += 1;
            let bc1 = 1.0 - BETA1.powi(row.t as i32);
            let bc2 = 1.0 - BETA2.powi(row.t as i32);
            let mut delta = vec![0.0; width];
            for k in 0..width {
                row.m[k] = BETA1 * row.m[k] + (1.0 - BETA1) * g[k];
                row.v[k] = BETA2 * row.v[k] + (1.0 - BETA2) * g[k] * g[k];
                delta[k] = lrs[k] * (row.m[k] / bc1) / ((row.v[k] / bc2).sqrt() + EPS);
            }
            for k in 0..3 {
                gauss.center[k] = (f64::from(gauss.center[k]) - delta[k]) as f32;
                gauss.scale[k] = (s[k].ln() - delta[3 + k]).exp().max(MIN_SCALE) as f32;
            }
            let q: [f64; 4] = std::array::from_fn(|k| f64::from(gauss.rotation[k]) - delta[6 + k]);
            gauss.rotation = q.map(|v| v as f32);
            gauss.normalize_rotation();
            let logit = (a / (1.0 - a)).ln() - delta[10];
            let a = (1.0 / (1.0 + (-logit).exp())).clamp(MIN_OPACITY, MAX_OPACITY);
            gauss.opacity = a as f32;
            for (c, d) in gauss.sh.iter_mut().zip(&delta[11..]) {
                *c = (f64::from(*c) - d) as f32;
            }
        }
        if updated > 0 {
            scene.touch();
        }
        updated
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian;

    fn scene() -> GaussianScene {
        let mut s = GaussianScene::new(0, 0);
        s.push(Gaussian::isotropic([0.0, 0.0, 2.0], 0.1, 0.5, [0.2, 0.4, 0.6], 0, 0)).unwrap();
        s.push(Gaussian::isotropic([0.1, 0.0, 2.0], 0.1, 0.5, [0.2, 0.4, 0.6], 0, 0)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scene();
        let before = s.gaussians().to_vec();
        let rev = s.revision();
        let mut opt = SparseAdam::new(LearningRates::default(), 1.0);
        assert_eq!(opt.step(&mut s, &ParamGrads::zeros(2, 3, 0)), 0);
        assert_eq!(s.gaussians(), &before[..]);
        assert_eq!(s.revision(), rev);
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let mut s = scene();
        let mut g = ParamGrads::zeros(2, 3, 0);
        g.sh[0] = 3.0;
        g.opacity[1] = -1.0;
        let mut opt = SparseAdam::new(LearningRates::default(), 1.0);
        assert_eq!(opt.step(&mut s, &g), 2);
        let c = f64::from(s.gaussians()[0].sh[0]);
        assert!((c - (0.2 - 2.5e-3)).abs() < 1e-6);
        // logit(0.5) = 0 moves to +lr.
        let a = f64::from(s.gaussians()[1].opacity);
        assert!((a - 1.0 / (1.0 + (-5e-2f64).exp())).abs() < 1e-6);
        assert_eq!(s.gaussians()[1].sh, scene().gaussians()[1].sh);
    }
}
