//! Analytic backward pass of the rasterizer.
//!
//! Each tile replays compositing for its pixels and accumulates screen-space
//! gradients per splat; tiles run in parallel and are reduced in tile order so
//! results are bit-reproducible. The screen-space gradients are then pulled
//! back through the EWA projection to every Gaussian parameter.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use super::{projection_jacobian, sh, view_direction, walk_pixel, ForwardPass, GaussianParams, Splat2D, DEPTH_ALPHA_EPS};
use crate::error::{Error, Result};
use crate::scene::{normalize_quat, quat_to_matrix, GaussianScene};

/// Upstream gradients of a scalar loss with respect to the render planes.
/// An empty plane is treated as all-zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderGrads {
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
    pub feature: Vec<f64>,
}

impl RenderGrads {
    pub fn zeros(pixels: usize, feature_dim: usize) -> Self {
        Self {
            rgb: vec![[0.0; 3]; pixels],
            depth: vec![0.0; pixels],
            alpha: vec![0.0; pixels],
            feature: vec![0.0; pixels * feature_dim],
        }
    }

    pub fn rgb_only(rgb: Vec<[f64; 3]>) -> Self {
        Self {
            rgb,
            ..Self::default()
        }
    }

    pub fn feature_only(feature: Vec<f64>) -> Self {
        Self {
            feature,
            ..Self::default()
        }
    }
}

/// Per-Gaussian gradients, shaped like the parameters they differentiate.
/// `scale` and `opacity` are with respect to the activated values `s` and `α`;
/// `rotation` is with respect to the stored (not re-normalised) quaternion.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub center: Vec<[f64; 3]>,
    pub scale: Vec<[f64; 3]>,
    pub rotation: Vec<[f64; 4]>,
    pub opacity: Vec<f64>,
    /// `len × sh_len`, row-major.
    pub sh: Vec<f64>,
    pub sh_len: usize,
    /// `len × embed_dim`, row-major.
    pub embedding: Vec<f64>,
    pub embed_dim: usize,
}

impl ParamGrads {
    pub fn zeros(n: usize, sh_len: usize, embed_dim: usize) -> Self {
        Self {
            center: vec![[0.0; 3]; n],
            scale: vec![[0.0; 3]; n],
            rotation: vec![[0.0; 4]; n],
            opacity: vec![0.0; n],
            sh: vec![0.0; n * sh_len],
            sh_len,
            embedding: vec![0.0; n * embed_dim],
            embed_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.is_empty()
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        &self.sh[i * self.sh_len..(i + 1) * self.sh_len]
    }

    pub fn embedding_of(&self, i: usize) -> &[f64] {
        &self.embedding[i * self.embed_dim..(i + 1) * self.embed_dim]
    }

    /// `self += weight · other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, weight: f64) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.center.iter_mut().zip(&other.center) {
            for k in 0..3 {
                a[k] += weight * b[k];
            }
        }
        for (a, b) in self.scale.iter_mut().zip(&other.scale) {
            for k in 0..3 {
                a[k] += weight * b[k];
            }
        }
        for (a, b) in self.rotation.iter_mut().zip(&other.rotation) {
            for k in 0..4 {
                a[k] += weight * b[k];
            }
        }
        for (a, b) in self.opacity.iter_mut().zip(&other.opacity) {
            *a += weight * b;
        }
        for (a, b) in self.sh.iter_mut().zip(&other.sh) {
            *a += weight * b;
        }
        for (a, b) in self.embedding.iter_mut().zip(&other.embedding) {
            *a += weight * b;
        }
    }

    /// Euclidean norm of each parameter class: `[x, s, q, α, c, e]`.
    pub fn class_norms(&self) -> [f64; 6] {
        let sq3 = |v: &[[f64; 3]]| v.iter().flat_map(|a| a.iter()).map(|x| x * x).sum::<f64>();
        [
            sq3(&self.center).sqrt(),
            sq3(&self.scale).sqrt(),
            self.rotation.iter().flat_map(|a| a.iter()).map(|x| x * x).sum::<f64>().sqrt(),
            self.opacity.iter().map(|x| x * x).sum::<f64>().sqrt(),
            self.sh.iter().map(|x| x * x).sum::<f64>().sqrt(),
            self.embedding.iter().map(|x| x * x).sum::<f64>().sqrt(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().flatten().all(|v| v.is_finite())
            && self.scale.iter().flatten().all(|v| v.is_finite())
            && self.rotation.iter().flatten().all(|v| v.is_finite())
            && self.opacity.iter().all(|v| v.is_finite())
            && self.sh.iter().all(|v| v.is_finite())
            && self.embedding.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.class_norms().iter().all(|&n| n == 0.0)
    }
}

/// Screen-space gradient of one splat.
#[derive(Debug, Clone)]
struct SplatGrad {
    mean2d: [f64; 2],
    conic: [f64; 3],
    color: [f64; 3],
    alpha: f64,
    depth: f64,
    feature: Vec<f64>,
}

impl SplatGrad {
    fn zero(dim: usize) -> Self {
        Self {
            mean2d: [0.0; 2],
            conic: [0.0; 3],
            color: [0.0; 3],
            alpha: 0.0,
            depth: 0.0,
            feature: vec![0.0; dim],
        }
    }

    fn add(&mut self, o: &SplatGrad) {
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.alpha += o.alpha;
        self.depth += o.depth;
        for (a, b) in self.feature.iter_mut().zip(&o.feature) {
            *a += b;
        }
    }
}

impl ForwardPass {
    /// Backward pass for the scene this pass was rendered from.
    pub fn backward(&self, scene: &GaussianScene, upstream: &RenderGrads) -> Result<ParamGrads> {
        match self.revision {
            Some(r) if r == scene.revision() => self.backward_params(upstream),
            Some(r) => Err(Error::state(format!(
                "forward pass is for revision {r}, scene is at revision {}",
                scene.revision()
            ))),
            None => Err(Error::state("forward pass was not rendered from a scene")),
        }
    }

    /// Backward pass against the parameters captured by the forward pass.
    pub fn backward_params(&self, upstream: &RenderGrads) -> Result<ParamGrads> {
        let cam = &self.camera;
        let npx = cam.pixel_count();
        let dim = self.params.feature_dim;
        let check = |len: usize, per: usize, name: &str| -> Result<()> {
            if len != 0 && len != npx * per {
                Err(Error::invalid(format!("upstream {name} plane has {len} values, expected {}", npx * per)))
            } else {
                Ok(())
            }
        };
        check(upstream.rgb.len(), 1, "rgb")?;
        check(upstream.depth.len(), 1, "depth")?;
        check(upstream.alpha.len(), 1, "alpha")?;
        check(upstream.feature.len(), dim, "feature")?;

        let out = self.output();
        let bg = self.params.background;
        let splats = &self.splats;

        let per_tile: Vec<Vec<SplatGrad>> = (0..self.grid.count())
            .into_par_iter()
            .map(|tile| {
                let list = &self.tiles[tile];
                let mut acc = vec![SplatGrad::zero(dim); list.len()];
                if list.is_empty() {
                    return acc;
                }
                let (x0, y0, x1, y1) = self.grid.bounds(tile);
                let mut hits = Vec::new();
                for row in y0..y1 {
                    for col in x0..x1 {
                        let p = row * cam.width + col;
                        let g_rgb = upstream.rgb.get(p).copied().unwrap_or([0.0; 3]);
                        let g_feat: &[f64] = if upstream.feature.is_empty() {
                            &[]
                        } else {
                            &upstream.feature[p * dim..(p + 1) * dim]
                        };
                        let g_depth = upstream.depth.get(p).copied().unwrap_or(0.0);
                        let g_alpha = upstream.alpha.get(p).copied().unwrap_or(0.0);
                        if g_rgb == [0.0; 3] && g_depth == 0.0 && g_alpha == 0.0 && g_feat.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
                        hits.clear();
                        let t_final = walk_pixel(splats, list, px, py, |h| hits.push(h));
                        let alpha = 1.0 - t_final;
                        // Depth is D / alpha with D the weighted depth sum.
                        let (g_draw, g_alpha_total) = if alpha > DEPTH_ALPHA_EPS {
                            (g_depth / alpha, g_alpha - g_depth * out.depth.data[p] / alpha)
                        } else {
                            (0.0, g_alpha)
                        };
                        // Loss = Σ v_i w_i + k · T_final.
                        let k_final = g_rgb[0] * bg[0] + g_rgb[1] * bg[1] + g_rgb[2] * bg[2] - g_alpha_total;
                        let mut suffix = k_final * t_final;
                        for h in hits.iter().rev() {
                            let s: &Splat2D = &splats[h.splat];
                            let w = h.alpha * h.transmittance;
                            let mut v = g_draw * s.depth;
                            for ch in 0..3 {
                                v += g_rgb[ch] * s.color[ch];
                            }
                            for (gf, f) in g_feat.iter().zip(&s.feature) {
                                v += gf * f;
                            }
                            let d_a = v * h.transmittance - suffix / (1.0 - h.alpha);
                            suffix += v * w;

                            let a = &mut acc[h.slot];
                            for ch in 0..3 {
                                a.color[ch] += g_rgb[ch] * w;
                            }
                            for (af, gf) in a.feature.iter_mut().zip(g_feat) {
                                *af += gf * w;
                            }
                            a.depth += g_draw * w;
                            if !h.clamped {
                                a.alpha += d_a * h.gauss;
                                let d_power = d_a * s.alpha * h.gauss;
                                let dx = px - s.mean2d.x;
                                let dy = py - s.mean2d.y;
                                let [ca, cb, cc] = s.conic;
                                a.mean2d[0] += d_power * (ca * dx + cb * dy);
                                a.mean2d[1] += d_power * (cb * dx + cc * dy);
                                a.conic[0] += d_power * (-0.5 * dx * dx);
                                a.conic[1] += d_power * (-dx * dy);
                                a.conic[2] += d_power * (-0.5 * dy * dy);
                            }
                        }
                    }
                }
                acc
            })
            .collect();

        let mut splat_grads = vec![SplatGrad::zero(dim); splats.len()];
        for (tile, grads) in per_tile.iter().enumerate() {
            for (slot, g) in grads.iter().enumerate() {
                splat_grads[self.tiles[tile][slot] as usize].add(g);
            }
        }

        let n = self.params.gaussians.len();
        let sh_len = self.params.gaussians.first().map_or(3, |g| g.sh.len());
        let mut grads = ParamGrads::zeros(n, sh_len, dim);
        let per_splat: Vec<(usize, Gaussian3dGrad)> = splats
            .par_iter()
            .zip(splat_grads.par_iter())
            .map(|(s, sg)| {
                let g = &self.params.gaussians[s.source_index];
                (s.source_index, pull_back(g, s, sg, cam, self.params.sh_degree))
            })
            .collect();
        for (i, g3) in per_splat {
            grads.center[i] = g3.center;
            grads.scale[i] = g3.scale;
            grads.rotation[i] = g3.rotation;
            grads.opacity[i] = g3.opacity;
            grads.sh[i * sh_len..(i + 1) * sh_len].copy_from_slice(&g3.sh);
            grads.embedding[i * dim..(i + 1) * dim].copy_from_slice(&g3.feature);
        }
        Ok(grads)
    }
}

struct Gaussian3dGrad {
    center: [f64; 3],
    scale: [f64; 3],
    rotation: [f64; 4],
    opacity: f64,
    sh: Vec<f64>,
    feature: Vec<f64>,
}

/// Chain rule from screen-space splat gradients to 3D parameters.
fn pull_back(g: &GaussianParams, s: &Splat2D, sg: &SplatGrad, cam: &crate::camera::Camera, degree: usize) -> Gaussian3dGrad {
    let w = cam.rotation;
    let t = cam.to_camera_frame(&g.center);

    // Conic → covariance: dL/dCov = −Cov⁻¹ G Cov⁻¹ with G the symmetric conic gradient.
    let conic = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2d = -(conic * g_conic * conic);

    // cov2d = M Σ Mᵀ + blur, M = J W.
    let sigma_rot = quat_to_matrix(normalize_quat(g.rotation));
    let s_diag = Matrix3::from_diagonal(&g.scale);
    let m_scale = sigma_rot * s_diag;
    let sigma = m_scale * m_scale.transpose();
    let jac = projection_jacobian(cam, &t);
    let m = jac * w;
    let g_sigma = m.transpose() * g_cov2d * m;
    let g_m: Matrix2x3<f64> = 2.0 * g_cov2d * m * sigma;
    let g_j = g_m * w.transpose();

    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut g_t = Vector3::zeros();
    // Jacobian entries' dependence on t.
    g_t.x += g_j[(0, 2)] * (-fx * iz2);
    g_t.y += g_j[(1, 2)] * (-fy * iz2);
    g_t.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * t.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * t.y * iz3);
    // Mean.
    g_t.x += sg.mean2d[0] * fx * iz;
    g_t.y += sg.mean2d[1] * fy * iz;
    g_t.z += -sg.mean2d[0] * fx * t.x * iz2 - sg.mean2d[1] * fy * t.y * iz2;
    // Composited depth.
    g_t.z += sg.depth;
    let mut g_center = w.transpose() * g_t;

    // Σ = (R S)(R S)ᵀ.
    let g_ms = 2.0 * g_sigma * m_scale;
    let mut g_scale = [0.0; 3];
    for (k, gs) in g_scale.iter_mut().enumerate() {
        *gs = (0..3).map(|r| g_ms[(r, k)] * sigma_rot[(r, k)]).sum();
    }
    let g_r = g_ms * s_diag;
    let qn = normalize_quat(g.rotation);
    let g_qn = rotation_grad(qn, &g_r);
    let norm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = (0..4).map(|k| qn[k] * g_qn[k]).sum();
    let mut g_rotation = [0.0; 4];
    for k in 0..4 {
        g_rotation[k] = (g_qn[k] - qn[k] * dot) / norm;
    }

    // Colour: SH coefficients and the view-direction path for degree > 0.
    let sh_len = g.sh.len();
    let mut g_sh = vec![0.0; sh_len];
    if degree == 0 {
        g_sh[..3].copy_from_slice(&sg.color);
    } else {
        let dir = view_direction(cam, &g.center);
        let (val, dval) = sh::basis(degree, dir);
        let mut g_dir = Vector3::zeros();
        for k in 0..val.len() {
            for ch in 0..3 {
                g_sh[k * 3 + ch] = val[k] * sg.color[ch];
                let c = g.sh[k * 3 + ch] * sg.color[ch];
                g_dir += Vector3::new(dval[k][0], dval[k][1], dval[k][2]) * c;
            }
        }
        let d = Vector3::new(dir[0], dir[1], dir[2]);
        let r = (g.center - cam.center()).norm();
        if r > 0.0 {
            g_center += (g_dir - d * d.dot(&g_dir)) / r;
        }
    }

    Gaussian3dGrad {
        center: [g_center.x, g_center.y, g_center.z],
        scale: g_scale,
        rotation: g_rotation,
        opacity: sg.alpha,
        sh: g_sh,
        feature: sg.feature.clone(),
    }
}

/// Gradient with respect to a unit quaternion `(w, x, y, z)` given the gradient
/// with respect to its rotation matrix.
fn rotation_grad(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |r: usize, c: usize| g[(r, c)];
    let gw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let gx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let gy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let gz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    [gw, gx, gy, gz]
}
