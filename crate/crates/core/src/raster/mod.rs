//! Tile-based Gaussian rasterization.
//!
//! Splats are sorted front-to-back by camera depth (ties broken by Gaussian
//! index) and alpha-composited per pixel. The tiled renderer bins splats into
//! 16×16 tiles using an opacity-aware footprint, so every splat that can reach
//! the 1/255 contribution threshold at a pixel is present in that pixel's tile
//! list; the result therefore does not depend on the tile size.

mod backward;
pub mod sh;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

pub use backward::{ParamGrads, RenderGrads};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{FeatureMap, Image, Mask, ScalarMap};
use crate::scene::{normalize_quat, quat_to_matrix, Gaussian, GaussianScene};

pub const TILE_SIZE: usize = 16;
/// Isotropic screen-space blur added to every projected covariance (px²).
pub const SCREEN_BLUR: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance drops below this value.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Depth is normalised by accumulated alpha only above this value.
pub const DEPTH_ALPHA_EPS: f64 = 1e-6;

/// Activated parameters of one Gaussian in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub center: Vector3<f64>,
    pub scale: Vector3<f64>,
    /// Raw quaternion `(w, x, y, z)`; normalised inside the projection.
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub sh: Vec<f64>,
    pub feature: Vec<f64>,
    pub active: bool,
}

impl GaussianParams {
    pub fn from_gaussian(g: &Gaussian) -> Self {
        Self {
            center: g.center_vec(),
            scale: g.scale_vec(),
            rotation: g.quat(),
            opacity: f64::from(g.opacity),
            sh: g.sh.iter().map(|&v| f64::from(v)).collect(),
            feature: g.embedding.iter().map(|&v| f64::from(v)).collect(),
            active: g.active,
        }
    }

    fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity.is_finite()
            && self.sh.iter().all(|v| v.is_finite())
            && self.feature.iter().all(|v| v.is_finite())
    }
}

/// Everything the rasterizer reads from a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub gaussians: Vec<GaussianParams>,
    pub sh_degree: usize,
    pub feature_dim: usize,
    pub background: [f64; 3],
}

impl SceneParams {
    pub fn from_scene(scene: &GaussianScene) -> Self {
        Self {
            gaussians: scene.gaussians().iter().map(GaussianParams::from_gaussian).collect(),
            sh_degree: scene.sh_degree(),
            feature_dim: scene.embed_dim(),
            background: scene.background,
        }
    }

    fn check(&self) -> Result<()> {
        for (index, g) in self.gaussians.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(())
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    /// Projected covariance including the screen-space blur.
    pub cov2d: Matrix2<f64>,
    /// Upper triangle `(a, b, c)` of the inverse covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub feature: Vec<f64>,
    pub alpha: f64,
    pub source_index: usize,
    /// Pixel radius beyond which the contribution is below `MIN_ALPHA`.
    pub radius: f64,
}

/// Per-pixel render planes.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    pub depth: ScalarMap,
    pub alpha: ScalarMap,
    pub feature: FeatureMap,
}

impl RenderOutput {
    fn blank(width: usize, height: usize, dim: usize) -> Self {
        Self {
            rgb: Image::filled(width, height, [0.0; 3]),
            depth: ScalarMap::filled(width, height, 0.0),
            alpha: ScalarMap::filled(width, height, 0.0),
            feature: FeatureMap::zeros(width, height, dim),
        }
    }

    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }
}

/// Jacobian of the perspective projection at camera-frame point `t`.
pub(crate) fn projection_jacobian(camera: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * t.x * iz2,
        0.0,
        camera.fy * iz,
        -camera.fy * t.y * iz2,
    )
}

pub(crate) fn covariance_from_params(scale: &Vector3<f64>, rotation: [f64; 4]) -> Matrix3<f64> {
    let r = quat_to_matrix(normalize_quat(rotation));
    let s2 = Matrix3::from_diagonal(&scale.component_mul(scale));
    r * s2 * r.transpose()
}

pub(crate) fn view_direction(camera: &Camera, center: &Vector3<f64>) -> [f64; 3] {
    let d = center - camera.center();
    let n = d.norm();
    if n == 0.0 {
        [0.0, 0.0, 1.0]
    } else {
        [d.x / n, d.y / n, d.z / n]
    }
}

/// Projects one Gaussian; `None` when it is inactive or culled.
///
/// Culled iff the centre depth is outside `(z_near, z_far)` or the 3σ
/// screen footprint misses the viewport.
pub fn project_params(g: &GaussianParams, index: usize, sh_degree: usize, camera: &Camera) -> Option<Splat2D> {
    if !g.active {
        return None;
    }
    let t = camera.to_camera_frame(&g.center);
    if !(t.z > camera.z_near && t.z < camera.z_far) {
        return None;
    }
    let sigma = covariance_from_params(&g.scale, g.rotation);
    let m = projection_jacobian(camera, &t) * camera.rotation;
    let cov2d = m * sigma * m.transpose() + Matrix2::identity() * SCREEN_BLUR;
    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let sigma_px = lambda_max.sqrt();
    let mean2d = Vector2::new(
        camera.fx * t.x / t.z + camera.cx,
        camera.fy * t.y / t.z + camera.cy,
    );
    let r3 = 3.0 * sigma_px;
    let (w, h) = (camera.width as f64, camera.height as f64);
    if mean2d.x + r3 < 0.0 || mean2d.x - r3 > w || mean2d.y + r3 < 0.0 || mean2d.y - r3 > h {
        return None;
    }
    let reach = 2.0 * (g.opacity / MIN_ALPHA).ln();
    let radius = if reach > 0.0 { sigma_px * reach.sqrt() } else { 0.0 };
    let color = sh::eval(sh_degree, &g.sh, view_direction(camera, &g.center));
    Some(Splat2D {
        mean2d,
        cov2d,
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        color,
        feature: g.feature.clone(),
        alpha: g.opacity,
        source_index: index,
        radius,
    })
}

/// Projects a stored Gaussian at SH degree inferred from its coefficient count.
pub fn project_gaussian(g: &Gaussian, camera: &Camera) -> Option<Splat2D> {
    let coeffs = g.sh.len() / 3;
    let degree = (coeffs as f64).sqrt() as usize - 1;
    project_params(&GaussianParams::from_gaussian(g), 0, degree, camera)
}

/// One composited splat at one pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Hit {
    /// Position in the tile's splat list.
    pub slot: usize,
    pub splat: usize,
    pub alpha: f64,
    pub gauss: f64,
    pub transmittance: f64,
    pub clamped: bool,
}

/// Walks the depth-sorted splat list at one pixel centre and reports every
/// composited splat. Returns the final transmittance.
#[inline]
pub(crate) fn walk_pixel(splats: &[Splat2D], list: &[u32], px: f64, py: f64, mut visit: impl FnMut(Hit)) -> f64 {
    let mut t = 1.0;
    for (slot, &si) in list.iter().enumerate() {
        if t < MIN_TRANSMITTANCE {
            break;
        }
        let s = &splats[si as usize];
        let dx = px - s.mean2d.x;
        let dy = py - s.mean2d.y;
        let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
        let gauss = power.exp();
        let raw = s.alpha * gauss;
        let (alpha, clamped) = if raw > MAX_ALPHA { (MAX_ALPHA, true) } else { (raw, false) };
        if alpha < MIN_ALPHA {
            continue;
        }
        visit(Hit {
            slot,
            splat: si as usize,
            alpha,
            gauss,
            transmittance: t,
            clamped,
        });
        t *= 1.0 - alpha;
    }
    t
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TileGrid {
    pub cols: usize,
    pub rows: usize,
    pub width: usize,
    pub height: usize,
}

impl TileGrid {
    fn new(width: usize, height: usize) -> Self {
        Self {
            cols: width.div_ceil(TILE_SIZE),
            rows: height.div_ceil(TILE_SIZE),
            width,
            height,
        }
    }

    pub fn count(&self) -> usize {
        self.cols * self.rows
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` of a tile, end-exclusive.
    pub fn bounds(&self, tile: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (tile % self.cols, tile / self.cols);
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, y0, (x0 + TILE_SIZE).min(self.width), (y0 + TILE_SIZE).min(self.height))
    }
}

/// A completed forward pass: the sorted splats, tile bins and render planes.
/// Kept so the backward pass can replay compositing exactly.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub(crate) camera: Camera,
    pub(crate) revision: Option<u64>,
    pub(crate) params: SceneParams,
    pub(crate) splats: Vec<Splat2D>,
    pub(crate) grid: TileGrid,
    pub(crate) tiles: Vec<Vec<u32>>,
    output: RenderOutput,
}

impl ForwardPass {
    pub fn output(&self) -> &RenderOutput {
        &self.output
    }

    pub fn into_output(self) -> RenderOutput {
        self.output
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn revision(&self) -> Option<u64> {
        self.revision
    }

    pub fn splats(&self) -> &[Splat2D] {
        &self.splats
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    /// Source indices of the splats composited at a pixel, in compositing order.
    pub fn contributors(&self, col: usize, row: usize) -> Vec<usize> {
        let tile = (row / TILE_SIZE) * self.grid.cols + col / TILE_SIZE;
        let mut out = Vec::new();
        walk_pixel(&self.splats, &self.tiles[tile], col as f64 + 0.5, row as f64 + 0.5, |h| {
            out.push(self.splats[h.splat].source_index)
        });
        out
    }

    /// Per-Gaussian sum of blending weights over the pixels of `mask`
    /// (every pixel when `None`).
    pub fn contribution_weights(&self, mask: Option<&Mask>) -> Vec<f64> {
        let w: Vec<f64> = match mask {
            Some(m) => m.data.iter().map(|&b| f64::from(u8::from(b))).collect(),
            None => vec![1.0; self.camera.pixel_count()],
        };
        self.weighted_contributions(&w)
    }

    /// Per-Gaussian sum of `pixel_weight[p] · wᵢ(p)` where `wᵢ(p)` is the
    /// Gaussian's blending weight at pixel `p`.
    pub fn weighted_contributions(&self, pixel_weight: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.params.gaussians.len()];
        for tile in 0..self.grid.count() {
            let (x0, y0, x1, y1) = self.grid.bounds(tile);
            for row in y0..y1 {
                for col in x0..x1 {
                    let pw = pixel_weight[row * self.camera.width + col];
                    if pw == 0.0 {
                        continue;
                    }
                    walk_pixel(&self.splats, &self.tiles[tile], col as f64 + 0.5, row as f64 + 0.5, |h| {
                        out[self.splats[h.splat].source_index] += pw * h.alpha * h.transmittance;
                    });
                }
            }
        }
        out
    }
}

struct TilePixels {
    rgb: Vec<[f64; 3]>,
    depth: Vec<f64>,
    alpha: Vec<f64>,
    feature: Vec<f64>,
}

/// Projects, sorts and bins the scene, then composites every tile.
pub fn render_params(params: SceneParams, camera: &Camera) -> Result<ForwardPass> {
    camera.validate()?;
    params.check()?;
    let dim = params.feature_dim;
    let mut splats: Vec<Splat2D> = params
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_params(g, i, params.sh_degree, camera))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));

    let grid = TileGrid::new(camera.width, camera.height);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); grid.count()];
    for (si, s) in splats.iter().enumerate() {
        if s.alpha < MIN_ALPHA {
            continue;
        }
        // One pixel of slack around the analytic footprint.
        let r = s.radius + 1.0;
        let x0 = ((s.mean2d.x - r - 0.5).floor().max(0.0) as usize) / TILE_SIZE;
        let y0 = ((s.mean2d.y - r - 0.5).floor().max(0.0) as usize) / TILE_SIZE;
        let x1 = (s.mean2d.x + r).ceil();
        let y1 = (s.mean2d.y + r).ceil();
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let x1 = ((x1 as usize).min(grid.width - 1)) / TILE_SIZE;
        let y1 = ((y1 as usize).min(grid.height - 1)) / TILE_SIZE;
        for ty in y0..=y1.min(grid.rows - 1) {
            for tx in x0..=x1.min(grid.cols - 1) {
                tiles[ty * grid.cols + tx].push(si as u32);
            }
        }
    }

    let bg = params.background;
    let tile_results: Vec<TilePixels> = (0..grid.count())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = grid.bounds(tile);
            let n = (x1 - x0) * (y1 - y0);
            let mut out = TilePixels {
                rgb: Vec::with_capacity(n),
                depth: Vec::with_capacity(n),
                alpha: Vec::with_capacity(n),
                feature: vec![0.0; n * dim],
            };
            let list = &tiles[tile];
            let mut k = 0;
            for row in y0..y1 {
                for col in x0..x1 {
                    let mut rgb = [0.0; 3];
                    let mut depth_acc = 0.0;
                    let feat = &mut out.feature[k * dim..(k + 1) * dim];
                    let t_final = walk_pixel(&splats, list, col as f64 + 0.5, row as f64 + 0.5, |h| {
                        let s = &splats[h.splat];
                        let w = h.alpha * h.transmittance;
                        for ch in 0..3 {
                            rgb[ch] += s.color[ch] * w;
                        }
                        for (f, v) in feat.iter_mut().zip(&s.feature) {
                            *f += v * w;
                        }
                        depth_acc += s.depth * w;
                    });
                    for ch in 0..3 {
                        rgb[ch] += t_final * bg[ch];
                    }
                    let alpha = 1.0 - t_final;
                    out.rgb.push(rgb);
                    out.alpha.push(alpha);
                    out.depth.push(if alpha > DEPTH_ALPHA_EPS { depth_acc / alpha } else { 0.0 });
                    k += 1;
                }
            }
            out
        })
        .collect();

    let mut output = RenderOutput::blank(camera.width, camera.height, dim);
    for (tile, res) in tile_results.into_iter().enumerate() {
        let (x0, y0, x1, y1) = grid.bounds(tile);
        let mut k = 0;
        for row in y0..y1 {
            for col in x0..x1 {
                let p = row * camera.width + col;
                output.rgb.data[p] = res.rgb[k];
                output.alpha.data[p] = res.alpha[k];
                output.depth.data[p] = res.depth[k];
                output.feature.pixel_mut(p).copy_from_slice(&res.feature[k * dim..(k + 1) * dim]);
                k += 1;
            }
        }
    }

    Ok(ForwardPass {
        camera: camera.clone(),
        revision: None,
        params,
        splats,
        grid,
        tiles,
        output,
    })
}

/// Forward pass over a scene, tagged with its revision for the backward pass.
pub fn render(scene: &GaussianScene, camera: &Camera) -> Result<ForwardPass> {
    let mut pass = render_params(SceneParams::from_scene(scene), camera)?;
    pass.revision = Some(scene.revision());
    Ok(pass)
}

/// Tiled render of a scene.
pub fn rasterize(scene: &GaussianScene, camera: &Camera) -> Result<RenderOutput> {
    render(scene, camera).map(ForwardPass::into_output)
}

/// Brute-force renderer: every pixel loops over all projected splats in exact
/// depth order with no tiling.
pub fn rasterize_reference(scene: &GaussianScene, camera: &Camera) -> Result<RenderOutput> {
    rasterize_reference_params(&SceneParams::from_scene(scene), camera)
}

pub fn rasterize_reference_params(params: &SceneParams, camera: &Camera) -> Result<RenderOutput> {
    camera.validate()?;
    params.check()?;
    let mut splats: Vec<Splat2D> = params
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_params(g, i, params.sh_degree, camera))
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .expect("finite depth")
            .then(a.source_index.cmp(&b.source_index))
    });
    let dim = params.feature_dim;
    let mut out = RenderOutput::blank(camera.width, camera.height, dim);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let p = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
            let mut transmittance = 1.0;
            let mut rgb = [0.0; 3];
            let mut depth = 0.0;
            let mut feat = vec![0.0; dim];
            for s in &splats {
                if transmittance < MIN_TRANSMITTANCE {
                    break;
                }
                let d = p - s.mean2d;
                let conic = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
                let q = (d.transpose() * conic * d)[(0, 0)];
                let a = (s.alpha * (-0.5 * q).exp()).min(MAX_ALPHA);
                if a < MIN_ALPHA {
                    continue;
                }
                let w = a * transmittance;
                for ch in 0..3 {
                    rgb[ch] += w * s.color[ch];
                }
                for k in 0..dim {
                    feat[k] += w * s.feature[k];
                }
                depth += w * s.depth;
                transmittance *= 1.0 - a;
            }
            let idx = row * camera.width + col;
            let alpha = 1.0 - transmittance;
            out.rgb.data[idx] = [
                rgb[0] + transmittance * params.background[0],
                rgb[1] + transmittance * params.background[1],
                rgb[2] + transmittance * params.background[2],
            ];
            out.alpha.data[idx] = alpha;
            out.depth.data[idx] = if alpha > DEPTH_ALPHA_EPS { depth / alpha } else { 0.0 };
            out.feature.pixel_mut(idx).copy_from_slice(&feat);
        }
    }
    Ok(out)
}
