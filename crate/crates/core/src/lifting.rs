//! Pixel lifting and scene expansion over imagined views.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, Mask};
use crate::priors::PriorBackends;
use crate::raster::{self, RenderOutput};
use crate::scene::{Gaussian, GaussianScene};

/// Alpha below which a rendered pixel counts as a hole.
pub const DEFAULT_TAU_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiftConfig {
    pub pixel_stride: usize,
    pub init_opacity_range: (f64, f64),
    /// Gaussian radius is `scale_factor · depth / fx`, i.e. in pixel units.
    pub scale_factor: f64,
    pub rng_seed: u64,
    pub tau_alpha: f64,
    pub sh_degree: usize,
    /// Range the estimated relative depth is affinely mapped onto, nearest
    /// first. `None` uses the estimate as metric depth.
    pub depth_range: Option<(f64, f64)>,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            pixel_stride: 1,
            init_opacity_range: (0.9, 0.99),
            scale_factor: 0.4,
            rng_seed: 0,
            tau_alpha: DEFAULT_TAU_ALPHA,
            sh_degree: 0,
            depth_range: Some((0.5, 10.0)),
        }
    }
}

impl LiftConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.init_opacity_range;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::invalid(format!("opacity range ({lo}, {hi}) must satisfy 0 < lo < hi < 1")));
        }
        if self.pixel_stride == 0 {
            return Err(Error::invalid("pixel stride must be at least 1"));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return Err(Error::invalid("scale factor must be positive"));
        }
        if !(self.tau_alpha > 0.0 && self.tau_alpha < 1.0) {
            return Err(Error::invalid("tau_alpha must lie in (0, 1)"));
        }
        if let Some((near, far)) = self.depth_range {
            if !(near > 0.0 && near < far && far.is_finite()) {
                return Err(Error::invalid("depth range must satisfy 0 < near < far"));
            }
        }
        if self.sh_degree > 3 {
            return Err(Error::invalid("SH degree above 3 is not supported"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionReport {
    pub hole_pixel_count: usize,
    pub added_gaussian_count: usize,
    pub novel_camera: Camera,
    /// Inpainted RGB at the novel view; the reconstruction target there.
    pub inpainted: Image,
}

fn lifted_gaussian(
    camera: &Camera,
    col: usize,
    row: usize,
    depth: f64,
    rgb: [f64; 3],
    cfg: &LiftConfig,
    embed_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Gaussian> {
    let x = camera.lift_pixel(col as f64 + 0.5, row as f64 + 0.5, depth)?;
    let (lo, hi) = cfg.init_opacity_range;
    let opacity = rng.random_range(lo..hi);
    let rgb = rgb.map(|c| c.clamp(0.0, 1.0));
    Ok(Gaussian::isotropic(
        [x.x, x.y, x.z],
        cfg.scale_factor * depth / camera.fx,
        opacity,
        rgb,
        cfg.sh_degree,
        embed_dim,
    ))
}

/// One Gaussian per sampled pixel, placed at the pixel's lifted depth.
pub fn init_scene_from_image(image: &Image, depth: &DepthMap, camera: &Camera, cfg: &LiftConfig) -> Result<GaussianScene> {
    cfg.validate()?;
    camera.validate()?;
    if image.width != camera.width || image.height != camera.height {
        return Err(Error::invalid("image resolution differs from the camera"));
    }
    if depth.width != camera.width || depth.height != camera.height {
        return Err(Error::invalid("depth resolution differs from the camera"));
    }
    let s = cfg.pixel_stride;
    if camera.width % s != 0 || camera.height % s != 0 {
        return Err(Error::invalid(format!(
            "pixel stride {s} does not divide {}x{}",
            camera.width, camera.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut scene = GaussianScene::new(cfg.sh_degree, 0);
    let mut gs = Vec::with_capacity(camera.pixel_count() / (s * s));
    for row in (0..camera.height).step_by(s) {
        for col in (0..camera.width).step_by(s) {
            let d = depth.get(col, row);
            gs.push(lifted_gaussian(camera, col, row, d, image.get(col, row), cfg, 0, &mut rng)?);
        }
    }
    scene.extend(gs)?;
    Ok(scene)
}

/// True where the render is less than `tau_alpha` opaque.
pub fn hole_mask(render: &RenderOutput, tau_alpha: f64) -> Mask {
    let a = &render.alpha;
    Mask {
        width: a.width,
        height: a.height,
        data: a.data.iter().map(|&v| v < tau_alpha).collect(),
    }
}

/// Fills the holes seen from `novel_camera`: inpaint RGB, complete depth with
/// the covered pixels held fixed, then lift exactly the hole pixels.
pub fn expand_scene(scene: &mut GaussianScene, novel_camera: &Camera, priors: &PriorBackends, cfg: &LiftConfig) -> Result<ExpansionReport> {
    cfg.validate()?;
    let render = raster::rasterize(scene, novel_camera)?;
    let holes = hole_mask(&render, cfg.tau_alpha);
    let hole_pixel_count = holes.count();
    if hole_pixel_count == 0 {
        return Ok(ExpansionReport {
            hole_pixel_count,
            added_gaussian_count: 0,
            novel_camera: novel_camera.clone(),
            inpainted: render.rgb,
        });
    }
    let rgb = priors.inpaint_rgb(&render.rgb, &holes)?;
    let depth = priors.inpaint_depth(&render.depth, &holes.not(), &rgb)?;

    // Streams keyed by scene size keep successive expansions independent.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(scene.len() as u64 + 1);
    let mut added = Vec::with_capacity(hole_pixel_count);
    let w = novel_camera.width;
    for (p, _) in holes.data.iter().enumerate().filter(|(_, &h)| h) {
        let d = depth.data[p];
        if !(d > novel_camera.z_near && d < novel_camera.z_far) {
            continue;
        }
        let (col, row) = (p % w, p / w);
        added.push(lifted_gaussian(novel_camera, col, row, d, rgb.data[p], cfg, scene.embed_dim(), &mut rng)?);
    }
    let added_gaussian_count = scene.extend(added)?;
    Ok(ExpansionReport {
        hole_pixel_count,
        added_gaussian_count,
        novel_camera: novel_camera.clone(),
        inpainted: rgb,
    })
}

/// Estimated depth, normalised per `cfg.depth_range`.
pub fn estimate_depth(image: &Image, priors: &PriorBackends, cfg: &LiftConfig) -> Result<DepthMap> {
    let depth = priors.estimate_depth(image)?;
    Ok(match cfg.depth_range {
        Some((near, far)) => depth.normalize_to_range(near, far),
        None => depth,
    })
}

/// Lifts with estimated depth and tags every Gaussian with its segment.
pub fn lift_image(image: &Image, camera: &Camera, priors: &PriorBackends, cfg: &LiftConfig) -> Result<GaussianScene> {
    let depth = estimate_depth(image, priors, cfg)?;
    let mut scene = init_scene_from_image(image, &depth, camera, cfg)?;
    tag_segments(&mut scene, image, priors, cfg.pixel_stride)?;
    Ok(scene)
}

/// Registers one object per segment of `image` and sets the object id of the
/// first Gaussians, which must be a stride-`stride` lift of `image`. The
/// largest segment is registered first, as "background".
pub fn tag_segments(scene: &mut GaussianScene, image: &Image, priors: &PriorBackends, stride: usize) -> Result<()> {
    let mut masks = priors.segment(image)?;
    masks.sort_by_key(|m| std::cmp::Reverse(m.count()));
    let mut owner = vec![-1i32; image.width * image.height];
    for (k, mask) in masks.iter().enumerate() {
        let id = scene.register_object(if k == 0 { "background".to_string() } else { format!("segment {k}") });
        for (o, _) in owner.iter_mut().zip(&mask.data).filter(|(o, &m)| m && **o < 0) {
            *o = id;
        }
    }
    let s = stride;
    let w = image.width;
    let pixels: Vec<usize> = (0..image.height)
        .step_by(s)
        .flat_map(|row| (0..w).step_by(s).map(move |col| row * w + col))
        .collect();
    for (g, p) in scene.gaussians_mut().iter_mut().zip(pixels) {
        g.object_id = owner[p];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: usize, h: usize) -> Camera {
        Camera::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h)
    }

    #[test]
    fn two_by_two_lifts_four_points() {
        let c = cam(2, 2);
        let img = Image::filled(2, 2, [0.5; 3]);
        let s = init_scene_from_image(&img, &DepthMap::filled(2, 2, 1.0), &c, &LiftConfig::default()).unwrap();
        assert_eq!(s.len(), 4);
        for g in s.gaussians() {
            assert_eq!(g.center[2], 1.0);
            assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
            assert!(g.embedding.is_empty());
        }
    }

    #[test]
    fn stride_must_divide_resolution() {
        let c = cam(6, 6);
        let cfg = LiftConfig {
            pixel_stride: 4,
            ..LiftConfig::default()
        };
        let img = Image::filled(6, 6, [0.5; 3]);
        assert!(init_scene_from_image(&img, &DepthMap::filled(6, 6, 1.0), &c, &cfg).is_err());
    }

    #[test]
    fn opacity_is_seeded_and_in_range() {
        let c = cam(8, 8);
        let img = Image::filled(8, 8, [0.2; 3]);
        let d = DepthMap::filled(8, 8, 2.0);
        let cfg = LiftConfig::default();
        let a = init_scene_from_image(&img, &d, &c, &cfg).unwrap();
        let b = init_scene_from_image(&img, &d, &c, &cfg).unwrap();
        assert_eq!(a.gaussians(), b.gaussians());
        assert!(a.gaussians().iter().all(|g| (0.9..0.99).contains(&f64::from(g.opacity))));
    }

    #[test]
    fn resolution_mismatch_is_rejected() {
        let img = Image::filled(4, 4, [0.5; 3]);
        assert!(init_scene_from_image(&img, &DepthMap::filled(4, 4, 1.0), &cam(4, 3), &LiftConfig::default()).is_err());
    }

    #[test]
    fn empty_and_full_hole_masks() {
        let c = cam(16, 16);
        let empty = raster::rasterize(&GaussianScene::new(0, 0), &c).unwrap();
        assert_eq!(hole_mask(&empty, 0.5).count(), 256);
        let img = Image::filled(16, 16, [0.5; 3]);
        let s = init_scene_from_image(&img, &DepthMap::filled(16, 16, 1.0), &c, &LiftConfig::default()).unwrap();
        let full = raster::rasterize(&s, &c).unwrap();
        assert_eq!(hole_mask(&full, 0.5).count(), 0);
    }

    #[test]
    fn no_holes_means_no_change() {
        let c = cam(16, 16);
        let img = Image::filled(16, 16, [0.5; 3]);
        let mut s = init_scene_from_image(&img, &DepthMap::filled(16, 16, 1.0), &c, &LiftConfig::default()).unwrap();
        let before = s.gaussians().to_vec();
        let r = expand_scene(&mut s, &c, &PriorBackends::mock(), &LiftConfig::default()).unwrap();
        assert_eq!(r.added_gaussian_count, 0);
        assert_eq!(s.gaussians(), &before[..]);
    }
}
