//! Loss terms, camera schedule and the optimisation loop.

mod adam;
mod loss;

use std::io::Write;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{LearningRates, SparseAdam};
pub use loss::{noise_image, recon_loss, sds_loss_grad};

use crate::camera::{interpolate_camera, Camera};
use crate::editing::{layout_augment, object_selections, AugmentSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::lifting::{estimate_depth, expand_scene, init_scene_from_image, tag_segments, ExpansionReport, LiftConfig};
use crate::priors::{PriorBackends, DEFAULT_CFG_SCALE, T_MAX, T_MIN};
use crate::raster::{self, ParamGrads, RenderGrads};
use crate::scene::GaussianScene;
use crate::semantics::{attach_codec, distill_grads, embedding_step, prepare_targets, DistillTargets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// Yaw of the two imagined views either side of the input view.
    pub yaw_degrees: f64,
    /// Cameras interpolated between the input view and each imagined view.
    pub interpolation_samples: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            yaw_degrees: 15.0,
            interpolation_samples: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_recon: f64,
    pub lambda_sds: f64,
    pub lambda_distill: f64,
    pub cfg_scale: f64,
    pub steps: usize,
    pub lr: LearningRates,
    pub schedule: ScheduleConfig,
    pub augment: AugmentSpec,
    pub seed: u64,
    pub prompt: String,
    /// Width of the per-Gaussian embedding, capped by the number of samples.
    pub codec_dim: usize,
    pub lift: LiftConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_recon: 1.0,
            lambda_sds: 0.01,
            lambda_distill: 1.0,
            cfg_scale: DEFAULT_CFG_SCALE,
            steps: 300,
            lr: LearningRates::default(),
            schedule: ScheduleConfig::default(),
            augment: AugmentSpec::default(),
            seed: 0,
            prompt: "a photo of a scene".into(),
            codec_dim: 16,
            lift: LiftConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda_recon, self.lambda_sds, self.lambda_distill];
        if l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if l.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        if self.codec_dim == 0 {
            return Err(Error::invalid("codec_dim must be positive"));
        }
        if !(self.schedule.yaw_degrees.is_finite()) {
            return Err(Error::invalid("yaw must be finite"));
        }
        self.augment.validate()?;
        self.lift.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraKind {
    Reference,
    Interpolated,
}

/// Reference cameras (the input view, then the imagined views) and the
/// cameras interpolated between the input view and each imagined view.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSchedule {
    pub references: Vec<Camera>,
    pub interpolated: Vec<Camera>,
}

impl CameraSchedule {
    /// Orbits `camera` by ±yaw about `pivot`.
    pub fn around(camera: &Camera, pivot: &Vector3<f64>, cfg: &ScheduleConfig) -> Result<Self> {
        let yaw = cfg.yaw_degrees.to_radians();
        let mut references = vec![camera.clone()];
        if yaw != 0.0 {
            references.push(camera.orbit_yaw(pivot, -yaw));
            references.push(camera.orbit_yaw(pivot, yaw));
        }
        let m = cfg.interpolation_samples;
        let mut interpolated = Vec::new();
        for end in &references[1..] {
            for k in 1..=m {
                interpolated.push(interpolate_camera(camera, end, k as f64 / (m + 1) as f64)?);
            }
        }
        Ok(Self { references, interpolated })
    }

    /// Even steps cycle through the reference cameras, odd steps through the
    /// interpolated ones (references only when there are none).
    pub fn pick(&self, step: u64) -> (CameraKind, usize) {
        if self.interpolated.is_empty() {
            return (CameraKind::Reference, (step % self.references.len() as u64) as usize);
        }
        let half = step / 2;
        if step % 2 == 0 {
            (CameraKind::Reference, (half % self.references.len() as u64) as usize)
        } else {
            (CameraKind::Interpolated, (half % self.interpolated.len() as u64) as usize)
        }
    }

    pub fn camera(&self, kind: CameraKind, index: usize) -> &Camera {
        match kind {
            CameraKind::Reference => &self.references[index],
            CameraKind::Interpolated => &self.interpolated[index],
        }
    }
}

/// Pivot for the imagined views: the input camera's principal ray at the
/// median estimated depth.
pub fn median_depth_pivot(camera: &Camera, depth: &[f64]) -> Result<Vector3<f64>> {
    let mut d: Vec<f64> = depth.iter().copied().filter(|v| *v > 0.0 && v.is_finite()).collect();
    if d.is_empty() {
        return Err(Error::invalid("depth map has no positive values"));
    }
    d.sort_by(f64::total_cmp);
    camera.lift_pixel(camera.cx, camera.cy, d[d.len() / 2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub camera_kind: CameraKind,
    pub camera_index: usize,
    pub recon: f64,
    /// Norm of the SDS pixel gradient; SDS has no loss value.
    pub sds_grad_norm: f64,
    pub distill: f64,
    /// `λ_recon·recon + λ_distill·distill`.
    pub total: f64,
    /// PSNR at each reference camera after the update.
    pub psnr: Vec<f64>,
    pub ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub wall_ms: f64,
}

impl TrainReport {
    /// One JSON object per step.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Per-term results of one step, before weighting.
#[derive(Debug, Clone)]
pub struct StepTerms {
    pub kind: CameraKind,
    pub index: usize,
    pub recon: f64,
    pub recon_grads: Option<ParamGrads>,
    pub sds_grad_norm: f64,
    pub sds_grads: Option<ParamGrads>,
    pub distill: f64,
    /// Embedding gradient of the distillation loss.
    pub distill_grads: Option<ParamGrads>,
}

impl StepTerms {
    /// `λ_recon ∇recon + λ_sds ∇sds` over `(x, s, q, α, c)`.
    pub fn combined(&self, cfg: &TrainConfig, scene: &GaussianScene) -> ParamGrads {
        let mut g = ParamGrads::zeros(scene.len(), scene.gaussians().first().map_or(0, |g| g.sh.len()), scene.embed_dim());
        if let Some(r) = &self.recon_grads {
            g.add_scaled(r, cfg.lambda_recon);
        }
        if let Some(s) = &self.sds_grads {
            g.add_scaled(s, cfg.lambda_sds);
        }
        g.embedding.iter_mut().for_each(|v| *v = 0.0);
        g
    }
}

/// Optimisation state for one scene.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub schedule: CameraSchedule,
    /// Reconstruction target per reference camera.
    pub targets: Vec<Image>,
    pub distill_targets: Vec<DistillTargets>,
    pub expansions: Vec<ExpansionReport>,
    adam: SparseAdam,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, schedule: CameraSchedule, targets: Vec<Image>, scene: &GaussianScene) -> Result<Self> {
        cfg.validate()?;
        if targets.len() != schedule.references.len() {
            return Err(Error::invalid("one target image per reference camera is required"));
        }
        let adam = SparseAdam::new(cfg.lr.clone(), scene.extent());
        Ok(Self {
            cfg,
            schedule,
            targets,
            distill_targets: Vec::new(),
            expansions: Vec::new(),
            adam,
        })
    }

    /// PSNR of the scene against each reference target.
    pub fn reference_psnr(&self, scene: &GaussianScene) -> Result<Vec<f64>> {
        self.schedule
            .references
            .iter()
            .zip(&self.targets)
            .map(|(c, t)| raster::rasterize(scene, c)?.rgb.psnr(t))
            .collect()
    }

    /// Computes the unweighted loss terms of step `step` without changing
    /// the scene.
    pub fn step_terms(&self, scene: &GaussianScene, priors: &PriorBackends, step: u64) -> Result<StepTerms> {
        let cfg = &self.cfg;
        let (kind, index) = self.schedule.pick(step);
        let camera = self.schedule.camera(kind, index);
        let mut terms = StepTerms {
            kind,
            index,
            recon: 0.0,
            recon_grads: None,
            sds_grad_norm: 0.0,
            sds_grads: None,
            distill: 0.0,
            distill_grads: None,
        };
        let augmented = !cfg.augment.is_identity();
        match kind {
            CameraKind::Reference => {
                if cfg.lambda_recon > 0.0 {
                    let pass = raster::render(scene, camera)?;
                    let (l, g) = recon_loss(&pass.output().rgb, &self.targets[index])?;
                    terms.recon = l;
                    terms.recon_grads = Some(pass.backward(scene, &RenderGrads::rgb_only(g))?);
                }
                if cfg.lambda_distill > 0.0 {
                    if let Some(codec) = scene.codec() {
                        let (l, g) = if augmented {
                            let view = layout_augment(scene, &object_selections(scene), &cfg.augment, step)?;
                            let targets = prepare_targets(&raster::rasterize(&view.scene, camera)?.rgb, priors)?;
                            distill_grads(&view.scene, camera, &targets, codec)?
                        } else {
                            distill_grads(scene, camera, &self.distill_targets[index], codec)?
                        };
                        terms.distill = l;
                        terms.distill_grads = Some(g);
                    }
                }
            }
            CameraKind::Interpolated => {
                if cfg.lambda_sds > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(step);
                    let t = rng.random_range(T_MIN..=T_MAX);
                    let noise_seed: u64 = rng.random();
                    let view = layout_augment(scene, &object_selections(scene), &cfg.augment, step)?;
                    let pass = raster::render(&view.scene, camera)?;
                    let g = sds_loss_grad(&pass.output().rgb, &cfg.prompt, priors, cfg.cfg_scale, t, noise_seed)?;
                    terms.sds_grad_norm = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
                    let mut grads = pass.backward(&view.scene, &RenderGrads::rgb_only(g))?;
                    view.pull_back(&mut grads);
                    terms.sds_grads = Some(grads);
                }
            }
        }
        Ok(terms)
    }
}

/// One optimisation step: weighted geometry and appearance gradients go to
/// Adam; embeddings take a gradient step on the distillation loss alone.
pub fn train_step(scene: &mut GaussianScene, trainer: &mut Trainer, priors: &PriorBackends, step: u64) -> Result<StepRecord> {
    let start = Instant::now();
    let terms = trainer.step_terms(scene, priors, step)?;
    let grads = terms.combined(&trainer.cfg, scene);
    trainer.adam.step(scene, &grads);
    if let Some(g) = &terms.distill_grads {
        embedding_step(scene, g, trainer.cfg.lr.embedding);
    }
    let cfg = &trainer.cfg;
    Ok(StepRecord {
        step,
        camera_kind: terms.kind,
        camera_index: terms.index,
        recon: terms.recon,
        sds_grad_norm: terms.sds_grad_norm,
        distill: terms.distill,
        total: cfg.lambda_recon * terms.recon + cfg.lambda_distill * terms.distill,
        psnr: trainer.reference_psnr(scene)?,
        ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Lifts `image`, expands it over the imagined views, fits the embedding
/// codec and returns the scene with a trainer ready to step.
pub fn prepare(image: &Image, camera: &Camera, cfg: &TrainConfig, priors: &PriorBackends) -> Result<(GaussianScene, Trainer)> {
    cfg.validate()?;
    priors.condition_on(image);
    let depth = estimate_depth(image, priors, &cfg.lift)?;
    let mut scene = init_scene_from_image(image, &depth, camera, &cfg.lift)?;
    tag_segments(&mut scene, image, priors, cfg.lift.pixel_stride)?;
    let pivot = median_depth_pivot(camera, &depth.data)?;
    let schedule = CameraSchedule::around(camera, &pivot, &cfg.schedule)?;

    let mut targets = vec![image.clone()];
    let mut expansions = Vec::new();
    for novel in &schedule.references[1..] {
        let report = expand_scene(&mut scene, novel, priors, &cfg.lift)?;
        targets.push(report.inpainted.clone());
        expansions.push(report);
    }

    let distill_targets = targets.iter().map(|t| prepare_targets(t, priors)).collect::<Result<Vec<_>>>()?;
    attach_codec(&mut scene, &distill_targets, cfg.codec_dim)?;

    let mut trainer = Trainer::new(cfg.clone(), schedule, targets, &scene)?;
    trainer.distill_targets = distill_targets;
    trainer.expansions = expansions;
    Ok((scene, trainer))
}

/// Full pipeline: prepare, then `cfg.steps` training steps. `on_step` sees
/// the scene after each step and stops the run by returning false.
pub fn optimize_with(
    image: &Image,
    camera: &Camera,
    cfg: &TrainConfig,
    priors: &PriorBackends,
    mut on_step: impl FnMut(&GaussianScene, &StepRecord) -> bool,
) -> Result<(GaussianScene, Trainer, TrainReport)> {
    let start = Instant::now();
    let (mut scene, mut trainer) = prepare(image, camera, cfg, priors)?;
    let mut report = TrainReport::default();
    for step in 0..cfg.steps as u64 {
        let rec = train_step(&mut scene, &mut trainer, priors, step)?;
        log::debug!("step {step} recon {:.4} distill {:.4}", rec.recon, rec.distill);
        let go_on = on_step(&scene, &rec);
        report.steps.push(rec);
        if !go_on {
            break;
        }
    }
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((scene, trainer, report))
}

pub fn optimize(image: &Image, camera: &Camera, cfg: &TrainConfig, priors: &PriorBackends) -> Result<(GaussianScene, TrainReport)> {
    let (scene, _, report) = optimize_with(image, camera, cfg, priors, |_, _| true)?;
    Ok((scene, report))
}
