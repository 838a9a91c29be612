//! Gaussians, scenes and the closed-form geometry shared by every module.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::editing::UndoRecord;
use crate::error::{Error, Result};
use crate::semantics::EmbeddingCodec;

/// Tolerance on `|‖q‖ − 1|` accepted by the geometry helpers.
pub const QUAT_TOL: f64 = 1e-6;

/// Number of SH coefficients per colour channel for a given degree.
pub const fn sh_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// One anisotropic 3D Gaussian.
///
/// Parameters are stored in `f32`, the precision of the on-disk format, and
/// promoted to `f64` for rendering and differentiation. `sh` is laid out
/// coefficient-major: `sh[k * 3 + channel]`. At degree 0 the single
/// coefficient is the RGB colour itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub center: [f32; 3],
    pub scale: [f32; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub opacity: f32,
    pub sh: Vec<f32>,
    pub embedding: Vec<f32>,
    /// `-1` when unassigned.
    pub object_id: i32,
    /// Soft-removal flag; inactive Gaussians are never rendered or selected.
    pub active: bool,
}

impl Gaussian {
    /// Isotropic, identity-rotation Gaussian with colour `rgb`.
    pub fn isotropic(center: [f64; 3], radius: f64, opacity: f64, rgb: [f64; 3], sh_degree: usize, embed_dim: usize) -> Self {
        let mut sh = vec![0.0; 3 * sh_coeffs(sh_degree)];
        for k in 0..3 {
            sh[k] = rgb[k] as f32;
        }
        Self {
            center: center.map(|v| v as f32),
            scale: [radius as f32; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: opacity as f32,
            sh,
            embedding: vec![0.0; embed_dim],
            object_id: -1,
            active: true,
        }
    }

    pub fn center_vec(&self) -> Vector3<f64> {
        Vector3::new(f64::from(self.center[0]), f64::from(self.center[1]), f64::from(self.center[2]))
    }

    pub fn scale_vec(&self) -> Vector3<f64> {
        Vector3::new(f64::from(self.scale[0]), f64::from(self.scale[1]), f64::from(self.scale[2]))
    }

    pub fn quat(&self) -> [f64; 4] {
        self.rotation.map(f64::from)
    }

    /// DC colour (exact at SH degree 0).
    pub fn base_color(&self) -> [f64; 3] {
        [f64::from(self.sh[0]), f64::from(self.sh[1]), f64::from(self.sh[2])]
    }

    pub fn set_base_color(&mut self, rgb: [f64; 3]) {
        for k in 0..3 {
            self.sh[k] = rgb[k] as f32;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity.is_finite()
            && self.sh.iter().all(|v| v.is_finite())
            && self.embedding.iter().all(|v| v.is_finite())
    }

    /// Renormalises the stored quaternion in `f64` and rounds back.
    pub fn normalize_rotation(&mut self) {
        let q = normalize_quat(self.quat());
        self.rotation = q.map(|v| v as f32);
    }
}

/// A named object that `object_id` values index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub label: String,
}

/// The editable scene: Gaussians plus background, object table, codec and
/// undo history. Every mutation goes through a method that bumps `revision`.
#[derive(Debug, Clone)]
pub struct GaussianScene {
    gaussians: Vec<Gaussian>,
    sh_degree: usize,
    embed_dim: usize,
    pub background: [f64; 3],
    objects: Vec<ObjectInfo>,
    codec: Option<EmbeddingCodec>,
    revision: u64,
    /// Revision of the last change to the Gaussian count or ordering.
    layout_revision: u64,
    pub(crate) history: Vec<UndoRecord>,
}

impl GaussianScene {
    pub fn new(sh_degree: usize, embed_dim: usize) -> Self {
        assert!(sh_degree <= 3, "SH degree above 3 is not supported");
        Self {
            gaussians: Vec::new(),
            sh_degree,
            embed_dim,
            background: [0.0; 3],
            objects: Vec::new(),
            codec: None,
            revision: 0,
            layout_revision: 0,
            history: Vec::new(),
        }
    }

    pub fn with_background(mut self, rgb: [f64; 3]) -> Self {
        self.background = rgb;
        self
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    /// Mutable access to parameters; bumps the revision.
    pub fn gaussians_mut(&mut self) -> &mut [Gaussian] {
        self.touch();
        &mut self.gaussians
    }

    /// Mutable access without a revision bump; callers touch when they change something.
    pub(crate) fn gaussians_untracked(&mut self) -> &mut [Gaussian] {
        &mut self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.gaussians.iter().filter(|g| g.active).count()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn layout_revision(&self) -> u64 {
        self.layout_revision
    }

    pub fn objects(&self) -> &[ObjectInfo] {
        &self.objects
    }

    pub fn codec(&self) -> Option<&EmbeddingCodec> {
        self.codec.as_ref()
    }

    /// Copy of the scene without its undo history.
    pub fn snapshot(&self) -> GaussianScene {
        GaussianScene {
            gaussians: self.gaussians.clone(),
            sh_degree: self.sh_degree,
            embed_dim: self.embed_dim,
            background: self.background,
            objects: self.objects.clone(),
            codec: self.codec.clone(),
            revision: self.revision,
            layout_revision: self.layout_revision,
            history: Vec::new(),
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub(crate) fn touch(&mut self) {
        self.revision += 1;
    }

    fn check_gaussian(&self, g: &Gaussian) -> Result<()> {
        if g.sh.len() != 3 * sh_coeffs(self.sh_degree) {
            return Err(Error::invalid(format!(
                "gaussian has {} SH values, scene degree {} needs {}",
                g.sh.len(),
                self.sh_degree,
                3 * sh_coeffs(self.sh_degree)
            )));
        }
        if g.embedding.len() != self.embed_dim {
            return Err(Error::invalid(format!(
                "embedding width {} does not match scene width {}",
                g.embedding.len(),
                self.embed_dim
            )));
        }
        if !(g.scale.iter().all(|&s| s > 0.0) && g.opacity > 0.0 && g.opacity < 1.0) {
            return Err(Error::invalid("scale must be positive and opacity in (0, 1)"));
        }
        if g.object_id >= 0 && g.object_id as usize >= self.objects.len() {
            return Err(Error::invalid(format!("object id {} is not registered", g.object_id)));
        }
        Ok(())
    }

    pub fn push(&mut self, g: Gaussian) -> Result<usize> {
        self.check_gaussian(&g)?;
        self.gaussians.push(g);
        self.touch();
        self.layout_revision = self.revision;
        Ok(self.gaussians.len() - 1)
    }

    pub fn extend(&mut self, gs: impl IntoIterator<Item = Gaussian>) -> Result<usize> {
        let mut added = 0;
        for g in gs {
            self.check_gaussian(&g)?;
            self.gaussians.push(g);
            added += 1;
        }
        if added > 0 {
            self.touch();
            self.layout_revision = self.revision;
        }
        Ok(added)
    }

    pub fn register_object(&mut self, label: impl Into<String>) -> i32 {
        self.objects.push(ObjectInfo { label: label.into() });
        self.touch();
        (self.objects.len() - 1) as i32
    }

    pub fn set_codec(&mut self, codec: EmbeddingCodec) -> Result<()> {
        if codec.compressed_dim() != self.embed_dim {
            return Err(Error::invalid(format!(
                "codec width {} does not match scene embedding width {}",
                codec.compressed_dim(),
                self.embed_dim
            )));
        }
        self.codec = Some(codec);
        self.touch();
        Ok(())
    }

    /// Changes the embedding width, zeroing every embedding and dropping the codec.
    pub fn reset_embeddings(&mut self, embed_dim: usize) {
        self.embed_dim = embed_dim;
        for g in &mut self.gaussians {
            g.embedding = vec![0.0; embed_dim];
        }
        self.codec = None;
        self.touch();
    }

    /// Indices of Gaussians carrying `object_id`.
    pub fn object_members(&self, object_id: i32) -> Vec<usize> {
        self.gaussians
            .iter()
            .enumerate()
            .filter(|(_, g)| g.object_id == object_id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rebuilds a scene from persisted parts: revision 0, empty history.
    pub(crate) fn from_parts(
        gaussians: Vec<Gaussian>,
        sh_degree: usize,
        embed_dim: usize,
        background: [f64; 3],
        objects: Vec<ObjectInfo>,
        codec: Option<EmbeddingCodec>,
    ) -> Result<Self> {
        let mut scene = GaussianScene::new(sh_degree, embed_dim).with_background(background);
        scene.objects = objects;
        for g in &gaussians {
            scene.check_gaussian(g)?;
        }
        scene.gaussians = gaussians;
        scene.codec = codec;
        Ok(scene)
    }

    /// Mean Gaussian centre distance from the centroid, at least 1.
    pub fn extent(&self) -> f64 {
        if self.gaussians.is_empty() {
            return 1.0;
        }
        let n = self.gaussians.len() as f64;
        let centroid = self.gaussians.iter().map(Gaussian::center_vec).sum::<Vector3<f64>>() / n;
        let spread = self.gaussians.iter().map(|g| (g.center_vec() - centroid).norm()).sum::<f64>() / n;
        spread.max(1.0)
    }
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        q.map(|v| v / n)
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_from_axis_angle(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (s, c) = (0.5 * angle).sin_cos();
    [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]
}

/// Σ = R diag(s)² Rᵀ.
pub fn covariance_3d(scale: &Vector3<f64>, q: [f64; 4]) -> Result<Matrix3<f64>> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() <= QUAT_TOL) {
        return Err(Error::invalid(format!("quaternion norm {norm} is not 1")));
    }
    if !scale.iter().all(|&s| s > 0.0) {
        return Err(Error::invalid("scale must be componentwise positive"));
    }
    let r = quat_to_matrix(q);
    let s2 = Matrix3::from_diagonal(&scale.component_mul(scale));
    Ok(r * s2 * r.transpose())
}
