//! Object-level edits with exact undo, and the random layout augmentation
//! used while distilling features.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ParamGrads;
use crate::scene::{normalize_quat, quat_from_axis_angle, quat_mul, quat_to_matrix, Gaussian, GaussianScene};
use crate::semantics::Selection;

/// What an edit does to its selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditKind {
    Translate {
        translation: [f64; 3],
    },
    /// Rotation by a quaternion `(w, x, y, z)` about `pivot` (default: the
    /// selection centroid).
    Rotate {
        rotation: [f64; 4],
        #[serde(default)]
        pivot: Option<[f64; 3]>,
    },
    /// Uniform scaling about `pivot` (default: the selection centroid).
    Resize {
        scale: f64,
        #[serde(default)]
        pivot: Option<[f64; 3]>,
    },
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOp {
    pub selection: Selection,
    #[serde(flatten)]
    pub kind: EditKind,
}

impl EditOp {
    pub fn translate(selection: Selection, translation: [f64; 3]) -> Self {
        Self {
            selection,
            kind: EditKind::Translate { translation },
        }
    }

    pub fn rotate(selection: Selection, rotation: [f64; 4], pivot: Option<[f64; 3]>) -> Self {
        Self {
            selection,
            kind: EditKind::Rotate { rotation, pivot },
        }
    }

    pub fn resize(selection: Selection, scale: f64, pivot: Option<[f64; 3]>) -> Self {
        Self {
            selection,
            kind: EditKind::Resize { scale, pivot },
        }
    }

    pub fn remove(selection: Selection) -> Self {
        Self {
            selection,
            kind: EditKind::Remove,
        }
    }
}

/// The exact prior values of every Gaussian an edit touched.
#[derive(Debug, Clone, PartialEq)]
pub struct UndoRecord {
    entries: Vec<(usize, Gaussian)>,
}

/// Mean centre of the selected Gaussians.
pub fn centroid(scene: &GaussianScene, indices: &[usize]) -> Vector3<f64> {
    if indices.is_empty() {
        return Vector3::zeros();
    }
    indices.iter().map(|&i| scene.gaussians()[i].center_vec()).sum::<Vector3<f64>>() / indices.len() as f64
}

fn store(v: Vector3<f64>) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be finite")))
    }
}

/// Applies `op` and returns the new scene revision. Unselected Gaussians are
/// not touched.
pub fn apply_edit(scene: &mut GaussianScene, op: &EditOp) -> Result<u64> {
    op.selection.check_current(scene)?;
    let idx = &op.selection.indices;
    let pivot_of = |p: &Option<[f64; 3]>, scene: &GaussianScene| -> Result<Vector3<f64>> {
        match p {
            Some(p) => {
                check_finite(p, "pivot")?;
                Ok(Vector3::from(*p))
            }
            None => Ok(centroid(scene, idx)),
        }
    };
    enum Plan {
        Translate(Vector3<f64>),
        Rotate([f64; 4], Matrix3<f64>, Vector3<f64>),
        Resize(f64, Vector3<f64>),
        Remove,
    }
    let plan = match &op.kind {
        EditKind::Translate { translation } => {
            check_finite(translation, "translation")?;
            Plan::Translate(Vector3::from(*translation))
        }
        EditKind::Rotate { rotation, pivot } => {
            check_finite(rotation, "rotation")?;
            let n = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(Error::invalid("rotation quaternion is zero"));
            }
            let q = normalize_quat(*rotation);
            Plan::Rotate(q, quat_to_matrix(q), pivot_of(pivot, scene)?)
        }
        EditKind::Resize { scale, pivot } => {
            if !(*scale > 0.0 && scale.is_finite()) {
                return Err(Error::invalid(format!("resize factor {scale} must be positive")));
            }
            Plan::Resize(*scale, pivot_of(pivot, scene)?)
        }
        EditKind::Remove => Plan::Remove,
    };

    let entries: Vec<(usize, Gaussian)> = idx.iter().map(|&i| (i, scene.gaussians()[i].clone())).collect();
    let gs = scene.gaussians_mut();
    for &i in idx {
        let g = &mut gs[i];
        let x = g.center_vec();
        match &plan {
            Plan::Translate(t) => g.center = store(x + t),
            Plan::Rotate(q, r, p) => {
                g.center = store(r * (x - p) + p);
                g.rotation = normalize_quat(quat_mul(*q, g.quat())).map(|v| v as f32);
            }
            Plan::Resize(s, p) => {
                g.center = store(p + (x - p) * *s);
                g.scale = g.scale.map(|v| (f64::from(v) * s) as f32);
            }
            Plan::Remove => g.active = false,
        }
    }
    scene.history.push(UndoRecord { entries });
    Ok(scene.revision())
}

/// Reverts the most recent edit bit-exactly.
pub fn undo(scene: &mut GaussianScene) -> Result<u64> {
    let record = scene.history.pop().ok_or_else(|| Error::state("nothing to undo"))?;
    let gs = scene.gaussians_mut();
    for (i, g) in record.entries {
        gs[i] = g;
    }
    Ok(scene.revision())
}

/// Random per-object layout perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub p_remove: f64,
    /// Half-width of the uniform per-axis translation (world units).
    pub translation_range: f64,
    /// Half-width of the uniform rotation about the vertical axis (radians).
    pub rotation_range: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            p_remove: 0.3,
            translation_range: 0.2,
            rotation_range: 15f64.to_radians(),
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// A spec that never changes anything.
    pub fn disabled() -> Self {
        Self {
            p_remove: 0.0,
            translation_range: 0.0,
            rotation_range: 0.0,
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.p_remove == 0.0 && self.translation_range == 0.0 && self.rotation_range == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_remove) {
            return Err(Error::invalid("p_remove must lie in [0, 1]"));
        }
        if !(self.translation_range >= 0.0 && self.rotation_range >= 0.0) {
            return Err(Error::invalid("augmentation ranges must be non-negative"));
        }
        Ok(())
    }
}

/// What the augmentation did to one object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTransform {
    pub indices: Vec<usize>,
    pub removed: bool,
    /// `x ↦ R (x − pivot) + pivot + translation` with `R` from `rotation`.
    pub rotation: [f64; 4],
    pub pivot: Vector3<f64>,
    pub translation: Vector3<f64>,
}

/// A transient, perturbed copy of a scene. The base scene is not modified.
#[derive(Debug, Clone)]
pub struct AugmentedView {
    pub scene: GaussianScene,
    pub transforms: Vec<ObjectTransform>,
}

impl AugmentedView {
    /// Maps gradients taken on the view back to the base parameters: centres
    /// through `Rᵀ`, quaternions through the transpose of left-multiplication
    /// by the object's rotation. Other classes are unaffected by a rigid move.
    pub fn pull_back(&self, grads: &mut ParamGrads) {
        for t in &self.transforms {
            if t.removed {
                continue;
            }
            let rt = quat_to_matrix(t.rotation).transpose();
            let [w, x, y, z] = t.rotation;
            // Left multiplication q ↦ r ⊗ q as a 4×4 matrix, transposed.
            let lt = [[w, x, y, z], [-x, w, z, -y], [-y, -z, w, x], [-z, y, -x, w]];
            for &i in &t.indices {
                let g = Vector3::from(grads.center[i]);
                let back = rt * g;
                grads.center[i] = [back.x, back.y, back.z];
                let gq = grads.rotation[i];
                grads.rotation[i] = [0, 1, 2, 3].map(|r| (0..4).map(|c| lt[r][c] * gq[c]).sum());
            }
        }
    }
}

/// One selection per registered object, over its current members.
pub fn object_selections(scene: &GaussianScene) -> Vec<Selection> {
    (0..scene.objects().len() as i32)
        .map(|id| Selection::object(scene, id))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Independently removes (with probability `p_remove`) or jitters each
/// object. Deterministic in `(spec.seed, step)`.
pub fn layout_augment(scene: &GaussianScene, objects: &[Selection], spec: &AugmentSpec, step: u64) -> Result<AugmentedView> {
    spec.validate()?;
    let mut seen = vec![false; scene.len()];
    for sel in objects {
        sel.check_current(scene)?;
        for &i in &sel.indices {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("gaussian {i} belongs to more than one object")));
            }
        }
    }
    let mut view = scene.snapshot();
    if spec.is_identity() {
        return Ok(AugmentedView {
            scene: view,
            transforms: Vec::new(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(step);
    let mut transforms = Vec::with_capacity(objects.len());
    let gs = view.gaussians_mut();
    for sel in objects {
        // Fixed draw count per object keeps later objects' draws stable.
        let u: f64 = rng.random();
        let jitter: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0);
        let removed = u < spec.p_remove;
        let translation = Vector3::new(jitter[0], jitter[1], jitter[2]) * spec.translation_range;
        let yaw = jitter[3] * spec.rotation_range;
        let rotation = quat_from_axis_angle([0.0, 1.0, 0.0], yaw);
        let pivot = centroid(scene, &sel.indices);
        if removed {
            for &i in &sel.indices {
                gs[i].active = false;
            }
        } else if yaw != 0.0 || translation != Vector3::zeros() {
            let r = quat_to_matrix(rotation);
            for &i in &sel.indices {
                let g = &mut gs[i];
                g.center = store(r * (g.center_vec() - pivot) + pivot + translation);
                g.rotation = normalize_quat(quat_mul(rotation, g.quat())).map(|v| v as f32);
            }
        }
        transforms.push(ObjectTransform {
            indices: sel.indices.clone(),
            removed,
            rotation,
            pivot,
            translation,
        });
    }
    Ok(AugmentedView { scene: view, transforms })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> GaussianScene {
        let mut s = GaussianScene::new(0, 2);
        for i in 0..6 {
            let x = i as f64 * 0.25;
            s.push(Gaussian::isotropic([x, -x, 2.0 + x], 0.1, 0.5, [0.2, 0.4, 0.6], 0, 2)).unwrap();
        }
        s
    }

    #[test]
    fn zero_translation_changes_only_revision() {
        let mut s = scene();
        let before = s.gaussians().to_vec();
        let r0 = s.revision();
        let sel = Selection::from_indices(&s, vec![1, 3]).unwrap();
        let r1 = apply_edit(&mut s, &EditOp::translate(sel, [0.0; 3])).unwrap();
        assert!(r1 > r0);
        assert_eq!(s.gaussians(), &before[..]);
    }

    #[test]
    fn full_turn_returns_centres() {
        let mut s = scene();
        let before = s.gaussians().to_vec();
        let sel = Selection::from_indices(&s, vec![0, 2, 4, 5]).unwrap();
        let q = quat_from_axis_angle([0.3, 1.0, -0.2], 2.0 * std::f64::consts::PI);
        apply_edit(&mut s, &EditOp::rotate(sel, q, None)).unwrap();
        for (a, b) in s.gaussians().iter().zip(&before) {
            assert!((a.center_vec() - b.center_vec()).norm() < 1e-6);
        }
    }

    #[test]
    fn remove_then_undo_is_exact() {
        let mut s = scene();
        let before = s.gaussians().to_vec();
        let sel = Selection::from_indices(&s, vec![2]).unwrap();
        apply_edit(&mut s, &EditOp::remove(sel)).unwrap();
        assert!(!s.gaussians()[2].active);
        undo(&mut s).unwrap();
        assert_eq!(s.gaussians(), &before[..]);
        assert!(undo(&mut s).is_err());
    }

    #[test]
    fn stale_selection_is_rejected() {
        let mut s = scene();
        let sel = Selection::from_indices(&s, vec![0]).unwrap();
        s.push(Gaussian::isotropic([0.0, 0.0, 1.0], 0.1, 0.5, [0.0; 3], 0, 2)).unwrap();
        assert!(matches!(apply_edit(&mut s, &EditOp::remove(sel)), Err(Error::InvalidState(_))));
    }

    #[test]
    fn overlapping_objects_are_rejected() {
        let s = scene();
        let a = Selection::from_indices(&s, vec![0, 1]).unwrap();
        let b = Selection::from_indices(&s, vec![1, 2]).unwrap();
        assert!(layout_augment(&s, &[a, b], &AugmentSpec::default(), 0).is_err());
    }

    #[test]
    fn augmentation_leaves_base_untouched_and_is_seeded() {
        let s = scene();
        let r = s.revision();
        let objs = vec![Selection::from_indices(&s, vec![0, 1, 2]).unwrap()];
        let spec = AugmentSpec {
            p_remove: 0.0,
            ..AugmentSpec::default()
        };
        let a = layout_augment(&s, &objs, &spec, 3).unwrap();
        let b = layout_augment(&s, &objs, &spec, 3).unwrap();
        assert_eq!(a.scene.gaussians(), b.scene.gaussians());
        assert_ne!(a.scene.gaussians()[0], s.gaussians()[0]);
        assert_eq!(a.scene.gaussians()[4], s.gaussians()[4]);
        assert_eq!(s.revision(), r);
    }
}
