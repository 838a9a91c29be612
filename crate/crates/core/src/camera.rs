//! Pinhole cameras: projection, pixel lifting and pose interpolation.
//!
//! `world_to_camera` maps world points into a camera frame with +x right,
//! +y down and +z along the viewing direction; depth is camera-frame z.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Rotation block of the world-to-camera transform.
    pub rotation: Matrix3<f64>,
    /// Translation of the world-to-camera transform.
    pub translation: Vector3<f64>,
    pub z_near: f64,
    pub z_far: f64,
}

/// Wire form: intrinsics plus a row-major 4×4 world-to-camera matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: [[f64; 4]; 4],
    #[serde(default = "default_near")]
    pub z_near: f64,
    #[serde(default = "default_far")]
    pub z_far: f64,
}

fn default_near() -> f64 {
    Camera::DEFAULT_NEAR
}

fn default_far() -> f64 {
    Camera::DEFAULT_FAR
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        let m = j.world_to_camera;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid("world_to_camera last row must be [0, 0, 0, 1]"));
        }
        let rotation = Matrix3::from_fn(|r, c| m[r][c]);
        let translation = Vector3::new(m[0][3], m[1][3], m[2][3]);
        let cam = Camera {
            fx: j.fx,
            fy: j.fy,
            cx: j.cx,
            cy: j.cy,
            width: j.width,
            height: j.height,
            rotation,
            translation,
            z_near: j.z_near,
            z_far: j.z_far,
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let m = c.world_to_camera();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (col, v) in row.iter_mut().enumerate() {
                *v = m[(r, col)];
            }
        }
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_to_camera: rows,
            z_near: c.z_near,
            z_far: c.z_far,
        }
    }
}

impl Camera {
    pub const DEFAULT_NEAR: f64 = 0.01;
    pub const DEFAULT_FAR: f64 = 100.0;

    /// Camera at the world origin looking down +z.
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            z_near: Self::DEFAULT_NEAR,
            z_far: Self::DEFAULT_FAR,
        }
    }

    /// Centred principal point with the given horizontal field of view (radians).
    pub fn with_fov(width: usize, height: usize, fov_x: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn with_pose(mut self, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        self.rotation = rotation;
        self.translation = translation;
        self
    }

    pub fn with_depth_range(mut self, z_near: f64, z_far: f64) -> Self {
        self.z_near = z_near;
        self.z_far = z_far;
        self
    }

    /// Pose looking from `eye` toward `target`; `up` is the world direction that
    /// should appear toward the top of the image.
    pub fn look_at(mut self, eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::invalid("look_at: eye and target coincide"));
        }
        let z = forward.normalize();
        let x = (-up).cross(&z);
        if x.norm() < 1e-12 {
            return Err(Error::invalid("look_at: up is parallel to the view direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        self.translation = -(rotation * eye);
        self.rotation = rotation;
        Ok(self)
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn world_to_camera(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be non-zero"));
        }
        if !(self.z_near > 0.0 && self.z_near < self.z_far) {
            return Err(Error::invalid("depth range must satisfy 0 < z_near < z_far"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(err <= ORTHO_TOL) || self.rotation.determinant() < 0.0 {
            return Err(Error::invalid("rotation block is not a proper orthonormal matrix"));
        }
        Ok(())
    }

    #[inline]
    pub fn to_camera_frame(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Projects a world point to `(u, v, z)`.
    pub fn project_point(&self, x: &Vector3<f64>) -> Result<(f64, f64, f64)> {
        let t = self.to_camera_frame(x);
        if !(t.z > 0.0) {
            return Err(Error::BehindCamera { z: t.z });
        }
        Ok((self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy, t.z))
    }

    /// Back-projects pixel coordinates at camera-frame depth `d` into the world.
    pub fn lift_pixel(&self, u: f64, v: f64, d: f64) -> Result<Vector3<f64>> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::invalid(format!("lift depth must be positive, got {d}")));
        }
        let t = Vector3::new((u - self.cx) / self.fx * d, (v - self.cy) / self.fy * d, d);
        Ok(self.rotation.transpose() * (t - self.translation))
    }

    /// Same intrinsics, resolution and depth range.
    pub fn shares_intrinsics(&self, other: &Camera) -> bool {
        self.fx == other.fx
            && self.fy == other.fy
            && self.cx == other.cx
            && self.cy == other.cy
            && self.width == other.width
            && self.height == other.height
            && self.z_near == other.z_near
            && self.z_far == other.z_far
    }

    /// Orbits the camera about a vertical (world y) axis through `pivot`.
    pub fn orbit_yaw(&self, pivot: &Vector3<f64>, yaw: f64) -> Camera {
        let spin = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
        let center = pivot + spin * (self.center() - pivot);
        let rotation = self.rotation * spin.matrix().transpose();
        let mut out = self.clone();
        out.translation = -(rotation * center);
        out.rotation = rotation;
        out
    }
}

/// Interpolates between two poses sharing intrinsics: slerp on rotation,
/// linear on translation. The endpoints return exact copies.
pub fn interpolate_camera(c0: &Camera, c1: &Camera, t: f64) -> Result<Camera> {
    if !c0.shares_intrinsics(c1) {
        return Err(Error::invalid("interpolate_camera: intrinsics or resolution differ"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("interpolation parameter {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(c0.clone());
    }
    if t == 1.0 {
        return Ok(c1.clone());
    }
    let q0 = rotation_to_quat(&c0.rotation);
    let q1 = rotation_to_quat(&c1.rotation);
    let q = q0.slerp(&q1, t);
    let mut out = c0.clone();
    out.rotation = *q.to_rotation_matrix().matrix();
    out.translation = c0.translation * (1.0 - t) + c1.translation * t;
    Ok(out)
}

pub(crate) fn rotation_to_quat(m: &Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Camera {
        Camera::new(100.0, 100.0, 64.0, 64.0, 128, 128)
    }

    #[test]
    fn project_principal_ray() {
        let (u, v, z) = cam().project_point(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((u, v, z), (64.0, 64.0, 1.0));
    }

    #[test]
    fn project_off_axis() {
        // u = 100 * 0.5 / 2 + 64 = 89
        let (u, v, z) = cam().project_point(&Vector3::new(0.5, 0.0, 2.0)).unwrap();
        assert!((u - 89.0).abs() < 1e-12 && v == 64.0 && z == 2.0);
    }

    #[test]
    fn project_behind_camera_fails() {
        assert!(matches!(
            cam().project_point(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
        assert!(cam().project_point(&Vector3::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn lift_examples() {
        let c = cam();
        assert_eq!(c.lift_pixel(64.0, 64.0, 1.0).unwrap(), Vector3::new(0.0, 0.0, 1.0));
        let p = c.lift_pixel(89.0, 64.0, 2.0).unwrap();
        assert!((p - Vector3::new(0.5, 0.0, 2.0)).norm() < 1e-12);
        assert!(c.lift_pixel(10.0, 10.0, 0.0).is_err());
        assert!(c.lift_pixel(10.0, 10.0, -1.0).is_err());
    }

    #[test]
    fn lift_project_round_trip_posed_camera() {
        let c = cam()
            .look_at(Vector3::new(1.0, -0.5, -2.0), Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, -1.0, 0.0))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (u, v, d) = (rng.random_range(0.0..128.0), rng.random_range(0.0..128.0), rng.random_range(0.1..100.0));
            let p = c.lift_pixel(u, v, d).unwrap();
            let (u2, v2, d2) = c.project_point(&p).unwrap();
            assert!((u - u2).abs() < 1e-6 && (v - v2).abs() < 1e-6 && (d - d2).abs() < 1e-6);
        }
    }

    #[test]
    fn look_at_identity_pose() {
        let c = cam()
            .look_at(Vector3::zeros(), Vector3::new(0.0, 0.0, 5.0), Vector3::new(0.0, -1.0, 0.0))
            .unwrap();
        assert!((c.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(c.translation.norm() < 1e-12);
    }

    #[test]
    fn interpolate_endpoints_are_exact() {
        let c0 = cam();
        let c1 = cam().orbit_yaw(&Vector3::new(0.0, 0.0, 3.0), 0.4);
        assert_eq!(interpolate_camera(&c0, &c1, 0.0).unwrap(), c0);
        assert_eq!(interpolate_camera(&c0, &c1, 1.0).unwrap(), c1);
    }

    #[test]
    fn interpolate_halves_rotation_angle() {
        let c0 = cam();
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), 60f64.to_radians());
        let c1 = cam().with_pose(*r.matrix(), Vector3::zeros());
        let mid = interpolate_camera(&c0, &c1, 0.5).unwrap();
        let expect = Rotation3::from_axis_angle(&Vector3::y_axis(), 30f64.to_radians());
        assert!((mid.rotation - expect.matrix()).abs().max() < 1e-6);
    }

    #[test]
    fn interpolate_rejects_mismatched_intrinsics() {
        let mut c1 = cam();
        c1.fx = 120.0;
        assert!(interpolate_camera(&cam(), &c1, 0.5).is_err());
    }

    #[test]
    fn interpolated_rotation_stays_orthonormal() {
        let c0 = cam().orbit_yaw(&Vector3::new(0.0, 0.0, 2.0), -0.7);
        let c1 = cam()
            .look_at(Vector3::new(2.0, -1.0, 0.0), Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.0, -1.0, 0.0))
            .unwrap();
        for i in 0..=100 {
            let c = interpolate_camera(&c0, &c1, i as f64 / 100.0).unwrap();
            c.validate().unwrap();
        }
    }

    #[test]
    fn json_round_trip() {
        let c = cam().orbit_yaw(&Vector3::new(0.0, 0.0, 2.0), 0.3);
        let s = serde_json::to_string(&c).unwrap();
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn json_rejects_non_rigid_matrix() {
        let mut j: CameraJson = cam().into();
        j.world_to_camera[0][0] = 2.0;
        assert!(Camera::try_from(j).is_err());
    }
}
