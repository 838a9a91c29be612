mod common;

use std::time::Instant;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use splatedit::scene::{quat_from_axis_angle, quat_to_matrix};
use splatedit::{covariance_3d, Error};

#[test]
fn quarter_turn_about_z_swaps_axes() {
    let q = quat_from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
    // Independent construction: R maps x to y.
    let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let oracle = r * Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)) * r.transpose();
    let cov = covariance_3d(&Vector3::new(2.0, 1.0, 1.0), q).unwrap();
    assert!((cov - oracle).abs().max() < 1e-12);
    assert!((cov - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).abs().max() < 1e-12);
}

#[test]
fn off_axis_point_projects_by_hand() {
    let cam = common::camera(128);
    let (u, v, z) = cam.project_point(&Vector3::new(0.5, 0.0, 2.0)).unwrap();
    assert!((u - 89.0).abs() < 1e-12);
    assert_eq!((v, z), (64.0, 2.0));
    let p = cam.lift_pixel(89.0, 64.0, 2.0).unwrap();
    assert!((p - Vector3::new(0.5, 0.0, 2.0)).norm() < 1e-12);
    assert!(matches!(cam.project_point(&Vector3::new(0.0, 0.0, -1.0)), Err(Error::BehindCamera { .. })));
    assert!(cam.lift_pixel(10.0, 10.0, 0.0).is_err());
}

#[test]
fn lift_project_round_trip_on_random_posed_cameras() {
    let start = Instant::now();
    let mut rng = common::rng(11);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let q = common::random_quat(&mut rng);
        let cam = common::camera(128)
            .with_pose(quat_to_matrix(q), Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
        let (u, v) = (rng.random_range(0.0..128.0), rng.random_range(0.0..128.0));
        let d = rng.random_range(0.05..cam.z_far);
        let x = cam.lift_pixel(u, v, d).unwrap();
        let (pu, pv, pd) = cam.project_point(&x).unwrap();
        worst = worst.max((pu - u).abs()).max((pv - v).abs()).max((pd - d).abs());
    }
    assert!(worst < 1e-6, "worst round-trip error {worst}");
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn covariance_is_psd_with_determinant_identity() {
    let start = Instant::now();
    let mut rng = common::rng(12);
    for _ in 0..10_000 {
        // Scales span two decades. Wider spreads make Σ so ill-conditioned that
        // its determinant cannot be represented to 1e-9 in f64 at all.
        let s = Vector3::from_fn(|_, _| rng.random_range(1e-2f64.ln()..1f64.ln()).exp());
        let q = common::random_quat(&mut rng);
        let cov = covariance_3d(&s, q).unwrap();
        assert!((cov - cov.transpose()).abs().max() <= 1e-12 * cov.abs().max());
        let expected = (s.x * s.y * s.z).powi(2);
        let rel = (cov.determinant() - expected).abs() / expected;
        assert!(rel < 1e-9, "determinant relative error {rel} for s {s:?}");
        let eig = SymmetricEigen::new(cov);
        assert!(eig.eigenvalues.min() > -1e-12 * eig.eigenvalues.max());
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
