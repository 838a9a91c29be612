mod common;

use std::time::Instant;

use common::fd::*;
use splatedit::raster::{render_params, SceneParams};
use splatedit::trainer::recon_loss;
use splatedit::{render, Gaussian, GaussianScene, Image, RenderGrads};

#[test]
fn backward_matches_central_differences() {
    let start = Instant::now();
    let camera = smooth_camera();
    for seed in 0..6 {
        let scene = smooth_scene(100 + seed, 10, (seed % 2) as usize, 3);
        let up = random_upstream(200 + seed, camera.pixel_count(), 3);
        let errs = class_errors(&scene, &camera, &up);
        println!("seed {seed}: {errs:?}");
        for (name, e) in CLASSES.iter().zip(errs) {
            assert!(e < 1e-3, "seed {seed}, class {name}: relative error {e:e}");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "gradient suite took {secs:.1}s");
}

#[test]
fn recon_gradient_matches_finite_differences() {
    let camera = smooth_camera();
    let scene = smooth_scene(7, 3, 0, 0);
    let target = Image::from_fn(32, 32, |c, r| [c as f64 / 32.0, r as f64 / 32.0, 0.5]);
    let pass = render(&scene, &camera).unwrap();
    let (_, g) = recon_loss(&pass.output().rgb, &target).unwrap();
    let grads = pass.backward(&scene, &RenderGrads::rgb_only(g)).unwrap();
    let base = SceneParams::from_scene(&scene);
    let loss = |p: SceneParams| recon_loss(&render_params(p, &camera).unwrap().output().rgb, &target).unwrap().0;
    for class in 0..5 {
        let (mut diff, mut norm) = (0.0, 0.0);
        for i in 0..3 {
            for k in 0.. {
                let mut plus = base.clone();
                let Some(v) = param(&mut plus, class, i, k) else { break };
                *v += STEP;
                let mut minus = base.clone();
                *param(&mut minus, class, i, k).unwrap() -= STEP;
                let fd = (loss(plus) - loss(minus)) / (2.0 * STEP);
                diff += (analytic(&grads, class, i, k) - fd).powi(2);
                norm += fd * fd;
            }
        }
        let e = (diff / norm).sqrt();
        assert!(e < 1e-3, "class {}: relative error {e:e}", CLASSES[class]);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let camera = common::camera(64);
    let scene = common::random_scene(3, 10, 1, 2);
    let pass = render(&scene, &camera).unwrap();
    let g = pass.backward(&scene, &RenderGrads::zeros(camera.pixel_count(), 2)).unwrap();
    assert!(g.is_zero());
    assert_eq!(g.class_norms(), [0.0; 6]);
}

#[test]
fn red_channel_at_the_centre_only_reaches_red() {
    let camera = common::camera(64);
    let mut scene = GaussianScene::new(0, 0);
    scene.push(Gaussian::isotropic([-0.01, -0.01, 2.0], 0.1, 0.6, [0.2, 0.4, 0.6], 0, 0)).unwrap();
    let pass = render(&scene, &camera).unwrap();
    let mut up = vec![[0.0; 3]; camera.pixel_count()];
    up[31 * 64 + 31] = [1.0, 0.0, 0.0];
    let g = pass.backward(&scene, &RenderGrads::rgb_only(up)).unwrap();
    assert!(g.sh[0] > 0.0);
    assert_eq!((g.sh[1], g.sh[2]), (0.0, 0.0));
}

#[test]
fn fully_occluded_gaussian_gets_no_gradient() {
    let camera = common::camera(64);
    let mut scene = GaussianScene::new(0, 2);
    // An opaque wall drives transmittance below the cut-off before the hidden one.
    for z in [1.0, 1.01, 1.02] {
        scene.push(Gaussian::isotropic([0.0, 0.0, z], 5.0, 0.999, [0.5; 3], 0, 2)).unwrap();
    }
    scene.push(Gaussian::isotropic([0.0, 0.0, 3.0], 0.2, 0.9, [1.0, 0.0, 0.0], 0, 2)).unwrap();
    let pass = render(&scene, &camera).unwrap();
    let up = random_upstream(5, camera.pixel_count(), 2);
    let g = pass.backward(&scene, &up).unwrap();
    assert_eq!(g.center[3], [0.0; 3]);
    assert_eq!(g.opacity[3], 0.0);
    assert_eq!(g.embedding_of(3), &[0.0, 0.0]);
    assert!(g.center[0].iter().any(|&v| v != 0.0));
}

#[test]
fn stale_forward_pass_is_rejected() {
    let camera = common::camera(32);
    let mut scene = common::random_scene(4, 3, 0, 0);
    let pass = render(&scene, &camera).unwrap();
    scene.gaussians_mut()[0].opacity = 0.5;
    assert!(pass.backward(&scene, &RenderGrads::zeros(camera.pixel_count(), 0)).is_err());
}
