#![allow(dead_code)]

pub mod fd;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatedit::scene::{normalize_quat, sh_coeffs};
use splatedit::editing::{layout_augment, object_selections, AugmentSpec};
use splatedit::priors::PriorBackends;
use splatedit::raster;
use splatedit::semantics::{attach_codec, distill_grads, prepare_targets};
use splatedit::{Camera, Gaussian, GaussianScene};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// fx = fy = 100, principal point at the centre.
pub fn camera(size: usize) -> Camera {
    Camera::new(100.0, 100.0, size as f64 / 2.0, size as f64 / 2.0, size, size)
}

pub fn random_quat(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n2: f64 = q.iter().map(|v| v * v).sum();
        if n2 > 0.05 && n2 <= 1.0 {
            return normalize_quat(q);
        }
    }
}

/// A Gaussian inside the frustum of `camera(size)` for any size, at depth 1.5 to 4.
pub fn random_gaussian(rng: &mut impl Rng, sh_degree: usize, embed_dim: usize, opacity: (f64, f64)) -> Gaussian {
    let z = rng.random_range(1.5..4.0);
    let center = [rng.random_range(-0.4..0.4) * z, rng.random_range(-0.4..0.4) * z, z];
    let scale: [f64; 3] = std::array::from_fn(|_| (rng.random_range(0.02f64.ln()..0.25f64.ln())).exp());
    let q = random_quat(rng);
    let mut g = Gaussian::isotropic(center, 0.1, rng.random_range(opacity.0..opacity.1), [0.0; 3], sh_degree, embed_dim);
    g.scale = scale.map(|v| v as f32);
    g.rotation = q.map(|v| v as f32);
    for c in g.sh.iter_mut().take(3) {
        *c = rng.random_range(0.0..1.0);
    }
    for c in g.sh.iter_mut().skip(3) {
        *c = rng.random_range(-0.2..0.2);
    }
    for e in &mut g.embedding {
        *e = rng.random_range(-1.0..1.0);
    }
    g
}

pub fn random_scene(seed: u64, n: usize, sh_degree: usize, embed_dim: usize) -> GaussianScene {
    let mut r = rng(seed);
    let mut scene = GaussianScene::new(sh_degree, embed_dim).with_background([r.random(), r.random(), r.random()]);
    for _ in 0..n {
        scene.push(random_gaussian(&mut r, sh_degree, embed_dim, (0.05, 0.95))).unwrap();
    }
    assert_eq!(scene.gaussians()[0].sh.len(), 3 * sh_coeffs(sh_degree));
    scene
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A closed, opaque grey shell (object 0) of nested spherical layers around
/// `(0, 0, 3)`, with one red Gaussian (no object) hidden at its centre.
/// Returns the scene and the index of the hidden Gaussian.
pub fn shell_scene(embed_dim: usize) -> (GaussianScene, usize) {
    let mut scene = GaussianScene::new(0, embed_dim);
    let shell = scene.register_object("shell");
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for radius in [0.42, 0.47, 0.52] {
        let n = (4.0 * std::f64::consts::PI * radius * radius / (0.04f64 * 0.04)) as usize;
        for i in 0..n {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            let c = [radius * r * phi.cos(), radius * y, 3.0 + radius * r * phi.sin()];
            let mut g = Gaussian::isotropic(c, 0.04, 0.99, [0.5, 0.5, 0.5], 0, embed_dim);
            g.object_id = shell;
            scene.push(g).unwrap();
        }
    }
    let hidden = scene.push(Gaussian::isotropic([0.0, 0.0, 3.0], 0.15, 0.9, [1.0, 0.0, 0.0], 0, embed_dim)).unwrap();
    (scene, hidden)
}

/// Sum of the hidden Gaussian's embedding-gradient norms over the three
/// reference views.
pub fn hidden_gradient_over_epoch(spec: &AugmentSpec) -> f64 {
    let (mut scene, hidden) = shell_scene(4);
    let priors = PriorBackends::mock();
    let cam = camera(64);
    let pivot = nalgebra::Vector3::new(0.0, 0.0, 3.0);
    let views = [cam.clone(), cam.orbit_yaw(&pivot, 15f64.to_radians()), cam.orbit_yaw(&pivot, -15f64.to_radians())];
    let mut per_view = Vec::new();
    for (k, cam) in views.iter().enumerate() {
        let objects = object_selections(&scene);
        let v = layout_augment(&scene, &objects, spec, k as u64).unwrap();
        let rgb = raster::rasterize(&v.scene, cam).unwrap().rgb;
        per_view.push((v, prepare_targets(&rgb, &priors).unwrap()));
    }
    let targets: Vec<_> = per_view.iter().map(|(_, t)| t.clone()).collect();
    assert!(attach_codec(&mut scene, &targets, 4).unwrap() > 0);
    let codec = scene.codec().unwrap().clone();
    let mut total = 0.0;
    for (cam, (v, t)) in views.iter().zip(&per_view) {
        let mut view = scene.snapshot();
        for (g, a) in view.gaussians_mut().iter_mut().zip(v.scene.gaussians()) {
            g.active = a.active;
            g.center = a.center;
            g.rotation = a.rotation;
        }
        let (_, mut grads) = distill_grads(&view, cam, t, &codec).unwrap();
        v.pull_back(&mut grads);
        total += grads.embedding_of(hidden).iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    total
}
