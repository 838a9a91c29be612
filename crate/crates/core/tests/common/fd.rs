use rand::Rng;
use rand_distr::StandardNormal;
use splatedit::raster::{render_params, SceneParams};
use splatedit::{Camera, GaussianScene, ParamGrads, RenderGrads, RenderOutput};

pub const STEP: f64 = 1e-4;
pub const CLASSES: [&str; 6] = ["x", "s", "q", "alpha", "c", "e"];

/// The forward map jumps wherever a splat crosses the 1/255 skip threshold or
/// transmittance crosses the 1e-4 cut-off, so central differences are only
/// meaningful away from both. These scenes keep every splat above the skip
/// threshold over the whole 32×32 viewport (σ ≥ 12 px, centres within 4 px of
/// the middle) and opacities at or below 0.5, so ten layers leave T ≥ 0.5¹⁰.
pub fn smooth_camera() -> Camera {
    Camera::new(32.0, 32.0, 16.0, 16.0, 32, 32)
}

pub fn smooth_scene(seed: u64, n: usize, sh_degree: usize, dim: usize) -> GaussianScene {
    let mut r = super::rng(seed);
    let mut scene = GaussianScene::new(sh_degree, dim).with_background([0.3, 0.5, 0.7]);
    for _ in 0..n {
        let mut g = super::random_gaussian(&mut r, sh_degree, dim, (0.1, 0.5));
        let z = r.random_range(2.0..3.0);
        let off = 4.0 / 32.0 * z;
        g.center = [r.random_range(-off..off), r.random_range(-off..off), z].map(|v| v as f32);
        g.scale = std::array::from_fn(|_| r.random_range(1.2..2.5));
        scene.push(g).unwrap();
    }
    scene
}

pub fn random_upstream(seed: u64, pixels: usize, dim: usize) -> RenderGrads {
    let mut r = super::rng(seed);
    let mut n = || -> f64 { r.sample(StandardNormal) };
    RenderGrads {
        rgb: (0..pixels).map(|_| [n(), n(), n()]).collect(),
        depth: (0..pixels).map(|_| 0.1 * n()).collect(),
        alpha: (0..pixels).map(|_| n()).collect(),
        feature: (0..pixels * dim).map(|_| n()).collect(),
    }
}

pub fn dot(out: &RenderOutput, up: &RenderGrads) -> f64 {
    let rgb: f64 = out.rgb.data.iter().zip(&up.rgb).map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).sum();
    let depth: f64 = out.depth.data.iter().zip(&up.depth).map(|(a, b)| a * b).sum();
    let alpha: f64 = out.alpha.data.iter().zip(&up.alpha).map(|(a, b)| a * b).sum();
    let feat: f64 = out.feature.data.iter().zip(&up.feature).map(|(a, b)| a * b).sum();
    rgb + depth + alpha + feat
}

/// Mutable handle to scalar `k` of parameter class `class` of Gaussian `i`.
pub fn param(p: &mut SceneParams, class: usize, i: usize, k: usize) -> Option<&mut f64> {
    let g = &mut p.gaussians[i];
    match class {
        0 => g.center.get_mut(k),
        1 => g.scale.get_mut(k),
        2 => g.rotation.get_mut(k),
        3 => (k == 0).then_some(&mut g.opacity),
        4 => g.sh.get_mut(k),
        _ => g.feature.get_mut(k),
    }
}

pub fn analytic(g: &ParamGrads, class: usize, i: usize, k: usize) -> f64 {
    match class {
        0 => g.center[i][k],
        1 => g.scale[i][k],
        2 => g.rotation[i][k],
        3 => g.opacity[i],
        4 => g.sh_of(i)[k],
        _ => g.embedding_of(i)[k],
    }
}

/// Relative error ‖analytic − fd‖ / ‖fd‖ per parameter class.
pub fn class_errors(scene: &GaussianScene, camera: &Camera, up: &RenderGrads) -> [f64; 6] {
    let base = SceneParams::from_scene(scene);
    let grads = render_params(base.clone(), camera).unwrap().backward_params(up).unwrap();
    let loss = |p: SceneParams| dot(render_params(p, camera).unwrap().output(), up);
    std::array::from_fn(|class| {
        let (mut diff, mut norm) = (0.0, 0.0);
        for i in 0..base.gaussians.len() {
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
        assert!(norm > 0.0, "class {} has no finite-difference signal", CLASSES[class]);
        (diff / norm).sqrt()
    })
}
