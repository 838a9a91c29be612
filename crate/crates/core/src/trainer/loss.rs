use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::priors::{alpha_bar, PriorBackends};

/// `Σ ‖render − target‖²` over pixels and channels, with its gradient
/// `2 (render − target)`.
pub fn recon_loss(render: &Image, target: &Image) -> Result<(f64, Vec<[f64; 3]>)> {
    if !render.same_shape(target) {
        return Err(Error::invalid(format!(
            "render is {}x{}, target is {}x{}",
            render.width, render.height, target.width, target.height
        )));
    }
    let mut loss = 0.0;
    let grad = render
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| {
            [0, 1, 2].map(|k| {
                let d = r[k] - t[k];
                loss += d * d;
                2.0 * d
            })
        })
        .collect();
    Ok((loss, grad))
}

/// Seeded standard-normal noise image.
pub fn noise_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(width, height, |_, _| [0; 3].map(|_| StandardNormal.sample(&mut rng)))
}

/// Score-distillation pixel gradient `w(t) (ε̂ − ε)` with `w(t) = 1 − ᾱ_t`,
/// where `x_t = √ᾱ_t render + √(1−ᾱ_t) ε` and `ε̂` is the denoiser's
/// prediction. There is no loss value, only this gradient.
pub fn sds_loss_grad(
    render: &Image,
    prompt: &str,
    priors: &PriorBackends,
    cfg_scale: f64,
    t: u32,
    noise_seed: u64,
) -> Result<Vec<[f64; 3]>> {
    let ab = alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let eps = noise_image(render.width, render.height, noise_seed);
    let x_t = Image {
        width: render.width,
        height: render.height,
        data: render
            .data
            .iter()
            .zip(&eps.data)
            .map(|(r, e)| [0, 1, 2].map(|k| sa * r[k] + sn * e[k]))
            .collect(),
    };
    let eps_hat = priors.denoise(&x_t, t, prompt, cfg_scale)?;
    if !eps_hat.same_shape(render) {
        return Err(Error::backend("denoise", "prediction resolution differs from the input"));
    }
    let w = 1.0 - ab;
    Ok(eps_hat
        .data
        .iter()
        .zip(&eps.data)
        .map(|(h, e)| [0, 1, 2].map(|k| w * (h[k] - e[k])))
        .collect())
}
