//! Single-image 3D Gaussian scene editing.
//!
//! An input image is lifted into Gaussians via estimated depth, expanded over
//! imagined views by RGB and depth inpainting, optimised with reconstruction,
//! score-distillation and feature-distillation losses, and then edited at the
//! object level through text or box queries.

pub mod camera;
pub mod editing;
pub mod error;
pub mod image;
pub mod io;
pub mod lifting;
pub mod priors;
pub mod raster;
pub mod scene;
pub mod semantics;
pub mod testcard;
pub mod trainer;

pub use camera::{interpolate_camera, Camera};
pub use error::{Error, Result};
pub use image::{DepthMap, FeatureMap, Image, Mask, ScalarMap};
pub use raster::{rasterize, rasterize_reference, render, ForwardPass, ParamGrads, RenderGrads, RenderOutput};
pub use scene::{covariance_3d, Gaussian, GaussianScene};
