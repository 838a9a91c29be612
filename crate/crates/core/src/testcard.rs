//! Synthetic 64×64 input with three flat-coloured objects on a dark wall,
//! plus the pixel masks that serve as ground truth for queries.

use crate::camera::Camera;
use crate::image::{Image, Mask};

pub const CARD_SIZE: usize = 64;
pub const BACKGROUND: [f64; 3] = [0.15, 0.15, 0.18];

#[derive(Debug, Clone)]
pub struct CardObject {
    /// The word a text query should use to find this object.
    pub label: &'static str,
    pub color: [f64; 3],
    pub mask: Mask,
}

#[derive(Debug, Clone)]
pub struct TestCard {
    pub image: Image,
    pub camera: Camera,
    pub objects: Vec<CardObject>,
}

impl TestCard {
    pub fn new() -> Self {
        let n = CARD_SIZE;
        let shapes: [(&str, [f64; 3], fn(f64, f64) -> bool); 3] = [
            ("red", [0.9, 0.15, 0.1], |x, y| (8.0..24.0).contains(&x) && (10.0..26.0).contains(&y)),
            ("green", [0.2, 0.8, 0.25], |x, y| (x - 44.0).powi(2) + (y - 20.0).powi(2) < 81.0),
            ("blue", [0.2, 0.25, 0.9], |x, y| (36.0..58.0).contains(&y) && (x - 32.0).abs() < 0.5 * (y - 36.0) + 1.0),
        ];
        let objects: Vec<CardObject> = shapes
            .iter()
            .map(|&(label, color, inside)| CardObject {
                label,
                color,
                mask: Mask::from_fn(n, n, |col, row| inside(col as f64 + 0.5, row as f64 + 0.5)),
            })
            .collect();
        let image = Image::from_fn(n, n, |col, row| {
            let p = row * n + col;
            objects.iter().find(|o| o.mask.data[p]).map_or(BACKGROUND, |o| o.color)
        });
        let camera = Camera::new(64.0, 64.0, 32.0, 32.0, n, n);
        Self { image, camera, objects }
    }

    pub fn object(&self, label: &str) -> Option<&CardObject> {
        self.objects.iter().find(|o| o.label == label)
    }

    /// Indices of the Gaussians covering `label` in a stride-1 lift of the
    /// card, which are the covered pixel indices. Empty for unknown labels.
    pub fn object_indices(&self, label: &str) -> Vec<usize> {
        self.object(label).map_or_else(Vec::new, |o| {
            o.mask.data.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
        })
    }
}

impl Default for TestCard {
    fn default() -> Self {
        Self::new()
    }
}
