//! Synthetic RGB-thermal scenes with modality-complementary objects.
//!
//! Objects (rectangles and ellipses) are painted over a noisy background.
//! Each object class has a colour and a temperature; an object tagged
//! RGB-only changes the colour image and leaves the thermal image at its
//! background statistics, and vice versa. The label map always records the
//! true class, so a model must read both modalities to find every object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::supervision::LabelMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Visibility {
    RgbOnly,
    ThermalOnly,
    Both,
}

impl Visibility {
    pub fn in_rgb(self) -> bool {
        self != Visibility::ThermalOnly
    }

    pub fn in_thermal(self) -> bool {
        self != Visibility::RgbOnly
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Rect,
    Ellipse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneObject {
    pub class: u8,
    pub visibility: Visibility,
    pub shape: Shape,
    /// Top-left corner and extent of the bounding box.
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl SceneObject {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        if row < self.top
            || col < self.left
            || row >= self.top + self.height
            || col >= self.left + self.width
        {
            return false;
        }
        match self.shape {
            Shape::Rect => true,
            Shape::Ellipse => {
                let ry = self.height as f64 / 2.0;
                let rx = self.width as f64 / 2.0;
                let dy = (row - self.top) as f64 + 0.5 - ry;
                let dx = (col - self.left) as f64 + 0.5 - rx;
                (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Class count including background (class 0).
    pub classes: usize,
    pub objects: usize,
    pub rgb_only: f64,
    pub thermal_only: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    /// `3 x H x W`
    pub rgb: Tensor,
    /// `1 x H x W`
    pub thermal: Tensor,
    pub gt: LabelMap,
    pub objects: Vec<SceneObject>,
}

// Intensities are centred on the background so the untrained network sees
// roughly zero-mean inputs.
const BACKGROUND_RGB: [f64; 3] = [0.0, 0.0, 0.0];
const BACKGROUND_THERMAL: f64 = 0.0;
const NOISE_STD: f64 = 0.08;

/// Colour of object class `k >= 1`: hues spaced evenly around the wheel.
pub fn class_color(k: usize, classes: usize) -> [f64; 3] {
    let objects = (classes - 1).max(1) as f64;
    let hue = (k - 1) as f64 / objects * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.8 * r - 0.4, 0.8 * g - 0.4, 0.8 * b - 0.4]
}

/// Temperature of object class `k >= 1`: evenly spaced above the background.
pub fn class_temperature(k: usize, classes: usize) -> f64 {
    let objects = (classes - 1).max(1) as f64;
    0.3 + 0.5 * (k - 1) as f64 / objects
}

/// Deterministic scene for `seed`.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    let (h, w) = (spec.height, spec.width);
    if h < 4 || w < 4 {
        return Err(Error::contract(format!(
            "scene extent {h}x{w} leaves no room for objects"
        )));
    }
    if spec.classes < 2 || spec.classes > 256 {
        return Err(Error::contract(format!(
            "scene needs 2..=256 classes, got {}",
            spec.classes
        )));
    }
    if spec.rgb_only < 0.0
        || spec.thermal_only < 0.0
        || spec.rgb_only + spec.thermal_only > 1.0 + 1e-12
    {
        return Err(Error::contract(
            "visibility fractions must be a sub-probability",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects = Vec::with_capacity(spec.objects);
    for _ in 0..spec.objects {
        let class = rng.gen_range(1..spec.classes) as u8;
        let u: f64 = rng.gen();
        let visibility = if u < spec.rgb_only {
            Visibility::RgbOnly
        } else if u < spec.rgb_only + spec.thermal_only {
            Visibility::ThermalOnly
        } else {
            Visibility::Both
        };
        let shape = if rng.gen_bool(0.5) {
            Shape::Rect
        } else {
            Shape::Ellipse
        };
        let height = rng.gen_range((h / 5).max(2)..=(h * 2 / 5).max(2));
        let width = rng.gen_range((w / 5).max(2)..=(w * 2 / 5).max(2));
        let top = rng.gen_range(0..=h - height);
        let left = rng.gen_range(0..=w - width);
        objects.push(SceneObject {
            class,
            visibility,
            shape,
            top,
            left,
            height,
            width,
        });
    }

    // Later objects occlude earlier ones, in both the images and the labels.
    let mut labels = vec![0u8; h * w];
    let mut rgb_owner: Vec<Option<usize>> = vec![None; h * w];
    let mut thermal_owner: Vec<Option<usize>> = vec![None; h * w];
    for (idx, obj) in objects.iter().enumerate() {
        for row in obj.top..obj.top + obj.height {
            for col in obj.left..obj.left + obj.width {
                if obj.contains(row, col) {
                    let p = row * w + col;
                    labels[p] = obj.class;
                    rgb_owner[p] = obj.visibility.in_rgb().then_some(idx);
                    thermal_owner[p] = obj.visibility.in_thermal().then_some(idx);
                }
            }
        }
    }

    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let mut rgb = vec![0.0; 3 * h * w];
    for (c, plane) in rgb.chunks_mut(h * w).enumerate() {
        for (p, v) in plane.iter_mut().enumerate() {
            let base = match rgb_owner[p] {
                Some(o) => class_color(objects[o].class as usize, spec.classes)[c],
                None => BACKGROUND_RGB[c],
            };
            *v = base + noise.sample(&mut rng);
        }
    }
    let thermal: Vec<f64> = (0..h * w)
        .map(|p| {
            let base = match thermal_owner[p] {
                Some(o) => class_temperature(objects[o].class as usize, spec.classes),
                None => BACKGROUND_THERMAL,
            };
            base + noise.sample(&mut rng)
        })
        .collect();

    Ok(SyntheticScene {
        rgb: Tensor::new(&[3, h, w], rgb)?,
        thermal: Tensor::new(&[1, h, w], thermal)?,
        gt: LabelMap::new(h, w, labels)?,
        objects,
    })
}

/// Mirrors every channel of a `c x h x w` tensor left to right.
pub fn flip_tensor(t: &Tensor) -> Tensor {
    let w = t.dims()[2].max(1);
    let mut data = t.to_vec();
    for row in data.chunks_mut(w) {
        row.reverse();
    }
    Tensor::new(t.dims(), data).expect("same extent")
}

impl SyntheticScene {
    pub fn flipped(&self) -> SyntheticScene {
        SyntheticScene {
            rgb: flip_tensor(&self.rgb),
            thermal: flip_tensor(&self.thermal),
            gt: self.gt.flip_horizontal(),
            objects: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rgb_only: f64, thermal_only: f64) -> SceneSpec {
        SceneSpec {
            height: 32,
            width: 32,
            classes: 4,
            objects: 5,
            rgb_only,
            thermal_only,
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(3, &spec(0.5, 0.5)).unwrap();
        let b = generate_scene(3, &spec(0.5, 0.5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene(4, &spec(0.5, 0.5)).unwrap());
    }

    #[test]
    fn infeasible_specs() {
        let mut s = spec(0.5, 0.5);
        s.height = 0;
        assert!(matches!(generate_scene(0, &s), Err(Error::Contract(_))));
        let mut s = spec(0.5, 0.5);
        s.classes = 1;
        assert!(matches!(generate_scene(0, &s), Err(Error::Contract(_))));
        assert!(generate_scene(0, &spec(0.8, 0.8)).is_err());
    }

    #[test]
    fn class_signatures_are_distinct() {
        for n in 2..9 {
            let colors: Vec<_> = (1..n).map(|k| class_color(k, n)).collect();
            let temps: Vec<_> = (1..n).map(|k| class_temperature(k, n)).collect();
            for i in 0..colors.len() {
                assert!(temps[i] > BACKGROUND_THERMAL + 0.25);
                for j in 0..i {
                    assert_ne!(colors[i], colors[j]);
                    assert!((temps[i] - temps[j]).abs() > 0.05);
                }
            }
        }
    }

    #[test]
    fn flip_mirrors_columns() {
        let s = generate_scene(1, &spec(0.0, 0.0)).unwrap();
        let f = s.flipped();
        assert_eq!(f.rgb.at(&[1, 3, 0]), s.rgb.at(&[1, 3, 31]));
        assert_eq!(f.gt.at(5, 2), s.gt.at(5, 29));
        assert_eq!(f.flipped().rgb, s.rgb);
    }
}
