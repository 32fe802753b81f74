//! Synthetic tabletop scenes: flat-colored convex shapes stacked on a
//! tilted table plane. Later objects are painted on top and sit closer to
//! the camera, so depth steps agree with the occlusion order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Intrinsics, Scene};
use crate::error::{Error, Result};
use crate::mask::{label_components, BinaryMask, Connectivity, LabelImage};

const TABLE_COLOR: [u8; 3] = [118, 104, 88];
const PLACEMENT_ATTEMPTS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub width: usize,
    pub height: usize,
    pub num_objects: usize,
    /// Standard deviation of additive depth noise, meters.
    pub depth_noise_sigma: f64,
    /// Every object keeps at least this many visible pixels.
    pub min_visible_area: usize,
    /// Table depth at the bottom and top image rows, meters.
    pub table_near: f64,
    pub table_far: f64,
    /// Object size range as a fraction of `min(width, height)`.
    pub min_size: f64,
    pub max_size: f64,
    /// Defaults to a ~60 degree horizontal field of view centered on the frame.
    pub camera: Option<Intrinsics>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 160,
            height: 120,
            num_objects: 12,
            depth_noise_sigma: 0.0,
            min_visible_area: 80,
            table_near: 0.8,
            table_far: 1.2,
            min_size: 0.05,
            max_size: 0.11,
            camera: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str| Err(Error::ConfigInvalid(f.into()));
        if self.width < 64 {
            return bad("width");
        }
        if self.height < 64 {
            return bad("height");
        }
        if self.num_objects == 0 {
            return bad("num_objects");
        }
        if !(self.depth_noise_sigma >= 0.0 && self.depth_noise_sigma.is_finite()) {
            return bad("depth_noise_sigma");
        }
        if !(self.table_near > 0.0 && self.table_far > 0.0 && self.table_far < 60.0) {
            return bad("table_near");
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size < 0.5) {
            return bad("min_size");
        }
        if let Some(k) = &self.camera {
            k.validate()?;
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.camera.unwrap_or(Intrinsics {
            fx: self.width as f64 * 0.866,
            fy: self.width as f64 * 0.866,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
        })
    }

    fn table_depth(&self, row: usize) -> f64 {
        let t = row as f64 / (self.height - 1) as f64;
        self.table_far + (self.table_near - self.table_far) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Rotated rectangle: center `(row, col)`, half extents, angle in radians.
    Rect {
        center: (f64, f64),
        half: (f64, f64),
        angle: f64,
    },
    Ellipse {
        center: (f64, f64),
        radii: (f64, f64),
        angle: f64,
    },
    Union(Box<Shape>, Box<Shape>),
}

impl Shape {
    pub fn contains(&self, row: f64, col: f64) -> bool {
        let local = |center: (f64, f64), angle: f64| {
            let (dr, dc) = (row - center.0, col - center.1);
            let (s, c) = angle.sin_cos();
            (dr * c - dc * s, dr * s + dc * c)
        };
        match self {
            Shape::Rect { center, half, angle } => {
                let (a, b) = local(*center, *angle);
                a.abs() <= half.0 && b.abs() <= half.1
            }
            Shape::Ellipse { center, radii, angle } => {
                let (a, b) = local(*center, *angle);
                (a / radii.0).powi(2) + (b / radii.1).powi(2) <= 1.0
            }
            Shape::Union(x, y) => x.contains(row, col) || y.contains(row, col),
        }
    }

    /// Conservative `(row_min, row_max, col_min, col_max)` extent.
    fn bounds(&self) -> (f64, f64, f64, f64) {
        match self {
            Shape::Rect { center, half, .. } => {
                let r = libm::hypot(half.0, half.1);
                (center.0 - r, center.0 + r, center.1 - r, center.1 + r)
            }
            Shape::Ellipse { center, radii, .. } => {
                let r = radii.0.max(radii.1);
                (center.0 - r, center.0 + r, center.1 - r, center.1 + r)
            }
            Shape::Union(x, y) => {
                let (a, b) = (x.bounds(), y.bounds());
                (a.0.min(b.0), a.1.max(b.1), a.2.min(b.2), a.3.max(b.3))
            }
        }
    }

    fn paint_into(&self, labels: &mut [u32], width: usize, height: usize, id: u32) -> bool {
        let (r0, r1, c0, c1) = self.bounds();
        if r1 < 0.0 || c1 < 0.0 || r0 > (height - 1) as f64 || c0 > (width - 1) as f64 {
            return false;
        }
        let rows = (r0.floor().max(0.0) as usize)..=(r1.ceil().min((height - 1) as f64) as usize);
        let cols = (c0.floor().max(0.0) as usize)..=(c1.ceil().min((width - 1) as f64) as usize);
        let mut any = false;
        for r in rows {
            for c in cols.clone() {
                if self.contains(r as f64, c as f64) {
                    labels[r * width + c] = id;
                    any = true;
                }
            }
        }
        any
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: [u8; 3],
    /// Height above the table surface, meters.
    pub height_offset: f64,
}

/// Objects in paint order (last is on top).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub objects: Vec<ObjectSpec>,
}

impl SceneLayout {
    /// Layout with the object at `index` removed (e.g. picked up).
    pub fn without(&self, index: usize) -> SceneLayout {
        let mut objects = self.objects.clone();
        objects.remove(index);
        SceneLayout { objects }
    }
}

fn paint(layout: &[ObjectSpec], width: usize, height: usize) -> Vec<u32> {
    let mut labels = vec![0u32; width * height];
    for (i, obj) in layout.iter().enumerate() {
        obj.shape.paint_into(&mut labels, width, height, i as u32 + 1);
    }
    labels
}

/// Checks objects whose visible region changed (`touched`) for size and
/// 8-connectivity.
fn layout_is_clean(labels: &[u32], touched: &[u32], width: usize, height: usize, min_area: usize) -> bool {
    let max = touched.iter().copied().max().unwrap_or(0) as usize;
    let mut areas = vec![0usize; max + 1];
    for &l in labels {
        if (l as usize) <= max {
            areas[l as usize] += 1;
        }
    }
    for &id in touched {
        if areas[id as usize] < min_area {
            return false;
        }
        let mask = BinaryMask::from_bits(width, height, labels.iter().map(|&l| l == id).collect())
            .expect("frame size");
        if label_components(&mask, Connectivity::Eight).1.len() != 2 {
            return false;
        }
    }
    true
}

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    loop {
        let c = [
            rng.random_range(20..=235u8),
            rng.random_range(20..=235u8),
            rng.random_range(20..=235u8),
        ];
        let dist: i32 = c
            .iter()
            .zip(TABLE_COLOR)
            .map(|(&a, b)| (a as i32 - b as i32).abs())
            .sum();
        if dist > 60 {
            return c;
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng, config: &GeneratorConfig) -> Shape {
    let scale = config.width.min(config.height) as f64;
    let (lo, hi) = (config.min_size * scale, config.max_size * scale);
    let size = |rng: &mut ChaCha8Rng| rng.random_range(lo..=hi);
    let center = (
        rng.random_range(0.0..config.height as f64),
        rng.random_range(0.0..config.width as f64),
    );
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    match rng.random_range(0..3u8) {
        0 => Shape::Rect {
            center,
            half: (size(rng), size(rng)),
            angle,
        },
        1 => Shape::Ellipse {
            center,
            radii: (size(rng), size(rng)),
            angle,
        },
        _ => {
            let a = Shape::Rect {
                center,
                half: (size(rng) * 0.8, size(rng) * 0.8),
                angle,
            };
            let shift = size(rng) * 0.7;
            let b = Shape::Ellipse {
                center: (center.0 + shift * libm::cos(angle), center.1 + shift * libm::sin(angle)),
                radii: (size(rng) * 0.8, size(rng) * 0.8),
                angle: rng.random_range(0.0..std::f64::consts::PI),
            };
            Shape::Union(Box::new(a), Box::new(b))
        }
    }
}

/// Sample an object layout where every object stays visible, connected,
/// and at least `min_visible_area` pixels large.
pub fn generate_layout(seed: u64, config: &GeneratorConfig) -> Result<SceneLayout> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (config.width, config.height);
    let mut objects: Vec<ObjectSpec> = Vec::with_capacity(config.num_objects);
    let mut labels = vec![0u32; w * h];
    let mut offset = 0.03;
    for _ in 0..config.num_objects {
        let mut placed = false;
        let id = objects.len() as u32 + 1;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let candidate = ObjectSpec {
                shape: random_shape(&mut rng, config),
                color: random_color(&mut rng),
                height_offset: offset,
            };
            let mut trial = labels.clone();
            if !candidate.shape.paint_into(&mut trial, w, h, id) {
                continue;
            }
            let mut touched: Vec<u32> = labels
                .iter()
                .zip(&trial)
                .filter(|(a, b)| a != b && **a != 0)
                .map(|(a, _)| *a)
                .collect();
            touched.sort_unstable();
            touched.dedup();
            touched.push(id);
            if layout_is_clean(&trial, &touched, w, h, config.min_visible_area) {
                labels = trial;
                objects.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::ConfigInvalid("num_objects".into()));
        }
        offset += rng.random_range(0.01..0.02);
    }
    Ok(SceneLayout { objects })
}

/// Render a layout into a scene with ground-truth labels and foreground.
pub fn render_layout(layout: &SceneLayout, config: &GeneratorConfig, noise_seed: u64) -> Result<Scene> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let labels = paint(&layout.objects, w, h);
    let noise = if config.depth_noise_sigma > 0.0 {
        Some(Normal::new(0.0, config.depth_noise_sigma).map_err(|_| Error::ConfigInvalid("depth_noise_sigma".into()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed ^ 0x005e_ed0f_de97);
    let mut rgb = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for (i, &l) in labels.iter().enumerate() {
        let row = i / w;
        let mut d = config.table_depth(row);
        if l == 0 {
            rgb.push(TABLE_COLOR);
        } else {
            let obj = &layout.objects[l as usize - 1];
            rgb.push(obj.color);
            d -= obj.height_offset;
        }
        if let Some(n) = &noise {
            d += n.sample(&mut rng);
        }
        // Whole millimeters so the 16-bit depth file round-trips exactly.
        let mm = (d * 1000.0).round().clamp(1.0, 65535.0);
        depth.push(mm / 1000.0);
    }
    let label_image = LabelImage::from_vec(w, h, labels)?;
    Scene::new(w, h, rgb, depth, config.intrinsics())?
        .with_foreground(label_image.foreground())?
        .with_labels(label_image)
}

pub fn generate_scene(seed: u64, config: &GeneratorConfig) -> Result<Scene> {
    let layout = generate_layout(seed, config)?;
    render_layout(&layout, config, seed)
}
