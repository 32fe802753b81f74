//! Scenes: color, depth, camera intrinsics, and optional ground truth.

mod corrupt;
mod io;
mod synth;

#[cfg(test)]
pub(crate) use corrupt::touching_pairs;
pub use corrupt::{corrupt_segmentation, corrupt_segmentation_logged, CorruptionConfig, CorruptionKind};
pub use io::{
    load_boundary_png, load_labels, load_scene, save_labels, save_scene, save_unit_png,
};
pub use synth::{generate_layout, generate_scene, render_layout, GeneratorConfig, ObjectSpec, SceneLayout, Shape};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, LabelImage};

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::ConfigInvalid("camera".into()));
        }
        Ok(())
    }

    /// Pixel `(u, v)` = `(col, row)` of a camera-frame point with `z > 0`.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (p[0] * self.fx / p[2] + self.cx, p[1] * self.fy / p[2] + self.cy)
    }
}

/// Organized point cloud aligned with the depth raster.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub width: usize,
    pub height: usize,
    pub xyz: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn at(&self, row: usize, col: usize) -> [f64; 3] {
        self.xyz[row * self.width + col]
    }
}

/// Backproject one pixel; invalid depth (≤ 0) maps to the origin.
#[inline]
pub fn backproject_pixel(row: usize, col: usize, depth: f64, k: &Intrinsics) -> [f64; 3] {
    if depth <= 0.0 {
        return [0.0; 3];
    }
    [
        (col as f64 - k.cx) * depth / k.fx,
        (row as f64 - k.cy) * depth / k.fy,
        depth,
    ]
}

pub fn backproject(depth: &[f64], width: usize, height: usize, k: &Intrinsics) -> PointCloud {
    assert_eq!(depth.len(), width * height, "depth raster size");
    let xyz = (0..width * height)
        .map(|i| backproject_pixel(i / width, i % width, depth[i], k))
        .collect();
    PointCloud { width, height, xyz }
}

/// RGB-D frame with optional ground-truth labels and foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    width: usize,
    height: usize,
    rgb: Vec<[u8; 3]>,
    depth: Vec<f64>,
    camera: Intrinsics,
    labels: Option<LabelImage>,
    foreground: Option<BinaryMask>,
}

impl Scene {
    pub fn new(
        width: usize,
        height: usize,
        rgb: Vec<[u8; 3]>,
        depth: Vec<f64>,
        camera: Intrinsics,
    ) -> Result<Self> {
        camera.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::ConfigInvalid("frame".into()));
        }
        if rgb.len() != width * height {
            return Err(Error::DimensionMismatch {
                file: "rgb".into(),
                expected: (width, height),
                found: (rgb.len(), 1),
            });
        }
        if depth.len() != width * height {
            return Err(Error::DimensionMismatch {
                file: "depth".into(),
                expected: (width, height),
                found: (depth.len(), 1),
            });
        }
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::CorruptEncoding {
                file: "depth".into(),
                reason: "depth must be finite and non-negative".into(),
            });
        }
        Ok(Scene {
            width,
            height,
            rgb,
            depth,
            camera,
            labels: None,
            foreground: None,
        })
    }

    pub fn with_labels(mut self, labels: LabelImage) -> Result<Self> {
        self.check_frame("labels", labels.dims())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_foreground(mut self, foreground: BinaryMask) -> Result<Self> {
        self.check_frame("foreground", foreground.dims())?;
        self.foreground = Some(foreground);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    fn check_frame(&self, what: &str, dims: (usize, usize)) -> Result<()> {
        if dims != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                file: what.into(),
                expected: (self.width, self.height),
                found: dims,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn rgb(&self) -> &[[u8; 3]] {
        &self.rgb
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    #[inline]
    pub fn depth_at(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.width + col]
    }

    #[inline]
    pub fn rgb_at(&self, row: usize, col: usize) -> [u8; 3] {
        self.rgb[row * self.width + col]
    }

    pub fn camera(&self) -> &Intrinsics {
        &self.camera
    }

    pub fn labels(&self) -> Option<&LabelImage> {
        self.labels.as_ref()
    }

    pub fn foreground(&self) -> Option<&BinaryMask> {
        self.foreground.as_ref()
    }

    pub fn point_cloud(&self) -> PointCloud {
        backproject(&self.depth, self.width, self.height, &self.camera)
    }
}
