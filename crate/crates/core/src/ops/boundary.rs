//! Per-mask boundary probability maps.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mask::{dilate, BinaryMask};
use crate::scene::{load_boundary_png, Scene};

/// Probability on the dilation ring around exact ground-truth boundaries.
/// Below 1 so that minimum-cost paths prefer the exact boundary.
pub const GT_RING_PROB: f64 = 0.75;

/// Depth step (meters) between 4-neighbors that maps to probability 1.
pub const DEPTH_STEP: f64 = 0.01;

/// Frame-aligned split-boundary probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap {
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl BoundaryMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        BoundaryMap {
            width,
            height,
            probs: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != width * height {
            return Err(Error::DimensionMismatch {
                file: "boundary map".into(),
                expected: (width, height),
                found: (probs.len(), 1),
            });
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::CorruptEncoding {
                file: "boundary map".into(),
                reason: "probabilities must lie in [0, 1]".into(),
            });
        }
        Ok(BoundaryMap { width, height, probs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (w, h, probs) = load_boundary_png(path)?;
        BoundaryMap::from_vec(w, h, probs)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.probs[r * self.width + c]
    }

    fn set(&mut self, r: usize, c: usize, p: f64) {
        self.probs[r * self.width + c] = p;
    }

    /// Copy restricted to `mask`, zero elsewhere.
    pub fn restrict(&self, mask: &BinaryMask) -> BoundaryMap {
        let mut out = BoundaryMap::zeros(self.width, self.height);
        for (r, c) in mask.pixels() {
            out.set(r, c, self.get(r, c));
        }
        out
    }
}

/// Source of split-boundary probabilities.
#[derive(Debug, Clone)]
pub enum BoundaryProvider {
    /// Internal ground-truth boundaries; needs scene labels.
    GroundTruth,
    /// Depth discontinuities between in-mask neighbors.
    DepthGradient,
    /// A precomputed frame-sized map.
    FromFile(Arc<BoundaryMap>),
}

const N4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

pub fn boundary_map(scene: &Scene, mask: &BinaryMask, provider: &BoundaryProvider) -> Result<BoundaryMap> {
    let (w, h) = scene.dims();
    assert_eq!(mask.dims(), (w, h), "mask frame differs from scene");
    let in_mask = |r: isize, c: isize| mask.get_signed(r, c);
    match provider {
        BoundaryProvider::GroundTruth => {
            let gt = scene
                .labels()
                .ok_or_else(|| Error::ProviderUnavailable("ground-truth boundaries need scene labels".into()))?;
            let mut core = BinaryMask::new(w, h);
            for (r, c) in mask.pixels() {
                let here = gt.get(r, c);
                let differs = N4.iter().any(|&(dr, dc)| {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    in_mask(nr, nc) && gt.get(nr as usize, nc as usize) != here
                });
                if differs {
                    core.set(r, c, true);
                }
            }
            let mut out = BoundaryMap::zeros(w, h);
            if core.is_empty() {
                return Ok(out);
            }
            for (r, c) in dilate(&core, 1.0).intersection(mask).pixels() {
                out.set(r, c, if core.get(r, c) { 1.0 } else { GT_RING_PROB });
            }
            Ok(out)
        }
        BoundaryProvider::DepthGradient => {
            let mut out = BoundaryMap::zeros(w, h);
            for (r, c) in mask.pixels() {
                let d = scene.depth_at(r, c);
                if d <= 0.0 {
                    continue;
                }
                let mut step = [0.0f64; 2];
                for (k, &(dr, dc)) in N4.iter().enumerate() {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if !in_mask(nr, nc) {
                        continue;
                    }
                    let nd = scene.depth_at(nr as usize, nc as usize);
                    if nd > 0.0 {
                        let axis = k / 2;
                        step[axis] = step[axis].max((nd - d).abs());
                    }
                }
                let g = libm::hypot(step[0], step[1]);
                out.set(r, c, (g / DEPTH_STEP).min(1.0));
            }
            Ok(out)
        }
        BoundaryProvider::FromFile(map) => {
            if map.dims() != (w, h) {
                return Err(Error::FrameMismatch("boundary map".into()));
            }
            Ok(map.restrict(mask))
        }
    }
}
