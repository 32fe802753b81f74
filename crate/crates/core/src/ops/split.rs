//! Split sampling: contour endpoint weighting, maximum-probability paths,
//! and cutting a mask along a path.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::boundary::BoundaryMap;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::scene::Scene;
use crate::mask::{
    connected_components, contour, label_components, squared_edt, BinaryMask, Connectivity, Pixel,
};

/// Added to probabilities before taking logs.
pub const PATH_EPS: f64 = 1e-4;
pub const WINDOW_SIGMA: f64 = 2.0;
pub const WINDOW_RADIUS: isize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProposal {
    pub mask_id: NodeId,
    pub path: Vec<Pixel>,
    pub score: f64,
}

/// Per-pixel path cost `max(0, -ln(p + ε))`.
#[inline]
pub fn pixel_cost(p: f64) -> f64 {
    (-libm::log(p + PATH_EPS)).max(0.0)
}

/// Cost of moving from `a` onto the adjacent pixel `b` with probability `p`.
#[inline]
pub fn step_cost(a: Pixel, b: Pixel, p: f64) -> f64 {
    let c = pixel_cost(p);
    if a.0 != b.0 && a.1 != b.1 {
        c * std::f64::consts::SQRT_2
    } else {
        c
    }
}

/// Total cost of a path: the start pixel plus every step.
pub fn path_cost(path: &[Pixel], bmap: &BoundaryMap) -> f64 {
    let Some(&first) = path.first() else {
        return 0.0;
    };
    let mut cost = pixel_cost(bmap.get(first.0, first.1));
    for w in path.windows(2) {
        cost += step_cost(w[0], w[1], bmap.get(w[1].0, w[1].1));
    }
    cost
}

/// A contour segment of one 8-connected component, cyclic, without
/// repeated pixels, and the sampling weight of each point.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedContour {
    pub points: Vec<Pixel>,
    pub weights: Vec<f64>,
    /// Index of the contiguous positive-weight run each point belongs to,
    /// or `None` for zero-weight points. Runs wrap around each segment.
    pub runs: Vec<Option<usize>>,
}

fn gaussian_window() -> Vec<(isize, isize, f64)> {
    let mut out = Vec::new();
    for dr in -WINDOW_RADIUS..=WINDOW_RADIUS {
        for dc in -WINDOW_RADIUS..=WINDOW_RADIUS {
            let d2 = (dr * dr + dc * dc) as f64;
            out.push((dr, dc, libm::exp(-d2 / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA))));
        }
    }
    out
}

/// Contour points of `mask` weighted by a Gaussian-smoothed map of
/// thresholded boundary component sizes.
pub fn contour_weights(mask: &BinaryMask, bmap: &BoundaryMap, nu: f64) -> WeightedContour {
    let (w, h) = mask.dims();
    let strong = BinaryMask::from_fn(w, h, |r, c| mask.get(r, c) && bmap.get(r, c) >= nu);
    let (labels, sizes) = label_components(&strong, Connectivity::Eight);
    let size_at = |r: usize, c: usize| match labels[r * w + c] {
        0 => 0.0,
        l => sizes[l as usize] as f64,
    };
    let window = gaussian_window();

    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut runs = Vec::new();
    let mut seen = HashSet::new();
    let mut next_run = 0;
    for comp in connected_components(mask, Connectivity::Eight) {
        let seg: Vec<Pixel> = contour(&comp).points.into_iter().filter(|p| seen.insert(*p)).collect();
        let seg_w: Vec<f64> = seg
            .iter()
            .map(|&(r, c)| {
                let (mut num, mut den) = (0.0, 0.0);
                for &(dr, dc, g) in &window {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    num += g * size_at(nr as usize, nc as usize);
                    den += g;
                }
                num / den
            })
            .collect();

        let mut seg_runs: Vec<Option<usize>> = vec![None; seg.len()];
        let first_run = next_run;
        for i in 0..seg.len() {
            if seg_w[i] > 0.0 {
                if i == 0 || seg_w[i - 1] <= 0.0 {
                    next_run += 1;
                }
                seg_runs[i] = Some(next_run - 1);
            }
        }
        let n = seg.len();
        let wraps = n > 1 && seg_w[0] > 0.0 && seg_w[n - 1] > 0.0;
        if wraps {
            let last = seg_runs[n - 1];
            if last != Some(first_run) {
                for r in seg_runs.iter_mut() {
                    if *r == last {
                        *r = Some(first_run);
                    }
                }
            }
        }
        points.extend(seg);
        weights.extend(seg_w);
        runs.extend(seg_runs);
    }
    WeightedContour { points, weights, runs }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    hops: u32,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.hops.cmp(&self.hops))
            .then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const N8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Minimum-cost 8-connected path from `start` to `end` through `mask`
/// pixels, under [`pixel_cost`]. Ties prefer fewer steps. Returns the path
/// and its cost, or `None` if `end` is unreachable.
pub fn min_cost_path(mask: &BinaryMask, bmap: &BoundaryMap, start: Pixel, end: Pixel) -> Option<(Vec<Pixel>, f64)> {
    if !mask.get(start.0, start.1) || !mask.get(end.0, end.1) {
        return None;
    }
    let bb = mask.bbox()?;
    let (rows, cols) = (bb.rows(), bb.cols());
    let local = |p: Pixel| (p.0 - bb.row_min) * cols + (p.1 - bb.col_min);
    let global = |i: usize| (i / cols + bb.row_min, i % cols + bb.col_min);

    let mut cost = vec![f64::INFINITY; rows * cols];
    let mut hops = vec![u32::MAX; rows * cols];
    let mut prev = vec![usize::MAX; rows * cols];
    let mut done = vec![false; rows * cols];
    let mut heap = BinaryHeap::new();
    let s = local(start);
    cost[s] = pixel_cost(bmap.get(start.0, start.1));
    hops[s] = 0;
    heap.push(Entry {
        cost: cost[s],
        hops: 0,
        idx: s,
    });
    let target = local(end);
    while let Some(Entry { cost: cu, hops: hu, idx: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if u == target {
            break;
        }
        let pu = global(u);
        for (dr, dc) in N8 {
            let (nr, nc) = (pu.0 as isize + dr, pu.1 as isize + dc);
            if !mask.get_signed(nr, nc) {
                continue;
            }
            let pv = (nr as usize, nc as usize);
            let v = local(pv);
            if done[v] {
                continue;
            }
            let nc_ = cu + step_cost(pu, pv, bmap.get(pv.0, pv.1));
            let nh = hu + 1;
            if nc_ < cost[v] || (nc_ == cost[v] && nh < hops[v]) {
                cost[v] = nc_;
                hops[v] = nh;
                prev[v] = u;
                heap.push(Entry {
                    cost: nc_,
                    hops: nh,
                    idx: v,
                });
            }
        }
    }
    if !done[target] {
        return None;
    }
    let mut path = vec![end];
    let mut i = target;
    while i != s {
        i = prev[i];
        path.push(global(i));
    }
    path.reverse();
    Some((path, cost[target]))
}

/// Mean probability along a path.
pub fn path_score(path: &[Pixel], bmap: &BoundaryMap) -> f64 {
    if path.is_empty() {
        return 0.0;
    }
    path.iter().map(|&(r, c)| bmap.get(r, c)).sum::<f64>() / path.len() as f64
}

/// Sample a split path across `mask`.
///
/// Endpoints are drawn without replacement from the contour weights. The
/// end point is drawn from positive-weight runs other than the start's
/// when any exist, so both endpoints sit near different ends of a boundary.
pub fn sample_split(
    mask_id: NodeId,
    mask: &BinaryMask,
    bmap: &BoundaryMap,
    rng: &mut impl Rng,
    nu: f64,
) -> Result<SplitProposal> {
    let wc = contour_weights(mask, bmap, nu);
    if wc.points.len() < 2 {
        return Err(Error::DegeneratePath);
    }
    if !wc.weights.iter().any(|&w| w > 0.0) {
        return Err(Error::NoPositiveWeight);
    }
    let first = WeightedIndex::new(&wc.weights).map_err(|_| Error::NoPositiveWeight)?;
    let si = first.sample(rng);
    let other_runs: Vec<f64> = wc
        .weights
        .iter()
        .zip(&wc.runs)
        .map(|(&w, &run)| if run.is_some() && run != wc.runs[si] { w } else { 0.0 })
        .collect();
    let end_weights = if other_runs.iter().any(|&w| w > 0.0) {
        other_runs
    } else {
        let mut w = wc.weights.clone();
        w[si] = 0.0;
        w
    };
    let second = WeightedIndex::new(&end_weights).map_err(|_| Error::DegeneratePath)?;
    let ei = second.sample(rng);
    let (start, end) = (wc.points[si], wc.points[ei]);
    let (path, _) = min_cost_path(mask, bmap, start, end).ok_or(Error::DegeneratePath)?;
    if path.len() < 2 {
        return Err(Error::DegeneratePath);
    }
    let score = path_score(&path, bmap);
    Ok(SplitProposal { mask_id, path, score })
}

/// Cut `mask` along `path`: 4-connected components of the remainder with
/// at least `min_piece_area` pixels become pieces, and every other pixel
/// joins the nearest piece. Distance ties go to the piece whose mean color
/// in `scene` is closest to the pixel's, then to the larger piece. Pieces
/// are ordered by area, largest first.
pub fn split_pieces(
    mask: &BinaryMask,
    path: &[Pixel],
    min_piece_area: usize,
    scene: Option<&Scene>,
) -> Result<Vec<BinaryMask>> {
    let mut rest = mask.clone();
    for &(r, c) in path {
        rest.set(r, c, false);
    }
    let mut pieces: Vec<BinaryMask> = connected_components(&rest, Connectivity::Four)
        .into_iter()
        .filter(|p| p.area() >= min_piece_area.max(1))
        .collect();
    if pieces.len() < 2 {
        return Err(Error::DegeneratePath);
    }
    let Some(bb) = mask.bbox() else {
        return Err(Error::EmptyMask);
    };
    let (rows, cols) = (bb.rows(), bb.cols());
    let dists: Vec<Vec<f64>> = pieces
        .iter()
        .map(|p| squared_edt(rows, cols, |r, c| p.get(r + bb.row_min, c + bb.col_min)))
        .collect();
    let mut covered = BinaryMask::new(mask.width(), mask.height());
    for p in &pieces {
        covered = covered.union(p);
    }
    let colors: Option<Vec<[f64; 3]>> = scene.map(|s| pieces.iter().map(|p| mean_color(s, p)).collect());
    let leftover: Vec<Pixel> = mask.difference(&covered).pixels().collect();
    let mut owner = Vec::with_capacity(leftover.len());
    for &(r, c) in &leftover {
        let i = (r - bb.row_min) * cols + (c - bb.col_min);
        let nearest = (0..pieces.len()).map(|k| dists[k][i]).fold(f64::INFINITY, f64::min);
        let tied = (0..pieces.len()).filter(|&k| dists[k][i] == nearest);
        let best = match (&colors, scene) {
            (Some(colors), Some(s)) => {
                let px = s.rgb_at(r, c);
                let far = |k: &usize| -> f64 { (0..3).map(|ch| (px[ch] as f64 - colors[*k][ch]).powi(2)).sum() };
                tied.min_by(|a, b| far(a).total_cmp(&far(b))).expect("at least one piece")
            }
            _ => tied.min().expect("at least one piece"),
        };
        owner.push(best);
    }
    for (&(r, c), &k) in leftover.iter().zip(&owner) {
        pieces[k].set(r, c, true);
    }
    Ok(pieces)
}

fn mean_color(scene: &Scene, mask: &BinaryMask) -> [f64; 3] {
    let mut sum = [0.0; 3];
    for (r, c) in mask.pixels() {
        let px = scene.rgb_at(r, c);
        for k in 0..3 {
            sum[k] += px[k] as f64;
        }
    }
    let n = mask.area().max(1) as f64;
    sum.map(|v| v / n)
}
