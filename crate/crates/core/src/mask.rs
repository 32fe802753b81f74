//! Raster geometry over binary masks and label images.
//!
//! Masks are full-frame row-major boolean grids addressed as `(row, col)`.
//! Instance components use 8-connectivity, boundaries use 4-neighborhoods
//! with the image border counted as outside, and all distances are exact
//! Euclidean distances between pixel centers.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};

/// Pixel coordinate `(row, col)`.
pub type Pixel = (usize, usize);

const NEIGHBORS_4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Pixel adjacency used by component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &NEIGHBORS_4,
            Connectivity::Eight => &NEIGHBORS_8,
        }
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn union(self, other: BBox) -> BBox {
        BBox {
            row_min: self.row_min.min(other.row_min),
            col_min: self.col_min.min(other.col_min),
            row_max: self.row_max.max(other.row_max),
            col_max: self.col_max.max(other.col_max),
        }
    }

    /// Squared Euclidean gap between two boxes (0 when they overlap or touch).
    pub fn gap_sq(self, other: BBox) -> f64 {
        let gap = |lo_a: usize, hi_a: usize, lo_b: usize, hi_b: usize| -> f64 {
            if hi_a < lo_b {
                (lo_b - hi_a) as f64
            } else if hi_b < lo_a {
                (lo_a - hi_b) as f64
            } else {
                0.0
            }
        };
        let dr = gap(self.row_min, self.row_max, other.row_min, other.row_max);
        let dc = gap(self.col_min, self.col_max, other.col_min, other.col_max);
        dr * dr + dc * dc
    }

    /// Grow by `pad` pixels on every side, clamped to a `width`×`height` frame.
    pub fn expand(self, pad: usize, width: usize, height: usize) -> BBox {
        BBox {
            row_min: self.row_min.saturating_sub(pad),
            col_min: self.col_min.saturating_sub(pad),
            row_max: (self.row_max + pad).min(height - 1),
            col_max: (self.col_max + pad).min(width - 1),
        }
    }

    pub fn rows(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn cols(&self) -> usize {
        self.col_max - self.col_min + 1
    }
}

/// Binary mask over a `width`×`height` frame.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .field("bbox", &self.bbox())
            .finish()
    }
}

impl BinaryMask {
    /// Empty mask. Panics on a zero-sized frame.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "mask frame must be at least 1x1");
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Self::new(width, height);
        m.bits.fill(true);
        m
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                file: "mask".into(),
                expected: (width, height),
                found: (bits.len(), 1),
            });
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for r in 0..height {
            for c in 0..width {
                m.bits[r * width + c] = f(r, c);
            }
        }
        m
    }

    pub fn from_pixels(width: usize, height: usize, pixels: impl IntoIterator<Item = Pixel>) -> Self {
        let mut m = Self::new(width, height);
        for (r, c) in pixels {
            m.set(r, c, true);
        }
        m
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    /// Bounds-checked lookup with signed coordinates; outside reads as unset.
    #[inline]
    pub fn get_signed(&self, r: isize, c: isize) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.height
            && (c as usize) < self.width
            && self.bits[r as usize * self.width + c as usize]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.width + c] = v;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for (r, c) in self.pixels() {
            bb = Some(match bb {
                None => BBox {
                    row_min: r,
                    col_min: c,
                    row_max: r,
                    col_max: c,
                },
                Some(b) => BBox {
                    row_min: b.row_min.min(r),
                    col_min: b.col_min.min(c),
                    row_max: b.row_max.max(r),
                    col_max: b.col_max.max(c),
                },
            });
        }
        bb
    }

    fn check_frame(&self, other: &BinaryMask) {
        assert_eq!(self.dims(), other.dims(), "mask frames differ");
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> usize {
        self.check_frame(other);
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn is_disjoint(&self, other: &BinaryMask) -> bool {
        self.intersection_area(other) == 0
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.check_frame(other);
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        self.check_frame(other);
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Run-length encoding: space-separated run lengths over the row-major
    /// bit sequence, alternating unset/set and starting with an unset run.
    pub fn to_rle(&self) -> String {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ")
    }

    pub fn from_rle(width: usize, height: usize, rle: &str) -> Result<BinaryMask> {
        let corrupt = |reason: &str| Error::CorruptEncoding {
            file: "rle".into(),
            reason: reason.into(),
        };
        let mut bits = Vec::with_capacity(width * height);
        let mut value = false;
        for tok in rle.split_whitespace() {
            let n: usize = tok.parse().map_err(|_| corrupt("non-numeric run"))?;
            if bits.len() + n > width * height {
                return Err(corrupt("runs exceed frame"));
            }
            bits.extend(std::iter::repeat_n(value, n));
            value = !value;
        }
        if bits.len() != width * height {
            return Err(corrupt("runs do not cover frame"));
        }
        BinaryMask::from_bits(width, height, bits)
    }
}

/// Dense instance labeling; 0 is background.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct LabelImage {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "label frame must be at least 1x1");
        LabelImage {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::DimensionMismatch {
                file: "labels".into(),
                expected: (width, height),
                found: (labels.len(), 1),
            });
        }
        Ok(LabelImage {
            width,
            height,
            labels,
        })
    }

    /// Compose disjoint instance masks; errors if two masks overlap or a
    /// label is zero.
    pub fn from_instances<'a>(
        width: usize,
        height: usize,
        instances: impl IntoIterator<Item = (u32, &'a BinaryMask)>,
    ) -> Result<Self> {
        let mut li = LabelImage::new(width, height);
        for (label, mask) in instances {
            if label == 0 {
                return Err(Error::InvalidPerturbation("instance label 0".into()));
            }
            if mask.dims() != (width, height) {
                return Err(Error::DimensionMismatch {
                    file: "instance mask".into(),
                    expected: (width, height),
                    found: mask.dims(),
                });
            }
            for (i, &b) in mask.bits().iter().enumerate() {
                if b {
                    if li.labels[i] != 0 {
                        return Err(Error::InvalidPerturbation(format!(
                            "instances {} and {label} overlap",
                            li.labels[i]
                        )));
                    }
                    li.labels[i] = label;
                }
            }
        }
        Ok(li)
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

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.labels[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, label: u32) {
        self.labels[r * self.width + c] = label;
    }

    /// Distinct positive labels in ascending order.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().copied().filter(|&l| l > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn foreground(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l > 0).collect(),
        }
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    /// Relabel instances to `1..=n` in order of first appearance (row-major).
    pub fn canonical(&self) -> LabelImage {
        let mut map = BTreeMap::new();
        let mut next = 1u32;
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    *map.entry(l).or_insert_with(|| {
                        next += 1;
                        next - 1
                    })
                }
            })
            .collect();
        LabelImage {
            width: self.width,
            height: self.height,
            labels,
        }
    }
}

/// One mask per distinct positive label.
pub fn extract_instances(li: &LabelImage) -> BTreeMap<u32, BinaryMask> {
    let mut out: BTreeMap<u32, BinaryMask> = BTreeMap::new();
    for (i, &l) in li.labels.iter().enumerate() {
        if l > 0 {
            out.entry(l)
                .or_insert_with(|| BinaryMask::new(li.width, li.height))
                .bits[i] = true;
        }
    }
    out
}

/// Component labels (1-based, 0 = unset) and per-component sizes
/// (index 0 unused), numbered in raster order of first pixel.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0usize;
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for &(dr, dc) in connectivity.offsets() {
                let (nr, nc) = (r + dr, c + dc);
                if mask.get_signed(nr, nc) {
                    let j = nr as usize * w + nc as usize;
                    if labels[j] == 0 {
                        labels[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Connected components ordered by decreasing area, ties by first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<BinaryMask> {
    let (labels, sizes) = label_components(mask, connectivity);
    let n = sizes.len() - 1;
    let (w, h) = mask.dims();
    let mut comps: Vec<BinaryMask> = (0..n).map(|_| BinaryMask::new(w, h)).collect();
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            comps[l as usize - 1].bits[i] = true;
        }
    }
    // Components are numbered in raster order of first pixel, so a stable
    // sort on area alone yields the required tie-break.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sizes[b + 1].cmp(&sizes[a + 1]));
    let mut slots: Vec<Option<BinaryMask>> = comps.into_iter().map(Some).collect();
    order.into_iter().map(|i| slots[i].take().unwrap()).collect()
}

/// Mask pixels with at least one 4-neighbor outside the mask or the frame.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut out = BinaryMask::new(w, h);
    for (r, c) in mask.pixels() {
        let (ri, ci) = (r as isize, c as isize);
        if NEIGHBORS_4
            .iter()
            .any(|&(dr, dc)| !mask.get_signed(ri + dr, ci + dc))
        {
            out.set(r, c, true);
        }
    }
    out
}

const EDT_INF: f64 = 1e20;

fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let vk = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + vk * vk)) / (2.0 * qf - 2.0 * vk);
            if s <= z[k] {
                if k == 0 {
                    // Cannot happen with z[0] = -inf, kept for clarity.
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let diff = q as f64 - v[k] as f64;
        *out = diff * diff + f[v[k]];
    }
}

/// Exact squared Euclidean distance to the nearest source pixel inside a
/// `rows`×`cols` window. Entries at or above `1e19` mean "no source".
pub(crate) fn squared_edt(rows: usize, cols: usize, is_source: impl Fn(usize, usize) -> bool) -> Vec<f64> {
    let mut grid = vec![EDT_INF; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if is_source(r, c) {
                grid[r * cols + c] = 0.0;
            }
        }
    }
    let n = rows.max(cols);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..cols {
        for r in 0..rows {
            f[r] = grid[r * cols + c];
        }
        dt_1d(&f[..rows], &mut d[..rows], &mut v, &mut z);
        for r in 0..rows {
            grid[r * cols + c] = d[r];
        }
    }
    for r in 0..rows {
        f[..cols].copy_from_slice(&grid[r * cols..(r + 1) * cols]);
        dt_1d(&f[..cols], &mut d[..cols], &mut v, &mut z);
        grid[r * cols..(r + 1) * cols].copy_from_slice(&d[..cols]);
    }
    grid
}

/// Squared distance map from `mask` over the full frame.
pub fn squared_distance_map(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = mask.dims();
    squared_edt(h, w, |r, c| mask.get(r, c))
}

/// Minimum Euclidean distance between a pixel of `a` and a pixel of `b`.
pub fn set_distance(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (ba, bb) = match (a.bbox(), b.bbox()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::EmptyMask),
    };
    a.check_frame(b);
    let win = ba.union(bb);
    let (rows, cols) = (win.rows(), win.cols());
    let dist = squared_edt(rows, cols, |r, c| a.get(r + win.row_min, c + win.col_min));
    let mut best = f64::INFINITY;
    for r in bb.row_min..=bb.row_max {
        for c in bb.col_min..=bb.col_max {
            if b.get(r, c) {
                best = best.min(dist[(r - win.row_min) * cols + (c - win.col_min)]);
            }
        }
    }
    Ok(best.sqrt())
}

/// Pixels within Euclidean distance `radius` of the mask.
pub fn dilate(mask: &BinaryMask, radius: f64) -> BinaryMask {
    assert!(radius >= 0.0, "dilation radius must be non-negative");
    let (w, h) = mask.dims();
    let Some(bb) = mask.bbox() else {
        return mask.clone();
    };
    let pad = radius.floor() as usize;
    let win = bb.expand(pad, w, h);
    let (rows, cols) = (win.rows(), win.cols());
    let dist = squared_edt(rows, cols, |r, c| mask.get(r + win.row_min, c + win.col_min));
    let limit = radius * radius + 1e-9;
    let mut out = BinaryMask::new(w, h);
    for r in 0..rows {
        for c in 0..cols {
            if dist[r * cols + c] <= limit {
                out.set(r + win.row_min, c + win.col_min, true);
            }
        }
    }
    out
}

/// Ordered pixel contour.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Contour {
    pub points: Vec<Pixel>,
}

// Clockwise in image coordinates (row grows downward), starting north.
const MOORE: [(isize, isize); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];
const WEST: usize = 6;

fn moore_direction(dr: isize, dc: isize) -> usize {
    MOORE
        .iter()
        .position(|&d| d == (dr, dc))
        .expect("offset is an 8-neighbor")
}

fn trace_component(mask: &BinaryMask, start: Pixel) -> Vec<Pixel> {
    let mut points = vec![start];
    let mut cur = start;
    let mut back = WEST;
    let mut second: Option<Pixel> = None;
    // Each boundary pixel is entered at most 4 times, so this bound is loose.
    let limit = 8 * mask.area() + 8;
    for _ in 0..limit {
        let (r, c) = (cur.0 as isize, cur.1 as isize);
        let mut found = None;
        for i in 1..=8 {
            let d = (back + i) % 8;
            let (nr, nc) = (r + MOORE[d].0, c + MOORE[d].1);
            if mask.get_signed(nr, nc) {
                found = Some(((nr as usize, nc as usize), d));
                break;
            }
        }
        let Some((next, d)) = found else {
            return points;
        };
        if cur == start {
            match second {
                None => second = Some(next),
                Some(s) if s == next => break,
                Some(_) => {}
            }
        }
        let prev = (d + 7) % 8;
        let (qr, qc) = (r + MOORE[prev].0, c + MOORE[prev].1);
        back = moore_direction(qr - next.0 as isize, qc - next.1 as isize);
        points.push(next);
        cur = next;
    }
    if points.len() > 1 && points.last() == Some(&start) {
        points.pop();
    }
    points
}

/// Moore-traced outer contours of every 8-connected component,
/// concatenated in component order.
pub fn contour(mask: &BinaryMask) -> Contour {
    let mut points = Vec::new();
    for comp in connected_components(mask, Connectivity::Eight) {
        let start = comp.pixels().next().expect("components are non-empty");
        points.extend(trace_component(&comp, start));
    }
    Contour { points }
}
