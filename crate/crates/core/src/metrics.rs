//! Segmentation evaluation: pairwise P/R/F, Hungarian assignment, classical
//! and object-size-normalized overlap and boundary measures, F@.75, and
//! nDCG.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{boundary, dilate, extract_instances, BinaryMask, LabelImage};
use crate::scene::load_labels;

/// Default boundary tolerance in pixels.
pub const BOUNDARY_TOL: f64 = 2.0;

/// Matched pairs need at least this pairwise F to count toward F@.75.
pub const F_MATCH: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f: f64,
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Prf {
    fn from_counts(hit_p: usize, total_p: usize, hit_r: usize, total_r: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(hit_p, total_p), ratio(hit_r, total_r));
        Prf { p, r, f: f_measure(p, r) }
    }
}

/// Precision and recall of `pred` against `gt` by pixel overlap.
pub fn pairwise_prf(pred: &BinaryMask, gt: &BinaryMask) -> Prf {
    let inter = pred.intersection_area(gt);
    Prf::from_counts(inter, pred.area(), inter, gt.area())
}

/// Boundary precision and recall: boundary pixels of one mask within `tol`
/// pixels of the other's boundary.
pub fn pairwise_boundary_prf(pred: &BinaryMask, gt: &BinaryMask, tol: f64) -> Prf {
    let (bp, bg) = (boundary(pred), boundary(gt));
    boundary_prf_of(&bp, &dilate(&bp, tol), &bg, &dilate(&bg, tol))
}

fn boundary_prf_of(bp: &BinaryMask, bp_dil: &BinaryMask, bg: &BinaryMask, bg_dil: &BinaryMask) -> Prf {
    Prf::from_counts(
        bp.intersection_area(bg_dil),
        bp.area(),
        bg.intersection_area(bp_dil),
        bg.area(),
    )
}

/// Maximum-weight matching of a dense `n`×`m` weight matrix. Returns one
/// `(row, col)` pair per row when `n ≤ m`, per column otherwise, sorted by
/// row. Ties between optimal matchings resolve in the solver's scan order.
pub fn max_weight_matching(weights: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = weights.len();
    let m = weights.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let max = weights.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if n <= m {
        let cost: Vec<Vec<f64>> = weights.iter().map(|r| r.iter().map(|w| max - w).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = solve_min(&cost).into_iter().enumerate().collect();
        pairs.sort_unstable();
        pairs
    } else {
        let cost: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| max - weights[i][j]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = solve_min(&cost).into_iter().enumerate().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        pairs
    }
}

/// Shortest augmenting path Hungarian method with potentials, `n ≤ m`.
/// Returns the column assigned to each row.
fn solve_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            ans[p[j] - 1] = j - 1;
        }
    }
    ans
}

/// One-to-one pairs `(pred index, gt index)` with positive pairwise F.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

/// Pairwise P/R/F between every prediction and every ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub n: usize,
    pub m: usize,
    prf: Vec<Prf>,
}

impl PairTable {
    pub fn new(n: usize, m: usize, f: impl Fn(usize, usize) -> Prf) -> PairTable {
        let mut prf = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                prf.push(f(i, j));
            }
        }
        PairTable { n, m, prf }
    }

    pub fn overlap(preds: &[BinaryMask], gts: &[BinaryMask]) -> PairTable {
        PairTable::new(preds.len(), gts.len(), |i, j| pairwise_prf(&preds[i], &gts[j]))
    }

    pub fn boundary(preds: &[BinaryMask], gts: &[BinaryMask], tol: f64) -> PairTable {
        let bp: Vec<BinaryMask> = preds.iter().map(boundary).collect();
        let bg: Vec<BinaryMask> = gts.iter().map(boundary).collect();
        let bp_dil: Vec<BinaryMask> = bp.iter().map(|b| dilate(b, tol)).collect();
        let bg_dil: Vec<BinaryMask> = bg.iter().map(|b| dilate(b, tol)).collect();
        let boxes = |v: &[BinaryMask]| v.iter().map(|b| b.bbox()).collect::<Vec<_>>();
        let (bp_box, bg_box) = (boxes(&bp_dil), boxes(&bg));
        PairTable::new(preds.len(), gts.len(), |i, j| match (bp_box[i], bg_box[j]) {
            (Some(a), Some(b)) if a.gap_sq(b) == 0.0 => boundary_prf_of(&bp[i], &bp_dil[i], &bg[j], &bg_dil[j]),
            _ => Prf::default(),
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Prf {
        self.prf[i * self.m + j]
    }

    pub fn f_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.m).map(|j| self.get(i, j).f).collect()).collect()
    }

    /// Assignment maximizing total pairwise F; pairs with F = 0 are dropped.
    pub fn assign(&self) -> Assignment {
        let pairs = max_weight_matching(&self.f_matrix())
            .into_iter()
            .filter(|&(i, j)| self.get(i, j).f > 0.0)
            .collect();
        Assignment { pairs }
    }
}

pub fn hungarian_match(preds: &[BinaryMask], gts: &[BinaryMask]) -> Assignment {
    PairTable::overlap(preds, gts).assign()
}

/// Object-size-normalized measures.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Osn {
    pub p: f64,
    pub r: f64,
    pub f: f64,
    pub f_at_75: f64,
}

pub fn osn_metrics(table: &PairTable, a: &Assignment) -> Osn {
    let (n, m) = (table.n, table.m);
    match (n, m) {
        (0, 0) => {
            return Osn {
                p: 1.0,
                r: 1.0,
                f: 1.0,
                f_at_75: 1.0,
            }
        }
        (0, _) | (_, 0) => return Osn::default(),
        _ => {}
    }
    let (mut sp, mut sr, mut sf, mut hits) = (0.0, 0.0, 0.0, 0usize);
    for &(i, j) in &a.pairs {
        let q = table.get(i, j);
        sp += q.p;
        sr += q.r;
        sf += q.f;
        hits += (q.f >= F_MATCH) as usize;
    }
    let big = n.max(m) as f64;
    Osn {
        p: sp / n as f64,
        r: sr / m as f64,
        f: sf / big,
        f_at_75: hits as f64 / big,
    }
}

/// Fraction of ground-truth objects matched with F ≥ 0.75.
pub fn f_at_75(table: &PairTable, a: &Assignment) -> f64 {
    if table.m == 0 {
        return if table.n == 0 { 1.0 } else { 0.0 };
    }
    let hits = a.pairs.iter().filter(|&&(i, j)| table.get(i, j).f >= F_MATCH).count();
    hits as f64 / table.m as f64
}

/// Size-weighted P/R/F: matched intersections over total predicted and
/// total ground-truth size. `size` and `hit` give per-mask size and the
/// size of the matched intersection.
fn classical(
    n: usize,
    m: usize,
    a: &Assignment,
    pred_size: impl Fn(usize) -> usize,
    gt_size: impl Fn(usize) -> usize,
    hit_p: impl Fn(usize, usize) -> usize,
    hit_r: impl Fn(usize, usize) -> usize,
) -> Prf {
    match (n, m) {
        (0, 0) => {
            return Prf {
                p: 1.0,
                r: 1.0,
                f: 1.0,
            }
        }
        (0, _) | (_, 0) => return Prf::default(),
        _ => {}
    }
    let tp: usize = (0..n).map(&pred_size).sum();
    let tg: usize = (0..m).map(&gt_size).sum();
    let hp: usize = a.pairs.iter().map(|&(i, j)| hit_p(i, j)).sum();
    let hr: usize = a.pairs.iter().map(|&(i, j)| hit_r(i, j)).sum();
    Prf::from_counts(hp, tp, hr, tg)
}

/// Overlap P/R/F weighted by object size. Unmatched predictions count in
/// the precision denominator, unmatched ground truth in the recall
/// denominator.
pub fn classical_overlap(preds: &[BinaryMask], gts: &[BinaryMask], a: &Assignment) -> Prf {
    classical(
        preds.len(),
        gts.len(),
        a,
        |i| preds[i].area(),
        |j| gts[j].area(),
        |i, j| preds[i].intersection_area(&gts[j]),
        |i, j| preds[i].intersection_area(&gts[j]),
    )
}

/// Boundary P/R/F weighted by boundary length, with tolerance `tol`.
pub fn classical_boundary(preds: &[BinaryMask], gts: &[BinaryMask], a: &Assignment, tol: f64) -> Prf {
    let bp: Vec<BinaryMask> = preds.iter().map(boundary).collect();
    let bg: Vec<BinaryMask> = gts.iter().map(boundary).collect();
    classical(
        preds.len(),
        gts.len(),
        a,
        |i| bp[i].area(),
        |j| bg[j].area(),
        |i, j| bp[i].intersection_area(&dilate(&bg[j], tol)),
        |i, j| bg[j].intersection_area(&dilate(&bp[i], tol)),
    )
}

/// Full evaluation of one prediction against one ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub overlap: Prf,
    pub boundary: Prf,
    pub overlap_n: Prf,
    pub boundary_n: Prf,
    pub f_at_75: f64,
    pub f_n_at_75: f64,
    pub num_pred: usize,
    pub num_gt: usize,
}

impl EvalReport {
    /// Every metric by name, in a fixed order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("overlap_p", self.overlap.p),
            ("overlap_r", self.overlap.r),
            ("overlap_f", self.overlap.f),
            ("boundary_p", self.boundary.p),
            ("boundary_r", self.boundary.r),
            ("boundary_f", self.boundary.f),
            ("overlap_p_n", self.overlap_n.p),
            ("overlap_r_n", self.overlap_n.r),
            ("overlap_f_n", self.overlap_n.f),
            ("boundary_p_n", self.boundary_n.p),
            ("boundary_r_n", self.boundary_n.r),
            ("boundary_f_n", self.boundary_n.f),
            ("f_at_75", self.f_at_75),
            ("f_n_at_75", self.f_n_at_75),
        ]
    }
}

fn instance_masks(li: &LabelImage) -> Vec<BinaryMask> {
    extract_instances(li).into_values().collect()
}

pub fn evaluate_masks(preds: &[BinaryMask], gts: &[BinaryMask], tol: f64) -> EvalReport {
    let ot = PairTable::overlap(preds, gts);
    let oa = ot.assign();
    let bt = PairTable::boundary(preds, gts, tol);
    let ba = bt.assign();
    let on = osn_metrics(&ot, &oa);
    let bn = osn_metrics(&bt, &ba);
    EvalReport {
        overlap: classical_overlap(preds, gts, &oa),
        boundary: classical_boundary(preds, gts, &ba, tol),
        overlap_n: Prf {
            p: on.p,
            r: on.r,
            f: on.f,
        },
        boundary_n: Prf {
            p: bn.p,
            r: bn.r,
            f: bn.f,
        },
        f_at_75: f_at_75(&ot, &oa),
        f_n_at_75: on.f_at_75,
        num_pred: preds.len(),
        num_gt: gts.len(),
    }
}

pub fn evaluate(pred: &LabelImage, gt: &LabelImage, tol: f64) -> Result<EvalReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::FrameMismatch("prediction and ground truth".into()));
    }
    Ok(evaluate_masks(&instance_masks(pred), &instance_masks(gt), tol))
}

/// Overlap measures only, without the boundary tables.
pub fn overlap_osn(pred: &LabelImage, gt: &LabelImage) -> Osn {
    let (p, g) = (instance_masks(pred), instance_masks(gt));
    let t = PairTable::overlap(&p, &g);
    osn_metrics(&t, &t.assign())
}

/// Ground-truth graph score `0.8 F + 0.2 F@.75` with the size-weighted
/// overlap F.
pub fn oracle_score(pred: &LabelImage, gt: &LabelImage) -> f64 {
    let (p, g) = (instance_masks(pred), instance_masks(gt));
    let t = PairTable::overlap(&p, &g);
    let a = t.assign();
    0.8 * classical_overlap(&p, &g, &a).f + 0.2 * f_at_75(&t, &a)
}

/// Discounted cumulative gain with gains `2^rel - 1`.
pub fn dcg(relevances: &[u32]) -> f64 {
    relevances
        .iter()
        .enumerate()
        .map(|(i, &rel)| (2f64.powi(rel as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG of the given order over DCG of the ideal (descending) order; 1 when
/// the ideal DCG is 0.
pub fn ndcg(relevances: &[u32]) -> Result<f64> {
    if relevances.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut ideal = relevances.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(&ideal);
    if best == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg(relevances) / best)
}

/// Mean and population standard deviation of each metric.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

pub fn aggregate(reports: &[EvalReport]) -> Aggregate {
    let mut out = Aggregate::default();
    if reports.is_empty() {
        return out;
    }
    let n = reports.len() as f64;
    for (k, (name, _)) in EvalReport::default().values().into_iter().enumerate() {
        let xs: Vec<f64> = reports.iter().map(|r| r.values()[k].1).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        out.mean.insert(name.to_string(), mean);
        out.std.insert(name.to_string(), var.sqrt());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub tol: f64,
    pub per_image: Vec<SceneReport>,
    pub aggregate: Aggregate,
}

/// Prediction file of a scene: `refined_labels.png` if present, else
/// `labels.png`.
pub fn prediction_path(dir: &Path) -> Option<PathBuf> {
    ["refined_labels.png", "labels.png"]
        .iter()
        .map(|f| dir.join(f))
        .find(|p| p.is_file())
}

/// Scene ids: sorted names of subdirectories of `gt_dir` with `labels.png`.
pub fn scene_ids(gt_dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(gt_dir).map_err(|e| Error::io(gt_dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(gt_dir, e))?;
        if entry.path().join("labels.png").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Evaluate every ground-truth scene against its prediction. Scenes are
/// evaluated in parallel; results are in scene-id order.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path, tol: f64) -> Result<DatasetReport> {
    let ids = scene_ids(gt_dir)?;
    let per_image = ids
        .par_iter()
        .map(|id| {
            let gt = load_labels(&gt_dir.join(id).join("labels.png"))?;
            let path = prediction_path(&pred_dir.join(id)).ok_or_else(|| Error::MissingScene(id.clone()))?;
            let pred = load_labels(&path)?;
            if pred.dims() != gt.dims() {
                return Err(Error::FrameMismatch(id.clone()));
            }
            Ok(SceneReport {
                scene: id.clone(),
                report: evaluate(&pred, &gt, tol)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<EvalReport> = per_image.iter().map(|s| s.report).collect();
    Ok(DatasetReport {
        tol,
        aggregate: aggregate(&reports),
        per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, r0: usize, c0: usize, r1: usize, c1: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |r, c| (r0..r1).contains(&r) && (c0..c1).contains(&c))
    }

    #[test]
    fn pairwise_examples() {
        let a = rect(20, 20, 0, 0, 10, 10);
        assert_eq!(pairwise_prf(&a, &a), Prf { p: 1.0, r: 1.0, f: 1.0 });
        let b = rect(20, 20, 12, 12, 15, 15);
        assert_eq!(pairwise_prf(&a, &b), Prf::default());
        let pred = rect(20, 20, 0, 0, 10, 10);
        let gt = rect(20, 20, 0, 0, 5, 10);
        let q = pairwise_prf(&pred, &gt);
        assert_eq!((q.p, q.r), (0.5, 1.0));
        assert!((q.f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pairwise_prf(&BinaryMask::new(20, 20), &gt).p, 0.0);
    }

    #[test]
    fn greedy_trap() {
        let pairs = max_weight_matching(&[vec![0.9, 0.8], vec![0.8, 0.1]]);
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        assert!(max_weight_matching(&[]).is_empty());
        assert_eq!(max_weight_matching(&[vec![0.2, 0.7, 0.1]]), vec![(0, 1)]);
        assert_eq!(max_weight_matching(&[vec![0.2], vec![0.7], vec![0.1]]), vec![(1, 0)]);
    }

    #[test]
    fn osn_examples() {
        let (w, h) = (40, 40);
        let g1 = rect(w, h, 0, 0, 10, 10);
        let g2 = rect(w, h, 20, 20, 30, 30);
        let fp = rect(w, h, 0, 30, 5, 35);
        let preds = vec![g1.clone(), g2.clone(), fp];
        let gts = vec![g1.clone(), g2];
        let t = PairTable::overlap(&preds, &gts);
        let o = osn_metrics(&t, &t.assign());
        assert!((o.f - 2.0 / 3.0).abs() < 1e-15);
        assert!((o.f_at_75 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f_at_75(&t, &t.assign()), 1.0);

        // One object cut into two halves.
        let halves = vec![rect(w, h, 0, 0, 5, 10), rect(w, h, 5, 0, 10, 10)];
        let t = PairTable::overlap(&halves, &[g1]);
        let o = osn_metrics(&t, &t.assign());
        assert!((o.p - 0.5).abs() < 1e-15);
        assert!((o.r - 0.5).abs() < 1e-15);
        assert!((o.f - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_counts() {
        let empty = PairTable::overlap(&[], &[]);
        assert_eq!(osn_metrics(&empty, &Assignment::default()).f, 1.0);
        assert_eq!(f_at_75(&empty, &Assignment::default()), 1.0);
        let one = vec![rect(10, 10, 0, 0, 3, 3)];
        let t = PairTable::overlap(&one, &[]);
        assert_eq!(osn_metrics(&t, &Assignment::default()), Osn::default());
        assert_eq!(f_at_75(&t, &Assignment::default()), 0.0);
        let t = PairTable::overlap(&[], &one);
        assert_eq!(osn_metrics(&t, &Assignment::default()), Osn::default());
    }

    #[test]
    fn five_predictions_two_objects() {
        let (w, h) = (60, 20);
        let gts: Vec<BinaryMask> = (0..2).map(|k| rect(w, h, 0, 10 * k, 8, 10 * k + 8)).collect();
        let mut preds = gts.clone();
        for k in 0..3 {
            preds.push(rect(w, h, 12, 10 * k, 15, 10 * k + 3));
        }
        let t = PairTable::overlap(&preds, &gts);
        let a = t.assign();
        assert_eq!(f_at_75(&t, &a), 1.0);
        assert!((osn_metrics(&t, &a).f_at_75 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn size_domination() {
        let (w, h) = (100, 40);
        let big = rect(w, h, 0, 0, 10, 100);
        let small = rect(w, h, 20, 0, 21, 10);
        assert_eq!((big.area(), small.area()), (1000, 10));
        let preds = vec![big.clone()];
        let gts = vec![big, small];
        let a = hungarian_match(&preds, &gts);
        let c = classical_overlap(&preds, &gts, &a);
        assert!((c.r - 1000.0 / 1010.0).abs() < 1e-15);
        let t = PairTable::overlap(&preds, &gts);
        assert_eq!(osn_metrics(&t, &a).r, 0.5);
    }

    #[test]
    fn boundary_tolerance() {
        let a = rect(30, 30, 5, 5, 20, 20);
        let b = rect(30, 30, 6, 5, 21, 20);
        let q = pairwise_boundary_prf(&a, &b, 2.0);
        assert_eq!((q.p, q.r, q.f), (1.0, 1.0, 1.0));
        let r = evaluate_masks(&[a], &[b], 2.0);
        assert_eq!(r.boundary.f, 1.0);
        assert_eq!(r.boundary_n.f, 1.0);
        assert!(r.overlap.f < 1.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg(&[3, 2, 1, 0]).unwrap(), 1.0);
        let worst = (0.0 + 1.0 / 3f64.log2() + 3.0 / 2.0 + 7.0 / 5f64.log2()) / (7.0 + 3.0 / 3f64.log2() + 1.0 / 2.0);
        assert!((ndcg(&[0, 1, 2, 3]).unwrap() - worst).abs() < 1e-15);
        assert_eq!(ndcg(&[0, 0, 0]).unwrap(), 1.0);
        assert!(matches!(ndcg(&[]), Err(Error::EmptyList)));
    }

    #[test]
    fn oracle_score_examples() {
        let mut gt = LabelImage::new(20, 20);
        for r in 0..10 {
            for c in 0..10 {
                gt.set(r, c, 1);
                gt.set(r + 10, c + 10, 2);
            }
        }
        assert_eq!(oracle_score(&gt, &gt), 1.0);
        assert_eq!(oracle_score(&LabelImage::new(20, 20), &gt), 0.0);
        // Instance 2 predicted on only half its pixels.
        let mut half = gt.clone();
        for r in 15..20 {
            for c in 10..20 {
                half.set(r, c, 0);
            }
        }
        // Size-weighted P = 150/150, R = 150/200. The halved object has
        // pairwise F = 2/3 < 0.75, so F@.75 = 1/2.
        let expect = 0.8 * (2.0 * 0.75 / 1.75) + 0.2 * 0.5;
        assert!((oracle_score(&half, &gt) - expect).abs() < 1e-15);
    }

    #[test]
    fn aggregate_single() {
        let r = evaluate_masks(&[rect(10, 10, 0, 0, 4, 4)], &[rect(10, 10, 0, 0, 4, 5)], 2.0);
        let agg = aggregate(&[r]);
        assert_eq!(agg.mean["overlap_f"], r.overlap.f);
        assert_eq!(agg.std["overlap_f"], 0.0);
    }
}
