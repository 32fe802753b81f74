//! Random segmentation corruptions: straight-line splits, merges of touching
//! instances, deletions, and blobs carved from the background.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{connected_components, label_components, BinaryMask, Connectivity, LabelImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Split,
    Merge,
    Delete,
    Add,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::Split,
        CorruptionKind::Merge,
        CorruptionKind::Delete,
        CorruptionKind::Add,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub num_corruptions: usize,
    pub kinds: Vec<CorruptionKind>,
    /// Both split pieces and every added blob are at least this large.
    pub min_piece_area: usize,
    pub blob_radius_min: f64,
    pub blob_radius_max: f64,
    /// Redraws per corruption before giving up on it.
    pub max_tries: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            num_corruptions: 3,
            kinds: CorruptionKind::ALL.to_vec(),
            min_piece_area: 64,
            blob_radius_min: 6.0,
            blob_radius_max: 12.0,
            max_tries: 50,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() && self.num_corruptions > 0 {
            return Err(Error::ConfigInvalid("kinds".into()));
        }
        if !(self.blob_radius_min > 0.0 && self.blob_radius_min <= self.blob_radius_max) {
            return Err(Error::ConfigInvalid("blob_radius_min".into()));
        }
        Ok(())
    }
}

fn is_connected(mask: &BinaryMask) -> bool {
    label_components(mask, Connectivity::Eight).1.len() == 2
}

fn try_split(li: &mut LabelImage, rng: &mut ChaCha8Rng, cfg: &CorruptionConfig) -> bool {
    let candidates: Vec<(u32, BinaryMask)> = li
        .instance_ids()
        .into_iter()
        .map(|id| (id, li.mask_of(id)))
        .filter(|(_, m)| m.area() >= 2 * cfg.min_piece_area)
        .collect();
    let Some((_, mask)) = candidates.choose(rng) else {
        return false;
    };
    let pixels: Vec<_> = mask.pixels().collect();
    let pivot = pixels[rng.random_range(0..pixels.len())];
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    let (w, h) = li.dims();
    let side = BinaryMask::from_fn(w, h, |r, col| {
        mask.get(r, col)
            && (r as f64 - pivot.0 as f64) * c - (col as f64 - pivot.1 as f64) * s > 0.0
    });
    let rest = mask.difference(&side);
    if side.area() < cfg.min_piece_area
        || rest.area() < cfg.min_piece_area
        || !is_connected(&side)
        || !is_connected(&rest)
    {
        return false;
    }
    let new_id = li.max_label() + 1;
    for (r, col) in side.pixels() {
        li.set(r, col, new_id);
    }
    true
}

/// Unordered pairs of instances sharing a 4-adjacent pixel boundary.
pub(crate) fn touching_pairs(li: &LabelImage) -> Vec<(u32, u32)> {
    let (w, h) = li.dims();
    let mut pairs = BTreeSet::new();
    for r in 0..h {
        for c in 0..w {
            let a = li.get(r, c);
            if a == 0 {
                continue;
            }
            for (nr, nc) in [(r + 1, c), (r, c + 1)] {
                if nr < h && nc < w {
                    let b = li.get(nr, nc);
                    if b != 0 && b != a {
                        pairs.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
    }
    pairs.into_iter().collect()
}

fn try_merge(li: &mut LabelImage, rng: &mut ChaCha8Rng) -> bool {
    let pairs = touching_pairs(li);
    let Some(&(a, b)) = pairs.choose(rng) else {
        return false;
    };
    let (w, h) = li.dims();
    for r in 0..h {
        for c in 0..w {
            if li.get(r, c) == b {
                li.set(r, c, a);
            }
        }
    }
    true
}

fn try_delete(li: &mut LabelImage, rng: &mut ChaCha8Rng) -> bool {
    let ids = li.instance_ids();
    let Some(&id) = ids.choose(rng) else {
        return false;
    };
    let (w, h) = li.dims();
    for r in 0..h {
        for c in 0..w {
            if li.get(r, c) == id {
                li.set(r, c, 0);
            }
        }
    }
    true
}

fn try_add(li: &mut LabelImage, rng: &mut ChaCha8Rng, cfg: &CorruptionConfig) -> bool {
    let (w, h) = li.dims();
    let background = li.foreground().complement();
    let bg: Vec<_> = background.pixels().collect();
    if bg.is_empty() {
        return false;
    }
    let center = bg[rng.random_range(0..bg.len())];
    let ra = rng.random_range(cfg.blob_radius_min..=cfg.blob_radius_max);
    let rb = rng.random_range(cfg.blob_radius_min..=cfg.blob_radius_max);
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    let blob = BinaryMask::from_fn(w, h, |r, col| {
        let (dr, dc) = (r as f64 - center.0 as f64, col as f64 - center.1 as f64);
        let (a, b) = (dr * c - dc * s, dr * s + dc * c);
        background.get(r, col) && (a / ra).powi(2) + (b / rb).powi(2) <= 1.0
    });
    let Some(piece) = connected_components(&blob, Connectivity::Eight).into_iter().next() else {
        return false;
    };
    if piece.area() < cfg.min_piece_area {
        return false;
    }
    let new_id = li.max_label() + 1;
    for (r, col) in piece.pixels() {
        li.set(r, col, new_id);
    }
    true
}

/// Apply `num_corruptions` random corruptions and report which kinds were
/// applied, in order. Deterministic in `seed`.
pub fn corrupt_segmentation_logged(
    labels: &LabelImage,
    seed: u64,
    config: &CorruptionConfig,
) -> Result<(LabelImage, Vec<CorruptionKind>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut li = labels.clone();
    let mut applied = Vec::new();
    for _ in 0..config.num_corruptions {
        for _ in 0..config.max_tries {
            let kind = *config.kinds.choose(&mut rng).expect("kinds validated");
            let ok = match kind {
                CorruptionKind::Split => try_split(&mut li, &mut rng, config),
                CorruptionKind::Merge => try_merge(&mut li, &mut rng),
                CorruptionKind::Delete => try_delete(&mut li, &mut rng),
                CorruptionKind::Add => try_add(&mut li, &mut rng, config),
            };
            if ok {
                applied.push(kind);
                break;
            }
        }
    }
    Ok((li, applied))
}

pub fn corrupt_segmentation(labels: &LabelImage, seed: u64, config: &CorruptionConfig) -> Result<LabelImage> {
    corrupt_segmentation_logged(labels, seed, config).map(|(li, _)| li)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_touching() -> LabelImage {
        let mut li = LabelImage::new(40, 20);
        for r in 2..18 {
            for c in 2..20 {
                li.set(r, c, 1);
            }
            for c in 20..38 {
                li.set(r, c, 2);
            }
        }
        li
    }

    #[test]
    fn zero_corruptions_is_identity() {
        let li = two_touching();
        let cfg = CorruptionConfig {
            num_corruptions: 0,
            ..Default::default()
        };
        assert_eq!(corrupt_segmentation(&li, 5, &cfg).unwrap(), li);
    }

    #[test]
    fn one_merge_leaves_one_instance() {
        let li = two_touching();
        let cfg = CorruptionConfig {
            num_corruptions: 1,
            kinds: vec![CorruptionKind::Merge],
            ..Default::default()
        };
        let out = corrupt_segmentation(&li, 9, &cfg).unwrap();
        assert_eq!(out.instance_ids().len(), 1);
        assert_eq!(out.foreground(), li.foreground());
    }

    #[test]
    fn split_pieces_meet_minimum() {
        let li = two_touching();
        let cfg = CorruptionConfig {
            num_corruptions: 1,
            kinds: vec![CorruptionKind::Split],
            min_piece_area: 40,
            ..Default::default()
        };
        for seed in 0..20 {
            let (out, log) = corrupt_segmentation_logged(&li, seed, &cfg).unwrap();
            assert_eq!(log, vec![CorruptionKind::Split]);
            let ids = out.instance_ids();
            assert_eq!(ids.len(), 3);
            for id in ids {
                assert!(out.mask_of(id).area() >= 40);
            }
        }
    }

    #[test]
    fn deterministic() {
        let li = two_touching();
        let cfg = CorruptionConfig::default();
        assert_eq!(
            corrupt_segmentation(&li, 77, &cfg).unwrap(),
            corrupt_segmentation(&li, 77, &cfg).unwrap()
        );
    }
}
