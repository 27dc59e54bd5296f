//! Reference implementations used as oracles. They share no code with the
//! library beyond its plain data types.
#![allow(dead_code)]

use lungdet::{BBox, Detection};

/// Integer box on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl GridBox {
    pub fn to_bbox(self) -> BBox {
        BBox { x: self.x as f64, y: self.y as f64, w: self.w as f64, h: self.h as f64 }
    }

    /// Row bitmasks of the covered unit cells; grid up to 128 wide.
    fn mask(&self) -> Vec<(u32, u128)> {
        let row = if self.w == 0 { 0 } else { (((1u128 << (self.w - 1)) << 1).wrapping_sub(1)) << self.x };
        (self.y..self.y + self.h).map(|r| (r, row)).collect()
    }
}

/// IoU by counting covered unit cells.
pub fn cell_iou(a: &GridBox, b: &GridBox) -> f64 {
    let (ma, mb) = (a.mask(), b.mask());
    let rows = |m: &[(u32, u128)], r: u32| m.iter().find(|(y, _)| *y == r).map_or(0, |(_, bits)| *bits);
    let lo = a.y.min(b.y);
    let hi = (a.y + a.h).max(b.y + b.h);
    let (mut inter, mut union) = (0u32, 0u32);
    for r in lo..hi {
        let (ra, rb) = (rows(&ma, r), rows(&mb, r));
        inter += (ra & rb).count_ones();
        union += (ra | rb).count_ones();
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU with exact integer areas.
pub fn int_iou(a: &GridBox, b: &GridBox) -> f64 {
    let (a0, a1) = (a.x as i64, (a.x + a.w) as i64);
    let (b0, b1) = (b.x as i64, (b.x + b.w) as i64);
    let (c0, c1) = (a.y as i64, (a.y + a.h) as i64);
    let (d0, d1) = (b.y as i64, (b.y + b.h) as i64);
    let iw = (a1.min(b1) - a0.max(b0)).max(0);
    let ih = (c1.min(d1) - c0.max(d0)).max(0);
    let inter = iw * ih;
    let union = (a.w * a.h) as i64 + (b.w * b.h) as i64 - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone)]
pub struct GridInstance {
    pub truth: Vec<GridBox>,
    /// (confidence, box)
    pub preds: Vec<(f64, GridBox)>,
}

/// Precision term at one threshold, by repeated selection: take the most
/// confident unvisited prediction (lowest index on ties), and give it the
/// free truth box with the best passing IoU (lowest index on ties).
fn oracle_term(inst: &GridInstance, t: f64, strict: bool) -> f64 {
    let passes = |v: f64| if strict { v > t } else { v >= t };
    let mut visited = vec![false; inst.preds.len()];
    let mut taken = vec![false; inst.truth.len()];
    let mut tp = 0usize;
    for _ in 0..inst.preds.len() {
        let mut pick: Option<usize> = None;
        for (i, (c, _)) in inst.preds.iter().enumerate() {
            if visited[i] {
                continue;
            }
            if pick.is_none_or(|p| *c > inst.preds[p].0) {
                pick = Some(i);
            }
        }
        let p = pick.unwrap();
        visited[p] = true;
        let mut best: Option<(usize, f64)> = None;
        for (j, tb) in inst.truth.iter().enumerate() {
            let v = cell_iou(&inst.preds[p].1, tb);
            if taken[j] || !passes(v) {
                continue;
            }
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            tp += 1;
        }
    }
    let fp = inst.preds.len() - tp;
    let fn_ = inst.truth.len() - tp;
    if tp + fp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp + fn_) as f64
    }
}

/// Per-image AP; `None` when both lists are empty (excluded).
pub fn oracle_ap(inst: &GridInstance, thresholds: &[f64], strict: bool) -> Option<f64> {
    if inst.truth.is_empty() && inst.preds.is_empty() {
        return None;
    }
    let s: f64 = thresholds.iter().map(|&t| oracle_term(inst, t, strict)).sum();
    Some(s / thresholds.len() as f64)
}

pub fn oracle_map(insts: &[GridInstance], thresholds: &[f64], strict: bool) -> Option<f64> {
    let aps: Vec<f64> = insts.iter().filter_map(|i| oracle_ap(i, thresholds, strict)).collect();
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

/// O(n²) NMS: rank by (confidence desc, index asc); keep a box unless some
/// already-kept box overlaps it above the threshold. Returns input indices.
pub fn reference_nms(preds: &[(f64, GridBox)], thr: f64) -> Vec<usize> {
    let mut ranked: Vec<usize> = (0..preds.len()).collect();
    ranked.sort_by(|&i, &j| preds[j].0.partial_cmp(&preds[i].0).unwrap().then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in ranked {
        if kept.iter().all(|&k| int_iou(&preds[k].1, &preds[i].1) <= thr) {
            kept.push(i);
        }
    }
    kept
}

pub fn to_detections(preds: &[(f64, GridBox)]) -> Vec<Detection> {
    preds.iter().map(|(c, b)| Detection::new(b.to_bbox(), *c)).collect()
}

/// Small deterministic generator (SplitMix64) so fixtures do not depend on
/// the library's own RNG choice.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `0..n`.
    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}

/// Box in a `grid`-sized square, sides in `min_side..=max_side`, kept inside
/// the grid.
pub fn grid_box(rng: &mut SplitMix, grid: u32, min_side: u32, max_side: u32) -> GridBox {
    let w = min_side + rng.below((max_side - min_side + 1) as u64) as u32;
    let h = min_side + rng.below((max_side - min_side + 1) as u64) as u32;
    let x = rng.below((grid - w + 1) as u64) as u32;
    let y = rng.below((grid - h + 1) as u64) as u32;
    GridBox { x, y, w, h }
}

/// Instances with up to 6 truths and 8 predictions on a 64×64 grid. About
/// half of the predictions are perturbed copies of a truth so that matches
/// actually happen; confidences are coarse so ties occur.
pub fn random_instance(rng: &mut SplitMix) -> GridInstance {
    let n_truth = rng.below(7) as usize;
    let n_pred = rng.below(9) as usize;
    let truth: Vec<GridBox> = (0..n_truth).map(|_| grid_box(rng, 64, 0, 32)).collect();
    let preds = (0..n_pred)
        .map(|_| {
            let b = if !truth.is_empty() && rng.below(2) == 0 {
                let t = truth[rng.below(truth.len() as u64) as usize];
                let dx = rng.below(5) as i64 - 2;
                let dy = rng.below(5) as i64 - 2;
                let dw = rng.below(5) as i64 - 2;
                let dh = rng.below(5) as i64 - 2;
                let w = (t.w as i64 + dw).clamp(0, 32) as u32;
                let h = (t.h as i64 + dh).clamp(0, 32) as u32;
                let x = (t.x as i64 + dx).clamp(0, (64 - w) as i64) as u32;
                let y = (t.y as i64 + dy).clamp(0, (64 - h) as i64) as u32;
                GridBox { x, y, w, h }
            } else {
                grid_box(rng, 64, 0, 32)
            };
            (rng.below(21) as f64 / 20.0, b)
        })
        .collect();
    GridInstance { truth, preds }
}
