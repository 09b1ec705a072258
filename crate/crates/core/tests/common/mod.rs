//! Independent reference implementations shared by the oracle tests and the
//! acceptance harness. Nothing here calls into the library's math; boxes are
//! integer rectangles whose overlaps are counted cell by cell.
#![allow(dead_code)]

pub mod cases;

use dggn::diagram::BBox;
use dggn::model::GruParams;
use rand::Rng;

/// `[x0, y0, x1, y1]` on an integer grid.
pub type Cell = [i32; 4];

pub fn to_bbox(c: Cell) -> BBox {
    BBox::new(c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64).unwrap()
}

pub fn random_cell<R: Rng>(rng: &mut R, grid: i32) -> Cell {
    let x0 = rng.gen_range(0..grid - 1);
    let y0 = rng.gen_range(0..grid - 1);
    [x0, y0, rng.gen_range(x0 + 1..=grid), rng.gen_range(y0 + 1..=grid)]
}

fn covers(c: Cell, x: i32, y: i32) -> bool {
    x >= c[0] && x < c[2] && y >= c[1] && y < c[3]
}

pub fn cell_iou(a: Cell, b: Cell) -> f64 {
    let lo_x = a[0].min(b[0]);
    let hi_x = a[2].max(b[2]);
    let lo_y = a[1].min(b[1]);
    let hi_y = a[3].max(b[3]);
    let (mut inter, mut union) = (0u32, 0u32);
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let (ia, ib) = (covers(a, x, y), covers(b, x, y));
            inter += u32::from(ia && ib);
            union += u32::from(ia || ib);
        }
    }
    if inter == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PredCell {
    pub src: Cell,
    pub dst: Cell,
    pub confidence: f64,
}

/// Indices by descending confidence, ties by position.
pub fn ranking(preds: &[PredCell]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    // Insertion sort keeps equal keys in place.
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && preds[idx[j - 1]].confidence < preds[idx[j]].confidence {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    idx
}

/// Hit flags down the ranking: each prediction takes the unclaimed GT
/// relation with the largest mean endpoint IoU, if that reaches `tau`.
pub fn hits(preds: &[PredCell], gt: &[(Cell, Cell)], tau: f64) -> Vec<bool> {
    let mut claimed = vec![false; gt.len()];
    let mut out = Vec::new();
    for &pi in &ranking(preds) {
        let p = preds[pi];
        let scores: Vec<f64> = gt
            .iter()
            .map(|&(s, d)| (cell_iou(p.src, s) + cell_iou(p.dst, d)) / 2.0)
            .collect();
        let mut best = None;
        for g in 0..gt.len() {
            if claimed[g] || scores[g] < tau {
                continue;
            }
            match best {
                Some(b) if scores[b] >= scores[g] => {}
                _ => best = Some(g),
            }
        }
        if let Some(b) = best {
            claimed[b] = true;
        }
        out.push(best.is_some());
    }
    out
}

/// Area under the all-point interpolated precision/recall curve.
pub fn ap_oracle(preds: &[PredCell], gt: &[(Cell, Cell)], tau: f64) -> Option<f64> {
    if gt.is_empty() {
        return None;
    }
    let h = hits(preds, gt, tau);
    let mut pr = Vec::new();
    let mut tp = 0;
    for (k, &hit) in h.iter().enumerate() {
        tp += usize::from(hit);
        pr.push((tp as f64 / gt.len() as f64, tp as f64 / (k + 1) as f64));
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..pr.len() {
        let recall = pr[k].0;
        if recall > prev_recall {
            let best = pr[k..].iter().map(|x| x.1).fold(0.0, f64::max);
            area += (recall - prev_recall) * best;
            prev_recall = recall;
        }
    }
    Some(area)
}

pub fn recall_oracle(preds: &[PredCell], gt: &[(Cell, Cell)], k: usize, tau: f64) -> Option<f64> {
    if gt.is_empty() {
        return None;
    }
    let order = ranking(preds);
    let top: Vec<PredCell> = order.iter().take(k).map(|&i| preds[i]).collect();
    let found = hits(&top, gt, tau).iter().filter(|&&h| h).count();
    Some(found as f64 / gt.len() as f64)
}

/// Every injective partial assignment of `n_pred` items into `n_gt` slots.
pub fn assignments(n_pred: usize, n_gt: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = Vec::new();
    let mut cur = vec![None; n_pred];
    let mut used = vec![false; n_gt];
    fn rec(i: usize, cur: &mut Vec<Option<usize>>, used: &mut Vec<bool>, out: &mut Vec<Vec<Option<usize>>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        cur[i] = None;
        rec(i + 1, cur, used, out);
        for g in 0..used.len() {
            if !used[g] {
                used[g] = true;
                cur[i] = Some(g);
                rec(i + 1, cur, used, out);
                used[g] = false;
            }
        }
        cur[i] = None;
    }
    rec(0, &mut cur, &mut used, &mut out);
    out
}

/// Exhaustive node correspondence over same-class pairs with IoU at least
/// `min_iou`. Assignments are compared by their matched IoUs sorted in
/// descending order, lexicographically, a longer list winning a tie on the
/// common prefix. Returns the best assignment and whether it is the unique
/// optimum.
pub fn best_node_assignment(pred: &[(Cell, u8)], gt: &[(Cell, u8)], min_iou: f64) -> (Vec<Option<usize>>, bool) {
    use std::cmp::Ordering;
    let cmp = |a: &[f64], b: &[f64]| -> Ordering {
        for (x, y) in a.iter().zip(b) {
            match x.partial_cmp(y).unwrap() {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        a.len().cmp(&b.len())
    };
    let mut best: Option<(Vec<f64>, Vec<Option<usize>>)> = None;
    let mut unique = true;
    for a in assignments(pred.len(), gt.len()) {
        let mut ious = Vec::new();
        let mut ok = true;
        for (p, m) in a.iter().enumerate() {
            if let Some(g) = *m {
                let iou = cell_iou(pred[p].0, gt[g].0);
                if pred[p].1 != gt[g].1 || iou < min_iou {
                    ok = false;
                    break;
                }
                ious.push(iou);
            }
        }
        if !ok {
            continue;
        }
        ious.sort_by(|x, y| y.partial_cmp(x).unwrap());
        match &best {
            None => best = Some((ious, a)),
            Some((b, _)) => match cmp(&ious, b) {
                Ordering::Greater => {
                    best = Some((ious, a));
                    unique = true;
                }
                Ordering::Equal => unique = false,
                Ordering::Less => {}
            },
        }
    }
    let (_, a) = best.expect("the empty assignment is always valid");
    (a, unique)
}

/// `(node IoU, edge IoU)` given a node assignment.
pub fn graph_iou_oracle(
    n_pred: usize,
    n_gt: usize,
    assignment: &[Option<usize>],
    pred_edges: &[(usize, usize)],
    gt_edges: &[(usize, usize)],
) -> (f64, f64) {
    let matched = assignment.iter().filter(|m| m.is_some()).count();
    let node_union = n_pred + n_gt - matched;
    let mut pe: Vec<(usize, usize)> = pred_edges.to_vec();
    pe.sort_unstable();
    pe.dedup();
    let mut ge: Vec<(usize, usize)> = gt_edges.to_vec();
    ge.sort_unstable();
    ge.dedup();
    let inter = pe
        .iter()
        .filter(|&&(s, d)| match (assignment[s], assignment[d]) {
            (Some(a), Some(b)) => ge.contains(&(a, b)),
            _ => false,
        })
        .count();
    let edge_union = pe.len() + ge.len() - inter;
    let r = |i: usize, u: usize| if u == 0 { 1.0 } else { i as f64 / u as f64 };
    (r(matched, node_union), r(inter, edge_union))
}

/// Weighted (or written-cell mean) retrieval by explicit double loop over
/// `a[k][c]` and `h[k][c][u]`.
pub fn retrieve_oracle(a: &[Vec<f64>], h: &[Vec<Vec<f64>>], g: &[f64], i: usize, j: usize, weighted: bool) -> Vec<f64> {
    let n = a.len();
    let m = g.len();
    let mut out = vec![0.0; m];
    if weighted {
        for u in 0..m {
            let mut s = 0.0;
            for k in 0..n {
                s += a[k][i] * h[k][i][u];
            }
            for k in 0..n {
                s += a[k][j] * h[k][j][u];
            }
            out[u] = s + g[u];
        }
    } else {
        let mut count = 0;
        for col in [i, j] {
            for k in 0..n {
                if a[k][col] > 0.0 {
                    count += 1;
                    for u in 0..m {
                        out[u] += h[k][col][u];
                    }
                }
            }
        }
        for u in 0..m {
            if count > 0 {
                out[u] /= count as f64;
            }
            out[u] += g[u];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One gated recurrent step written with scalar loops over row-major weights.
/// Returns `(h, a, z)`.
pub fn gru_scalar(h_prev: &[f64], f: &[f64], p: &GruParams) -> (Vec<f64>, f64, Vec<f64>) {
    let m = h_prev.len();
    let d = f.len();
    let lin = |w: &[f64], x: &[f64], row: usize, width: usize| -> f64 {
        let mut s = 0.0;
        for c in 0..width {
            s += w[row * width + c] * x[c];
        }
        s
    };
    let mut r = vec![0.0; m];
    let mut z = vec![0.0; m];
    for u in 0..m {
        r[u] = sigmoid(lin(p.w_xr.data(), f, u, d) + lin(p.w_hr.data(), h_prev, u, m) + p.b_r.data()[u]);
        z[u] = sigmoid(lin(p.w_xz.data(), f, u, d) + lin(p.w_hz.data(), h_prev, u, m) + p.b_z.data()[u]);
    }
    let gated: Vec<f64> = (0..m).map(|u| r[u] * h_prev[u]).collect();
    let mut h = vec![0.0; m];
    for u in 0..m {
        let cand = (lin(p.w_xh.data(), f, u, d) + lin(p.w_hh.data(), &gated, u, m) + p.b_h.data()[u]).tanh();
        h[u] = z[u] * h_prev[u] + (1.0 - z[u]) * cand;
    }
    let a = sigmoid(lin(p.w_l.data(), &h, 0, m) + p.b_l.data()[0]);
    (h, a, z)
}
