use super::*;
use dggn::diagram::{DiagramAnnotation, DiagramGraph, DiagramObject, Edge, ObjectClass, LOCAL_FEATURE_DIM};
use dggn::metrics::{edge_ap, graph_iou, rank, recall_at_k, GtEdge, ScoredEdge};
use dggn::model::{gru_step, Datm, GruParams};
use dggn::rng::substream;
use rand::Rng;

pub fn scored(p: &PredCell) -> ScoredEdge {
    ScoredEdge {
        src: to_bbox(p.src),
        dst: to_bbox(p.dst),
        confidence: p.confidence,
    }
}

pub fn random_edge_case<R: Rng>(rng: &mut R) -> (Vec<PredCell>, Vec<(Cell, Cell)>) {
    let n_gt = rng.gen_range(0..=5);
    let n_pred = rng.gen_range(0..=5);
    let gt: Vec<(Cell, Cell)> = (0..n_gt).map(|_| (random_cell(rng, 6), random_cell(rng, 6))).collect();
    let preds = (0..n_pred)
        .map(|_| {
            // Half the predictions are copies of GT relations so hits occur.
            let (src, dst) = if !gt.is_empty() && rng.gen_bool(0.5) {
                gt[rng.gen_range(0..gt.len())]
            } else {
                (random_cell(rng, 6), random_cell(rng, 6))
            };
            PredCell {
                src,
                dst,
                confidence: f64::from(rng.gen_range(1..=4u8)) / 4.0,
            }
        })
        .collect();
    (preds, gt)
}

/// Random edge-metric cases against brute force; returns how many had ground truth.
pub fn edge_metric_cases(seed: u64, cases: usize) -> usize {
    let mut rng = substream(seed, "oracle", 0);
    let mut with_gt = 0;
    for _ in 0..cases {
        let (preds, gt) = random_edge_case(&mut rng);
        let mut ranked: Vec<ScoredEdge> = preds.iter().map(scored).collect();
        rank(&mut ranked);
        let gt_edges: Vec<GtEdge> = gt
            .iter()
            .map(|&(s, d)| GtEdge {
                src: to_bbox(s),
                dst: to_bbox(d),
            })
            .collect();
        for tau in [0.3, 0.4, 0.5, 0.6, 0.7] {
            let got = edge_ap(&ranked, &gt_edges, tau);
            let want = ap_oracle(&preds, &gt, tau);
            match (got, want) {
                (Some(g), Some(w)) => assert!((g - w).abs() < 1e-12, "tau {tau}: {g} vs {w}"),
                (None, None) => {}
                other => panic!("{other:?}"),
            }
        }
        for k in 1..=6 {
            assert_eq!(
                recall_at_k(&ranked, &gt_edges, k, 0.5),
                recall_oracle(&preds, &gt, k, 0.5)
            );
        }
        with_gt += usize::from(!gt.is_empty());
    }
    with_gt
}

pub fn object(c: Cell, class: u8) -> DiagramObject {
    DiagramObject::new(to_bbox(c), ObjectClass::ALL[class as usize])
}

/// Random graph-IoU cases against exhaustive assignment; returns how many
/// had a unique optimum and were compared.
pub fn graph_iou_cases(seed: u64, cases: usize) -> usize {
    let mut rng = substream(seed, "oracle", 0);
    let mut compared = 0;
    for _ in 0..cases {
        let n_gt = rng.gen_range(0..=5);
        let gt: Vec<(Cell, u8)> = (0..n_gt)
            .map(|_| (random_cell(&mut rng, 6), rng.gen_range(0..2)))
            .collect();
        let n_pred = rng.gen_range(0..=5);
        let pred: Vec<(Cell, u8)> = (0..n_pred)
            .map(|_| {
                if !gt.is_empty() && rng.gen_bool(0.6) {
                    let (c, k) = gt[rng.gen_range(0..gt.len())];
                    let mut c = c;
                    // Nudge one side so IoUs spread out.
                    if rng.gen_bool(0.5) && c[2] < 6 {
                        c[2] += 1;
                    }
                    (c, k)
                } else {
                    (random_cell(&mut rng, 6), rng.gen_range(0..2))
                }
            })
            .collect();
        let pairs = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<(usize, usize)> {
            if n == 0 {
                return Vec::new();
            }
            (0..rng.gen_range(0..=n * 2))
                .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
                .collect()
        };
        let pred_edges = pairs(n_pred, &mut rng);
        let gt_edges = pairs(n_gt, &mut rng);

        let (assignment, unique) = best_node_assignment(&pred, &gt, 0.5);
        if !unique {
            continue;
        }
        compared += 1;
        let (node, edge) = graph_iou_oracle(n_pred, n_gt, &assignment, &pred_edges, &gt_edges);

        let mut gt_rel = gt_edges.clone();
        gt_rel.sort_unstable();
        gt_rel.dedup();
        let ann = DiagramAnnotation {
            image_size: (6, 6),
            objects: gt.iter().map(|&(c, k)| object(c, k)).collect(),
            relations: gt_rel,
        };
        let graph = DiagramGraph {
            nodes: pred.iter().map(|&(c, k)| object(c, k)).collect(),
            edges: pred_edges
                .iter()
                .map(|&(src, dst)| Edge {
                    src,
                    dst,
                    confidence: 0.9,
                })
                .collect(),
        };
        let got = graph_iou(&graph, &ann, 0.1, 0.5);
        assert_eq!((got.node, got.edge), (node, edge), "{pred:?} {gt:?}");
    }
    compared
}

pub fn retrieve_cases(seed: u64, cases: usize) {
    let mut rng = substream(seed, "oracle", 0);
    for trial in 0..cases {
        let n = rng.gen_range(2..=6);
        let m = rng.gen_range(1..=8);
        let mut a = vec![vec![0.0; n]; n];
        let mut h = vec![vec![vec![0.0; m]; n]; n];
        let mut mem = Datm::new(n, m);
        for _ in 0..rng.gen_range(0..n * n) {
            let (r, c) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let p: f64 = rng.gen_range(0.0..1.0);
            let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            mem.update(r, c, p, &v).unwrap();
            a[r][c] = p;
            h[r][c] = v;
        }
        let g: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        for weighted in [true, false] {
            let got = mem.retrieve(i, j, &g, weighted).unwrap();
            let want = retrieve_oracle(&a, &h, &g, i, j, weighted);
            for (x, y) in got.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "trial {trial}: {got:?} vs {want:?}");
            }
        }
    }
}

pub fn gru_cases(seeds: u64) {
    for seed in 0..seeds {
        let mut rng = substream(seed, "oracle", 1);
        let mut params = GruParams::new(4, &mut rng);
        for b in [&mut params.b_r, &mut params.b_z, &mut params.b_h, &mut params.b_l] {
            b.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
        let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..LOCAL_FEATURE_DIM).map(|_| rng.gen_range(0.0..1.0)).collect();
        let got = gru_step(&h, &f, &params).unwrap();
        let (wh, wa, wz) = gru_scalar(&h, &f, &params);
        for (x, y) in got.h.iter().zip(&wh).chain(got.z.iter().zip(&wz)) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((got.a - wa).abs() < 1e-12);
    }
}
