//! Edge AP, graph IoU, Recall@K, update-gate statistics and the
//! candidate-order study.
//!
//! Absolute scores on real diagram corpora depend on a trained object
//! detector and are out of scope; these metrics are meant for relative
//! comparisons between relation models on the same data.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diagram::{
    filter_detections, generate_candidates, BBox, DiagramAnnotation, DiagramGraph, DiagramObject, RelationCandidate,
    NMS_IOU, SCORE_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::model::{assemble_graph, forward_with_global, global_feature, Model};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Matching threshold for Recall@K.
    pub edge_iou_match: f64,
    /// Confidence above which edges enter the graph-IoU comparison.
    pub edge_conf: f64,
    pub recall_ks: Vec<usize>,
    /// Trials for the candidate-order study.
    pub order_trials: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            edge_iou_match: 0.5,
            edge_conf: 0.01,
            recall_ks: vec![5, 10, 20],
            order_trials: 50,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.iou_thresholds;
        if t.is_empty() || t.iter().any(|&x| !(x > 0.0 && x < 1.0)) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "iou_thresholds must be strictly ascending values in (0, 1)".into(),
            ));
        }
        if !(self.edge_iou_match > 0.0 && self.edge_iou_match < 1.0) {
            return Err(Error::Config("edge_iou_match must lie in (0, 1)".into()));
        }
        if self.recall_ks.contains(&0) {
            return Err(Error::Config("recall_ks must be positive".into()));
        }
        Ok(())
    }
}

/// Predicted relation with its endpoint boxes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredEdge {
    pub src: BBox,
    pub dst: BBox,
    pub confidence: f64,
}

/// Ground-truth relation endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtEdge {
    pub src: BBox,
    pub dst: BBox,
}

pub fn gt_edges(annotation: &DiagramAnnotation) -> Vec<GtEdge> {
    annotation
        .relations
        .iter()
        .map(|&(s, d)| GtEdge {
            src: annotation.objects[s].bbox,
            dst: annotation.objects[d].bbox,
        })
        .collect()
}

/// Mean of the source and destination box IoUs.
pub fn relation_iou(p: &ScoredEdge, g: &GtEdge) -> f64 {
    (p.src.iou(&g.src) + p.dst.iou(&g.dst)) / 2.0
}

/// Stable descending sort by confidence.
pub fn rank(predictions: &mut [ScoredEdge]) {
    predictions.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
}

/// For predictions in the given order, the GT index each one claims: the
/// unclaimed GT with the highest relation IoU at or above `tau`, ties to
/// the lowest GT index.
pub fn match_ranked(predictions: &[ScoredEdge], gt: &[GtEdge], tau: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gt.len()];
    predictions
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gt.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let iou = relation_iou(p, g);
                if iou >= tau && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            best.map(|(gi, _)| {
                taken[gi] = true;
                gi
            })
        })
        .collect()
}

/// All-point interpolated AP from a ranked hit sequence.
pub fn average_precision(hits: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // Precision envelope, then sum at each recall step.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let sum: f64 = hits.iter().zip(&precision).filter(|(h, _)| **h).map(|(_, p)| p).sum();
    Some(sum / num_gt as f64)
}

/// AP for one diagram; predictions must already be ranked. `None` when there
/// is no ground truth.
pub fn edge_ap(predictions: &[ScoredEdge], gt: &[GtEdge], tau: f64) -> Option<f64> {
    let hits: Vec<bool> = match_ranked(predictions, gt, tau).iter().map(Option::is_some).collect();
    average_precision(&hits, gt.len())
}

/// Dataset AP: matching within each diagram, one pooled ranking across all.
pub fn pooled_edge_ap(per_diagram: &[(Vec<ScoredEdge>, Vec<GtEdge>)], tau: f64) -> Option<f64> {
    let mut pooled: Vec<(f64, bool)> = Vec::new();
    let mut num_gt = 0;
    for (preds, gt) in per_diagram {
        num_gt += gt.len();
        let mut ranked = preds.clone();
        rank(&mut ranked);
        for (p, m) in ranked.iter().zip(match_ranked(&ranked, gt, tau)) {
            pooled.push((p.confidence, m.is_some()));
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let hits: Vec<bool> = pooled.iter().map(|&(_, h)| h).collect();
    average_precision(&hits, num_gt)
}

/// `|GT matched among the top k| / |GT|`; predictions must be ranked.
pub fn recall_at_k(predictions: &[ScoredEdge], gt: &[GtEdge], k: usize, tau: f64) -> Option<f64> {
    if gt.is_empty() {
        return None;
    }
    let top = &predictions[..k.min(predictions.len())];
    let found = match_ranked(top, gt, tau).iter().filter(|m| m.is_some()).count();
    Some(found as f64 / gt.len() as f64)
}

/// Greedy one-to-one node correspondence: pairs of equal class with box IoU
/// at least `min_iou`, taken in descending IoU order (ties by index).
pub fn match_nodes(pred: &[DiagramObject], gt: &[DiagramObject], min_iou: f64) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            if p.class != g.class {
                continue;
            }
            let iou = p.bbox.iou(&g.bbox);
            if iou >= min_iou {
                pairs.push((iou, pi, gi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut out = vec![None; pred.len()];
    let mut used = vec![false; gt.len()];
    for (_, pi, gi) in pairs {
        if out[pi].is_none() && !used[gi] {
            out[pi] = Some(gi);
            used[gi] = true;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GraphIou {
    pub node: f64,
    pub edge: f64,
}

/// Count-based node and edge IoU. Edges of `pred` at or below `min_conf` are
/// ignored; an empty union scores 1.
pub fn graph_iou(pred: &DiagramGraph, gt: &DiagramAnnotation, min_conf: f64, node_iou: f64) -> GraphIou {
    let map = match_nodes(&pred.nodes, &gt.objects, node_iou);
    let matched = map.iter().filter(|m| m.is_some()).count();
    let node_union = pred.nodes.len() + gt.objects.len() - matched;
    let gt_set: HashSet<(usize, usize)> = gt.relations.iter().copied().collect();
    let pred_edges: HashSet<(usize, usize)> = pred
        .edges
        .iter()
        .filter(|e| e.confidence > min_conf)
        .map(|e| (e.src, e.dst))
        .collect();
    let inter = pred_edges
        .iter()
        .filter(|&&(s, d)| match (map[s], map[d]) {
            (Some(a), Some(b)) => gt_set.contains(&(a, b)),
            _ => false,
        })
        .count();
    let edge_union = pred_edges.len() + gt_set.len() - inter;
    let ratio = |i: usize, u: usize| if u == 0 { 1.0 } else { i as f64 / u as f64 };
    GraphIou {
        node: ratio(matched, node_union),
        edge: ratio(inter, edge_union),
    }
}

/// Linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GateStats {
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
    pub count: usize,
}

/// Summary of every update-gate entry in `traces` (diagrams x steps x units).
pub fn gate_statistics(traces: &[Vec<Vec<f64>>]) -> Result<GateStats> {
    let mut all: Vec<f64> = traces.iter().flatten().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::Empty("gate trace"));
    }
    all.sort_by(f64::total_cmp);
    Ok(GateStats {
        mean: all.iter().sum::<f64>() / all.len() as f64,
        q1: quantile(&all, 0.25),
        q3: quantile(&all, 0.75),
        count: all.len(),
    })
}

/// Mean over hidden units at each step of one trace.
pub fn per_step_means(trace: &[Vec<f64>]) -> Vec<f64> {
    trace
        .iter()
        .map(|z| z.iter().sum::<f64>() / z.len().max(1) as f64)
        .collect()
}

/// Relation predictions of one diagram in a given candidate order.
#[derive(Clone, Debug)]
pub struct DiagramPrediction {
    pub objects: Vec<DiagramObject>,
    pub candidates: Vec<RelationCandidate>,
    pub probabilities: Vec<f64>,
    pub gates: Vec<Vec<f64>>,
}

impl DiagramPrediction {
    /// Non-self candidates as scored edges, ranked.
    pub fn scored_edges(&self) -> Vec<ScoredEdge> {
        let mut v: Vec<ScoredEdge> = self
            .candidates
            .iter()
            .zip(&self.probabilities)
            .filter(|(c, _)| !c.is_self_pair())
            .map(|(c, &p)| ScoredEdge {
                src: self.objects[c.src].bbox,
                dst: self.objects[c.dst].bbox,
                confidence: p,
            })
            .collect();
        rank(&mut v);
        v
    }

    pub fn graph(&self, threshold: f64) -> DiagramGraph {
        assemble_graph(&self.objects, &self.candidates, &self.probabilities, threshold)
    }
}

/// Score-filters and suppresses the detections, builds all candidates and
/// runs the model in `order` (a permutation of candidate indices) or in
/// construction order.
pub fn predict(
    model: &Model,
    detections: &[DiagramObject],
    global: Option<&[f64]>,
    order: Option<&mut dyn FnMut(&mut Vec<RelationCandidate>)>,
) -> Result<DiagramPrediction> {
    let objects = filter_detections(detections, SCORE_THRESHOLD, NMS_IOU);
    let mut candidates = generate_candidates(&objects);
    if let Some(f) = order {
        f(&mut candidates);
    }
    let g = match global {
        Some(g) => g.to_vec(),
        None => global_feature(model, &objects)?,
    };
    let out = forward_with_global(model, &objects, &candidates, &g)?;
    Ok(DiagramPrediction {
        objects,
        candidates,
        probabilities: out.probabilities,
        gates: out.gates,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub map: Option<f64>,
    /// `(tau, AP)` per threshold.
    pub ap: Vec<(f64, Option<f64>)>,
    pub iou_node: f64,
    pub iou_edge: f64,
    /// `(k, recall)` averaged over diagrams with ground truth.
    pub recall: Vec<(usize, Option<f64>)>,
    pub gates: Option<GateStats>,
    pub diagrams: usize,
}

impl EvalReport {
    pub fn ap_at(&self, tau: f64) -> Option<f64> {
        self.ap
            .iter()
            .find(|(t, _)| (t - tau).abs() < 1e-12)
            .and_then(|&(_, a)| a)
    }
}

fn mean_some(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregates per-diagram predictions against their annotations.
pub fn report(
    predictions: &[DiagramPrediction],
    dataset: &[DiagramAnnotation],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    if predictions.len() != dataset.len() {
        return Err(Error::Dimension {
            op: "report",
            lhs: vec![predictions.len()],
            rhs: vec![dataset.len()],
        });
    }
    let pairs: Vec<(Vec<ScoredEdge>, Vec<GtEdge>)> = predictions
        .iter()
        .zip(dataset)
        .map(|(p, a)| (p.scored_edges(), gt_edges(a)))
        .collect();
    let ap: Vec<(f64, Option<f64>)> = config
        .iou_thresholds
        .iter()
        .map(|&t| (t, pooled_edge_ap(&pairs, t)))
        .collect();
    let map = mean_some(ap.iter().map(|&(_, a)| a)).filter(|_| ap.iter().all(|(_, a)| a.is_some()));
    let ious: Vec<GraphIou> = predictions
        .iter()
        .zip(dataset)
        .map(|(p, a)| graph_iou(&p.graph(config.edge_conf), a, config.edge_conf, 0.5))
        .collect();
    let n = ious.len().max(1) as f64;
    let recall = config
        .recall_ks
        .iter()
        .map(|&k| {
            let r = mean_some(pairs.iter().map(|(p, g)| recall_at_k(p, g, k, config.edge_iou_match)));
            (k, r)
        })
        .collect();
    let traces: Vec<Vec<Vec<f64>>> = predictions.iter().map(|p| p.gates.clone()).collect();
    Ok(EvalReport {
        map,
        ap,
        iou_node: ious.iter().map(|x| x.node).sum::<f64>() / n,
        iou_edge: ious.iter().map(|x| x.edge).sum::<f64>() / n,
        recall,
        gates: gate_statistics(&traces).ok(),
        diagrams: dataset.len(),
    })
}

/// Predictions for every diagram in construction order.
pub fn predict_dataset(model: &Model, dataset: &[DiagramAnnotation]) -> Result<Vec<DiagramPrediction>> {
    dataset.iter().map(|a| predict(model, &a.objects, None, None)).collect()
}

pub fn evaluate(model: &Model, dataset: &[DiagramAnnotation], config: &EvalConfig) -> Result<EvalReport> {
    report(&predict_dataset(model, dataset)?, dataset, config)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderStudy {
    pub ap50: Vec<f64>,
    pub variance: f64,
    pub std: f64,
}

/// Population variance and standard deviation of dataset AP50 over `trials`
/// fresh random candidate orders.
pub fn order_variance_study(
    model: &Model,
    dataset: &[DiagramAnnotation],
    trials: usize,
    seed: u64,
) -> Result<OrderStudy> {
    if trials == 0 {
        return Err(Error::Empty("order study trials"));
    }
    let globals: Vec<Vec<f64>> = dataset
        .iter()
        .map(|a| global_feature(model, &filter_detections(&a.objects, SCORE_THRESHOLD, NMS_IOU)))
        .collect::<Result<_>>()?;
    let gts: Vec<Vec<GtEdge>> = dataset.iter().map(gt_edges).collect();
    let mut ap50 = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = substream(seed, "order", t as u64);
        let mut pairs = Vec::with_capacity(dataset.len());
        for ((a, g), gt) in dataset.iter().zip(&globals).zip(&gts) {
            let mut shuffle = |c: &mut Vec<RelationCandidate>| c.shuffle(&mut rng);
            let p = predict(model, &a.objects, Some(g), Some(&mut shuffle))?;
            pairs.push((p.scored_edges(), gt.clone()));
        }
        ap50.push(pooled_edge_ap(&pairs, 0.5).ok_or(Error::Empty("ground-truth relations"))?);
    }
    let mean = ap50.iter().sum::<f64>() / trials as f64;
    let variance = ap50.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / trials as f64;
    Ok(OrderStudy {
        ap50,
        variance,
        std: variance.sqrt(),
    })
}
