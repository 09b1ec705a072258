use std::collections::HashMap;

use crate::diagram::{DiagramGraph, DiagramObject, Edge, RelationCandidate};

/// Edge confidence retained in the final diagram graph.
pub const EDGE_THRESHOLD: f64 = 0.1;

/// Keeps non-self candidates with probability above `threshold`, one edge
/// per ordered pair (highest probability wins), sorted by confidence
/// descending then `(src, dst)`.
pub fn assemble_graph(
    objects: &[DiagramObject],
    candidates: &[RelationCandidate],
    probabilities: &[f64],
    threshold: f64,
) -> DiagramGraph {
    let mut best: HashMap<(usize, usize), f64> = HashMap::new();
    for (c, &p) in candidates.iter().zip(probabilities) {
        if c.is_self_pair() || p <= threshold {
            continue;
        }
        let e = best.entry((c.src, c.dst)).or_insert(p);
        *e = e.max(p);
    }
    let mut edges: Vec<Edge> = best
        .into_iter()
        .map(|((src, dst), confidence)| Edge { src, dst, confidence })
        .collect();
    edges.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then((a.src, a.dst).cmp(&(b.src, b.dst)))
    });
    DiagramGraph {
        nodes: objects.to_vec(),
        edges,
    }
}
