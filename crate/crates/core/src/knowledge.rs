//! Templated knowledge sentences from a generated relation graph.
//!
//! Relation sentences join text labels through the blobs they annotate:
//! two texts attached to one blob, or two texts attached to blobs that are
//! themselves connected, yield "A links to B". Edges are treated as
//! undirected for this purpose. Fact sentences name every text entity and
//! count blobs, texts and the blobs that lie on a directed cycle ("stages").

use std::collections::{BTreeSet, HashSet};

use petgraph::graphmap::DiGraphMap;
use serde::Serialize;

use crate::diagram::{DiagramGraph, ObjectClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Relation,
    Entity,
    Count,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Relation => "relation",
            Category::Entity => "entity",
            Category::Count => "count",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct KnowledgeSentence {
    pub category: Category,
    /// Node indices the sentence was derived from.
    pub provenance: Vec<usize>,
    pub text: String,
}

/// Label of a usable text node, `None` for other classes or blank labels.
fn label(graph: &DiagramGraph, i: usize) -> Option<&str> {
    let n = &graph.nodes[i];
    if n.class != ObjectClass::Text {
        return None;
    }
    n.text.as_deref().map(str::trim).filter(|t| !t.is_empty())
}

fn is_blob(graph: &DiagramGraph, i: usize) -> bool {
    graph.nodes[i].class == ObjectClass::Blob
}

fn blank_text_nodes(graph: &DiagramGraph) -> Vec<usize> {
    (0..graph.nodes.len())
        .filter(|&i| graph.nodes[i].class == ObjectClass::Text && label(graph, i).is_none())
        .collect()
}

/// Undirected, self-free relation sets in ascending order.
fn relation_sets(graph: &DiagramGraph) -> Vec<[usize; 2]> {
    let set: BTreeSet<[usize; 2]> = graph
        .edges
        .iter()
        .filter(|e| e.src != e.dst && e.src < graph.nodes.len() && e.dst < graph.nodes.len())
        .map(|e| [e.src.min(e.dst), e.src.max(e.dst)])
        .collect();
    set.into_iter().collect()
}

/// `(shared, rest_a, rest_b)` when the two sets share exactly one node.
fn split(a: [usize; 2], b: [usize; 2]) -> Option<(usize, usize, usize)> {
    let shared: Vec<usize> = a.iter().copied().filter(|x| b.contains(x)).collect();
    if shared.len() != 1 {
        return None;
    }
    let s = shared[0];
    let ra = if a[0] == s { a[1] } else { a[0] };
    let rb = if b[0] == s { b[1] } else { b[0] };
    Some((s, ra, rb))
}

fn finish(mut out: Vec<KnowledgeSentence>) -> Vec<KnowledgeSentence> {
    out.sort();
    let mut seen = HashSet::new();
    out.retain(|s| seen.insert(s.text.clone()));
    out
}

/// "A links to B" sentences; sorted by provenance and deduplicated by text.
pub fn generate_sentences(graph: &DiagramGraph) -> Vec<KnowledgeSentence> {
    for i in blank_text_nodes(graph) {
        log::warn!("text node {i} has no label; skipping it");
    }
    let rels = relation_sets(graph);
    let mut out = Vec::new();
    for (ai, &ra_set) in rels.iter().enumerate() {
        for (bi, &rb_set) in rels.iter().enumerate() {
            if ai == bi {
                continue;
            }
            let Some((s, ra, rb)) = split(ra_set, rb_set) else {
                continue;
            };
            if !is_blob(graph, s) {
                continue;
            }
            let Some(text_a) = label(graph, ra) else {
                continue;
            };
            if let Some(text_b) = label(graph, rb) {
                out.push(KnowledgeSentence {
                    category: Category::Relation,
                    provenance: vec![ra, s, rb],
                    text: format!("{text_a} links to {text_b}"),
                });
            } else if is_blob(graph, rb) {
                // Follow one more relation from the far blob to a text.
                for (ci, &rc_set) in rels.iter().enumerate() {
                    if ci == ai || ci == bi {
                        continue;
                    }
                    let Some((sc, _, rc)) = split(rb_set, rc_set) else {
                        continue;
                    };
                    if sc != rb {
                        continue;
                    }
                    if let Some(text_c) = label(graph, rc) {
                        out.push(KnowledgeSentence {
                            category: Category::Relation,
                            provenance: vec![ra, s, rb, rc],
                            text: format!("{text_a} links to {text_c}"),
                        });
                    }
                }
            }
        }
    }
    finish(out)
}

/// Entity and count sentences.
pub fn generate_facts(graph: &DiagramGraph) -> Vec<KnowledgeSentence> {
    let mut out = Vec::new();
    for i in 0..graph.nodes.len() {
        if let Some(t) = label(graph, i) {
            out.push(KnowledgeSentence {
                category: Category::Entity,
                provenance: vec![i],
                text: format!("{t} is an entity"),
            });
        }
    }
    for (class, noun) in [(ObjectClass::Blob, "blobs"), (ObjectClass::Text, "texts")] {
        let ids: Vec<usize> = (0..graph.nodes.len())
            .filter(|&i| graph.nodes[i].class == class)
            .collect();
        if !ids.is_empty() {
            out.push(KnowledgeSentence {
                category: Category::Count,
                text: format!("There are {} {noun}", ids.len()),
                provenance: ids,
            });
        }
    }
    let mut g = DiGraphMap::<usize, ()>::new();
    for i in (0..graph.nodes.len()).filter(|&i| is_blob(graph, i)) {
        g.add_node(i);
    }
    for e in &graph.edges {
        if e.src != e.dst && g.contains_node(e.src) && g.contains_node(e.dst) {
            g.add_edge(e.src, e.dst, ());
        }
    }
    let mut stages: Vec<usize> = petgraph::algo::tarjan_scc(&g)
        .into_iter()
        .filter(|c| c.len() > 1)
        .flatten()
        .collect();
    stages.sort_unstable();
    if !stages.is_empty() {
        out.push(KnowledgeSentence {
            category: Category::Count,
            text: format!("There are {} stages", stages.len()),
            provenance: stages,
        });
    }
    finish(out)
}

/// Relation sentences followed by facts, as one ordered list.
pub fn knowledge(graph: &DiagramGraph) -> Vec<KnowledgeSentence> {
    let mut all = generate_sentences(graph);
    all.extend(generate_facts(graph));
    finish(all)
}

/// One sentence per line, newline-terminated.
pub fn to_lines(sentences: &[KnowledgeSentence]) -> String {
    sentences.iter().map(|s| format!("{}\n", s.text)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::{BBox, DiagramObject, Edge};

    fn node(class: ObjectClass, text: Option<&str>) -> DiagramObject {
        let o = DiagramObject::new(BBox::new(0.0, 0.0, 0.1, 0.1).unwrap(), class);
        match text {
            Some(t) => o.with_text(t),
            None => o,
        }
    }

    fn graph(nodes: Vec<DiagramObject>, edges: &[(usize, usize)]) -> DiagramGraph {
        DiagramGraph {
            nodes,
            edges: edges
                .iter()
                .map(|&(src, dst)| Edge {
                    src,
                    dst,
                    confidence: 0.9,
                })
                .collect(),
        }
    }

    fn texts(v: &[KnowledgeSentence]) -> Vec<&str> {
        v.iter().map(|s| s.text.as_str()).collect()
    }

    #[test]
    fn two_labels_on_one_blob() {
        let g = graph(
            vec![
                node(ObjectClass::Text, Some("Egg Mass")),
                node(ObjectClass::Blob, None),
                node(ObjectClass::Text, Some("Tadpole")),
            ],
            &[(0, 1), (2, 1)],
        );
        assert_eq!(
            texts(&generate_sentences(&g)),
            vec!["Egg Mass links to Tadpole", "Tadpole links to Egg Mass"]
        );
    }

    #[test]
    fn chain_through_two_blobs() {
        let g = graph(
            vec![
                node(ObjectClass::Text, Some("Larva")),
                node(ObjectClass::Blob, None),
                node(ObjectClass::Blob, None),
                node(ObjectClass::Text, Some("Fly")),
            ],
            &[(0, 1), (1, 2), (3, 2)],
        );
        let s = generate_sentences(&g);
        assert_eq!(texts(&s), vec!["Larva links to Fly", "Fly links to Larva"]);
        assert_eq!(s[0].provenance, vec![0, 1, 2, 3]);
        assert!(s
            .iter()
            .all(|x| x.category == Category::Relation && x.text.contains("links to")));
    }

    #[test]
    fn text_hub_is_skipped_and_empty_graph_is_silent() {
        let g = graph(
            vec![
                node(ObjectClass::Text, Some("A")),
                node(ObjectClass::Text, Some("Hub")),
                node(ObjectClass::Text, Some("B")),
            ],
            &[(0, 1), (1, 2)],
        );
        assert!(generate_sentences(&g).is_empty());
        assert!(generate_sentences(&DiagramGraph::default()).is_empty());
        assert!(generate_facts(&DiagramGraph::default()).is_empty());
    }

    #[test]
    fn blank_labels_are_skipped() {
        let g = graph(
            vec![
                node(ObjectClass::Text, Some("  ")),
                node(ObjectClass::Blob, None),
                node(ObjectClass::Text, Some("Seed")),
            ],
            &[(0, 1), (2, 1)],
        );
        assert!(generate_sentences(&g).is_empty());
        let facts = generate_facts(&g);
        let mut f = texts(&facts);
        f.sort_unstable();
        assert_eq!(f, vec!["Seed is an entity", "There are 1 blobs", "There are 2 texts"]);
    }

    #[test]
    fn facts_count_and_stages() {
        let mut nodes: Vec<DiagramObject> = (0..4).map(|_| node(ObjectClass::Blob, None)).collect();
        nodes.extend(
            ["Egg", "Larva", "Pupa", "Adult"]
                .iter()
                .map(|t| node(ObjectClass::Text, Some(t))),
        );
        nodes.push(node(ObjectClass::ArrowHead, None));
        let cyc = graph(nodes.clone(), &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let f = generate_facts(&cyc);
        for want in ["There are 4 blobs", "There are 4 texts", "There are 4 stages"] {
            assert!(
                f.iter().any(|s| s.text == want && s.category == Category::Count),
                "{want}"
            );
        }
        assert_eq!(f[0].text, "Egg is an entity");
        let chain = graph(nodes, &[(0, 1), (1, 2), (2, 3)]);
        assert!(!texts(&generate_facts(&chain)).join("|").contains("stages"));
    }

    #[test]
    fn output_is_idempotent_and_in_range() {
        let g = graph(
            vec![
                node(ObjectClass::Text, Some("X")),
                node(ObjectClass::Blob, None),
                node(ObjectClass::Blob, None),
                node(ObjectClass::Text, Some("Y")),
                node(ObjectClass::Text, Some("Z")),
            ],
            &[(0, 1), (1, 2), (2, 1), (3, 2), (4, 1), (1, 1)],
        );
        let a = knowledge(&g);
        assert_eq!(a, knowledge(&g));
        assert!(a.iter().flat_map(|s| &s.provenance).all(|&i| i < 5));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(a, sorted);
    }
}
