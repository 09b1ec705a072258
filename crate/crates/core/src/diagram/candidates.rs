use serde::{Deserialize, Serialize};

use super::matching::Label;
use super::{DiagramObject, NUM_CLASSES};

pub const OBJECT_FEATURE_DIM: usize = 13;
pub const LOCAL_FEATURE_DIM: usize = 2 * OBJECT_FEATURE_DIM;

/// Per-object feature: box corners, center, size, class scores, max score.
pub fn object_feature(obj: &DiagramObject) -> [f64; OBJECT_FEATURE_DIM] {
    let b = &obj.bbox;
    let (cx, cy) = b.center();
    let mut f = [0.0; OBJECT_FEATURE_DIM];
    f[..8].copy_from_slice(&[b.xmin, b.ymin, b.xmax, b.ymax, cx, cy, b.width(), b.height()]);
    f[8..8 + NUM_CLASSES].copy_from_slice(&obj.scores);
    f[12] = obj.max_score();
    f
}

/// Concatenated source and destination object features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFeature(#[serde(with = "feature_array")] pub [f64; LOCAL_FEATURE_DIM]);

impl LocalFeature {
    pub fn new(src: &DiagramObject, dst: &DiagramObject) -> Self {
        let mut v = [0.0; LOCAL_FEATURE_DIM];
        v[..OBJECT_FEATURE_DIM].copy_from_slice(&object_feature(src));
        v[OBJECT_FEATURE_DIM..].copy_from_slice(&object_feature(dst));
        LocalFeature(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

mod feature_array {
    use super::LOCAL_FEATURE_DIM;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; LOCAL_FEATURE_DIM], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; LOCAL_FEATURE_DIM], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| serde::de::Error::invalid_length(v.len(), &"26 feature values"))
    }
}

/// Ordered object pair `(src, dst)`, i.e. one potential directed edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationCandidate {
    pub src: usize,
    pub dst: usize,
    pub feature: LocalFeature,
    pub label: Option<Label>,
}

impl RelationCandidate {
    pub fn is_self_pair(&self) -> bool {
        self.src == self.dst
    }
}

/// All `n^2` ordered pairs, self-pairs included, in row-major order.
pub fn generate_candidates(objects: &[DiagramObject]) -> Vec<RelationCandidate> {
    let n = objects.len();
    let mut out = Vec::with_capacity(n * n);
    for (src, a) in objects.iter().enumerate() {
        for (dst, b) in objects.iter().enumerate() {
            out.push(RelationCandidate {
                src,
                dst,
                feature: LocalFeature::new(a, b),
                label: None,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{BBox, ObjectClass};
    use super::*;

    fn three() -> Vec<DiagramObject> {
        vec![
            DiagramObject::new(BBox::new(0.1, 0.2, 0.3, 0.6).unwrap(), ObjectClass::Blob),
            DiagramObject::new(BBox::new(0.5, 0.5, 0.9, 0.7).unwrap(), ObjectClass::Text)
                .with_scores([0.1, 0.6, 0.2, 0.1]),
            DiagramObject::new(BBox::new(0.0, 0.0, 0.05, 0.05).unwrap(), ObjectClass::ArrowHead),
        ]
    }

    #[test]
    fn counts_and_order() {
        let objs = three();
        assert_eq!(generate_candidates(&objs[..1]).len(), 1);
        let c = generate_candidates(&objs);
        assert_eq!(c.len(), 9);
        let pairs: Vec<_> = c.iter().map(|c| (c.src, c.dst)).collect();
        assert_eq!(pairs[..4], [(0, 0), (0, 1), (0, 2), (1, 0)]);
        assert!(c[0].is_self_pair());
    }

    #[test]
    fn feature_halves_are_object_features() {
        let objs = three();
        let c = generate_candidates(&objs);
        let f = c[1 * 3 + 2].feature.values();
        // hand-computed layout for object 1
        let expected_src = [0.5, 0.5, 0.9, 0.7, 0.7, 0.6, 0.4, 0.2, 0.1, 0.6, 0.2, 0.1, 0.6];
        for (a, b) in f[..13].iter().zip(expected_src) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(f[13..], object_feature(&objs[2]));
    }
}
