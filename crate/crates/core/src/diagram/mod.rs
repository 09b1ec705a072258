//! Diagram constituents, annotations, and relation candidates.

mod annotation;
mod candidates;
mod matching;
mod nms;

pub use annotation::{load_annotations, parse_annotations, save_annotations, write_annotations};
pub use candidates::{
    generate_candidates, object_feature, LocalFeature, RelationCandidate, LOCAL_FEATURE_DIM, OBJECT_FEATURE_DIM,
};
pub use matching::{match_and_sample, match_candidates, sample_labeled, Label, SamplingConfig};
pub use nms::{filter_detection_indices, filter_detections, NMS_IOU, SCORE_THRESHOLD};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constituent classes recognised in a diagram.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Blob,
    Text,
    ArrowHead,
    ArrowTail,
}

pub const NUM_CLASSES: usize = 4;

impl ObjectClass {
    pub const ALL: [ObjectClass; NUM_CLASSES] = [
        ObjectClass::Blob,
        ObjectClass::Text,
        ObjectClass::ArrowHead,
        ObjectClass::ArrowTail,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Blob => "blob",
            ObjectClass::Text => "text",
            ObjectClass::ArrowHead => "arrow_head",
            ObjectClass::ArrowTail => "arrow_tail",
        }
    }

    pub fn one_hot(self) -> [f64; NUM_CLASSES] {
        let mut s = [0.0; NUM_CLASSES];
        s[self.index()] = 1.0;
        s
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let b = BBox { xmin, ymin, xmax, ymax };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.xmin, self.ymin, self.xmax, self.ymax]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.xmin >= self.xmax || self.ymin >= self.ymax {
            return Err(Error::Validation(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.xmax.min(other.xmax) - self.xmin.max(other.xmin)).max(0.0);
        let ih = (self.ymax.min(other.ymax) - self.ymin.max(other.ymin)).max(0.0);
        let inter = iw * ih;
        if inter <= 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }
}

/// One detected (or annotated) constituent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramObject {
    pub bbox: BBox,
    pub class: ObjectClass,
    pub scores: [f64; NUM_CLASSES],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl DiagramObject {
    /// Object with one-hot class confidences.
    pub fn new(bbox: BBox, class: ObjectClass) -> Self {
        DiagramObject {
            bbox,
            class,
            scores: class.one_hot(),
            text: None,
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_scores(mut self, scores: [f64; NUM_CLASSES]) -> Self {
        self.scores = scores;
        self
    }

    pub fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if self.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Validation(format!("scores out of [0,1]: {:?}", self.scores)));
        }
        if self.scores[self.class.index()] < self.max_score() {
            return Err(Error::Validation(format!(
                "class {} is not the arg-max of scores {:?}",
                self.class.name(),
                self.scores
            )));
        }
        Ok(())
    }
}

/// Annotated diagram: constituents plus directed ground-truth relations.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagramAnnotation {
    pub image_size: (u32, u32),
    pub objects: Vec<DiagramObject>,
    pub relations: Vec<(usize, usize)>,
}

impl DiagramAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::Validation("image size must be positive".into()));
        }
        for obj in &self.objects {
            obj.validate()?;
        }
        let n = self.objects.len();
        let mut seen = std::collections::HashSet::new();
        for &(s, d) in &self.relations {
            for idx in [s, d] {
                if idx >= n {
                    return Err(Error::Validation(format!(
                        "relation ({s}, {d}) references object {idx} of {n}"
                    )));
                }
            }
            if !seen.insert((s, d)) {
                return Err(Error::Validation(format!("duplicate relation ({s}, {d})")));
            }
        }
        Ok(())
    }
}

/// Directed scored edge of a generated graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub confidence: f64,
}

/// Generated relation graph over the detected constituents.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagramGraph {
    pub nodes: Vec<DiagramObject>,
    pub edges: Vec<Edge>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_of_half_box() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let b = BBox::new(0.0, 0.0, 0.5, 1.0).unwrap();
        assert_eq!(a.iou(&b), 0.5);
        assert_eq!(a.iou(&a), 1.0);
        let c = BBox::new(2.0, 2.0, 3.0, 3.0).unwrap();
        assert_eq!(a.iou(&c), 0.0);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(0.5, 0.0, 0.5, 1.0).is_err());
        assert!(BBox::new(0.0, 0.7, 1.0, 0.2).is_err());
    }

    #[test]
    fn class_must_be_score_argmax() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let ok = DiagramObject::new(b, ObjectClass::Text).with_scores([0.1, 0.8, 0.05, 0.05]);
        assert!(ok.validate().is_ok());
        let bad = DiagramObject::new(b, ObjectClass::Blob).with_scores([0.1, 0.8, 0.05, 0.05]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn relation_validation() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let mut ann = DiagramAnnotation {
            image_size: (10, 10),
            objects: vec![DiagramObject::new(b, ObjectClass::Blob); 2],
            relations: vec![(0, 1)],
        };
        assert!(ann.validate().is_ok());
        ann.relations.push((0, 1));
        assert!(ann.validate().is_err());
        ann.relations = vec![(0, 2)];
        assert!(ann.validate().is_err());
    }
}
