//! JSON annotation files.
//!
//! A file is a list of diagrams:
//!
//! ```json
//! [
//!   {
//!     "image": { "width": 512, "height": 512 },
//!     "objects": [
//!       { "box": [40, 40, 88, 88], "class": "blob", "scores": [1, 0, 0, 0] },
//!       { "polygon": [[0, 0], [10, 0], [5, 8]], "class": "text", "text": "Egg" }
//!     ],
//!     "relations": [[0, 1]]
//!   }
//! ]
//! ```
//!
//! Coordinates are pixels. Each object carries either `box`
//! (`[xmin, ymin, xmax, ymax]`) or `polygon` (list of `[x, y]` vertices,
//! reduced to its bounding rectangle on load). `scores` defaults to one-hot
//! on `class`; `text` is optional. Loaded boxes are normalized to `[0, 1]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BBox, DiagramAnnotation, DiagramObject, ObjectClass, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageRecord {
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polygon: Option<Vec<[f64; 2]>>,
    class: ObjectClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<[f64; NUM_CLASSES]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagramRecord {
    image: ImageRecord,
    objects: Vec<ObjectRecord>,
    #[serde(default)]
    relations: Vec<[usize; 2]>,
}

fn to_domain(record: DiagramRecord, index: usize) -> Result<DiagramAnnotation> {
    let parse_err = |message: String| Error::Parse { record: index, message };
    let (w, h) = (f64::from(record.image.width), f64::from(record.image.height));
    if record.image.width == 0 || record.image.height == 0 {
        return Err(parse_err("image size must be positive".into()));
    }
    let mut objects = Vec::with_capacity(record.objects.len());
    for (oi, obj) in record.objects.into_iter().enumerate() {
        let px = match (obj.bbox, obj.polygon) {
            (Some(b), None) => b,
            (None, Some(poly)) if !poly.is_empty() => {
                let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
                for [x, y] in poly {
                    b[0] = b[0].min(x);
                    b[1] = b[1].min(y);
                    b[2] = b[2].max(x);
                    b[3] = b[3].max(y);
                }
                b
            }
            _ => {
                return Err(parse_err(format!(
                    "object {oi}: exactly one of `box` or non-empty `polygon` required"
                )))
            }
        };
        let bbox = BBox::new(px[0] / w, px[1] / h, px[2] / w, px[3] / h)
            .map_err(|e| parse_err(format!("object {oi}: {e}")))?;
        let mut o = DiagramObject::new(bbox, obj.class);
        if let Some(s) = obj.scores {
            o.scores = s;
        }
        o.text = obj.text;
        objects.push(o);
    }
    let ann = DiagramAnnotation {
        image_size: (record.image.width, record.image.height),
        objects,
        relations: record.relations.into_iter().map(|[s, d]| (s, d)).collect(),
    };
    ann.validate()
        .map_err(|e| Error::Validation(format!("diagram {index}: {e}")))?;
    Ok(ann)
}

fn to_record(ann: &DiagramAnnotation) -> DiagramRecord {
    let (w, h) = (f64::from(ann.image_size.0), f64::from(ann.image_size.1));
    DiagramRecord {
        image: ImageRecord {
            width: ann.image_size.0,
            height: ann.image_size.1,
        },
        objects: ann
            .objects
            .iter()
            .map(|o| ObjectRecord {
                bbox: Some([o.bbox.xmin * w, o.bbox.ymin * h, o.bbox.xmax * w, o.bbox.ymax * h]),
                polygon: None,
                class: o.class,
                scores: Some(o.scores),
                text: o.text.clone(),
            })
            .collect(),
        relations: ann.relations.iter().map(|&(s, d)| [s, d]).collect(),
    }
}

/// Parses an annotation document from a string.
pub fn parse_annotations(json: &str) -> Result<Vec<DiagramAnnotation>> {
    let raw: Vec<serde_json::Value> = serde_json::from_str(json).map_err(|e| Error::Parse {
        record: 0,
        message: format!("top level must be a list of diagrams: {e}"),
    })?;
    raw.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let rec: DiagramRecord = serde_json::from_value(v).map_err(|e| Error::Parse {
                record: i,
                message: e.to_string(),
            })?;
            to_domain(rec, i)
        })
        .collect()
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<DiagramAnnotation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

/// Serializes annotations in the file schema (pixel coordinates, `box` form).
pub fn write_annotations(annotations: &[DiagramAnnotation]) -> Result<String> {
    let records: Vec<DiagramRecord> = annotations.iter().map(to_record).collect();
    let mut s = serde_json::to_string_pretty(&records)?;
    s.push('\n');
    Ok(s)
}

pub fn save_annotations(path: impl AsRef<Path>, annotations: &[DiagramAnnotation]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_annotations(annotations)?).map_err(|e| Error::io(path, e))
}
