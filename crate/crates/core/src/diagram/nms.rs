use super::DiagramObject;

/// Minimum max-class confidence kept at inference.
pub const SCORE_THRESHOLD: f64 = 0.01;
/// Overlap above which a lower-scored box of the same class is suppressed.
pub const NMS_IOU: f64 = 0.45;

/// Indices surviving score filtering and per-class greedy NMS, ordered by
/// score descending, then original index.
pub fn filter_detection_indices(objects: &[DiagramObject], score_thresh: f64, nms_iou: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..objects.len())
        .filter(|&i| objects[i].max_score() > score_thresh)
        .collect();
    order.sort_by(|&a, &b| {
        objects[b]
            .max_score()
            .total_cmp(&objects[a].max_score())
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| objects[k].class == objects[i].class && objects[k].bbox.iou(&objects[i].bbox) > nms_iou);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

pub fn filter_detections(objects: &[DiagramObject], score_thresh: f64, nms_iou: f64) -> Vec<DiagramObject> {
    filter_detection_indices(objects, score_thresh, nms_iou)
        .into_iter()
        .map(|i| objects[i].clone())
        .collect()
}
