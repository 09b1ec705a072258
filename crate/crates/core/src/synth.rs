//! Seeded synthetic diagrams: cycles, hub-and-spoke stars and layered DAGs,
//! with arrow heads, arrow tails and optional text labels.
//!
//! Boxes are integer pixels on a power-of-two canvas, so normalized
//! coordinates survive the annotation round-trip exactly. Edge direction is
//! drawn per diagram (clockwise or not, into or out of the hub, downward or
//! upward), so blob geometry alone does not reveal it.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagram::{BBox, DiagramAnnotation, DiagramObject, ObjectClass};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng as StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cycle,
    Star,
    Dag,
    /// Picks one of the other three per diagram.
    Mixed,
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cycle" => Ok(Family::Cycle),
            "star" => Ok(Family::Star),
            "dag" => Ok(Family::Dag),
            "mixed" => Ok(Family::Mixed),
            other => Err(format!("unknown family `{other}` (expected cycle, star, dag, mixed)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub family: Family,
    /// Inclusive blob-count range.
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Probability that a blob gets a text label.
    pub text_attach: f64,
    /// Maximum positional jitter in pixels.
    pub jitter: u32,
    pub seed: u64,
    /// Side of the square canvas in pixels.
    pub image_size: u32,
    /// Layout attempts per diagram before giving up.
    pub retries: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            family: Family::Cycle,
            min_nodes: 3,
            max_nodes: 6,
            text_attach: 0.5,
            jitter: 8,
            seed: 0,
            image_size: 512,
            retries: 200,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_nodes < 2 || self.min_nodes > self.max_nodes {
            return Err(Error::Config(format!(
                "node range {}..={} must satisfy 2 <= min <= max",
                self.min_nodes, self.max_nodes
            )));
        }
        if !(0.0..=1.0).contains(&self.text_attach) {
            return Err(Error::Config("text_attach must lie in [0, 1]".into()));
        }
        if self.image_size < 256 || !self.image_size.is_power_of_two() {
            return Err(Error::Config(
                "image_size must be a power of two of at least 256".into(),
            ));
        }
        Ok(())
    }
}

const VOCABULARY: [&str; 32] = [
    "Egg",
    "Larva",
    "Pupa",
    "Adult",
    "Seed",
    "Sprout",
    "Seedling",
    "Flower",
    "Fruit",
    "Tadpole",
    "Froglet",
    "Frog",
    "Sun",
    "Grass",
    "Rabbit",
    "Fox",
    "Hawk",
    "Mouse",
    "Snake",
    "Owl",
    "Algae",
    "Shrimp",
    "Fish",
    "Heron",
    "Cloud",
    "Rain",
    "River",
    "Ocean",
    "Vapor",
    "Nymph",
    "Caterpillar",
    "Butterfly",
];

const BLOB_MIN: i64 = 40;
const BLOB_MAX: i64 = 64;
const ARROW: i64 = 14;
/// Gap between a blob edge and the nearest arrow box center.
const ARROW_OFFSET: f64 = 12.0;
/// Required free length between two connected blobs.
const MIN_GAP: f64 = 2.0 * (ARROW_OFFSET + ARROW as f64) + 4.0;
const MARGIN: i64 = 6;

#[derive(Clone, Copy, Debug)]
struct Rect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Rect {
    fn centered(cx: f64, cy: f64, w: i64, h: i64) -> Rect {
        let x0 = (cx - w as f64 / 2.0).round() as i64;
        let y0 = (cy - h as f64 / 2.0).round() as i64;
        Rect {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        }
    }

    fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0)
    }

    fn overlaps(&self, o: &Rect, margin: i64) -> bool {
        self.x0 < o.x1 + margin && o.x0 < self.x1 + margin && self.y0 < o.y1 + margin && o.y0 < self.y1 + margin
    }

    fn inside(&self, size: i64) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && self.x1 <= size && self.y1 <= size
    }

    /// Distance from the center to the border along unit direction `(ux, uy)`.
    fn exit_distance(&self, ux: f64, uy: f64) -> f64 {
        let hw = (self.x1 - self.x0) as f64 / 2.0;
        let hh = (self.y1 - self.y0) as f64 / 2.0;
        let tx = if ux.abs() > 1e-12 { hw / ux.abs() } else { f64::INFINITY };
        let ty = if uy.abs() > 1e-12 { hh / uy.abs() } else { f64::INFINITY };
        tx.min(ty)
    }
}

struct Layout {
    blobs: Vec<(f64, f64)>,
    relations: Vec<(usize, usize)>,
}

fn pick_family<R: Rng>(family: Family, rng: &mut R) -> Family {
    match family {
        Family::Mixed => *[Family::Cycle, Family::Star, Family::Dag]
            .choose(rng)
            .unwrap_or(&Family::Cycle),
        f => f,
    }
}

fn layout<R: Rng>(family: Family, k: usize, size: f64, rng: &mut R) -> Layout {
    let c = size / 2.0;
    let radius = size * rng.gen_range(0.30..0.36);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let on_circle = |i: usize, n: usize| {
        let t = phase + std::f64::consts::TAU * i as f64 / n as f64;
        (c + radius * t.cos(), c + radius * t.sin())
    };
    match family {
        Family::Cycle => {
            let blobs = (0..k).map(|i| on_circle(i, k)).collect();
            let forward = rng.gen_bool(0.5);
            let relations = (0..k)
                .map(|i| {
                    let j = (i + 1) % k;
                    if forward {
                        (i, j)
                    } else {
                        (j, i)
                    }
                })
                .collect();
            Layout { blobs, relations }
        }
        Family::Star => {
            let leaves = k - 1;
            let mut blobs = vec![(c, c)];
            blobs.extend((0..leaves).map(|i| on_circle(i, leaves)));
            let outward = rng.gen_bool(0.5);
            let relations = (1..k).map(|l| if outward { (0, l) } else { (l, 0) }).collect();
            Layout { blobs, relations }
        }
        Family::Dag | Family::Mixed => {
            let n_layers = if k >= 4 {
                rng.gen_range(2..=3usize.min(k - 1))
            } else {
                2
            };
            // At least one node per layer; the rest spread at random.
            let mut counts = vec![1usize; n_layers];
            for _ in n_layers..k {
                let l = rng.gen_range(0..n_layers);
                counts[l] += 1;
            }
            let mut blobs = Vec::with_capacity(k);
            let mut layers: Vec<Vec<usize>> = Vec::with_capacity(n_layers);
            let top = size * 0.14;
            let span = size * 0.72;
            for (l, &cnt) in counts.iter().enumerate() {
                let y = top + span * l as f64 / (n_layers - 1) as f64;
                let mut ids = Vec::with_capacity(cnt);
                for s in 0..cnt {
                    let x = size * (s as f64 + 0.5) / cnt as f64;
                    ids.push(blobs.len());
                    blobs.push((x, y));
                }
                layers.push(ids);
            }
            let downward = rng.gen_bool(0.5);
            let mut relations = Vec::new();
            for w in layers.windows(2) {
                let (upper, lower) = (&w[0], &w[1]);
                let mut fed = vec![false; upper.len()];
                for &child in lower {
                    let parents = rng.gen_range(1..=2usize.min(upper.len()));
                    for &pi in rand::seq::index::sample(rng, upper.len(), parents)
                        .iter()
                        .collect::<Vec<_>>()
                        .iter()
                    {
                        fed[pi] = true;
                        relations.push((upper[pi], child));
                    }
                }
                // Every upper node feeds at least one child.
                for (pi, f) in fed.iter().enumerate() {
                    if !f {
                        relations.push((upper[pi], lower[rng.gen_range(0..lower.len())]));
                    }
                }
            }
            relations.sort_unstable();
            relations.dedup();
            if !downward {
                relations.iter_mut().for_each(|r| *r = (r.1, r.0));
            }
            Layout { blobs, relations }
        }
    }
}

fn attempt<R: Rng>(spec: &SynthSpec, rng: &mut R) -> Option<DiagramAnnotation> {
    let size = i64::from(spec.image_size);
    let family = pick_family(spec.family, rng);
    let k = rng.gen_range(spec.min_nodes..=spec.max_nodes);
    let lay = layout(family, k, size as f64, rng);
    let jit = i64::from(spec.jitter);

    let mut blobs: Vec<Rect> = Vec::with_capacity(k);
    for &(cx, cy) in &lay.blobs {
        let dx = rng.gen_range(-jit..=jit) as f64;
        let dy = rng.gen_range(-jit..=jit) as f64;
        let r = Rect::centered(
            cx + dx,
            cy + dy,
            rng.gen_range(BLOB_MIN..=BLOB_MAX),
            rng.gen_range(BLOB_MIN..=BLOB_MAX),
        );
        if !r.inside(size) || blobs.iter().any(|b| b.overlaps(&r, MARGIN)) {
            return None;
        }
        blobs.push(r);
    }

    // Arrow tail just outside the source, head just outside the destination.
    let mut arrows: Vec<(Rect, ObjectClass)> = Vec::with_capacity(2 * lay.relations.len());
    for &(s, d) in &lay.relations {
        let (sx, sy) = blobs[s].center();
        let (dx, dy) = blobs[d].center();
        let len = ((dx - sx).powi(2) + (dy - sy).powi(2)).sqrt();
        let (ux, uy) = ((dx - sx) / len, (dy - sy) / len);
        let out_s = blobs[s].exit_distance(ux, uy);
        let out_d = blobs[d].exit_distance(ux, uy);
        if len - out_s - out_d < MIN_GAP {
            return None;
        }
        let t_tail = out_s + ARROW_OFFSET;
        let t_head = len - out_d - ARROW_OFFSET;
        let tail = Rect::centered(sx + ux * t_tail, sy + uy * t_tail, ARROW, ARROW);
        let head = Rect::centered(sx + ux * t_head, sy + uy * t_head, ARROW, ARROW);
        for r in [tail, head] {
            if !r.inside(size) {
                return None;
            }
        }
        arrows.push((tail, ObjectClass::ArrowTail));
        arrows.push((head, ObjectClass::ArrowHead));
    }

    // Labels sit outward from the canvas center, falling back to the other
    // sides; they must not touch blobs, arrows or each other.
    let mut words: Vec<&str> = VOCABULARY.to_vec();
    words.shuffle(rng);
    let mut texts: Vec<(Rect, String)> = Vec::new();
    for (bi, b) in blobs.iter().enumerate() {
        if !rng.gen_bool(spec.text_attach) {
            continue;
        }
        let word = words[bi % words.len()];
        let w = (word.len() as i64 * 7 + 10).min(96);
        let h = rng.gen_range(14..=18);
        let (bx, by) = b.center();
        let (cx, cy) = (size as f64 / 2.0, size as f64 / 2.0);
        let below = Rect::centered(bx, b.y1 as f64 + 4.0 + h as f64 / 2.0, w, h);
        let above = Rect::centered(bx, b.y0 as f64 - 4.0 - h as f64 / 2.0, w, h);
        let right = Rect::centered(b.x1 as f64 + 4.0 + w as f64 / 2.0, by, w, h);
        let left = Rect::centered(b.x0 as f64 - 4.0 - w as f64 / 2.0, by, w, h);
        let mut options = if (by - cy).abs() >= (bx - cx).abs() {
            if by >= cy {
                [below, left, right, above]
            } else {
                [above, left, right, below]
            }
        } else if bx >= cx {
            [right, below, above, left]
        } else {
            [left, below, above, right]
        };
        if family == Family::Dag {
            options.swap(0, 1);
        }
        let free = |r: &Rect| {
            r.inside(size)
                && !blobs.iter().any(|o| o.overlaps(r, 2))
                && !arrows.iter().any(|(o, _)| o.overlaps(r, 2))
                && !texts.iter().any(|(o, _)| o.overlaps(r, 2))
        };
        let placed = options.into_iter().find(|r| free(r))?;
        texts.push((placed, word.to_string()));
    }

    let scale = size as f64;
    let to_bbox = |r: &Rect| {
        BBox::new(
            r.x0 as f64 / scale,
            r.y0 as f64 / scale,
            r.x1 as f64 / scale,
            r.y1 as f64 / scale,
        )
    };
    let mut objects: Vec<DiagramObject> = Vec::new();
    for b in &blobs {
        objects.push(DiagramObject::new(to_bbox(b).ok()?, ObjectClass::Blob));
    }
    for (r, word) in &texts {
        objects.push(DiagramObject::new(to_bbox(r).ok()?, ObjectClass::Text).with_text(word.clone()));
    }
    for (r, class) in &arrows {
        objects.push(DiagramObject::new(to_bbox(r).ok()?, *class));
    }

    // Random object order so indices carry no structure.
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.shuffle(rng);
    let mut position = vec![0; objects.len()];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new;
    }
    let objects = order.iter().map(|&old| objects[old].clone()).collect();
    let mut relations: Vec<(usize, usize)> = lay.relations.iter().map(|&(s, d)| (position[s], position[d])).collect();
    relations.sort_unstable();

    Some(DiagramAnnotation {
        image_size: (spec.image_size, spec.image_size),
        objects,
        relations,
    })
}

/// `count` diagrams; diagram `i` depends only on `(spec, i)`.
pub fn generate(spec: &SynthSpec, count: usize) -> Result<Vec<DiagramAnnotation>> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let mut rng: StreamRng = substream(spec.seed, "synth", i as u64);
            for _ in 0..spec.retries.max(1) {
                if let Some(ann) = attempt(spec, &mut rng) {
                    ann.validate()?;
                    return Ok(ann);
                }
            }
            Err(Error::Generation(format!(
                "diagram {i}: no feasible placement within {} attempts",
                spec.retries
            )))
        })
        .collect()
}
