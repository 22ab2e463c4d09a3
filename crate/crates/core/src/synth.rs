//! Synthetic floor plans with full panoptic ground truth.
//!
//! Taxonomy: three thing classes (door = arc + leaf line, window = three
//! parallel lines, table = rectangle, circle or ellipse) and two stuff
//! classes (wall = outer ring of line pieces, railing = row of short ticks).
//! Every class lives on its own layer unless `layer_fidelity` says otherwise.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ClassId, ClassInfo, ClassTable, Drawing, Layer, Point2, Primitive, Shape};

pub const DOOR: ClassId = 1;
pub const WINDOW: ClassId = 2;
pub const TABLE: ClassId = 3;
pub const WALL: ClassId = 4;
pub const RAILING: ClassId = 5;

const EXTENT: f64 = 100.0;
const GRID: usize = 4;
const CELL_LO: f64 = 10.0;
const CELL: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    /// Relative frequencies of door, window and table instances.
    pub thing_weights: [f64; 3],
    /// Inclusive range of thing instances per drawing.
    pub instances: (usize, usize),
    pub walls: bool,
    pub railing_probability: f64,
    /// Uniform jitter applied to every coordinate, in drawing units.
    pub noise: f64,
    /// Probability that a primitive sits on its class's layer rather than a random one.
    pub layer_fidelity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 1,
            thing_weights: [1.0, 1.0, 1.0],
            instances: (2, 6),
            walls: true,
            railing_probability: 0.5,
            noise: 0.0,
            layer_fidelity: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thing_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.thing_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("thing_weights must be non-negative with a positive sum".into()));
        }
        let (lo, hi) = self.instances;
        if lo > hi || hi > GRID * GRID - 1 {
            return Err(Error::Config(format!("instances range {lo}..={hi} invalid (max {})", GRID * GRID - 1)));
        }
        if !(0.0..=1.0).contains(&self.railing_probability) || !(0.0..=1.0).contains(&self.layer_fidelity) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config("noise must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn class_table() -> ClassTable {
    let c = |id, name: &str| ClassInfo { id, name: name.into() };
    ClassTable {
        things: vec![c(DOOR, "door"), c(WINDOW, "window"), c(TABLE, "table")],
        stuffs: vec![c(WALL, "wall"), c(RAILING, "railing")],
    }
}

fn layers() -> Vec<Layer> {
    ["DOOR", "WINDOW", "FURNITURE", "WALL", "RAILING"]
        .iter()
        .zip(1..)
        .map(|(name, id)| Layer {
            id,
            name: (*name).into(),
        })
        .collect()
}

/// File stem used for drawing `index` of a generated set.
pub fn drawing_name(index: usize) -> String {
    format!("drawing-{index:04}")
}

/// Generates `cfg.count` drawings. Drawing `i` depends only on `(seed, i)`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Drawing>> {
    cfg.validate()?;
    Ok((0..cfg.count).map(|i| generate_one(cfg, i as u64)).collect())
}

pub fn generate_one(cfg: &SynthConfig, index: u64) -> Drawing {
    let mut rng = crate::seeded_rng(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index));
    let mut b = Builder {
        rng: &mut rng,
        noise: cfg.noise,
        fidelity: cfg.layer_fidelity,
        shapes: Vec::new(),
    };

    if cfg.walls {
        b.walls();
    }
    let mut cells: Vec<(usize, usize)> = (0..GRID).flat_map(|r| (0..GRID).map(move |c| (r, c))).collect();
    cells.shuffle(b.rng);
    let (lo, hi) = cfg.instances;
    let n_things = b.rng.gen_range(lo..=hi);
    let total_w: f64 = cfg.thing_weights.iter().sum();
    for (z, cell) in cells.iter().take(n_things).enumerate() {
        let mut pick = b.rng.gen_range(0.0..total_w);
        let mut class = DOOR;
        for (i, w) in cfg.thing_weights.iter().enumerate() {
            if pick < *w {
                class = i as ClassId + 1;
                break;
            }
            pick -= w;
        }
        let origin = Point2::new(CELL_LO + cell.1 as f64 * CELL, CELL_LO + cell.0 as f64 * CELL);
        let instance = z as i64 + 1;
        match class {
            DOOR => b.door(origin, instance),
            WINDOW => b.window(origin, instance),
            _ => b.table(origin, instance),
        }
    }
    if b.rng.gen_bool(cfg.railing_probability) {
        if let Some(cell) = cells.get(n_things) {
            let origin = Point2::new(CELL_LO + cell.1 as f64 * CELL, CELL_LO + cell.0 as f64 * CELL);
            b.railing(origin);
        }
    }

    // Ids are a random permutation so they carry no grouping information.
    let shapes = std::mem::take(&mut b.shapes);
    let mut ids: Vec<u64> = (0..shapes.len() as u64).collect();
    ids.shuffle(b.rng);
    let mut primitives: Vec<Primitive> = shapes
        .into_iter()
        .zip(ids)
        .map(|((shape, layer, label, instance), id)| Primitive::new(id, layer, shape).with_gt(label, instance))
        .collect();
    primitives.sort_by_key(|p| p.id);

    Drawing {
        origin: Point2::default(),
        width: EXTENT,
        height: EXTENT,
        classes: class_table(),
        layers: layers(),
        primitives,
    }
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    noise: f64,
    fidelity: f64,
    shapes: Vec<(Shape, i64, ClassId, i64)>,
}

impl Builder<'_> {
    fn jitter(&mut self, p: Point2) -> Point2 {
        if self.noise == 0.0 {
            return p;
        }
        let n = self.noise;
        Point2::new(p.x + self.rng.gen_range(-n..=n), p.y + self.rng.gen_range(-n..=n))
    }

    fn push(&mut self, shape: Shape, class: ClassId, instance: i64) {
        let layer = if self.fidelity >= 1.0 || self.rng.gen_bool(self.fidelity) {
            class as i64
        } else {
            self.rng.gen_range(1..=5)
        };
        self.shapes.push((shape, layer, class, instance));
    }

    fn line(&mut self, a: Point2, b: Point2, class: ClassId, instance: i64) {
        let (start, end) = (self.jitter(a), self.jitter(b));
        self.push(Shape::Line { start, end }, class, instance);
    }

    fn walls(&mut self) {
        let inset = 4.0;
        let hi = EXTENT - inset;
        let corners = [
            Point2::new(inset, inset),
            Point2::new(hi, inset),
            Point2::new(hi, hi),
            Point2::new(inset, hi),
        ];
        for side in 0..4 {
            let (a, b) = (corners[side], corners[(side + 1) % 4]);
            let len = a.distance(b);
            let mut t = 0.0;
            while t < len {
                let step = self.rng.gen_range(15.0..35.0_f64).min(len - t);
                let step = if len - t - step < 5.0 { len - t } else { step };
                let p = a + (b - a) * (t / len);
                let q = a + (b - a) * ((t + step) / len);
                self.line(p, q, WALL, 0);
                t += step;
            }
        }
    }

    fn door(&mut self, cell: Point2, instance: i64) {
        let r = self.rng.gen_range(8.0..13.0);
        let quadrant = self.rng.gen_range(0..4);
        let start = quadrant as f64 * FRAC_PI_2;
        // Place the hinge so the quarter disc stays inside the cell.
        let (dx, dy) = (start.cos() + (start + FRAC_PI_2).cos(), start.sin() + (start + FRAC_PI_2).sin());
        let hinge = Point2::new(
            cell.x + CELL / 2.0 - dx * r / 2.0,
            cell.y + CELL / 2.0 - dy * r / 2.0,
        );
        let hinge = self.jitter(hinge);
        self.push(
            Shape::Arc {
                center: hinge,
                radius: r,
                start_angle: start + FRAC_PI_2,
                end_angle: start,
            },
            DOOR,
            instance,
        );
        let leaf_tip = hinge + Point2::new((start + FRAC_PI_2).cos(), (start + FRAC_PI_2).sin()) * r;
        self.line(hinge, leaf_tip, DOOR, instance);
    }

    fn window(&mut self, cell: Point2, instance: i64) {
        let len = self.rng.gen_range(8.0..14.0);
        let gap = self.rng.gen_range(1.0..2.0);
        let vertical = self.rng.gen_bool(0.5);
        let c = Point2::new(cell.x + CELL / 2.0, cell.y + CELL / 2.0);
        for k in -1..=1 {
            let off = k as f64 * gap;
            let (a, b) = if vertical {
                (Point2::new(c.x + off, c.y - len / 2.0), Point2::new(c.x + off, c.y + len / 2.0))
            } else {
                (Point2::new(c.x - len / 2.0, c.y + off), Point2::new(c.x + len / 2.0, c.y + off))
            };
            self.line(a, b, WINDOW, instance);
        }
    }

    fn table(&mut self, cell: Point2, instance: i64) {
        let c = self.jitter(Point2::new(cell.x + CELL / 2.0, cell.y + CELL / 2.0));
        match self.rng.gen_range(0..4) {
            0 => {
                let radius = self.rng.gen_range(3.0..6.0);
                self.push(Shape::Circle { center: c, radius }, TABLE, instance);
            }
            1 => {
                let rx = self.rng.gen_range(4.0..7.0);
                let ry = self.rng.gen_range(2.5..4.0);
                let rotation = self.rng.gen_range(0.0..PI);
                self.push(Shape::Ellipse { center: c, rx, ry, rotation }, TABLE, instance);
            }
            _ => {
                let (w, h) = (self.rng.gen_range(6.0..12.0) / 2.0, self.rng.gen_range(6.0..12.0) / 2.0);
                let pts = [
                    Point2::new(c.x - w, c.y - h),
                    Point2::new(c.x + w, c.y - h),
                    Point2::new(c.x + w, c.y + h),
                    Point2::new(c.x - w, c.y + h),
                ];
                for i in 0..4 {
                    self.line(pts[i], pts[(i + 1) % 4], TABLE, instance);
                }
            }
        }
    }

    fn railing(&mut self, cell: Point2) {
        let ticks = self.rng.gen_range(5..=8);
        let span = 14.0;
        let y = cell.y + CELL / 2.0;
        for k in 0..ticks {
            let x = cell.x + 3.0 + span * k as f64 / (ticks - 1) as f64;
            self.line(Point2::new(x, y - 1.0), Point2::new(x, y + 1.0), RAILING, 0);
        }
    }
}
