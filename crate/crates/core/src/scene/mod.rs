//! Randomized indoor scenes and their rasterized scene graphs.
//!
//! A scene is a rectangular room with one to three axis-aligned internal
//! walls. Every wall is anchored on an outer wall and grows inward. The
//! first (primary) wall and the outer walls enclose the UE region: the
//! rectangle on the side of the primary wall away from the base station.
//! Secondary walls never cut through the UE region or cross the straight
//! line from the base station to the region centre, and part of the region
//! always sees the base station.

mod io;
mod raster;

pub use io::{load_scene_dir, read_scene_graph, save_scene_dir, scene_file_name, write_scene_graph, SceneManifest, SceneManifestEntry};
pub use raster::{rasterize, scene_graph_to_model_input, SceneGraphMatrix, CODE_BOUNDARY, CODE_FREE, CODE_WALL};

use crate::geometry::{polygon_area, polygon_contains, Point2, Point3, Rect, Segment, EPS};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene generation failed after {attempts} attempts (infeasible parameters?)")]
    GenerationFailed { attempts: usize },
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scene file {path}: {reason}")]
    Format { path: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Wood,
}

impl Material {
    /// `(relative permittivity, conductivity in S/m)`; plywood-like values.
    pub fn constants(self) -> (f64, f64) {
        match self {
            Material::Wood => (1.99, 0.012),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub endpoints: [Point2; 2],
    pub material: Material,
    pub rel_permittivity: f64,
    pub conductivity: f64,
}

impl WallSegment {
    pub fn new(a: Point2, b: Point2, material: Material) -> Self {
        let (rel_permittivity, conductivity) = material.constants();
        Self {
            endpoints: [a, b],
            material,
            rel_permittivity,
            conductivity,
        }
    }

    pub fn segment(&self) -> Segment {
        Segment::new(self.endpoints[0], self.endpoints[1])
    }

    pub fn length(&self) -> f64 {
        self.segment().length()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneParams {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
    pub bs_position: Point3,
    pub ue_height: f64,
    /// Inclusive range of internal wall counts.
    pub wall_count: [usize; 2],
    /// Inclusive range of wall lengths in metres.
    pub wall_length: [f64; 2],
    /// Wall positions and lengths snap to this lattice.
    pub lattice: f64,
    pub min_ue_area: f64,
    /// Smallest side of the UE region rectangle.
    pub min_ue_side: f64,
    /// Horizontal keep-out radius around the base station for UE drops.
    pub bs_clearance: f64,
    pub max_attempts: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 10.0,
            depth: 10.0,
            height: 3.0,
            bs_position: Point3::new(5.0, 9.0, 2.9),
            ue_height: 0.8,
            wall_count: [1, 3],
            wall_length: [3.0, 8.0],
            lattice: 0.5,
            min_ue_area: 6.0,
            min_ue_side: 1.5,
            bs_clearance: 0.5,
            max_attempts: 1000,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidParams(m.to_string()));
        if !(self.width > 0.0 && self.depth > 0.0 && self.height > 0.0) {
            return bad("room dimensions must be positive");
        }
        if self.wall_count[0] > self.wall_count[1] {
            return bad("wall_count range is reversed");
        }
        if !(self.wall_length[0] > 0.0 && self.wall_length[0] <= self.wall_length[1]) {
            return bad("wall_length range must be positive and ordered");
        }
        if self.lattice <= 0.0 {
            return bad("lattice must be positive");
        }
        let bs = self.bs_position;
        if !(bs.x > 0.0 && bs.x < self.width && bs.y > 0.0 && bs.y < self.depth && bs.z > 0.0 && bs.z < self.height) {
            return bad("bs_position must lie strictly inside the room");
        }
        if !(self.ue_height > 0.0 && self.ue_height < self.height) {
            return bad("ue_height must lie inside the room");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        Ok(())
    }

    pub fn outer_rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width, self.depth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// `(width, depth)` of the outer rectangle, anchored at the origin.
    pub outer_rect: [f64; 2],
    pub height: f64,
    pub walls: Vec<WallSegment>,
    pub bs_position: Point3,
    pub ue_region: Vec<Point2>,
    pub ue_height: f64,
    pub scene_id: u32,
    pub rng_seed: u64,
}

impl Scene {
    pub fn outer(&self) -> Rect {
        Rect::new(0.0, 0.0, self.outer_rect[0], self.outer_rect[1])
    }

    pub fn ue_region_area(&self) -> f64 {
        polygon_area(&self.ue_region)
    }

    pub fn ue_region_bounds(&self) -> Rect {
        let xs = self.ue_region.iter().map(|p| p.x);
        let ys = self.ue_region.iter().map(|p| p.y);
        Rect::new(
            xs.clone().fold(f64::INFINITY, f64::min),
            ys.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Whether a UE position is a legal drop: inside the region (plan view)
    /// and at the configured UE height.
    pub fn contains_ue(&self, ue: Point3) -> bool {
        (ue.z - self.ue_height).abs() < 1e-6 && polygon_contains(&self.ue_region, ue.plan(), 1e-9)
    }

    /// Uniform UE drop over the region, avoiding walls by `margin` and the
    /// base station by `bs_clearance`.
    pub fn sample_ue<R: Rng>(&self, rng: &mut R, margin: f64, bs_clearance: f64) -> Point3 {
        let b = self.ue_region_bounds();
        loop {
            let x = rng.random_range(b.x0 + margin..b.x1 - margin);
            let y = rng.random_range(b.y0 + margin..b.y1 - margin);
            let p = Point2::new(x, y);
            if !polygon_contains(&self.ue_region, p, 0.0) {
                continue;
            }
            if p.dist(self.bs_position.plan()) < bs_clearance {
                continue;
            }
            if self.walls.iter().any(|w| point_segment_distance(p, &w.segment()) < margin) {
                continue;
            }
            return Point3::new(x, y, self.ue_height);
        }
    }

    /// Checks every scene invariant; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let outer = self.outer();
        for (i, w) in self.walls.iter().enumerate() {
            if w.endpoints[0].dist(w.endpoints[1]) <= EPS {
                return Err(format!("wall {i} has coincident endpoints"));
            }
            if w.rel_permittivity < 1.0 || w.conductivity < 0.0 {
                return Err(format!("wall {i} has unphysical material constants"));
            }
            if !w.endpoints.iter().all(|p| outer.contains(*p, EPS)) {
                return Err(format!("wall {i} leaves the outer rectangle"));
            }
        }
        if !outer.contains_strict(self.bs_position.plan()) {
            return Err("base station outside the room".into());
        }
        let area = self.ue_region_area();
        if area <= 0.0 {
            return Err("UE region has no area".into());
        }
        if !self.ue_region.iter().all(|p| outer.contains(*p, EPS)) {
            return Err("UE region leaves the outer rectangle".into());
        }
        if !self.walls.is_empty() && polygon_contains(&self.ue_region, self.bs_position.plan(), 1e-9) {
            return Err("base station inside the UE region".into());
        }
        Ok(())
    }
}

fn point_segment_distance(p: Point2, s: &Segment) -> f64 {
    let d = s.b.sub(s.a);
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return p.dist(s.a);
    }
    let t = (p.sub(s.a).dot(d) / len2).clamp(0.0, 1.0);
    s.a.add(d.scale(t)).dist(p)
}

#[derive(Clone, Copy, Debug)]
enum Side {
    Bottom,
    Top,
    Left,
    Right,
}

/// An internal wall anchored on an outer wall, plus the two rectangles it
/// separates against the outer walls.
struct AnchoredWall {
    segment: Segment,
    pockets: [Rect; 2],
}

fn lattice_pick<R: Rng>(rng: &mut R, lo: f64, hi: f64, step: f64) -> Option<f64> {
    let first = (lo / step - EPS).ceil() as i64;
    let last = (hi / step + EPS).floor() as i64;
    if last < first {
        return None;
    }
    Some(rng.random_range(first..=last) as f64 * step)
}

fn random_anchored_wall<R: Rng>(rng: &mut R, p: &SceneParams) -> Option<AnchoredWall> {
    let (w, d) = (p.width, p.depth);
    let side = match rng.random_range(0..4) {
        0 => Side::Bottom,
        1 => Side::Top,
        2 => Side::Left,
        _ => Side::Right,
    };
    let along = match side {
        Side::Bottom | Side::Top => w,
        Side::Left | Side::Right => d,
    };
    let across = match side {
        Side::Bottom | Side::Top => d,
        Side::Left | Side::Right => w,
    };
    let pos = lattice_pick(rng, p.min_ue_side, along - p.min_ue_side, p.lattice)?;
    let max_len = p.wall_length[1].min(across - p.lattice);
    let len = lattice_pick(rng, p.wall_length[0], max_len, p.lattice)?;
    let (segment, pockets) = match side {
        Side::Bottom => (
            Segment::new(Point2::new(pos, 0.0), Point2::new(pos, len)),
            [Rect::new(0.0, 0.0, pos, len), Rect::new(pos, 0.0, w, len)],
        ),
        Side::Top => (
            Segment::new(Point2::new(pos, d), Point2::new(pos, d - len)),
            [Rect::new(0.0, d - len, pos, d), Rect::new(pos, d - len, w, d)],
        ),
        Side::Left => (
            Segment::new(Point2::new(0.0, pos), Point2::new(len, pos)),
            [Rect::new(0.0, 0.0, len, pos), Rect::new(0.0, pos, len, d)],
        ),
        Side::Right => (
            Segment::new(Point2::new(w, pos), Point2::new(w - len, pos)),
            [Rect::new(w - len, 0.0, w, pos), Rect::new(w - len, pos, w, d)],
        ),
    };
    Some(AnchoredWall { segment, pockets })
}

/// Picks the pocket not containing the base station; if neither contains
/// it, the one whose centre lies farther from it.
fn choose_pocket(pockets: &[Rect; 2], bs: Point2) -> Option<Rect> {
    let free: Vec<&Rect> = pockets.iter().filter(|r| !r.contains(bs, 1e-9)).collect();
    match free.as_slice() {
        [] => None,
        [only] => Some(**only),
        [a, b, ..] => {
            if b.center().dist(bs) > a.center().dist(bs) + EPS {
                Some(**b)
            } else {
                Some(**a)
            }
        }
    }
}

fn segments_touch(a: &Segment, b: &Segment) -> bool {
    // axis-aligned walls only: compare bounding boxes with a small pad
    let pad = 1e-6;
    let (ax0, ax1) = (a.a.x.min(a.b.x) - pad, a.a.x.max(a.b.x) + pad);
    let (ay0, ay1) = (a.a.y.min(a.b.y) - pad, a.a.y.max(a.b.y) + pad);
    let (bx0, bx1) = (b.a.x.min(b.b.x), b.a.x.max(b.b.x));
    let (by0, by1) = (b.a.y.min(b.b.y), b.a.y.max(b.b.y));
    ax0 <= bx1 && bx0 <= ax1 && ay0 <= by1 && by0 <= ay1
}

/// Whether some lattice point strictly inside `region` sees `bs` in plan
/// view past every wall.
fn partly_visible(region: &Rect, bs: Point2, walls: &[Segment], step: f64) -> bool {
    let nx = (region.width() / step).ceil() as usize;
    let ny = (region.height() / step).ceil() as usize;
    (0..nx).flat_map(|i| (0..ny).map(move |j| (i, j))).any(|(i, j)| {
        let p = Point2::new(region.x0 + (i as f64 + 0.5) * region.width() / nx as f64, region.y0 + (j as f64 + 0.5) * region.height() / ny as f64);
        !walls.iter().any(|w| w.blocks(bs, p, EPS))
    })
}

/// Generates a random scene. Deterministic in `(scene_id, seed, params)`;
/// `scene_id` is bookkeeping only and does not influence geometry.
pub fn generate_scene(scene_id: u32, seed: u64, params: &SceneParams) -> Result<Scene, SceneError> {
    params.validate()?;
    let mut rng = crate::seed::rng(&[seed, 0x5CE7E]);
    let bs = params.bs_position.plan();
    let outer = params.outer_rect();

    let base = |walls: Vec<WallSegment>, region: Rect| Scene {
        outer_rect: [params.width, params.depth],
        height: params.height,
        walls,
        bs_position: params.bs_position,
        ue_region: region.corners().to_vec(),
        ue_height: params.ue_height,
        scene_id,
        rng_seed: seed,
    };

    for _attempt in 0..params.max_attempts {
        let n_walls = rng.random_range(params.wall_count[0]..=params.wall_count[1]);
        if n_walls == 0 {
            return Ok(base(Vec::new(), outer));
        }
        let Some(primary) = random_anchored_wall(&mut rng, params) else {
            continue;
        };
        let Some(region) = choose_pocket(&primary.pockets, bs) else {
            continue;
        };
        if region.area() < params.min_ue_area
            || region.width() < params.min_ue_side
            || region.height() < params.min_ue_side
        {
            continue;
        }
        if point_segment_distance(bs, &primary.segment) < params.bs_clearance {
            continue;
        }
        let mut segments = vec![primary.segment];
        let mut ok = true;
        for _ in 1..n_walls {
            let mut placed = false;
            for _ in 0..50 {
                let Some(cand) = random_anchored_wall(&mut rng, params) else {
                    continue;
                };
                let s = cand.segment;
                if region.segment_enters_interior(&s)
                    || s.blocks(bs, region.center(), EPS)
                    || point_segment_distance(bs, &s) < params.bs_clearance
                    || segments.iter().any(|o| segments_touch(o, &s))
                {
                    continue;
                }
                segments.push(s);
                placed = true;
                break;
            }
            if !placed {
                ok = false;
                break;
            }
        }
        if !ok || !partly_visible(&region, bs, &segments, params.lattice) {
            continue;
        }
        let walls = segments
            .into_iter()
            .map(|s| WallSegment::new(s.a, s.b, Material::Wood))
            .collect();
        return Ok(base(walls, region));
    }
    Err(SceneError::GenerationFailed {
        attempts: params.max_attempts,
    })
}

/// Generates `count` scenes with ids `0..count` and per-scene seeds
/// derived from `seed`.
pub fn generate_scenes(count: usize, seed: u64, params: &SceneParams) -> Result<Vec<Scene>, SceneError> {
    (0..count)
        .map(|i| generate_scene(i as u32, crate::seed::derive(&[seed, i as u64]), params))
        .collect()
}
