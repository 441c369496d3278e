use super::Scene;
use crate::geometry::{Point2, Segment};
use ndarray::Array2;

pub const CODE_FREE: u8 = 0;
pub const CODE_WALL: u8 = 1;
pub const CODE_BOUNDARY: u8 = 2;

/// Top-down G×G map of a scene. Row index follows `y`, column index `x`;
/// cell `(r, c)` covers `[c·cs, (c+1)·cs) × [r·cs, (r+1)·cs)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraphMatrix {
    pub grid: Vec<u8>,
    pub g: usize,
    pub cell_size: f64,
    pub scene_id: u32,
}

impl SceneGraphMatrix {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.grid[row * self.g + col]
    }

    pub fn count(&self, code: u8) -> usize {
        self.grid.iter().filter(|&&c| c == code).count()
    }

    pub fn to_array(&self) -> Array2<u8> {
        Array2::from_shape_vec((self.g, self.g), self.grid.clone()).expect("grid is g*g")
    }
}

struct Raster {
    g: usize,
    extent: f64,
}

impl Raster {
    fn scaled(&self, v: f64) -> f64 {
        v * self.g as f64 / self.extent
    }

    fn lower(&self, v: f64) -> usize {
        let c = (self.scaled(v) + 1e-9).floor();
        (c.max(0.0) as usize).min(self.g - 1)
    }

    fn upper(&self, v: f64) -> usize {
        let c = (self.scaled(v) - 1e-9).ceil() - 1.0;
        (c.max(0.0) as usize).min(self.g - 1)
    }

    /// Cells crossed by a segment as `(row, col)`.
    fn cells(&self, s: &Segment) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if (s.a.x - s.b.x).abs() < 1e-12 {
            let col = self.lower(s.a.x);
            let (y0, y1) = (s.a.y.min(s.b.y), s.a.y.max(s.b.y));
            let (r0, r1) = (self.lower(y0), self.upper(y1).max(self.lower(y0)));
            out.extend((r0..=r1).map(|r| (r, col)));
        } else if (s.a.y - s.b.y).abs() < 1e-12 {
            let row = self.lower(s.a.y);
            let (x0, x1) = (s.a.x.min(s.b.x), s.a.x.max(s.b.x));
            let (c0, c1) = (self.lower(x0), self.upper(x1).max(self.lower(x0)));
            out.extend((c0..=c1).map(|c| (row, c)));
        } else {
            let cell = self.extent / self.g as f64;
            let n = ((s.length() / cell) * 4.0).ceil().max(1.0) as usize;
            for i in 0..=n {
                let t = i as f64 / n as f64;
                let p: Point2 = s.a.add(s.b.sub(s.a).scale(t));
                out.push((self.lower(p.y), self.lower(p.x)));
            }
            out.sort_unstable();
            out.dedup();
        }
        out
    }
}

/// Rasterizes internal walls (code 1) and the UE-region boundary (code 2)
/// onto a `g × g` grid. Walls win where both overlap.
pub fn rasterize(scene: &Scene, g: usize) -> SceneGraphMatrix {
    assert!(g >= 8, "scene graph resolution must be at least 8");
    let extent = scene.outer_rect[0].max(scene.outer_rect[1]);
    let raster = Raster { g, extent };
    let mut grid = vec![CODE_FREE; g * g];
    let n = scene.ue_region.len();
    for i in 0..n {
        let edge = Segment::new(scene.ue_region[i], scene.ue_region[(i + 1) % n]);
        for (r, c) in raster.cells(&edge) {
            grid[r * g + c] = CODE_BOUNDARY;
        }
    }
    for w in &scene.walls {
        for (r, c) in raster.cells(&w.segment()) {
            grid[r * g + c] = CODE_WALL;
        }
    }
    SceneGraphMatrix {
        grid,
        g,
        cell_size: extent / g as f64,
        scene_id: scene.scene_id,
    }
}

/// Maps codes to `code / 2` so the hypernetwork sees values in `[0, 1]`.
pub fn scene_graph_to_model_input(m: &SceneGraphMatrix) -> Array2<f64> {
    m.to_array().mapv(|c| c as f64 / 2.0)
}
