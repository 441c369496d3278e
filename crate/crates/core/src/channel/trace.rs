use super::{ChannelError, SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};
use crate::geometry::{Point2, Point3, Segment};
use crate::scene::Scene;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const OCCLUSION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub max_reflections: usize,
    pub diffraction: bool,
    /// Paths weaker than the free-space gain at the direct BS-UE distance
    /// by more than this many dB are dropped.
    pub cutoff_db: f64,
    pub center_freq: f64,
    /// Whether the four outer walls reflect.
    pub outer_walls: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            max_reflections: 2,
            diffraction: true,
            cutoff_db: 60.0,
            center_freq: 5.8e9,
            outer_walls: true,
        }
    }
}

impl TraceConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_freq
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    /// Seconds.
    pub delay: f64,
    pub complex_gain: Complex64,
    /// Plan-view departure angle from array broadside (radians); the ULA
    /// lies along `x` and faces `-y`.
    pub aod_azimuth: f64,
    pub n_reflections: u8,
    pub n_diffractions: u8,
    pub is_los: bool,
    /// Plan-view polyline BS → interaction points → UE.
    pub vertices: Vec<Point2>,
}

impl PathComponent {
    pub fn length(&self) -> f64 {
        self.delay * SPEED_OF_LIGHT
    }
}

struct Surface {
    segment: Segment,
    rel_permittivity: f64,
    conductivity: f64,
}

fn surfaces(scene: &Scene, outer: bool) -> Vec<Surface> {
    let mut out: Vec<Surface> = scene
        .walls
        .iter()
        .map(|w| Surface {
            segment: w.segment(),
            rel_permittivity: w.rel_permittivity,
            conductivity: w.conductivity,
        })
        .collect();
    if outer {
        let (eps, sigma) = crate::scene::Material::Wood.constants();
        for e in scene.outer().edges() {
            out.push(Surface {
                segment: e,
                rel_permittivity: eps,
                conductivity: sigma,
            });
        }
    }
    out
}

/// Fresnel reflection coefficient for TE (perpendicular) polarization at
/// a lossy dielectric half-space.
pub fn fresnel_te(cos_incidence: f64, rel_permittivity: f64, conductivity: f64, freq: f64) -> Complex64 {
    let eps = Complex64::new(rel_permittivity, -conductivity / (2.0 * PI * freq * VACUUM_PERMITTIVITY));
    let sin2 = 1.0 - cos_incidence * cos_incidence;
    let root = (eps - sin2).sqrt();
    (cos_incidence - root) / (cos_incidence + root)
}

/// Single knife-edge diffraction loss in dB (ITU-R P.526 approximation).
pub fn knife_edge_loss_db(v: f64) -> f64 {
    if v <= -0.78 {
        0.0
    } else {
        6.9 + 20.0 * (((v - 0.1).powi(2) + 1.0).sqrt() + v - 0.1).log10()
    }
}

fn occluded(scene: &Scene, p: Point2, q: Point2) -> bool {
    scene.walls.iter().any(|w| w.segment().blocks(p, q, OCCLUSION_TOL))
}

/// Whether the direct BS-UE segment is free of internal walls.
pub fn is_los(scene: &Scene, ue: Point3) -> bool {
    !occluded(scene, scene.bs_position.plan(), ue.plan())
}

fn aod(bs: Point2, first_hop: Point2) -> f64 {
    let d = first_hop.sub(bs);
    d.x.atan2(-d.y)
}

struct Builder<'a> {
    scene: &'a Scene,
    cfg: &'a TraceConfig,
    bs: Point3,
    ue: Point3,
    dh: f64,
}

impl Builder<'_> {
    fn path(&self, vertices: Vec<Point2>, coeff: Complex64, n_refl: u8, n_diff: u8) -> PathComponent {
        let len2d: f64 = vertices.windows(2).map(|w| w[0].dist(w[1])).sum();
        let len = len2d.hypot(self.dh);
        let lambda = self.cfg.wavelength();
        let amp = lambda / (4.0 * PI * len);
        let phase = Complex64::from_polar(1.0, -2.0 * PI * len / lambda);
        PathComponent {
            delay: len / SPEED_OF_LIGHT,
            complex_gain: coeff * amp * phase,
            aod_azimuth: aod(vertices[0], vertices[1]),
            n_reflections: n_refl,
            n_diffractions: n_diff,
            is_los: n_refl == 0 && n_diff == 0,
            vertices,
        }
    }

    /// 3D cosine of incidence for a plan-view leg hitting `surface`.
    fn cos_incidence(&self, surface: &Surface, from: Point2, to: Point2, total_2d: f64) -> f64 {
        let dir = to.sub(from);
        let plan_cos = (dir.dot(surface.segment.normal()) / dir.norm()).abs();
        plan_cos * total_2d / total_2d.hypot(self.dh)
    }

    fn legs_clear(&self, pts: &[Point2]) -> bool {
        pts.windows(2).all(|w| !occluded(self.scene, w[0], w[1]))
    }

    /// Backtracks a reflection sequence through its image chain.
    fn reflect(&self, seq: &[&Surface]) -> Option<PathComponent> {
        let bs = self.bs.plan();
        let ue = self.ue.plan();
        let mut images = Vec::with_capacity(seq.len());
        let mut src = bs;
        for s in seq {
            src = s.segment.mirror(src);
            images.push(src);
        }
        // walk backwards from the UE
        let mut points = vec![ue];
        let mut target = ue;
        for k in (0..seq.len()).rev() {
            let (t, u) = seq[k].segment.intersect_params(target, images[k])?;
            let tol = 1e-12;
            if !(t > tol && t < 1.0 - tol && (-tol..=1.0 + tol).contains(&u)) {
                return None;
            }
            target = target.add(images[k].sub(target).scale(t));
            points.push(target);
        }
        points.push(bs);
        points.reverse();
        if !self.legs_clear(&points) {
            return None;
        }
        let total_2d: f64 = points.windows(2).map(|w| w[0].dist(w[1])).sum();
        let mut coeff = Complex64::new(1.0, 0.0);
        for (k, s) in seq.iter().enumerate() {
            let c = self.cos_incidence(s, points[k], points[k + 1], total_2d);
            coeff *= fresnel_te(c, s.rel_permittivity, s.conductivity, self.cfg.center_freq);
        }
        Some(self.path(points, coeff, seq.len() as u8, 0))
    }

    fn diffract(&self, edge: Point2) -> Option<PathComponent> {
        let bs = self.bs.plan();
        let ue = self.ue.plan();
        let pts = [bs, edge, ue];
        if !self.legs_clear(&pts) {
            return None;
        }
        let (d1, d2) = (bs.dist(edge), edge.dist(ue));
        if d1 < 1e-9 || d2 < 1e-9 {
            return None;
        }
        let a = edge.sub(bs);
        let b = ue.sub(edge);
        let deflection = a.cross(b).atan2(a.dot(b)).abs();
        if deflection < 1e-6 {
            return None;
        }
        let lambda = self.cfg.wavelength();
        let v = deflection * (2.0 * d1 * d2 / (lambda * (d1 + d2))).sqrt();
        let coeff = Complex64::new(10f64.powf(-knife_edge_loss_db(v) / 20.0), 0.0);
        Some(self.path(pts.to_vec(), coeff, 0, 1))
    }
}

/// Traces LOS, specular reflections up to `max_reflections` (at most 2)
/// and, when enabled, single knife-edge diffractions at free wall ends.
/// The result is sorted by delay.
pub fn trace_paths(scene: &Scene, ue: Point3, cfg: &TraceConfig) -> Result<Vec<PathComponent>, ChannelError> {
    if !scene.contains_ue(ue) {
        return Err(ChannelError::UeOutsideRegion {
            scene_id: scene.scene_id,
            x: ue.x,
            y: ue.y,
            z: ue.z,
        });
    }
    if cfg.max_reflections > 2 {
        return Err(ChannelError::InvalidConfig("at most two reflections are supported".into()));
    }
    let b = Builder {
        scene,
        cfg,
        bs: scene.bs_position,
        ue,
        dh: scene.bs_position.z - ue.z,
    };
    let surf = surfaces(scene, cfg.outer_walls);
    let mut paths = Vec::new();

    let (bs2, ue2) = (b.bs.plan(), ue.plan());
    if !occluded(scene, bs2, ue2) {
        paths.push(b.path(vec![bs2, ue2], Complex64::new(1.0, 0.0), 0, 0));
    }
    if cfg.max_reflections >= 1 {
        for s in &surf {
            paths.extend(b.reflect(&[s]));
        }
    }
    if cfg.max_reflections >= 2 {
        for (i, s1) in surf.iter().enumerate() {
            for (j, s2) in surf.iter().enumerate() {
                if i != j {
                    paths.extend(b.reflect(&[s1, s2]));
                }
            }
        }
    }
    if cfg.diffraction {
        let outer = scene.outer();
        for w in &scene.walls {
            for &e in &w.endpoints {
                let on_outer = e.x.abs() < 1e-9
                    || e.y.abs() < 1e-9
                    || (e.x - outer.x1).abs() < 1e-9
                    || (e.y - outer.y1).abs() < 1e-9;
                if !on_outer {
                    paths.extend(b.diffract(e));
                }
            }
        }
    }

    let direct = bs2.dist(ue2).hypot(b.dh);
    let reference = cfg.wavelength() / (4.0 * PI * direct);
    let floor = reference * 10f64.powf(-cfg.cutoff_db / 20.0);
    paths.retain(|p| p.complex_gain.norm() >= floor);
    paths.sort_by(|a, b| {
        a.delay
            .total_cmp(&b.delay)
            .then(a.n_reflections.cmp(&b.n_reflections))
            .then(a.aod_azimuth.total_cmp(&b.aod_azimuth))
    });
    Ok(paths)
}
