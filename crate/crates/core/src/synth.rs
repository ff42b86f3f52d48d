//! Deterministic synthetic tunnel scenes with ground-truth changes.
//!
//! A scene is a straight tunnel along the x axis, centered at the origin,
//! with a flat floor at `z = 0`. Width and height vary smoothly along the
//! tunnel so that places are distinguishable. Wall, floor, ceiling and the
//! two end caps are sampled with one uniform point per lattice cell plus
//! Gaussian noise.
//!
//! The changed session reuses every base point and adds or removes objects.
//! Its map and trajectory are then expressed in a frame offset by a seeded
//! rigid transform `T_true`, so that `T_true` maps the raw second session
//! into the common (first session) frame.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), whose output is fixed by
//! its specification, seeded with `seed` and using separate streams for the
//! profile, the base surface, the objects and the transform.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::RegionPair;
use crate::error::{Error, Result};
use crate::extraction::RegionExtraction;
use crate::geometry::{Point3, PointCloud, RigidTransform, Trajectory};
use crate::io::{write_atomic, write_point_cloud, write_trajectory, write_transform, PointCloudFormat};
use crate::kdtree::KdTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    AddBox,
    RemoveBox,
    MoveBox,
    AddMound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeSpec {
    pub kind: ChangeKind,
    /// Box center, or the center of a mound's base.
    pub center: [f64; 3],
    /// Box side lengths, or mound base diameters and peak height.
    pub dims: [f64; 3],
    /// Displacement of a moved box.
    #[serde(default)]
    pub displacement: [f64; 3],
    /// Surface samples per square meter.
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Relative amplitude of the width and height variation.
    pub profile_amplitude: f64,
    /// Scale of the short-wavelength relief of floor, walls and ceiling.
    pub roughness: f64,
    /// Average distance between wall niches on each side; 0 disables them.
    pub niche_spacing: f64,
    /// Sampling cell size of the tunnel surface.
    pub spacing: f64,
    pub noise_sigma: f64,
    pub trajectory_step: f64,
    pub sensor_height: f64,
    pub max_yaw_deg: f64,
    pub max_translation: f64,
    /// Radius used to list the poses affected by each change.
    pub truth_radius: f64,
    pub changes: Vec<ChangeSpec>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            length: 60.0,
            width: 5.0,
            height: 4.0,
            profile_amplitude: 0.15,
            roughness: 0.2,
            niche_spacing: 12.0,
            spacing: 0.135,
            noise_sigma: 0.01,
            trajectory_step: 1.5,
            sensor_height: 1.0,
            max_yaw_deg: 10.0,
            max_translation: 1.0,
            truth_radius: 4.5,
            changes: Vec::new(),
        }
    }
}

/// Keeps objects at least this far from the tunnel surface.
const OBJECT_CLEARANCE: f64 = 0.8;

impl SceneSpec {
    /// Three boxes of 0.7 to 1.0 m sides, one in each third of a 60 m tunnel.
    pub fn standard(seed: u64) -> Self {
        let mut spec = SceneSpec {
            seed,
            ..Default::default()
        };
        spec.changes = spec.spread_boxes(seed, 3, 18.0, (0.7, 1.0));
        spec
    }

    /// A 200 m, 10 m wide tunnel with about twenty times the points of
    /// [`SceneSpec::standard`].
    pub fn scaled(seed: u64) -> Self {
        let mut spec = SceneSpec {
            seed,
            length: 200.0,
            width: 10.0,
            height: 6.0,
            spacing: 0.073,
            truth_radius: 10.0,
            ..Default::default()
        };
        spec.changes = spec.spread_boxes(seed, 3, 60.0, (1.4, 1.8));
        spec
    }

    fn spread_boxes(&self, seed: u64, count: usize, gap: f64, side: (f64, f64)) -> Vec<ChangeSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let half_w = self.width * (1.0 - self.profile_amplitude) / 2.0;
        (0..count)
            .map(|i| {
                let d = rng.random_range(side.0..side.1);
                let x = (i as f64 - (count as f64 - 1.0) / 2.0) * gap + rng.random_range(-2.0..2.0);
                let reach = half_w - OBJECT_CLEARANCE - d / 2.0;
                let y = rng.random_range(0.3 * reach..reach) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                let z = OBJECT_CLEARANCE + d / 2.0 + rng.random_range(0.0..0.4);
                ChangeSpec {
                    kind: ChangeKind::AddBox,
                    center: [x, y, z],
                    dims: [d, d, d],
                    displacement: [0.0; 3],
                    density: 400.0,
                }
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidScene(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("width", self.width),
            ("height", self.height),
            ("spacing", self.spacing),
            ("trajectory_step", self.trajectory_step),
            ("truth_radius", self.truth_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidScene(format!("{name} must be positive")));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.roughness >= 0.0) || !(self.max_yaw_deg >= 0.0) || !(self.max_translation >= 0.0) {
            return Err(Error::InvalidScene("noise and offset bounds must be non-negative".into()));
        }
        if !(0.0..0.5).contains(&self.profile_amplitude) {
            return Err(Error::InvalidScene("profile_amplitude must be in [0, 0.5)".into()));
        }
        if !(self.sensor_height > 0.0 && self.sensor_height < self.height * (1.0 - self.profile_amplitude)) {
            return Err(Error::InvalidScene("sensor height must lie inside the tunnel".into()));
        }
        if !(self.niche_spacing == 0.0 || self.niche_spacing >= 5.0) {
            return Err(Error::InvalidScene("niche_spacing must be 0 or at least 5".into()));
        }
        if self.trajectory_step > self.length {
            return Err(Error::InvalidScene("trajectory step exceeds tunnel length".into()));
        }
        let profile = Profile::new(self);
        for (i, c) in self.changes.iter().enumerate() {
            if !(c.density > 0.0) || c.dims.iter().any(|d| !(*d > 0.0)) {
                return Err(Error::InvalidScene(format!(
                    "change {i}: dims and density must be positive"
                )));
            }
            let mut centers = vec![c.center];
            if c.kind == ChangeKind::MoveBox {
                centers.push(add(c.center, c.displacement));
            }
            for center in centers {
                let (lo, hi) = match c.kind {
                    ChangeKind::AddMound => (
                        [center[0] - c.dims[0] / 2.0, center[1] - c.dims[1] / 2.0, center[2]],
                        [center[0] + c.dims[0] / 2.0, center[1] + c.dims[1] / 2.0, center[2] + c.dims[2]],
                    ),
                    _ => (
                        [0, 1, 2].map(|a| center[a] - c.dims[a] / 2.0),
                        [0, 1, 2].map(|a| center[a] + c.dims[a] / 2.0),
                    ),
                };
                if !profile.contains_box(lo, hi) {
                    return Err(Error::InvalidScene(format!(
                        "change {i} at ({}, {}, {}) lies outside the tunnel",
                        center[0], center[1], center[2]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Smooth width and height variation along the tunnel plus surface relief.
struct Profile {
    length: f64,
    width: f64,
    height: f64,
    amplitude: f64,
    /// (wavelength, phase) triples for width and height.
    waves: [[(f64, f64); 3]; 2],
    roughness: f64,
    /// (k_x, k_t, phase) plane waves for floor, ceiling and the two walls.
    relief: [[(f64, f64, f64); 6]; 4],
    niches: Vec<Niche>,
}

/// Full-height rectangular recess in one wall.
#[derive(Clone, Copy, Debug)]
struct Niche {
    /// -1 for the wall at negative y, +1 for the other.
    side: f64,
    x0: f64,
    x1: f64,
    depth: f64,
}

#[derive(Clone, Copy)]
enum Surface {
    Floor = 0,
    Ceiling = 1,
    LeftWall = 2,
    RightWall = 3,
}

impl Profile {
    fn new(spec: &SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let mut waves = [[(0.0, 0.0); 3]; 2];
        for set in waves.iter_mut() {
            for w in set.iter_mut() {
                *w = (rng.random_range(4.0..12.0), rng.random_range(0.0..2.0 * PI));
            }
        }
        let mut relief = [[(0.0, 0.0, 0.0); 6]; 4];
        for set in relief.iter_mut() {
            for w in set.iter_mut() {
                let k = 2.0 * PI / rng.random_range(0.8..3.0);
                let dir: f64 = rng.random_range(0.0..PI);
                *w = (k * dir.cos(), k * dir.sin(), rng.random_range(0.0..2.0 * PI));
            }
        }
        let mut niches = Vec::new();
        if spec.niche_spacing > 0.0 {
            let slots = (spec.length / spec.niche_spacing).floor() as usize;
            for side in [-1.0, 1.0] {
                for slot in 0..slots {
                    let lo = -spec.length / 2.0 + slot as f64 * spec.niche_spacing;
                    let width = rng.random_range(1.5..3.0);
                    let x0 = lo + rng.random_range(1.0..(spec.niche_spacing - width - 1.0).max(1.0 + 1e-9));
                    let depth = rng.random_range(0.8..1.5);
                    if rng.random_range(0.0..1.0) < 0.6 {
                        niches.push(Niche { side, x0, x1: x0 + width, depth });
                    }
                }
            }
        }
        Profile {
            length: spec.length,
            width: spec.width,
            height: spec.height,
            amplitude: spec.profile_amplitude,
            waves,
            roughness: spec.roughness,
            relief,
            niches,
        }
    }

    fn in_niche(&self, side: f64, x: f64) -> bool {
        self.niches.iter().any(|n| n.side == side && x >= n.x0 && x < n.x1)
    }

    /// Offset of a surface at `x` and surface coordinate `t`.
    fn relief(&self, surface: Surface, x: f64, t: f64) -> f64 {
        self.roughness
            * self.relief[surface as usize]
                .iter()
                .map(|(kx, kt, phase)| (kx * x + kt * t + phase).sin())
                .sum::<f64>()
            / 3.0
    }

    fn wave(&self, which: usize, x: f64) -> f64 {
        self.waves[which]
            .iter()
            .map(|(lambda, phase)| (2.0 * PI * x / lambda + phase).sin())
            .sum::<f64>()
            / 3.0
    }

    fn width_at(&self, x: f64) -> f64 {
        self.width * (1.0 + self.amplitude * self.wave(0, x))
    }

    fn height_at(&self, x: f64) -> f64 {
        self.height * (1.0 + self.amplitude * self.wave(1, x))
    }

    fn contains_box(&self, lo: [f64; 3], hi: [f64; 3]) -> bool {
        let half = self.length / 2.0;
        if lo[0] <= -half || hi[0] >= half || lo[2] < 0.0 {
            return false;
        }
        let steps = ((hi[0] - lo[0]) / 0.05).ceil().max(1.0) as usize;
        (0..=steps).all(|i| {
            let x = lo[0] + (hi[0] - lo[0]) * i as f64 / steps as f64;
            let w = self.width_at(x) / 2.0;
            lo[1] >= -w && hi[1] <= w && hi[2] <= self.height_at(x)
        })
    }
}

/// Exact point sets of one change, in the common frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeTruth {
    pub kind: ChangeKind,
    /// Object center before and, for moves, after the change.
    pub centers: Vec<Point3>,
    /// Steps of the reference trajectory within the truth radius of a center.
    pub poses_t: Vec<u32>,
    /// Steps of the changed-session trajectory within the truth radius.
    pub poses_t1: Vec<u32>,
    pub added: PointCloud,
    pub removed: PointCloud,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroundTruth {
    pub changes: Vec<ChangeTruth>,
}

impl GroundTruth {
    pub fn added(&self) -> PointCloud {
        self.changes.iter().flat_map(|c| c.added.iter().copied()).collect()
    }

    pub fn removed(&self) -> PointCloud {
        self.changes.iter().flat_map(|c| c.removed.iter().copied()).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let cloud = |c: &PointCloud| -> Vec<[f64; 3]> { c.iter().map(|p| p.to_array()).collect() };
        serde_json::Value::Array(
            self.changes
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "kind": c.kind,
                        "centers": c.centers.iter().map(|p| p.to_array()).collect::<Vec<_>>(),
                        "poses_t": c.poses_t,
                        "poses_t1": c.poses_t1,
                        "added": cloud(&c.added),
                        "removed": cloud(&c.removed),
                    })
                })
                .collect(),
        )
    }
}

/// A generated bi-temporal scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub map_t: PointCloud,
    /// Changed session in its own raw frame.
    pub map_t1: PointCloud,
    pub traj_t: Trajectory,
    /// Changed-session trajectory in its own raw frame.
    pub traj_t1: Trajectory,
    pub truth: GroundTruth,
    /// Maps the raw changed-session frame into the common frame.
    pub t_true: RigidTransform,
}

pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let profile = Profile::new(spec);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidScene(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let base = tunnel_surface(&profile, spec.spacing, &noise, &mut rng);

    let poses = (0..(spec.length / spec.trajectory_step).floor() as usize)
        .map(|i| {
            let x = -spec.length / 2.0 + (i as f64 + 0.5) * spec.trajectory_step;
            Point3::new(x, 0.0, spec.sensor_height)
        })
        .collect();
    let traj_t = Trajectory::new(poses);

    rng.set_stream(2);
    rng.set_word_pos(0);
    let mut map_t = base.clone();
    let mut map_t1 = base;
    let mut truth = GroundTruth::default();
    for c in &spec.changes {
        let center = Point3::new(c.center[0], c.center[1], c.center[2]);
        let (added, removed, centers) = match c.kind {
            ChangeKind::AddBox => (box_surface(center, c.dims, c.density, &noise, &mut rng), PointCloud::new(), vec![center]),
            ChangeKind::RemoveBox => (PointCloud::new(), box_surface(center, c.dims, c.density, &noise, &mut rng), vec![center]),
            ChangeKind::MoveBox => {
                let moved = center.offset(c.displacement[0], c.displacement[1], c.displacement[2]);
                let before = box_surface(center, c.dims, c.density, &noise, &mut rng);
                let after = box_surface(moved, c.dims, c.density, &noise, &mut rng);
                (after, before, vec![center, moved])
            }
            ChangeKind::AddMound => (mound_surface(center, c.dims, c.density, &noise, &mut rng), PointCloud::new(), vec![center]),
        };
        map_t.extend_from(&removed);
        map_t1.extend_from(&added);
        let near = |traj: &Trajectory| -> Vec<u32> {
            traj.indexed()
                .filter(|(_, p)| centers.iter().any(|c| c.distance(p) <= spec.truth_radius))
                .map(|(k, _)| k)
                .collect()
        };
        truth.changes.push(ChangeTruth {
            kind: c.kind,
            poses_t: near(&traj_t),
            poses_t1: near(&traj_t),
            centers,
            added,
            removed,
        });
    }

    rng.set_stream(3);
    rng.set_word_pos(0);
    let yaw = rng.random_range(-1.0..=1.0) * spec.max_yaw_deg.to_radians();
    let dir = loop {
        let v: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(-1.0..=1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            break v.map(|c| c / n);
        }
    };
    let mag = rng.random_range(0.0..=1.0) * spec.max_translation;
    let t_true = RigidTransform::from_yaw(yaw, dir.map(|c| c * mag));
    let to_raw = t_true.inverse();

    Ok(Scene {
        map_t,
        map_t1: map_t1.transformed(&to_raw),
        traj_t1: traj_t.transformed(&to_raw),
        traj_t,
        truth,
        t_true,
    })
}

fn tunnel_surface(profile: &Profile, s: f64, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> PointCloud {
    let half = profile.length / 2.0;
    let nx = (profile.length / s).round().max(1.0) as usize;
    let dx = profile.length / nx as f64;
    let cells = |extent: f64| (extent / s).round().max(1.0) as usize;
    // Uniform position inside cell `i` of `n` cells spanning `[lo, lo + extent)`.
    let within = |rng: &mut ChaCha8Rng, lo: f64, extent: f64, i: usize, n: usize| {
        lo + (i as f64 + rng.random_range(0.0..1.0)) * extent / n as f64
    };
    let mut pts = Vec::new();
    let mut push = |x: f64, y: f64, z: f64, rng: &mut ChaCha8Rng| {
        pts.push(Point3::new(
            x + noise.sample(rng),
            y + noise.sample(rng),
            z + noise.sample(rng),
        ));
    };
    for i in 0..nx {
        let x_mid = -half + (i as f64 + 0.5) * dx;
        let ny = cells(profile.width_at(x_mid));
        for z_top in [false, true] {
            for j in 0..ny {
                let x = within(rng, -half, profile.length, i, nx);
                let w = profile.width_at(x);
                let y = within(rng, -w / 2.0, w, j, ny);
                let z = if z_top {
                    profile.height_at(x) + profile.relief(Surface::Ceiling, x, y)
                } else {
                    profile.relief(Surface::Floor, x, y)
                };
                push(x, y, z, rng);
            }
        }
        let nz = cells(profile.height_at(x_mid));
        for (side, surface) in [(-1.0, Surface::LeftWall), (1.0, Surface::RightWall)] {
            for j in 0..nz {
                let x = within(rng, -half, profile.length, i, nx);
                let z = within(rng, 0.0, profile.height_at(x), j, nz);
                if profile.in_niche(side, x) {
                    continue;
                }
                let y = side * (profile.width_at(x) / 2.0 + profile.relief(surface, x, z));
                push(x, y, z, rng);
            }
        }
    }
    for n in &profile.niches {
        let span = n.x1 - n.x0;
        let wall = |x: f64| profile.width_at(x) / 2.0;
        let (nu, nd) = (cells(span), cells(n.depth));
        let nh = cells(profile.height_at((n.x0 + n.x1) / 2.0));
        let mut patch = |nu: usize, nv: usize, rng: &mut ChaCha8Rng, at: &dyn Fn(f64, f64) -> (f64, f64, f64)| {
            for a in 0..nu {
                for b in 0..nv {
                    let u = within(rng, 0.0, 1.0, a, nu);
                    let v = within(rng, 0.0, 1.0, b, nv);
                    let (x, y, z) = at(u, v);
                    push(x, y, z, rng);
                }
            }
        };
        // Back wall, floor and ceiling of the recess.
        patch(nu, nh, rng, &|u, v| {
            let x = n.x0 + u * span;
            (x, n.side * (wall(x) + n.depth), v * profile.height_at(x))
        });
        for top in [false, true] {
            patch(nu, nd, rng, &|u, v| {
                let x = n.x0 + u * span;
                let z = if top { profile.height_at(x) } else { 0.0 };
                (x, n.side * (wall(x) + v * n.depth), z)
            });
        }
        // The two faces across the tunnel axis.
        for x in [n.x0, n.x1] {
            patch(nd, nh, rng, &|u, v| (x, n.side * (wall(x) + u * n.depth), v * profile.height_at(x)));
        }
    }
    for x in [-half, half] {
        let (w, h) = (profile.width_at(x), profile.height_at(x));
        let (ny, nz) = (cells(w), cells(h));
        for j in 0..ny {
            for l in 0..nz {
                let y = within(rng, -w / 2.0, w, j, ny);
                let z = within(rng, 0.0, h, l, nz);
                push(x, y, z, rng);
            }
        }
    }
    PointCloud::from_points(pts)
}

/// `round(area · density)` uniform samples on each of the six faces.
fn box_surface(c: Point3, dims: [f64; 3], density: f64, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> PointCloud {
    let h = dims.map(|d| d / 2.0);
    let mut pts = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let n = (dims[u] * dims[v] * density).round() as usize;
        for side in [-1.0, 1.0] {
            for _ in 0..n {
                let mut p = [0.0; 3];
                p[axis] = side * h[axis];
                p[u] = rng.random_range(-h[u]..h[u]);
                p[v] = rng.random_range(-h[v]..h[v]);
                pts.push(c.offset(
                    p[0] + noise.sample(rng),
                    p[1] + noise.sample(rng),
                    p[2] + noise.sample(rng),
                ));
            }
        }
    }
    PointCloud::from_points(pts)
}

/// Elliptic paraboloid heap standing on `c`, sampled uniformly by area.
fn mound_surface(c: Point3, dims: [f64; 3], density: f64, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> PointCloud {
    let (a, b, h) = (dims[0] / 2.0, dims[1] / 2.0, dims[2]);
    let slope = |u: f64, v: f64| {
        let (gx, gy) = (2.0 * h * u / (a * a), 2.0 * h * v / (b * b));
        (1.0 + gx * gx + gy * gy).sqrt()
    };
    // Surface area by midpoint integration over the base ellipse.
    let n = 200;
    let mut area = 0.0;
    for i in 0..n {
        for j in 0..n {
            let u = -a + (i as f64 + 0.5) * 2.0 * a / n as f64;
            let v = -b + (j as f64 + 0.5) * 2.0 * b / n as f64;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                area += slope(u, v) * (2.0 * a / n as f64) * (2.0 * b / n as f64);
            }
        }
    }
    let count = (area * density).round() as usize;
    let max_slope = slope(a, 0.0).max(slope(0.0, b));
    let mut pts = Vec::with_capacity(count);
    while pts.len() < count {
        let u = rng.random_range(-a..a);
        let v = rng.random_range(-b..b);
        let rho2 = (u / a).powi(2) + (v / b).powi(2);
        if rho2 > 1.0 || rng.random_range(0.0..max_slope) > slope(u, v) {
            continue;
        }
        pts.push(c.offset(
            u + noise.sample(rng),
            v + noise.sample(rng),
            h * (1.0 - rho2) + noise.sample(rng),
        ));
    }
    PointCloud::from_points(pts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub region_recall: f64,
    pub region_precision: f64,
    pub point_recall: f64,
    pub point_precision: f64,
}

/// Default distance for matching extracted points to truth points.
pub const MATCH_DISTANCE: f64 = 0.1;

/// Compares detections and extractions (common frame) with the truth.
///
/// A change is found when some region center lies within `radius` of one of
/// its centers. Point metrics match added against added and removed against
/// removed at `match_distance`, then pool both directions. Empty
/// denominators count as 1.
pub fn score(
    truth: &GroundTruth,
    regions: &[RegionPair],
    extracted: &[RegionExtraction],
    radius: f64,
    match_distance: f64,
) -> Metrics {
    let hit = |c: &ChangeTruth, r: &RegionPair| c.centers.iter().any(|p| p.distance(&r.center_t1) <= radius);
    let found = truth.changes.iter().filter(|c| regions.iter().any(|r| hit(c, r))).count();
    let true_regions = regions.iter().filter(|r| truth.changes.iter().any(|c| hit(c, r))).count();

    let ex_added: PointCloud = extracted.iter().flat_map(|e| e.added.points.iter().copied()).collect();
    let ex_removed: PointCloud = extracted.iter().flat_map(|e| e.removed.points.iter().copied()).collect();
    let (t_added, t_removed) = (truth.added(), truth.removed());

    let matched = |from: &PointCloud, to: &PointCloud| -> usize {
        if from.is_empty() || to.is_empty() {
            return 0;
        }
        let pts: Vec<[f64; 3]> = to.iter().map(|p| p.to_array()).collect();
        let tree = KdTree::new(&pts);
        let cap = match_distance * match_distance;
        from.iter()
            .filter(|p| tree.nearest_within(&p.to_array(), cap).is_some())
            .count()
    };
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };

    Metrics {
        region_recall: ratio(found, truth.changes.len()),
        region_precision: ratio(true_regions, regions.len()),
        point_recall: ratio(
            matched(&t_added, &ex_added) + matched(&t_removed, &ex_removed),
            t_added.len() + t_removed.len(),
        ),
        point_precision: ratio(
            matched(&ex_added, &t_added) + matched(&ex_removed, &t_removed),
            ex_added.len() + ex_removed.len(),
        ),
    }
}

/// Writes `map_t.ply`, `map_t1.ply`, `traj_t.csv`, `traj_t1.csv`,
/// `t_true.txt` and `truth.json` into `dir`.
pub fn write_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_point_cloud(&scene.map_t, dir.join("map_t.ply"), PointCloudFormat::PlyBinaryLe)?;
    write_point_cloud(&scene.map_t1, dir.join("map_t1.ply"), PointCloudFormat::PlyBinaryLe)?;
    write_trajectory(&scene.traj_t, dir.join("traj_t.csv"))?;
    write_trajectory(&scene.traj_t1, dir.join("traj_t1.csv"))?;
    write_transform(&scene.t_true, dir.join("t_true.txt"))?;
    let truth = serde_json::to_string(&scene.truth.to_json()).expect("truth serializes");
    write_atomic(&dir.join("truth.json"), truth.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_scene_maps_coincide() {
        let scene = generate(&SceneSpec::default()).unwrap();
        assert!(scene.truth.changes.is_empty());
        assert_eq!(scene.map_t.len(), scene.map_t1.len());
        let back = scene.map_t1.transformed(&scene.t_true);
        for (a, b) in scene.map_t.iter().zip(&back) {
            assert!(a.distance(b) < 1e-9);
        }
        assert!(scene.map_t.len() > 55_000 && scene.map_t.len() < 70_000, "{}", scene.map_t.len());
        assert_eq!(scene.traj_t.len(), 40);
    }

    #[test]
    fn unit_box_point_count() {
        let spec = SceneSpec {
            changes: vec![ChangeSpec {
                kind: ChangeKind::AddBox,
                center: [0.0, 0.0, 1.5],
                dims: [1.0, 1.0, 1.0],
                displacement: [0.0; 3],
                density: 500.0,
            }],
            ..Default::default()
        };
        let scene = generate(&spec).unwrap();
        let n = scene.truth.added().len() as f64;
        assert!((n - 3000.0).abs() <= 0.02 * 3000.0, "{n}");
        assert!(scene.truth.removed().is_empty());
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate(&SceneSpec::standard(11)).unwrap();
        let b = generate(&SceneSpec::standard(11)).unwrap();
        assert_eq!(a.map_t1, b.map_t1);
        assert_eq!(a.t_true, b.t_true);
        let c = generate(&SceneSpec::standard(12)).unwrap();
        assert_ne!(a.map_t1, c.map_t1);
    }

    #[test]
    fn change_outside_tunnel_rejected() {
        let spec = SceneSpec {
            changes: vec![ChangeSpec {
                kind: ChangeKind::AddBox,
                center: [0.0, 10.0, 1.0],
                dims: [1.0, 1.0, 1.0],
                displacement: [0.0; 3],
                density: 100.0,
            }],
            ..Default::default()
        };
        assert!(matches!(generate(&spec), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn tight_niche_spacing_rejected() {
        let spec = SceneSpec { niche_spacing: 3.0, ..Default::default() };
        assert!(matches!(spec.validate(), Err(Error::InvalidScene(_))));
        let spec = SceneSpec { niche_spacing: 0.0, ..Default::default() };
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn offset_is_bounded() {
        for seed in 0..20 {
            let s = generate(&SceneSpec { seed, ..Default::default() }).unwrap();
            assert!(s.t_true.rotation_angle().to_degrees() <= 10.0 + 1e-9);
            assert!(s.t_true.translation().norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn scoring_edge_cases() {
        let scene = generate(&SceneSpec::standard(1)).unwrap();
        let m = score(&scene.truth, &[], &[], 4.5, MATCH_DISTANCE);
        assert_eq!(m.region_recall, 0.0);
        assert_eq!(m.point_recall, 0.0);
        assert_eq!(m.region_precision, 1.0);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SceneSpec::standard(3);
        assert_eq!(SceneSpec::from_json(&spec.to_json()).unwrap(), spec);
        let partial = SceneSpec::from_json(r#"{"seed": 9}"#).unwrap();
        assert_eq!(partial.length, 60.0);
    }
}
