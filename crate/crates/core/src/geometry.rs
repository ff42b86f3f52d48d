//! Geometric primitives shared by the whole pipeline: points, clouds,
//! trajectories, rigid transforms and spherical submaps.

use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Tolerance used when validating rotation matrices.
pub const RIGID_TOLERANCE: f64 = 1e-9;

/// A point in meters. All components are finite.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point3 {
    x: f64,
    y: f64,
    z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// # Panics
    /// If any component is NaN or infinite. Use [`Point3::try_new`] for
    /// untrusted input.
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self::try_new(x, y, z).expect("point coordinates must be finite")
    }

    pub fn try_new(x: f64, y: f64, z: f64) -> Option<Self> {
        (x.is_finite() && y.is_finite() && z.is_finite()).then_some(Point3 { x, y, z })
    }

    pub(crate) fn from_vector(v: Vector3<f64>) -> Self {
        debug_assert!(v.iter().all(|c| c.is_finite()));
        Point3 {
            x: v.x,
            y: v.y,
            z: v.z,
        }
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    #[inline]
    pub fn z(&self) -> f64 {
        self.z
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    #[inline]
    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    /// Distance in the horizontal (x, y) plane.
    #[inline]
    pub fn horizontal_distance(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn offset(&self, dx: f64, dy: f64, dz: f64) -> Point3 {
        Point3::new(self.x + dx, self.y + dy, self.z + dz)
    }
}

impl TryFrom<[f64; 3]> for Point3 {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Point3::try_new(v[0], v[1], v[2])
            .ok_or_else(|| Error::InvalidConfig(format!("non-finite point {v:?}")))
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

/// Ordered collection of points, the map of one mapping session.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        PointCloud {
            points: Vec::with_capacity(n),
        }
    }

    pub fn from_points(points: Vec<Point3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn push(&mut self, p: Point3) {
        self.points.push(p);
    }

    pub fn extend_from(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        apply_transform(self, t)
    }

    /// Points at the given indices, in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.to_vector());
        Some(Point3::from_vector(sum / self.points.len() as f64))
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3>>(iter: I) -> Self {
        PointCloud {
            points: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a PointCloud {
    type Item = &'a Point3;
    type IntoIter = std::slice::Iter<'a, Point3>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Robot positions indexed by time step `k`, starting at 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<Point3>,
}

impl Trajectory {
    pub fn new(poses: Vec<Point3>) -> Self {
        Trajectory { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[Point3] {
        &self.poses
    }

    /// Pose at 1-based step `k`.
    pub fn pose(&self, k: u32) -> Option<Point3> {
        (k as usize)
            .checked_sub(1)
            .and_then(|i| self.poses.get(i).copied())
    }

    /// `(k, pose)` pairs with 1-based `k`.
    pub fn indexed(&self) -> impl Iterator<Item = (u32, Point3)> + '_ {
        self.poses
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u32 + 1, *p))
    }

    pub fn transformed(&self, t: &RigidTransform) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| t.apply(p)).collect(),
        }
    }

    /// Step of the pose closest to `p`; ties resolve to the lowest step.
    pub fn nearest(&self, p: &Point3) -> Option<(u32, Point3)> {
        let mut best: Option<(u32, Point3, f64)> = None;
        for (k, pose) in self.indexed() {
            let d = pose.distance_squared(p);
            if best.is_none_or(|(_, _, bd)| d < bd) {
                best = Some((k, pose, d));
            }
        }
        best.map(|(k, pose, _)| (k, pose))
    }
}

/// Element of SE(3): `x -> R x + p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates `RᵀR = I` and `det R = 1` entrywise within [`RIGID_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NotRigid("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation;
        let max_dev = (gram - Matrix3::identity()).abs().max();
        if max_dev > RIGID_TOLERANCE {
            return Err(Error::NotRigid(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {max_dev:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > RIGID_TOLERANCE {
            return Err(Error::NotRigid(format!(
                "rotation determinant is {det:.12}, expected 1"
            )));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation about the vertical axis by `yaw` radians, then translation.
    pub fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        Self::from_axis_angle(Vector3::z(), yaw, translation)
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: [f64; 3]) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        RigidTransform {
            rotation: *rot.matrix(),
            translation: Vector3::from(translation),
        }
    }

    /// Quaternion given as `(w, x, y, z)`; normalized before conversion.
    pub fn from_quaternion(q: [f64; 4], translation: [f64; 3]) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() < 1e-12 || !quat.norm().is_finite() {
            return Err(Error::NotRigid("zero-norm quaternion".into()));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        RigidTransform::new(
            *unit.to_rotation_matrix().matrix(),
            Vector3::from(translation),
        )
    }

    /// Rotation as `(w, x, y, z)`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Homogeneous 4×4 form.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Parses a homogeneous matrix; the bottom row must be exactly `0 0 0 1`.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::NotRigid(format!(
                "bottom row is {bottom:?}, expected [0, 0, 0, 1]"
            )));
        }
        RigidTransform::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.to_vector() + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Rotation angle and translation distance of `self⁻¹ ∘ other`.
    pub fn difference(&self, other: &RigidTransform) -> (f64, f64) {
        let delta = self.inverse().compose(other);
        (delta.rotation_angle(), delta.translation.norm())
    }
}

/// Applies `t` to every point, preserving order.
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    cloud.iter().map(|p| t.apply(p)).collect()
}

/// Free-function form of [`RigidTransform::compose`]: the result applies `t2` then `t1`.
pub fn compose(t1: &RigidTransform, t2: &RigidTransform) -> RigidTransform {
    t1.compose(t2)
}

/// Points of a map inside the closed ball around `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereRegion {
    pub center: Point3,
    pub radius: f64,
    pub points: PointCloud,
}

impl SphereRegion {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Linear-scan sampling of the closed ball `‖m − center‖² ≤ r²`.
///
/// # Panics
/// If `radius` is not strictly positive.
pub fn sample_sphere(map: &PointCloud, center: Point3, radius: f64) -> SphereRegion {
    assert!(radius > 0.0, "sphere radius must be positive");
    let r2 = radius * radius;
    let points = map
        .iter()
        .filter(|m| m.distance_squared(&center) <= r2)
        .copied()
        .collect();
    SphereRegion {
        center,
        radius,
        points,
    }
}

type CellKey = (i64, i64, i64);

/// Uniform grid over a map for repeated sphere sampling.
///
/// Results are identical to [`sample_sphere`], including point order.
#[derive(Debug)]
pub struct SphereSampler<'a> {
    map: &'a PointCloud,
    cell: f64,
    /// Point indices grouped by cell, ascending within each cell.
    order: Vec<u32>,
    ranges: HashMap<CellKey, (u32, u32)>,
}

impl<'a> SphereSampler<'a> {
    /// # Panics
    /// If `cell_size` is not strictly positive.
    pub fn new(map: &'a PointCloud, cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        let key_of = |p: &Point3| -> CellKey {
            (
                (p.x / cell_size).floor() as i64,
                (p.y / cell_size).floor() as i64,
                (p.z / cell_size).floor() as i64,
            )
        };
        let mut keyed: Vec<(CellKey, u32)> = map
            .iter()
            .enumerate()
            .map(|(i, p)| (key_of(p), i as u32))
            .collect();
        keyed.sort_unstable();
        let mut ranges = HashMap::new();
        let mut start = 0usize;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            ranges.insert(key, (start as u32, end as u32));
            start = end;
        }
        SphereSampler {
            map,
            cell: cell_size,
            order: keyed.into_iter().map(|(_, i)| i).collect(),
            ranges,
        }
    }

    pub fn map(&self) -> &PointCloud {
        self.map
    }

    /// Indices of points within the closed ball, ascending.
    pub fn query_indices(&self, center: Point3, radius: f64) -> Vec<usize> {
        assert!(radius > 0.0, "sphere radius must be positive");
        let r2 = radius * radius;
        let lo = |c: f64| ((c - radius) / self.cell).floor() as i64;
        let hi = |c: f64| ((c + radius) / self.cell).floor() as i64;
        let points = self.map.points();
        let mut out = Vec::new();
        for ix in lo(center.x)..=hi(center.x) {
            for iy in lo(center.y)..=hi(center.y) {
                for iz in lo(center.z)..=hi(center.z) {
                    if let Some(&(s, e)) = self.ranges.get(&(ix, iy, iz)) {
                        out.extend(
                            self.order[s as usize..e as usize]
                                .iter()
                                .map(|&i| i as usize)
                                .filter(|&i| points[i].distance_squared(&center) <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn sample(&self, center: Point3, radius: f64) -> SphereRegion {
        let idx = self.query_indices(center, radius);
        SphereRegion {
            center,
            radius,
            points: self.map.select(&idx),
        }
    }
}
