//! Place descriptors: one 64-dim, yaw-invariant vector per trajectory pose.
//!
//! The built-in descriptor is a ring × height occupancy histogram of the
//! spherical submap around a pose:
//!
//! * ring index: horizontal distance from the center, split into
//!   `radial_bins` equal-width rings over `[0, r]`;
//! * slab index: height `z − center.z`, split into `height_bins` equal-width
//!   slabs over `[−height_extent, +height_extent]`; points outside the range
//!   are clamped into the first or last slab;
//! * bin `ring * height_bins + slab` holds the point count.
//!
//! The histogram is normalized to unit L2 norm. Neither coordinate depends
//! on the azimuth, so the vector is unchanged by rotations about the
//! vertical axis through the center. Poses whose submap is empty get an
//! all-zero vector and are treated as absent.
//!
//! Externally computed descriptors can be used instead through
//! [`DescriptorProvider`] and the descriptor file formats in [`crate::io`].

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, SphereRegion, SphereSampler, Trajectory};

pub const DESCRIPTOR_DIM: usize = 64;

pub type Descriptor = [f64; DESCRIPTOR_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorRecord {
    /// 1-based trajectory step.
    pub k: u32,
    pub q: Descriptor,
}

impl DescriptorRecord {
    pub fn absent(k: u32) -> Self {
        DescriptorRecord {
            k,
            q: [0.0; DESCRIPTOR_DIM],
        }
    }

    /// Absent records carry an all-zero vector.
    pub fn is_present(&self) -> bool {
        self.q.iter().any(|&v| v != 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    /// Submap sampling radius in meters.
    pub radius: f64,
    pub radial_bins: usize,
    pub height_bins: usize,
    /// Half-height of the binned slab range, in meters.
    pub height_extent: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            radius: 4.5,
            radial_bins: 8,
            height_bins: 8,
            height_extent: 4.0,
        }
    }
}

impl DescriptorConfig {
    pub fn with_radius(radius: f64) -> Self {
        DescriptorConfig {
            radius,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radial_bins * self.height_bins != DESCRIPTOR_DIM {
            return Err(Error::InvalidConfig(format!(
                "radial_bins × height_bins must be {DESCRIPTOR_DIM}, got {} × {}",
                self.radial_bins, self.height_bins
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidConfig("descriptor radius must be positive".into()));
        }
        if !(self.height_extent > 0.0 && self.height_extent.is_finite()) {
            return Err(Error::InvalidConfig("height extent must be positive".into()));
        }
        Ok(())
    }
}

/// Descriptor vectors for one session, ordered by trajectory step.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DescriptorSet {
    pub records: Vec<DescriptorRecord>,
    /// Configuration used to compute the set, when known.
    pub config: Option<DescriptorConfig>,
}

impl DescriptorSet {
    pub fn new(records: Vec<DescriptorRecord>) -> Self {
        DescriptorSet {
            records,
            config: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn present(&self) -> impl Iterator<Item = &DescriptorRecord> {
        self.records.iter().filter(|r| r.is_present())
    }

    pub fn present_count(&self) -> usize {
        self.present().count()
    }
}

/// Raw (unnormalized) ring × height counts of a region.
pub fn bin_counts(region: &SphereRegion, cfg: &DescriptorConfig) -> [u32; DESCRIPTOR_DIM] {
    let mut counts = [0u32; DESCRIPTOR_DIM];
    let ring_width = cfg.radius / cfg.radial_bins as f64;
    let slab_height = 2.0 * cfg.height_extent / cfg.height_bins as f64;
    let c = region.center;
    for p in &region.points {
        let rho = p.horizontal_distance(&c);
        let ring = ((rho / ring_width).floor() as usize).min(cfg.radial_bins - 1);
        let h = p.z() - c.z() + cfg.height_extent;
        let slab = if h <= 0.0 {
            0
        } else {
            ((h / slab_height).floor() as usize).min(cfg.height_bins - 1)
        };
        counts[ring * cfg.height_bins + slab] += 1;
    }
    counts
}

/// Normalized histogram descriptor of a non-empty region.
pub fn compute_descriptor(region: &SphereRegion, cfg: &DescriptorConfig) -> Result<Descriptor> {
    cfg.validate()?;
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let counts = bin_counts(region, cfg);
    let norm = counts
        .iter()
        .map(|&c| (c as f64) * (c as f64))
        .sum::<f64>()
        .sqrt();
    let mut q = [0.0; DESCRIPTOR_DIM];
    for (out, &c) in q.iter_mut().zip(counts.iter()) {
        *out = c as f64 / norm;
    }
    Ok(q)
}

/// One record per pose; empty submaps yield absent records.
///
/// Poses are processed in parallel; the output order is always by `k`.
pub fn compute_descriptor_set(
    map: &PointCloud,
    traj: &Trajectory,
    cfg: &DescriptorConfig,
) -> Result<DescriptorSet> {
    cfg.validate()?;
    let sampler = SphereSampler::new(map, cfg.radius);
    let records = traj
        .poses()
        .par_iter()
        .enumerate()
        .map(|(i, &pose)| {
            let k = i as u32 + 1;
            let region = sampler.sample(pose, cfg.radius);
            match compute_descriptor(&region, cfg) {
                Ok(q) => Ok(DescriptorRecord { k, q }),
                Err(Error::EmptyRegion) => Ok(DescriptorRecord::absent(k)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DescriptorSet {
        records,
        config: Some(*cfg),
    })
}

/// Source of a session's descriptor set.
pub trait DescriptorProvider {
    fn describe(&self, map: &PointCloud, traj: &Trajectory) -> Result<DescriptorSet>;
}

/// The built-in ring × height histogram.
#[derive(Clone, Copy, Debug, Default)]
pub struct HistogramDescriptor(pub DescriptorConfig);

impl DescriptorProvider for HistogramDescriptor {
    fn describe(&self, map: &PointCloud, traj: &Trajectory) -> Result<DescriptorSet> {
        compute_descriptor_set(map, traj, &self.0)
    }
}

/// Descriptors recorded elsewhere (for example by a learned network) and
/// stored in one of the descriptor file formats.
#[derive(Clone, Debug)]
pub struct FileDescriptors(pub PathBuf);

impl DescriptorProvider for FileDescriptors {
    fn describe(&self, _map: &PointCloud, traj: &Trajectory) -> Result<DescriptorSet> {
        let set = crate::io::read_descriptor_set(&self.0)?;
        if let Some(bad) = set.records.iter().find(|r| r.k == 0 || r.k as usize > traj.len()) {
            return Err(Error::parse(
                &self.0,
                format!("record k = {}", bad.k),
                format!("step outside trajectory of {} poses", traj.len()),
            ));
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_sphere, Point3, RigidTransform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn region(points: Vec<Point3>, center: Point3, r: f64) -> SphereRegion {
        SphereRegion {
            center,
            radius: r,
            points: PointCloud::from_points(points),
        }
    }

    #[test]
    fn single_point_hits_one_bin() {
        let cfg = DescriptorConfig::default();
        let c = Point3::new(1.0, 2.0, 1.5);
        let reg = region(vec![c.offset(0.1 * cfg.radius, 0.0, 0.0)], c, cfg.radius);
        let q = compute_descriptor(&reg, &cfg).unwrap();
        let ones: Vec<usize> = (0..64).filter(|&i| q[i] == 1.0).collect();
        assert_eq!(ones.len(), 1);
        assert_eq!(q.iter().filter(|&&v| v == 0.0).count(), 63);
        // ring 0 (0.45 m < 0.5625 m), slab 4 (height 0 sits at the middle boundary)
        assert_eq!(ones[0], 4);
    }

    #[test]
    fn rotation_about_vertical_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = DescriptorConfig::default();
        let c = Point3::new(3.0, -1.0, 1.2);
        let pts: Vec<Point3> = (0..3000)
            .map(|_| {
                c.offset(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-6.0..6.0),
                )
            })
            .collect();
        let reg = region(pts, c, cfg.radius);
        let yaw = 37f64.to_radians();
        let about_center = RigidTransform::from_translation(c.x(), c.y(), c.z())
            .compose(&RigidTransform::from_yaw(yaw, [0.0; 3]))
            .compose(&RigidTransform::from_translation(-c.x(), -c.y(), -c.z()));
        let rotated = region(reg.points.transformed(&about_center).into_points(), c, cfg.radius);
        let a = compute_descriptor(&reg, &cfg).unwrap();
        let b = compute_descriptor(&rotated, &cfg).unwrap();
        for i in 0..64 {
            assert!((a[i] - b[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_region_errors() {
        let cfg = DescriptorConfig::default();
        let reg = region(vec![], Point3::ORIGIN, 4.5);
        assert!(matches!(compute_descriptor(&reg, &cfg), Err(Error::EmptyRegion)));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = DescriptorConfig {
            radial_bins: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn far_pose_is_absent() {
        let map: PointCloud = (0..100)
            .map(|i| Point3::new(i as f64 * 0.05, 0.0, 0.0))
            .collect();
        let traj = Trajectory::new(vec![Point3::new(2.0, 0.0, 0.0), Point3::new(2.0, 15.0, 0.0)]);
        let set = compute_descriptor_set(&map, &traj, &DescriptorConfig::default()).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.records[0].is_present());
        assert!(!set.records[1].is_present());
        assert_eq!(set.records[1].k, 2);
        let direct = compute_descriptor(
            &sample_sphere(&map, traj.poses()[0], 4.5),
            &DescriptorConfig::default(),
        )
        .unwrap();
        assert_eq!(set.records[0].q, direct);
    }
}
