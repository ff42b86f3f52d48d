//! Point-to-voxel object extraction.
//!
//! The reference sphere is voxelized into an occupancy grid; every point of
//! the query sphere whose voxel is unoccupied belongs to the changed object.
//! A statistical outlier filter then removes isolated leftovers.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::RegionPair;
use crate::error::{Error, Result};
use crate::geometry::{sample_sphere, Point3, PointCloud, SphereRegion, SphereSampler};
use crate::kdtree::KdTree;

pub type VoxelIndex = [i64; 3];

/// Sparse occupancy grid.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    pub origin: Point3,
    pub voxel_size: f64,
    pub min_points: u32,
    counts: HashMap<VoxelIndex, u32>,
}

impl VoxelGrid {
    pub fn new(origin: Point3, voxel_size: f64, min_points: u32) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        VoxelGrid {
            origin,
            voxel_size,
            min_points,
            counts: HashMap::new(),
        }
    }

    pub fn index_of(&self, p: &Point3) -> VoxelIndex {
        let s = self.voxel_size;
        [
            ((p.x() - self.origin.x()) / s).floor() as i64,
            ((p.y() - self.origin.y()) / s).floor() as i64,
            ((p.z() - self.origin.z()) / s).floor() as i64,
        ]
    }

    pub fn insert(&mut self, p: &Point3) {
        *self.counts.entry(self.index_of(p)).or_insert(0) += 1;
    }

    pub fn count(&self, idx: &VoxelIndex) -> u32 {
        self.counts.get(idx).copied().unwrap_or(0)
    }

    pub fn is_occupied(&self, idx: &VoxelIndex) -> bool {
        self.count(idx) >= self.min_points
    }

    pub fn contains(&self, p: &Point3) -> bool {
        self.is_occupied(&self.index_of(p))
    }

    /// Every voxel holding at least one point, with its count.
    pub fn counts(&self) -> &HashMap<VoxelIndex, u32> {
        &self.counts
    }

    pub fn occupied_count(&self) -> usize {
        self.counts.values().filter(|&&c| c >= self.min_points).count()
    }
}

/// Grid anchored at `center − (r, r, r)` so the whole sphere is covered.
pub fn voxelize(region: &SphereRegion, voxel_size: f64, min_points: u32) -> VoxelGrid {
    let r = region.radius;
    let mut grid = VoxelGrid::new(region.center.offset(-r, -r, -r), voxel_size, min_points);
    for p in &region.points {
        grid.insert(p);
    }
    grid
}

/// Points of `query` whose voxel in the grid of `reference` is unoccupied,
/// in their original order.
pub fn extract_object(
    reference: &SphereRegion,
    query: &SphereRegion,
    voxel_size: f64,
    min_points: u32,
) -> PointCloud {
    let grid = voxelize(reference, voxel_size, min_points);
    query.points.iter().filter(|p| !grid.contains(p)).copied().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SorConfig {
    pub k_neighbors: usize,
    pub lambda: f64,
}

impl Default for SorConfig {
    fn default() -> Self {
        SorConfig {
            k_neighbors: 10,
            lambda: 1.0,
        }
    }
}

impl SorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::InvalidConfig("k_neighbors must be at least 1".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig("SOR lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Mean distance from each point to its `k` nearest other points.
pub fn mean_knn_distances(cloud: &PointCloud, k: usize) -> Vec<f64> {
    let pts: Vec<[f64; 3]> = cloud.iter().map(|p| p.to_array()).collect();
    let tree = KdTree::new(&pts);
    pts.par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = tree.knn(p, k, Some(i));
            nn.iter().map(|n| n.dist_sq.sqrt()).sum::<f64>() / nn.len() as f64
        })
        .collect()
}

/// Statistical outlier removal.
///
/// Keeps the points whose mean k-NN distance lies in `[μ − λσ, μ + λσ]`,
/// with μ and σ the mean and population standard deviation over the cloud.
/// Clouds with at most `k` points are returned unchanged.
pub fn filter_outliers(cloud: &PointCloud, cfg: &SorConfig) -> PointCloud {
    let n = cloud.len();
    if n < cfg.k_neighbors + 1 {
        return cloud.clone();
    }
    let stat = mean_knn_distances(cloud, cfg.k_neighbors);
    let mean = stat.iter().sum::<f64>() / n as f64;
    let var = stat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    let (lo, hi) = (mean - cfg.lambda * sigma, mean + cfg.lambda * sigma);
    cloud
        .iter()
        .zip(&stat)
        .filter(|(_, &v)| v >= lo && v <= hi)
        .map(|(p, _)| *p)
        .collect()
}

/// Occupied voxels at `resolution` times the voxel volume.
pub fn estimate_volume(cloud: &PointCloud, resolution: f64) -> f64 {
    assert!(resolution > 0.0, "resolution must be positive");
    let voxels: HashSet<VoxelIndex> = cloud
        .iter()
        .map(|p| {
            [
                (p.x() / resolution).floor() as i64,
                (p.y() / resolution).floor() as i64,
                (p.z() / resolution).floor() as i64,
            ]
        })
        .collect();
    voxels.len() as f64 * resolution.powi(3)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeDirection {
    /// Present in the changed session only.
    Added,
    /// Present in the reference session only.
    Removed,
}

#[derive(Clone, Debug)]
pub struct ExtractedObject {
    pub points: PointCloud,
    /// Point count before outlier removal.
    pub pre_sor_count: usize,
    pub source_region: RegionPair,
    pub direction: ChangeDirection,
    pub volume_estimate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub voxel_size: f64,
    pub min_points: u32,
    pub sor: SorConfig,
    pub volume_resolution: f64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            voxel_size: 0.65,
            min_points: 1,
            sor: SorConfig::default(),
            volume_resolution: 0.25,
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::InvalidConfig("voxel size must be positive".into()));
        }
        if self.min_points == 0 {
            return Err(Error::InvalidConfig("min_points must be at least 1".into()));
        }
        if !(self.volume_resolution > 0.0) {
            return Err(Error::InvalidConfig("volume resolution must be positive".into()));
        }
        self.sor.validate()
    }
}

/// Both directions of one region plus the sphere statistics for the report.
#[derive(Clone, Debug)]
pub struct RegionExtraction {
    pub added: ExtractedObject,
    pub removed: ExtractedObject,
    /// Points of the changed-session sphere.
    pub s_points: usize,
    /// Points of the reference-session sphere.
    pub s_points_ref: usize,
    /// Volume of the sampling sphere.
    pub v_sphere: f64,
}

/// Extracts added and removed objects around `pair.center_t1`.
///
/// Query spheres use the pair radius `r`, reference spheres `r + voxel_size`.
pub fn extract_all(
    pair: &RegionPair,
    map_t: &PointCloud,
    map_t1: &PointCloud,
    params: &ExtractionParams,
) -> Result<RegionExtraction> {
    extract_with(pair, params, |which, c, r| match which {
        Session::Reference => sample_sphere(map_t, c, r),
        Session::Changed => sample_sphere(map_t1, c, r),
    })
}

/// [`extract_all`] on prebuilt samplers, for many regions over the same maps.
pub fn extract_all_indexed(
    pair: &RegionPair,
    sampler_t: &SphereSampler<'_>,
    sampler_t1: &SphereSampler<'_>,
    params: &ExtractionParams,
) -> Result<RegionExtraction> {
    extract_with(pair, params, |which, c, r| match which {
        Session::Reference => sampler_t.sample(c, r),
        Session::Changed => sampler_t1.sample(c, r),
    })
}

enum Session {
    Reference,
    Changed,
}

fn extract_with(
    pair: &RegionPair,
    params: &ExtractionParams,
    sample: impl Fn(Session, Point3, f64) -> SphereRegion,
) -> Result<RegionExtraction> {
    params.validate()?;
    let c = pair.center_t1;
    let r = pair.radius;
    let wide = r + params.voxel_size;

    let s_t = sample(Session::Reference, c, r);
    let s_t1 = sample(Session::Changed, c, r);
    let ref_t = sample(Session::Reference, c, wide);
    let ref_t1 = sample(Session::Changed, c, wide);

    let object = |reference: &SphereRegion, query: &SphereRegion, direction| {
        let raw = extract_object(reference, query, params.voxel_size, params.min_points);
        let points = filter_outliers(&raw, &params.sor);
        ExtractedObject {
            volume_estimate: estimate_volume(&points, params.volume_resolution),
            pre_sor_count: raw.len(),
            points,
            source_region: *pair,
            direction,
        }
    };

    Ok(RegionExtraction {
        added: object(&ref_t, &s_t1, ChangeDirection::Added),
        removed: object(&ref_t1, &s_t, ChangeDirection::Removed),
        s_points: s_t1.len(),
        s_points_ref: s_t.len(),
        v_sphere: 4.0 / 3.0 * PI * r.powi(3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::ChangeScore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn region(points: Vec<Point3>, radius: f64) -> SphereRegion {
        SphereRegion {
            center: Point3::ORIGIN,
            radius,
            points: PointCloud::from_points(points),
        }
    }

    fn pair_at(c: Point3, r: f64) -> RegionPair {
        RegionPair {
            center_t: c,
            k_t: 1,
            center_t1: c,
            score: ChangeScore { j: 1, nn_i: 1, distance: 0.0 },
            radius: r,
        }
    }

    #[test]
    fn min_points_threshold() {
        let reg = region(vec![Point3::new(0.1, 0.2, 0.3)], 1.0);
        assert_eq!(voxelize(&reg, 0.65, 1).occupied_count(), 1);
        assert_eq!(voxelize(&reg, 0.65, 2).occupied_count(), 0);
    }

    #[test]
    fn counts_match_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Point3> = (0..5000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        let reg = region(pts.clone(), 4.5);
        let grid = voxelize(&reg, 0.65, 1);
        let mut tally: HashMap<VoxelIndex, u32> = HashMap::new();
        for p in &pts {
            let idx = [
                ((p.x() + 4.5) / 0.65).floor() as i64,
                ((p.y() + 4.5) / 0.65).floor() as i64,
                ((p.z() + 4.5) / 0.65).floor() as i64,
            ];
            *tally.entry(idx).or_default() += 1;
        }
        assert_eq!(grid.counts(), &tally);
    }

    #[test]
    fn identical_and_vacuous_reference() {
        let reg = region(vec![Point3::new(1.0, 1.0, 1.0), Point3::new(-1.0, 0.0, 2.0)], 4.5);
        assert!(extract_object(&reg, &reg, 0.65, 1).is_empty());
        let empty = region(vec![], 5.15);
        let one = region(vec![Point3::new(0.5, 0.0, 0.0)], 4.5);
        assert_eq!(extract_object(&empty, &one, 0.65, 1), one.points);
    }

    #[test]
    fn sor_examples() {
        let tri = PointCloud::from_points(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.5, 3f64.sqrt() / 2.0, 0.0),
        ]);
        let cfg = SorConfig { k_neighbors: 1, lambda: 1.0 };
        assert_eq!(filter_outliers(&tri, &cfg).len(), 3);

        let mut pts: Vec<Point3> = (0..100)
            .map(|i| Point3::new((i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 0.0))
            .collect();
        pts.push(Point3::new(10.0, 0.0, 0.0));
        let cloud = PointCloud::from_points(pts);
        let kept = filter_outliers(&cloud, &SorConfig::default());
        assert_eq!(kept.len(), 100);
        assert!(kept.iter().all(|p| p.x() < 5.0));

        let wide = SorConfig { k_neighbors: 10, lambda: 1e9 };
        assert_eq!(filter_outliers(&cloud, &wide), cloud);

        let small = PointCloud::from_points(cloud.points()[..5].to_vec());
        assert_eq!(filter_outliers(&small, &SorConfig::default()), small);
    }

    #[test]
    fn volume_examples() {
        assert_eq!(estimate_volume(&PointCloud::new(), 0.25), 0.0);
        let one = PointCloud::from_points(vec![Point3::new(0.3, 0.3, 0.3)]);
        assert_eq!(estimate_volume(&one, 0.25), 0.015625);
        let solid: PointCloud = (0..20)
            .flat_map(|i| (0..20).flat_map(move |j| (0..20).map(move |k| (i, j, k))))
            .map(|(i, j, k)| Point3::new(i as f64 * 0.05, j as f64 * 0.05, k as f64 * 0.05))
            .collect();
        let v = estimate_volume(&solid, 0.25);
        assert!((1.0..=1.95).contains(&v), "{v}");
    }

    #[test]
    fn unchanged_maps_extract_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map: PointCloud = (0..3000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-1.0..3.0),
                )
            })
            .collect();
        let out = extract_all(&pair_at(Point3::ORIGIN, 4.5), &map, &map, &ExtractionParams::default())
            .unwrap();
        assert!(out.added.points.is_empty() && out.removed.points.is_empty());
        assert_eq!(out.added.pre_sor_count, 0);
        assert_eq!(out.s_points, out.s_points_ref);
    }

    #[test]
    fn indexed_matches_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut gen = |n| -> PointCloud {
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-6.0..6.0),
                        rng.random_range(-6.0..6.0),
                        rng.random_range(-2.0..2.0),
                    )
                })
                .collect()
        };
        let (a, b) = (gen(2000), gen(2000));
        let pair = pair_at(Point3::new(0.5, -0.5, 0.0), 4.5);
        let params = ExtractionParams::default();
        let lin = extract_all(&pair, &a, &b, &params).unwrap();
        let sa = SphereSampler::new(&a, 4.5);
        let sb = SphereSampler::new(&b, 4.5);
        let idx = extract_all_indexed(&pair, &sa, &sb, &params).unwrap();
        assert_eq!(lin.added.points, idx.added.points);
        assert_eq!(lin.removed.points, idx.removed.points);
    }
}
