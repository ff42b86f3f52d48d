//! Changed-region detection by inverted place recognition.
//!
//! Descriptors of the reference session are indexed; every descriptor of the
//! changed session is scored by the distance to its nearest reference
//! descriptor. Places that still look like some place in the reference
//! session score near zero, changed places score high. The highest scores,
//! thinned by non-maximum suppression over pose positions, become the
//! changed regions.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptor::{
    compute_descriptor, Descriptor, DescriptorConfig, DescriptorSet, DESCRIPTOR_DIM,
};
use crate::error::{Error, Result};
use crate::geometry::{Point3, SphereRegion, Trajectory};
use crate::io::{read_text, write_atomic};
use crate::kdtree::{squared_distance, KdTree};

/// Below this many records the index is a linear scan.
pub const LINEAR_SCAN_THRESHOLD: usize = 512;

enum Backend {
    Linear {
        vectors: Vec<Descriptor>,
        ids: Vec<u32>,
    },
    Tree(KdTree<DESCRIPTOR_DIM>),
}

/// Exact nearest-neighbor index over the present records of a descriptor set.
///
/// Answers are identical whichever backend is used: equal distances resolve
/// to the lowest trajectory step.
pub struct NnIndex {
    backend: Backend,
}

impl NnIndex {
    pub fn build(set: &DescriptorSet) -> Result<Self> {
        Self::build_with_threshold(set, LINEAR_SCAN_THRESHOLD)
    }

    /// Uses a k-d tree when the set has at least `threshold` present records.
    pub fn build_with_threshold(set: &DescriptorSet, threshold: usize) -> Result<Self> {
        let (vectors, ids): (Vec<Descriptor>, Vec<u32>) =
            set.present().map(|r| (r.q, r.k)).unzip();
        if vectors.is_empty() {
            return Err(Error::EmptyDescriptorSet);
        }
        let backend = if vectors.len() >= threshold {
            Backend::Tree(KdTree::with_ids(&vectors, &ids))
        } else {
            Backend::Linear { vectors, ids }
        };
        Ok(NnIndex { backend })
    }

    pub fn is_tree(&self) -> bool {
        matches!(self.backend, Backend::Tree(_))
    }

    /// `(k, distance)` of the nearest indexed descriptor.
    pub fn nearest(&self, q: &Descriptor) -> (u32, f64) {
        match &self.backend {
            Backend::Linear { vectors, ids } => {
                let mut best = (u32::MAX, f64::INFINITY);
                for (v, &id) in vectors.iter().zip(ids) {
                    let d = squared_distance(q, v);
                    if d < best.1 || (d == best.1 && id < best.0) {
                        best = (id, d);
                    }
                }
                (best.0, best.1.sqrt())
            }
            Backend::Tree(tree) => {
                let n = tree.nearest(q).expect("index is never empty");
                (n.id, n.dist_sq.sqrt())
            }
        }
    }
}

/// Nearest-neighbor distance of one changed-session descriptor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChangeScore {
    /// Step in the changed session.
    pub j: u32,
    /// Step of the nearest reference descriptor.
    pub nn_i: u32,
    pub distance: f64,
}

/// One score per present record of `q_t1`, ordered by `j`.
pub fn score_changes(index: &NnIndex, q_t1: &DescriptorSet) -> Vec<ChangeScore> {
    let mut scores: Vec<ChangeScore> = q_t1
        .present()
        .map(|r| {
            let (nn_i, distance) = index.nearest(&r.q);
            ChangeScore {
                j: r.k,
                nn_i,
                distance,
            }
        })
        .collect();
    scores.sort_by_key(|s| s.j);
    scores
}

/// Descriptor-space L2 difference between two regions.
pub fn region_difference(
    a: &SphereRegion,
    b: &SphereRegion,
    cfg: &DescriptorConfig,
) -> Result<f64> {
    let qa = compute_descriptor(a, cfg)?;
    let qb = compute_descriptor(b, cfg)?;
    Ok(squared_distance(&qa, &qb).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Keep at most this many regions.
    TopK(usize),
    /// Keep regions scoring at least `μ + λ·σ` over all scores.
    Threshold(f64),
}

impl Default for SelectionMode {
    fn default() -> Self {
        SelectionMode::Threshold(2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionOptions {
    pub mode: SelectionMode,
    /// Minimum distance between accepted region centers.
    pub nms_radius: f64,
    /// Maximum distance between paired centers of the two sessions.
    pub pairing_max: f64,
    /// Sphere radius attached to every region.
    pub radius: f64,
}

impl SelectionOptions {
    /// Defaults for a sampling radius `r`: NMS and pairing distances of `2r`.
    pub fn for_radius(radius: f64, mode: SelectionMode) -> Self {
        SelectionOptions {
            mode,
            nms_radius: 2.0 * radius,
            pairing_max: 2.0 * radius,
            radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionPair {
    /// Pose of the reference session nearest to `center_t1`.
    pub center_t: Point3,
    pub k_t: u32,
    /// Pose of the changed session, in the common frame.
    pub center_t1: Point3,
    pub score: ChangeScore,
    pub radius: f64,
}

/// Mean and population standard deviation of the score distances.
pub fn score_statistics(scores: &[ChangeScore]) -> (f64, f64) {
    if scores.is_empty() {
        return (0.0, 0.0);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().map(|s| s.distance).sum::<f64>() / n;
    let var = scores
        .iter()
        .map(|s| (s.distance - mean) * (s.distance - mean))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Ranks scores, applies greedy non-maximum suppression and pairs each
/// accepted pose with the nearest reference pose.
///
/// Both trajectories must be in the common frame. Candidates without a
/// reference pose within `pairing_max` are skipped.
pub fn select_regions(
    scores: &[ChangeScore],
    tr_t: &Trajectory,
    tr_t1: &Trajectory,
    opts: &SelectionOptions,
) -> Result<Vec<RegionPair>> {
    if tr_t.is_empty() {
        return Err(Error::InvalidConfig("reference trajectory is empty".into()));
    }
    let mut ranked: Vec<ChangeScore> = scores.to_vec();
    ranked.sort_by(|a, b| b.distance.total_cmp(&a.distance).then(a.j.cmp(&b.j)));

    let (limit, floor) = match opts.mode {
        SelectionMode::TopK(k) => (k, f64::NEG_INFINITY),
        SelectionMode::Threshold(lambda) => {
            let (mean, std) = score_statistics(&ranked);
            if std == 0.0 {
                return Ok(Vec::new());
            }
            (usize::MAX, mean + lambda * std)
        }
    };

    let mut accepted: Vec<RegionPair> = Vec::new();
    for score in ranked {
        if accepted.len() >= limit || score.distance < floor {
            break;
        }
        let center_t1 = tr_t1.pose(score.j).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "descriptor step {} is outside the changed-session trajectory ({} poses)",
                score.j,
                tr_t1.len()
            ))
        })?;
        if accepted
            .iter()
            .any(|a| a.center_t1.distance(&center_t1) < opts.nms_radius)
        {
            continue;
        }
        let (k_t, center_t) = tr_t.nearest(&center_t1).expect("non-empty trajectory");
        if center_t.distance(&center_t1) > opts.pairing_max {
            log::debug!("step {} has no reference pose within pairing distance", score.j);
            continue;
        }
        accepted.push(RegionPair {
            center_t,
            k_t,
            center_t1,
            score,
            radius: opts.radius,
        });
    }
    Ok(accepted)
}

/// `j,nn_i,distance` rows.
pub fn write_scores_csv(scores: &[ChangeScore], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("j,nn_i,distance\n");
    for sc in scores {
        let _ = writeln!(s, "{},{},{:?}", sc.j, sc.nn_i, sc.distance);
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

const REGION_HEADER: &str = "rank,j,nn_i,distance,k_t,t_x,t_y,t_z,t1_x,t1_y,t1_z,radius";

/// Regions in rank order, one row each, exact float formatting.
pub fn write_regions_csv(regions: &[RegionPair], path: impl AsRef<Path>) -> Result<()> {
    let mut s = format!("{REGION_HEADER}\n");
    for (rank, r) in regions.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            rank + 1,
            r.score.j,
            r.score.nn_i,
            r.score.distance,
            r.k_t,
            r.center_t.x(),
            r.center_t.y(),
            r.center_t.z(),
            r.center_t1.x(),
            r.center_t1.y(),
            r.center_t1.z(),
            r.radius
        );
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

pub fn read_regions_csv(path: impl AsRef<Path>) -> Result<Vec<RegionPair>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == REGION_HEADER => {}
        _ => {
            return Err(Error::parse(
                path,
                "line 1",
                format!("expected header '{REGION_HEADER}'"),
            ))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let at = || format!("line {}", i + 1);
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 12 {
            return Err(Error::parse(path, at(), format!("expected 12 fields, found {}", f.len())));
        }
        let int = |s: &str| -> Result<u32> {
            s.parse()
                .map_err(|_| Error::parse(path, at(), format!("'{s}' is not an integer")))
        };
        let real = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, at(), format!("'{s}' is not a finite number")))
        };
        let center_t = Point3::new(real(f[5])?, real(f[6])?, real(f[7])?);
        let center_t1 = Point3::new(real(f[8])?, real(f[9])?, real(f[10])?);
        let radius = real(f[11])?;
        if radius <= 0.0 {
            return Err(Error::parse(path, at(), "radius must be positive"));
        }
        out.push(RegionPair {
            center_t,
            k_t: int(f[4])?,
            center_t1,
            score: ChangeScore {
                j: int(f[1])?,
                nn_i: int(f[2])?,
                distance: real(f[3])?,
            },
            radius,
        });
    }
    Ok(out)
}
