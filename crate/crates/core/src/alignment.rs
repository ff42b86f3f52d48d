//! Bringing both sessions into one frame: map merging with a known transform
//! and point-to-point ICP for when the transform has to be estimated.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::kdtree::KdTree;

/// `M_t ∪ T·M_t1` as a concatenation: reference points first, then the
/// transformed points of the second session. No deduplication.
pub fn merge_maps(map_t: &PointCloud, map_t1: &PointCloud, t: &RigidTransform) -> PointCloud {
    let mut merged = PointCloud::with_capacity(map_t.len() + map_t1.len());
    merged.extend_from(map_t);
    for p in map_t1 {
        merged.push(t.apply(p));
    }
    merged
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpOptions {
    pub max_iterations: usize,
    /// Stop once the residual improves by less than this many meters.
    pub convergence_eps: f64,
    /// Correspondences farther apart than this are rejected.
    pub max_corr_dist: f64,
    /// When set, the rejection distance is halved after each convergence
    /// until it reaches this value.
    #[serde(default)]
    pub min_corr_dist: Option<f64>,
    /// Thin the source to one point per voxel of this size before matching.
    pub source_voxel: Option<f64>,
    #[serde(skip, default)]
    pub initial: RigidTransform,
}

impl Default for IcpOptions {
    fn default() -> Self {
        IcpOptions {
            max_iterations: 50,
            convergence_eps: 1e-4,
            max_corr_dist: 2.0,
            min_corr_dist: None,
            source_voxel: None,
            initial: RigidTransform::identity(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    /// Maps source coordinates into the target frame.
    pub transform: RigidTransform,
    /// Final truncated RMSE, see [`estimate_transform_icp`].
    pub residual_rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual before the first update and after every accepted update.
    pub rmse_trace: Vec<f64>,
}

/// Estimates the transform taking `source` onto `target`.
///
/// Each iteration pairs every source point with its nearest target point,
/// drops pairs farther apart than `max_corr_dist` and solves the closed-form
/// SVD alignment of the remaining pairs. The residual is the RMSE over all
/// source points with each residual capped at `max_corr_dist`; with that cap
/// the residual cannot increase from one iteration to the next, and an
/// update that would increase it numerically is discarded.
///
/// With `min_corr_dist` set, every convergence halves the cap (not below
/// `min_corr_dist`) and iteration resumes, so that points without a
/// counterpart, such as changed objects, stop pulling on the estimate.
/// Lowering the cap never raises the residual, so the trace stays
/// non-increasing; the reported residual uses the final cap.
pub fn estimate_transform_icp(
    source: &PointCloud,
    target: &PointCloud,
    opts: &IcpOptions,
) -> Result<AlignmentResult> {
    if opts.max_iterations == 0 {
        return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
    }
    if !(opts.max_corr_dist > 0.0) {
        return Err(Error::InvalidConfig("max_corr_dist must be positive".into()));
    }
    check_spread(source, "source")?;
    check_spread(target, "target")?;

    let src: Vec<[f64; 3]> = match opts.source_voxel {
        Some(v) if v > 0.0 => voxel_thin(source, v),
        _ => source.iter().map(|p| p.to_array()).collect(),
    };
    let tgt: Vec<[f64; 3]> = target.iter().map(|p| p.to_array()).collect();
    let tree = KdTree::new(&tgt);
    let floor = opts
        .min_corr_dist
        .filter(|m| *m > 0.0)
        .unwrap_or(opts.max_corr_dist)
        .min(opts.max_corr_dist);
    let mut cap = opts.max_corr_dist;

    let mut transform = opts.initial;
    let mut state = correspond(&src, &tgt, &tree, &transform, cap * cap);
    let mut trace = vec![state.rmse];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        let delta = kabsch(&state.pairs)?;
        let candidate = delta.compose(&transform);
        let next = correspond(&src, &tgt, &tree, &candidate, cap * cap);
        let settled = if next.rmse > state.rmse {
            true
        } else {
            let improvement = state.rmse - next.rmse;
            transform = candidate;
            state = next;
            trace.push(state.rmse);
            improvement < opts.convergence_eps
        };
        if settled {
            if cap <= floor {
                converged = true;
                break;
            }
            cap = (cap / 2.0).max(floor);
            state = correspond(&src, &tgt, &tree, &transform, cap * cap);
            trace.push(state.rmse);
        }
    }

    Ok(AlignmentResult {
        transform,
        residual_rmse: state.rmse,
        iterations,
        converged,
        rmse_trace: trace,
    })
}

struct Correspondences {
    /// (transformed source, target) pairs within the distance cap.
    pairs: Vec<([f64; 3], [f64; 3])>,
    rmse: f64,
}

fn correspond(
    src: &[[f64; 3]],
    tgt: &[[f64; 3]],
    tree: &KdTree<3>,
    t: &RigidTransform,
    cap_sq: f64,
) -> Correspondences {
    let matched: Vec<([f64; 3], Option<(usize, f64)>)> = src
        .par_iter()
        .map(|s| {
            let moved = (t.rotation() * Vector3::from(*s) + t.translation()).into();
            let nn = tree
                .nearest_within(&moved, cap_sq)
                .map(|n| (n.index, n.dist_sq));
            (moved, nn)
        })
        .collect();
    let mut sum = 0.0;
    let mut pairs = Vec::with_capacity(matched.len());
    for (moved, nn) in &matched {
        match nn {
            Some((idx, d2)) => {
                sum += d2;
                pairs.push((*moved, tgt[*idx]));
            }
            None => sum += cap_sq,
        }
    }
    Correspondences {
        pairs,
        rmse: (sum / src.len() as f64).sqrt(),
    }
}

/// Closed-form rigid alignment of paired points (source onto target).
fn kabsch(pairs: &[([f64; 3], [f64; 3])]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "only {} correspondences within range",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let (mut cs, mut ct) = (Vector3::zeros(), Vector3::zeros());
    for (s, t) in pairs {
        cs += Vector3::from(*s);
        ct += Vector3::from(*t);
    }
    cs /= n;
    ct /= n;
    let mut h = Matrix3::zeros();
    for (s, t) in pairs {
        h += (Vector3::from(*s) - cs) * (Vector3::from(*t) - ct).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return Err(Error::DegenerateGeometry(
            "correspondence covariance is rank deficient (points collinear or coincident)".into(),
        ));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = ct - rotation * cs;
    Ok(RigidTransform::from_parts_unchecked(rotation, translation))
}

/// Requires at least three points that are not all on one line.
fn check_spread(cloud: &PointCloud, role: &str) -> Result<()> {
    if cloud.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{role} has {} points, need at least 3",
            cloud.len()
        )));
    }
    let c = cloud.centroid().expect("non-empty").to_vector();
    let mut cov = Matrix3::zeros();
    for p in cloud {
        let d = p.to_vector() - c;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateGeometry(format!("{role} points are collinear")));
    }
    Ok(())
}

/// First point (lowest index) of every occupied voxel, in index order.
fn voxel_thin(cloud: &PointCloud, size: f64) -> Vec<[f64; 3]> {
    let mut seen = HashSet::new();
    cloud
        .iter()
        .filter(|p| {
            seen.insert((
                (p.x() / size).floor() as i64,
                (p.y() / size).floor() as i64,
                (p.z() / size).floor() as i64,
            ))
        })
        .map(|p| p.to_array())
        .collect()
}
