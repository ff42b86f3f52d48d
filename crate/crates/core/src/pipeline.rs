//! The full flow: align, describe, detect, extract, report.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{estimate_transform_icp, AlignmentResult, IcpOptions};
use crate::descriptor::{compute_descriptor_set, DescriptorConfig, DescriptorSet};
use crate::detection::{
    score_changes, select_regions, ChangeScore, NnIndex, RegionPair, SelectionMode,
    SelectionOptions,
};
use crate::error::Result;
use crate::extraction::{extract_all_indexed, ExtractionParams, RegionExtraction};
use crate::geometry::{PointCloud, RigidTransform, SphereSampler, Trajectory};
use crate::io::{InputIdentity, RegionRecord, Report, ReportMetadata};

/// Every tunable parameter of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub descriptor: DescriptorConfig,
    pub selection: SelectionMode,
    /// Defaults to `2r`.
    pub nms_radius: Option<f64>,
    /// Defaults to `2r`.
    pub pairing_max: Option<f64>,
    pub extraction: ExtractionParams,
    pub icp: IcpOptions,
}

/// Radius over ICP source thinning voxel.
const ICP_VOXELS_PER_RADIUS: f64 = 18.0;

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::with_radius(DescriptorConfig::default().radius)
    }
}

impl PipelineConfig {
    /// Defaults for region radius `radius`; the ICP source is thinned in
    /// proportion so alignment cost follows the scene scale.
    pub fn with_radius(radius: f64) -> Self {
        PipelineConfig {
            descriptor: DescriptorConfig::with_radius(radius),
            selection: SelectionMode::default(),
            nms_radius: None,
            pairing_max: None,
            extraction: ExtractionParams::default(),
            icp: IcpOptions {
                max_iterations: 100,
                convergence_eps: 1e-5,
                min_corr_dist: Some(0.1),
                source_voxel: Some(radius / ICP_VOXELS_PER_RADIUS),
                ..IcpOptions::default()
            },
        }
    }

    pub fn radius(&self) -> f64 {
        self.descriptor.radius
    }

    pub fn selection_options(&self) -> SelectionOptions {
        let r = self.radius();
        SelectionOptions {
            mode: self.selection,
            nms_radius: self.nms_radius.unwrap_or(2.0 * r),
            pairing_max: self.pairing_max.unwrap_or(2.0 * r),
            radius: r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        self.extraction.validate()
    }
}

/// How the changed session is brought into the reference frame.
#[derive(Clone, Copy, Debug)]
pub enum Alignment {
    /// A known transform taking the changed session into the reference frame.
    Known(RigidTransform),
    /// Estimate it with ICP.
    Icp,
}

/// Both sessions, each in its own frame.
#[derive(Clone, Copy, Debug)]
pub struct Sessions<'a> {
    pub map_t: &'a PointCloud,
    pub map_t1: &'a PointCloud,
    pub traj_t: &'a Trajectory,
    pub traj_t1: &'a Trajectory,
}

/// Wall-clock seconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub t_merge: f64,
    pub t_describe: f64,
    pub t_cd: f64,
    /// Sum of the per-region extraction times.
    pub t_oe: f64,
    pub wall: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub transform: RigidTransform,
    pub alignment: Option<AlignmentResult>,
    pub q_t: DescriptorSet,
    pub q_t1: DescriptorSet,
    pub scores: Vec<ChangeScore>,
    pub regions: Vec<RegionPair>,
    pub extractions: Vec<RegionExtraction>,
    /// Changed-session map in the reference frame.
    pub map_t1_aligned: PointCloud,
    pub timings: Timings,
    pub report: Report,
}

/// Runs every stage. Descriptors are computed unless supplied.
pub fn run(
    sessions: Sessions<'_>,
    alignment: Alignment,
    descriptors: Option<(DescriptorSet, DescriptorSet)>,
    cfg: &PipelineConfig,
    inputs: Vec<InputIdentity>,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let start = Instant::now();

    let t0 = Instant::now();
    let (transform, icp) = match alignment {
        Alignment::Known(t) => (t, None),
        Alignment::Icp => {
            let res = estimate_transform_icp(sessions.map_t1, sessions.map_t, &cfg.icp)?;
            (res.transform, Some(res))
        }
    };
    let map_t1_aligned = sessions.map_t1.transformed(&transform);
    let traj_t1_aligned = sessions.traj_t1.transformed(&transform);
    let t_merge = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let (q_t, q_t1) = match descriptors {
        Some(pair) => pair,
        None => (
            compute_descriptor_set(sessions.map_t, sessions.traj_t, &cfg.descriptor)?,
            compute_descriptor_set(sessions.map_t1, sessions.traj_t1, &cfg.descriptor)?,
        ),
    };
    let t_describe = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let index = NnIndex::build(&q_t)?;
    let scores = score_changes(&index, &q_t1);
    let regions = select_regions(
        &scores,
        sessions.traj_t,
        &traj_t1_aligned,
        &cfg.selection_options(),
    )?;
    let t_cd = t0.elapsed().as_secs_f64();

    let (extractions, t_oe) = extract_regions(&regions, sessions.map_t, &map_t1_aligned, &cfg.extraction)?;

    let known = icp.is_none().then_some(&transform);
    let parameters = report_parameters(cfg, known);
    let records = extractions
        .iter()
        .zip(&t_oe)
        .enumerate()
        .map(|(i, (ex, &t_oe))| region_record(i + 1, ex, t_merge, t_cd, t_oe))
        .collect();
    let report = Report {
        metadata: ReportMetadata {
            parameters,
            inputs,
            t_merge,
            t_describe,
            t_cd,
            ..Default::default()
        },
        regions: records,
    };
    report.validate()?;

    Ok(PipelineOutput {
        transform,
        alignment: icp,
        q_t,
        q_t1,
        scores,
        regions,
        extractions,
        map_t1_aligned,
        timings: Timings {
            t_merge,
            t_describe,
            t_cd,
            t_oe: t_oe.iter().sum(),
            wall: start.elapsed().as_secs_f64(),
        },
        report,
    })
}

/// The configuration as echoed in a report, plus an `alignment` entry:
/// `"icp"`, or the known transform as a row-major 4×4 matrix.
pub fn report_parameters(cfg: &PipelineConfig, known: Option<&RigidTransform>) -> serde_json::Value {
    let mut parameters = serde_json::to_value(cfg).expect("config serializes");
    parameters["alignment"] = match known {
        None => serde_json::json!("icp"),
        Some(t) => serde_json::json!({ "known": t.to_matrix().transpose().as_slice() }),
    };
    parameters
}

/// Extracts every region in parallel; returns results and per-region
/// seconds in region order.
pub fn extract_regions(
    regions: &[RegionPair],
    map_t: &PointCloud,
    map_t1: &PointCloud,
    params: &ExtractionParams,
) -> Result<(Vec<RegionExtraction>, Vec<f64>)> {
    if regions.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let cell = regions[0].radius;
    let sampler_t = SphereSampler::new(map_t, cell);
    let sampler_t1 = SphereSampler::new(map_t1, cell);
    let timed: Vec<(RegionExtraction, f64)> = regions
        .par_iter()
        .map(|pair| {
            let t0 = Instant::now();
            let ex = extract_all_indexed(pair, &sampler_t, &sampler_t1, params)?;
            Ok((ex, t0.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    Ok(timed.into_iter().unzip())
}

/// Report row for one region. `rank` is 1-based.
pub fn region_record(
    rank: usize,
    ex: &RegionExtraction,
    t_merge: f64,
    t_cd: f64,
    t_oe: f64,
) -> RegionRecord {
    let pair = &ex.added.source_region;
    RegionRecord {
        rank,
        k_t1: pair.score.j,
        k_t: pair.k_t,
        distance: pair.score.distance,
        center: pair.center_t1.to_array(),
        t_merge,
        t_cd,
        t_oe,
        t_total: t_merge + t_cd + t_oe,
        v_sphere: ex.v_sphere,
        v_oe: ex.added.volume_estimate,
        s_points: ex.s_points as u64,
        oe_points: ex.added.points.len() as u64,
        oe_points_pre_sor: ex.added.pre_sor_count as u64,
        s_points_ref: ex.s_points_ref as u64,
        removed_points: ex.removed.points.len() as u64,
        removed_points_pre_sor: ex.removed.pre_sor_count as u64,
        v_removed: ex.removed.volume_estimate,
    }
}
