//! One function per subcommand. Every input is read and every result
//! computed before the first output is written.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cloud_delta::alignment::{estimate_transform_icp, merge_maps};
use cloud_delta::descriptor::{compute_descriptor_set, DescriptorSet};
use cloud_delta::detection::{
    read_regions_csv, score_changes, select_regions, write_regions_csv, write_scores_csv, NnIndex,
    SelectionMode,
};
use cloud_delta::extraction::RegionExtraction;
use cloud_delta::io::{
    identify_input, read_descriptor_set, read_point_cloud_auto, read_text, read_trajectory,
    read_transform, write_atomic, write_descriptor_set, write_point_cloud, write_report,
    write_table_csv, write_transform, DescriptorFormat, InputIdentity, PointCloudFormat, Report,
    ReportMetadata,
};
use cloud_delta::pipeline::{
    extract_regions, region_record, report_parameters, run as run_pipeline, Alignment,
    PipelineConfig, Sessions,
};
use cloud_delta::synth::{generate, score, write_scene, SceneSpec, MATCH_DISTANCE};
use cloud_delta::{PointCloud, RigidTransform};

use crate::args::{
    AlignArgs, ConfigArgs, DescribeArgs, DetectArgs, ExtractArgs, PipelineArgs, Preset, SynthArgs,
};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Stage timings passed from `align` and `detect` to `extract`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Fragment {
    t_merge: Option<f64>,
    t_describe: Option<f64>,
    t_cd: Option<f64>,
    inputs: Vec<InputIdentity>,
}

fn resolve_config(args: &ConfigArgs, default_radius: f64) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = read_text(path)?;
            let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
                cloud_delta::Error::Parse {
                    path: path.clone(),
                    position: format!("line {} column {}", e.line(), e.column()),
                    message: e.to_string(),
                }
            })?;
            if let Some(params) = value.pointer("/metadata/parameters") {
                value = params.clone();
            }
            let mut cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| {
                cloud_delta::Error::Parse {
                    path: path.clone(),
                    position: "parameters".into(),
                    message: e.to_string(),
                }
            })?;
            if let Some(r) = args.radius {
                cfg.descriptor.radius = r;
            }
            cfg
        }
        None => PipelineConfig::with_radius(args.radius.unwrap_or(default_radius)),
    };

    set(&mut cfg.descriptor.radial_bins, args.radial_bins);
    set(&mut cfg.descriptor.height_bins, args.height_bins);
    set(&mut cfg.descriptor.height_extent, args.height_extent);
    if let Some(k) = args.top_k {
        cfg.selection = SelectionMode::TopK(k);
    }
    if let Some(l) = args.threshold {
        cfg.selection = SelectionMode::Threshold(l);
    }
    if args.nms_radius.is_some() {
        cfg.nms_radius = args.nms_radius;
    }
    if args.pairing_max.is_some() {
        cfg.pairing_max = args.pairing_max;
    }
    set(&mut cfg.extraction.voxel_size, args.voxel_size);
    set(&mut cfg.extraction.min_points, args.min_points);
    set(&mut cfg.extraction.sor.k_neighbors, args.sor_k);
    set(&mut cfg.extraction.sor.lambda, args.sor_lambda);
    set(&mut cfg.extraction.volume_resolution, args.volume_resolution);
    set(&mut cfg.icp.max_iterations, args.icp_max_iterations);
    set(&mut cfg.icp.convergence_eps, args.icp_eps);
    set(&mut cfg.icp.max_corr_dist, args.icp_max_corr_dist);
    if let Some(m) = args.icp_min_corr_dist {
        cfg.icp.min_corr_dist = (m > 0.0).then_some(m);
    }
    if let Some(v) = args.icp_source_voxel {
        cfg.icp.source_voxel = (v > 0.0).then_some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

fn cloud_format(path: &Path) -> PointCloudFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("xyz") => PointCloudFormat::Xyz,
        _ => PointCloudFormat::PlyBinaryLe,
    }
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    Ok(read_point_cloud_auto(path)?)
}

fn read_optional_transform(path: Option<&PathBuf>) -> Result<RigidTransform> {
    Ok(match path {
        Some(p) => read_transform(p)?,
        None => RigidTransform::identity(),
    })
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| {
        CliError::Core(cloud_delta::Error::Io {
            path: dir.to_path_buf(),
            source,
        })
    })
}

fn print_transform(t: &RigidTransform) {
    let m = t.to_matrix();
    for r in 0..4 {
        println!("{:.9} {:.9} {:.9} {:.9}", m[(r, 0)], m[(r, 1)], m[(r, 2)], m[(r, 3)]);
    }
}

pub fn describe(a: DescribeArgs) -> Result<()> {
    let cfg = resolve_config(&a.config, 4.5)?;
    let map = read_cloud(&a.map)?;
    let traj = read_trajectory(&a.trajectory)?;
    let t0 = Instant::now();
    let set = compute_descriptor_set(&map, &traj, &cfg.descriptor)?;
    log::info!(
        "{} of {} descriptors present in {:.3} s",
        set.present_count(),
        set.records.len(),
        t0.elapsed().as_secs_f64()
    );
    write_descriptor_set(&set, &a.out, DescriptorFormat::from_path(&a.out))?;
    Ok(())
}

pub fn align(a: AlignArgs) -> Result<()> {
    let cfg = resolve_config(&a.config, 4.5)?;
    let map_t = read_cloud(&a.map_t)?;
    let map_t1 = read_cloud(&a.map_t1)?;
    let known = a.transform.as_ref().map(read_transform).transpose()?;
    let mut inputs = vec![identify_input("map_t", &a.map_t)?, identify_input("map_t1", &a.map_t1)?];
    if let Some(p) = &a.transform {
        inputs.push(identify_input("transform", p)?);
    }

    let t0 = Instant::now();
    let transform = match known {
        Some(t) => t,
        None => {
            let res = estimate_transform_icp(&map_t1, &map_t, &cfg.icp)?;
            if !res.converged {
                log::warn!("ICP stopped after {} iterations without converging", res.iterations);
            }
            log::info!("ICP residual {:.4} m after {} iterations", res.residual_rmse, res.iterations);
            res.transform
        }
    };
    let merged = a.merged_out.as_ref().map(|_| merge_maps(&map_t, &map_t1, &transform));
    let t_merge = t0.elapsed().as_secs_f64();

    if let Some(p) = &a.transform_out {
        write_transform(&transform, p)?;
    }
    if let (Some(p), Some(m)) = (&a.merged_out, &merged) {
        write_point_cloud(m, p, cloud_format(p))?;
    }
    if let Some(p) = &a.fragment_out {
        let fragment = Fragment {
            t_merge: Some(t_merge),
            inputs,
            ..Default::default()
        };
        write_json(&fragment, p)?;
    }
    print_transform(&transform);
    Ok(())
}

pub fn detect(a: DetectArgs) -> Result<()> {
    let cfg = resolve_config(&a.config, 4.5)?;
    let q_t = read_descriptor_set(&a.q_t)?;
    let q_t1 = read_descriptor_set(&a.q_t1)?;
    let traj_t = read_trajectory(&a.traj_t)?;
    let traj_t1 = read_trajectory(&a.traj_t1)?;
    let transform = read_optional_transform(a.transform.as_ref())?;
    let mut inputs = vec![
        identify_input("q_t", &a.q_t)?,
        identify_input("q_t1", &a.q_t1)?,
        identify_input("traj_t", &a.traj_t)?,
        identify_input("traj_t1", &a.traj_t1)?,
    ];
    if let Some(p) = &a.transform {
        inputs.push(identify_input("transform", p)?);
    }

    let t0 = Instant::now();
    let index = NnIndex::build(&q_t)?;
    let scores = score_changes(&index, &q_t1);
    let regions = select_regions(
        &scores,
        &traj_t,
        &traj_t1.transformed(&transform),
        &cfg.selection_options(),
    )?;
    let t_cd = t0.elapsed().as_secs_f64();

    write_regions_csv(&regions, &a.regions_out)?;
    if let Some(p) = &a.scores_out {
        write_scores_csv(&scores, p)?;
    }
    if let Some(p) = &a.fragment_out {
        let fragment = Fragment {
            t_cd: Some(t_cd),
            inputs,
            ..Default::default()
        };
        write_json(&fragment, p)?;
    }
    println!("{} regions", regions.len());
    Ok(())
}

fn write_objects(dir: &Path, extractions: &[RegionExtraction]) -> Result<()> {
    if extractions.is_empty() {
        return Ok(());
    }
    let objects = dir.join("objects");
    create_dir(&objects)?;
    for (i, ex) in extractions.iter().enumerate() {
        let rank = i + 1;
        write_point_cloud(
            &ex.added.points,
            objects.join(format!("region_{rank:03}_added.ply")),
            PointCloudFormat::PlyBinaryLe,
        )?;
        write_point_cloud(
            &ex.removed.points,
            objects.join(format!("region_{rank:03}_removed.ply")),
            PointCloudFormat::PlyBinaryLe,
        )?;
    }
    Ok(())
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let cfg = resolve_config(&a.config, 4.5)?;
    let map_t = read_cloud(&a.map_t)?;
    let map_t1 = read_cloud(&a.map_t1)?;
    let regions = read_regions_csv(&a.regions)?;
    let transform = read_optional_transform(a.transform.as_ref())?;
    let mut inputs = vec![
        identify_input("map_t", &a.map_t)?,
        identify_input("map_t1", &a.map_t1)?,
        identify_input("regions", &a.regions)?,
    ];
    if let Some(p) = &a.transform {
        inputs.push(identify_input("transform", p)?);
    }
    let mut metadata = ReportMetadata::default();
    for path in &a.fragments {
        let text = read_text(path)?;
        let f: Fragment = serde_json::from_str(&text).map_err(|e| cloud_delta::Error::Parse {
            path: path.clone(),
            position: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        metadata.t_merge = f.t_merge.unwrap_or(metadata.t_merge);
        metadata.t_describe = f.t_describe.unwrap_or(metadata.t_describe);
        metadata.t_cd = f.t_cd.unwrap_or(metadata.t_cd);
        inputs.extend(f.inputs);
    }

    let map_t1 = map_t1.transformed(&transform);
    let (extractions, t_oe) = extract_regions(&regions, &map_t, &map_t1, &cfg.extraction)?;
    metadata.parameters = report_parameters(&cfg, Some(&transform));
    metadata.inputs = inputs;
    let records = extractions
        .iter()
        .zip(&t_oe)
        .enumerate()
        .map(|(i, (ex, &t))| region_record(i + 1, ex, metadata.t_merge, metadata.t_cd, t))
        .collect();
    let report = Report {
        metadata,
        regions: records,
    };
    report.validate()?;

    create_dir(&a.out_dir)?;
    write_objects(&a.out_dir, &extractions)?;
    if let Some(p) = &a.table_csv {
        write_table_csv(&report, p)?;
    }
    write_report(&report, a.out_dir.join("report.json"))?;
    println!("{} regions extracted", extractions.len());
    Ok(())
}

pub fn pipeline(a: PipelineArgs) -> Result<()> {
    if let Some(spec_path) = &a.synth {
        let spec = SceneSpec::from_json(&read_text(spec_path)?)?;
        let cfg = resolve_config(&a.config, spec.truth_radius)?;
        let inputs = vec![identify_input("scene", spec_path)?];
        let scene = generate(&spec)?;
        let sessions = Sessions {
            map_t: &scene.map_t,
            map_t1: &scene.map_t1,
            traj_t: &scene.traj_t,
            traj_t1: &scene.traj_t1,
        };
        let alignment = if a.icp {
            Alignment::Icp
        } else {
            Alignment::Known(scene.t_true)
        };
        let out = run_pipeline(sessions, alignment, None, &cfg, inputs)?;
        let metrics = score(&scene.truth, &out.regions, &out.extractions, cfg.radius(), MATCH_DISTANCE);
        let (angle, offset) = scene.t_true.difference(&out.transform);
        let summary = serde_json::json!({
            "metrics": metrics,
            "regions": out.regions.len(),
            "alignment_error_deg": angle.to_degrees(),
            "alignment_error_m": offset,
        });
        write_outputs(&a, &out)?;
        write_json(&summary, &a.out_dir.join("metrics.json"))?;
        println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        return Ok(());
    }

    let (Some(map_t_path), Some(map_t1_path), Some(traj_t_path), Some(traj_t1_path)) =
        (&a.map_t, &a.map_t1, &a.traj_t, &a.traj_t1)
    else {
        return Err(CliError::Usage(
            "--map-t, --map-t1, --traj-t and --traj-t1 are all required without --synth".into(),
        ));
    };
    if a.transform.is_none() && !a.icp {
        return Err(CliError::Usage("either --transform or --icp is required".into()));
    }
    let cfg = resolve_config(&a.config, 4.5)?;
    let map_t = read_cloud(map_t_path)?;
    let map_t1 = read_cloud(map_t1_path)?;
    let traj_t = read_trajectory(traj_t_path)?;
    let traj_t1 = read_trajectory(traj_t1_path)?;
    let descriptors: Option<(DescriptorSet, DescriptorSet)> = match (&a.q_t, &a.q_t1) {
        (Some(p), Some(p1)) => Some((read_descriptor_set(p)?, read_descriptor_set(p1)?)),
        _ => None,
    };
    let alignment = match &a.transform {
        Some(p) => Alignment::Known(read_transform(p)?),
        None => Alignment::Icp,
    };
    let mut inputs = vec![
        identify_input("map_t", map_t_path)?,
        identify_input("map_t1", map_t1_path)?,
        identify_input("traj_t", traj_t_path)?,
        identify_input("traj_t1", traj_t1_path)?,
    ];
    for (role, path) in [("q_t", &a.q_t), ("q_t1", &a.q_t1), ("transform", &a.transform)] {
        if let Some(p) = path {
            inputs.push(identify_input(role, p)?);
        }
    }

    let sessions = Sessions {
        map_t: &map_t,
        map_t1: &map_t1,
        traj_t: &traj_t,
        traj_t1: &traj_t1,
    };
    let out = run_pipeline(sessions, alignment, descriptors, &cfg, inputs)?;
    write_outputs(&a, &out)?;
    println!("{} regions", out.regions.len());
    Ok(())
}

/// Objects and CSV files first, the report last.
fn write_outputs(a: &PipelineArgs, out: &cloud_delta::pipeline::PipelineOutput) -> Result<()> {
    create_dir(&a.out_dir)?;
    write_objects(&a.out_dir, &out.extractions)?;
    write_transform(&out.transform, a.out_dir.join("transform.txt"))?;
    write_scores_csv(&out.scores, a.out_dir.join("scores.csv"))?;
    write_regions_csv(&out.regions, a.out_dir.join("regions.csv"))?;
    if let Some(p) = &a.table_csv {
        write_table_csv(&out.report, p)?;
    }
    write_report(&out.report, a.out_dir.join("report.json"))?;
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = match (&a.spec, a.preset) {
        (Some(p), _) => SceneSpec::from_json(&read_text(p)?)?,
        (None, Some(Preset::Null)) => SceneSpec {
            seed: a.seed,
            ..Default::default()
        },
        (None, Some(Preset::Standard)) => SceneSpec::standard(a.seed),
        (None, Some(Preset::Scaled)) => SceneSpec::scaled(a.seed),
        (None, None) => return Err(CliError::Usage("either --spec or --preset is required".into())),
    };
    let scene = generate(&spec)?;
    write_scene(&scene, &a.out_dir)?;
    write_atomic(&a.out_dir.join("scene.json"), spec.to_json().as_bytes())?;
    println!(
        "{} + {} points, {} changes",
        scene.map_t.len(),
        scene.map_t1.len(),
        scene.truth.changes.len()
    );
    Ok(())
}
