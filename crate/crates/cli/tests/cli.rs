use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cloud_delta::io::{
    read_point_cloud_auto, read_report, read_transform, write_point_cloud, write_transform,
    PointCloudFormat,
};
use cloud_delta::synth::{write_scene, SceneSpec};
use cloud_delta::{Point3, PointCloud, RigidTransform};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloud-delta"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn cli_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloud-delta"))
        .args(args)
        .env("CLOUD_DELTA_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scene_dir(root: &Path, spec: &SceneSpec) -> PathBuf {
    let dir = root.join("scene");
    let scene = cloud_delta::synth::generate(spec).unwrap();
    write_scene(&scene, &dir).unwrap();
    std::fs::write(dir.join("scene.json"), spec.to_json()).unwrap();
    dir
}

#[test]
fn identity_align_doubles_point_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cloud: PointCloud = (0..200)
        .map(|i| Point3::new(i as f64 * 0.1, (i % 7) as f64, (i % 3) as f64))
        .collect();
    let map = tmp.path().join("map.ply");
    let t = tmp.path().join("t.txt");
    let merged = tmp.path().join("merged.ply");
    write_point_cloud(&cloud, &map, PointCloudFormat::PlyBinaryLe).unwrap();
    write_transform(&RigidTransform::identity(), &t).unwrap();
    let out = cli(&[
        "align", "--map-t", s(&map), "--map-t1", s(&map), "--transform", s(&t), "--merged-out", s(&merged),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_point_cloud_auto(&merged).unwrap().len(), 400);
}

#[test]
fn icp_align_recovers_true_transform() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = scene_dir(tmp.path(), &SceneSpec::standard(5));
    let t_out = tmp.path().join("t.txt");
    let out = cli(&[
        "align",
        "--map-t", s(&dir.join("map_t.ply")),
        "--map-t1", s(&dir.join("map_t1.ply")),
        "--icp",
        "--transform-out", s(&t_out),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let truth = read_transform(dir.join("t_true.txt")).unwrap();
    let (angle, offset) = truth.difference(&read_transform(&t_out).unwrap());
    assert!(angle.to_degrees() < 0.5 && offset < 0.05, "{angle} {offset}");
}

#[test]
fn align_without_transform_is_usage_error() {
    let out = cli(&["align", "--map-t", "a.ply", "--map-t1", "b.ply"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn invalid_parameter_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("scene.json");
    std::fs::write(&spec, SceneSpec::default().to_json()).unwrap();
    let out = cli(&["pipeline", "--synth", s(&spec), "--voxel-size", "-1", "--out-dir", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn degenerate_map_is_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cloud: PointCloud = (0..50).map(|_| Point3::new(1.0, 2.0, 3.0)).collect();
    let map = tmp.path().join("map.ply");
    write_point_cloud(&cloud, &map, PointCloudFormat::PlyAscii).unwrap();
    let out = cli(&["align", "--map-t", s(&map), "--map-t1", s(&map), "--icp"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn null_scene_has_empty_report() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("scene.json");
    std::fs::write(&spec, SceneSpec::default().to_json()).unwrap();
    let out_dir = tmp.path().join("out");
    let out = cli(&["pipeline", "--synth", s(&spec), "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read_report(out_dir.join("report.json")).unwrap().regions.is_empty());
}

#[test]
fn standard_scene_finds_every_change() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("scene.json");
    std::fs::write(&spec, SceneSpec::standard(7).to_json()).unwrap();
    let out_dir = tmp.path().join("out");
    let out = cli(&["pipeline", "--synth", s(&spec), "--icp", "--top-k", "3", "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(summary["metrics"]["region_recall"], 1.0);
    assert_eq!(read_report(out_dir.join("report.json")).unwrap().regions.len(), 3);
}

#[test]
fn corrupt_input_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = scene_dir(tmp.path(), &SceneSpec::standard(1));
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "k,x,y,z\n1,0,0\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = cli(&[
        "pipeline",
        "--map-t", s(&dir.join("map_t.ply")),
        "--map-t1", s(&dir.join("map_t1.ply")),
        "--traj-t", s(&dir.join("traj_t.csv")),
        "--traj-t1", s(&bad),
        "--icp",
        "--out-dir", s(&out_dir),
    ]);
    assert_eq!(code(&out), 3);
    assert!(!out_dir.exists());
}

#[test]
fn staged_commands_match_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = scene_dir(tmp.path(), &SceneSpec::standard(2));
    let p = |name: &str| tmp.path().join(name);
    let f = |name: &str| dir.join(name);

    for (map, traj, q) in [("map_t.ply", "traj_t.csv", "q_t.bin"), ("map_t1.ply", "traj_t1.csv", "q_t1.csv")] {
        let out = cli(&["describe", "--map", s(&f(map)), "--trajectory", s(&f(traj)), "--out", s(&p(q))]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = cli(&[
        "align", "--map-t", s(&f("map_t.ply")), "--map-t1", s(&f("map_t1.ply")),
        "--transform", s(&f("t_true.txt")), "--fragment-out", s(&p("align.json")),
    ]);
    assert_eq!(code(&out), 0);
    let out = cli(&[
        "detect", "--q-t", s(&p("q_t.bin")), "--q-t1", s(&p("q_t1.csv")),
        "--traj-t", s(&f("traj_t.csv")), "--traj-t1", s(&f("traj_t1.csv")),
        "--transform", s(&f("t_true.txt")), "--top-k", "3",
        "--regions-out", s(&p("regions.csv")), "--scores-out", s(&p("scores.csv")),
        "--fragment-out", s(&p("detect.json")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = cli(&[
        "extract", "--map-t", s(&f("map_t.ply")), "--map-t1", s(&f("map_t1.ply")),
        "--regions", s(&p("regions.csv")), "--transform", s(&f("t_true.txt")),
        "--fragment", s(&p("align.json")), "--fragment", s(&p("detect.json")),
        "--out-dir", s(&p("staged")), "--table-csv", s(&p("table.csv")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = cli(&[
        "pipeline", "--map-t", s(&f("map_t.ply")), "--map-t1", s(&f("map_t1.ply")),
        "--traj-t", s(&f("traj_t.csv")), "--traj-t1", s(&f("traj_t1.csv")),
        "--transform", s(&f("t_true.txt")), "--top-k", "3", "--out-dir", s(&p("full")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let staged = read_report(p("staged/report.json")).unwrap();
    let full = read_report(p("full/report.json")).unwrap();
    assert_eq!(staged.regions.len(), 3);
    assert!(staged.metadata.t_merge > 0.0 && staged.metadata.t_cd > 0.0);
    for (a, b) in staged.regions.iter().zip(&full.regions) {
        assert_eq!((a.k_t1, a.k_t, a.s_points, a.oe_points), (b.k_t1, b.k_t, b.s_points, b.oe_points));
        assert_eq!(a.t_total, a.t_merge + a.t_cd + a.t_oe);
    }
    for rank in 1..=3 {
        let name = format!("objects/region_{rank:03}_added.ply");
        assert_eq!(
            std::fs::read(p("staged").join(&name)).unwrap(),
            std::fs::read(p("full").join(&name)).unwrap()
        );
    }
    let table = std::fs::read_to_string(p("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("region,t_merge,t_cd,t_oe,t_total,v_sphere,v_oe,s_points,oe_points"));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("scene.json");
    std::fs::write(&spec, SceneSpec::standard(3).to_json()).unwrap();
    let dirs: Vec<PathBuf> = ["1", "3"]
        .iter()
        .map(|n| {
            let d = tmp.path().join(format!("out{n}"));
            let out = cli_env(&["pipeline", "--synth", s(&spec), "--icp", "--top-k", "3", "--out-dir", s(&d)], n);
            assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
            d
        })
        .collect();
    let mut files = vec!["regions.csv".to_string(), "scores.csv".into(), "transform.txt".into()];
    for rank in 1..=3 {
        files.push(format!("objects/region_{rank:03}_added.ply"));
        files.push(format!("objects/region_{rank:03}_removed.ply"));
    }
    for name in files {
        assert_eq!(
            std::fs::read(dirs[0].join(&name)).unwrap(),
            std::fs::read(dirs[1].join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn report_parameters_reproduce_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("scene.json");
    std::fs::write(&spec, SceneSpec::standard(4).to_json()).unwrap();
    let first = tmp.path().join("first");
    let out = cli(&[
        "pipeline", "--synth", s(&spec), "--top-k", "2", "--voxel-size", "0.5", "--min-points", "3",
        "--sor-lambda", "1.5", "--out-dir", s(&first),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let second = tmp.path().join("second");
    let report = first.join("report.json");
    let out = cli(&["pipeline", "--synth", s(&spec), "--config", s(&report), "--out-dir", s(&second)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let a = read_report(&report).unwrap();
    let b = read_report(second.join("report.json")).unwrap();
    assert_eq!(a.metadata.parameters, b.metadata.parameters);
    assert_eq!(a.metadata.parameters["extraction"]["min_points"], 3);
    assert_eq!(std::fs::read(first.join("regions.csv")).unwrap(), std::fs::read(second.join("regions.csv")).unwrap());
}
