use std::path::Path;

use metricforge::geometry::{SceneKind, SceneSpec};
use metricforge_cli::manifest::SyntheticSource;
use metricforge_cli::report::{Aggregate, SampleResult, Status};
use metricforge_cli::{run, CliError, Command, Manifest, RunConfig, RunOptions, Sample};

fn options(manifest: Option<&Path>, out: Option<&Path>) -> RunOptions {
    RunOptions {
        manifest: manifest.map(Path::to_path_buf),
        config: RunConfig::default(),
        seed: 5,
        jobs: 1,
        strict: false,
        fixed_clock: true,
        out: out.map(Path::to_path_buf),
    }
}

fn scene_sample(id: &str) -> Sample {
    let mut s = Sample::new(id);
    s.synthetic = Some(SyntheticSource {
        scene: SceneSpec::new(
            SceneKind::BoxRoom {
                half_width: 3.0,
                half_height: 2.0,
                depth: 8.0,
            },
            48,
            36,
            30.0,
        ),
        seed: None,
    });
    s
}

#[test]
fn manifest_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let m = Manifest::new(vec![scene_sample("a"), scene_sample("b")]);
    m.save(&path).unwrap();
    assert_eq!(Manifest::load(&path).unwrap(), m);
}

#[test]
fn manifest_rejects_duplicates_and_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    Manifest::new(vec![scene_sample("a"), scene_sample("a")])
        .save(&path)
        .unwrap();
    assert!(matches!(Manifest::load(&path), Err(CliError::ManifestParse { .. })));

    std::fs::write(
        &path,
        r#"{"schema_version": 1, "samples": [{"id": "a", "colour": "red"}]}"#,
    )
    .unwrap();
    assert!(matches!(Manifest::load(&path), Err(CliError::ManifestParse { .. })));

    std::fs::write(&path, r#"{"schema_version": 9, "samples": []}"#).unwrap();
    assert!(matches!(Manifest::load(&path), Err(CliError::ManifestParse { .. })));
}

#[test]
fn manifest_paths_resolve_against_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("sub")).unwrap();
    std::fs::write(dir.path().join("sub/gt.pfm"), b"").unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(
        &path,
        r#"{"schema_version": 1, "samples": [{"id": "a", "gt": "sub/gt.pfm"}]}"#,
    )
    .unwrap();
    let m = Manifest::load(&path).unwrap();
    assert_eq!(
        m.samples[0].gt.as_deref(),
        Some(dir.path().join("sub/gt.pfm").as_path())
    );
}

#[test]
fn failures_are_recorded_per_sample_unless_strict() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    // The second sample has nothing to evaluate.
    Manifest::new(vec![scene_sample("scene"), Sample::new("empty")])
        .save(&path)
        .unwrap();
    let report = run(Command::Calib, &options(Some(&path), None)).unwrap();
    assert_eq!(report.summary.succeeded, 1);
    assert_eq!(report.samples[1].status, Status::Failed);
    assert!(report.samples[1].error.is_some());

    let mut strict = options(Some(&path), None);
    strict.strict = true;
    assert!(matches!(
        run(Command::Calib, &strict),
        Err(CliError::MissingInput { .. })
    ));
}

#[test]
fn calib_on_synthetic_scene_recovers_focal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    Manifest::new(vec![scene_sample("a")]).save(&path).unwrap();
    let report = run(Command::Calib, &options(Some(&path), None)).unwrap();
    let Some(SampleResult::Calib { relative_error, .. }) = &report.samples[0].result else {
        panic!("unexpected result {:?}", report.samples[0]);
    };
    assert!(relative_error.unwrap() < 1e-6);
}

#[test]
fn artifact_commands_need_an_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    Manifest::new(vec![scene_sample("a")]).save(&path).unwrap();
    assert!(matches!(
        run(Command::Project, &options(Some(&path), None)),
        Err(CliError::Config(_))
    ));
}

#[test]
fn project_writes_depth_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let out = dir.path().join("out");
    Manifest::new(vec![scene_sample("a")]).save(&path).unwrap();
    let report = run(Command::Project, &options(Some(&path), Some(&out))).unwrap();
    assert!(out.join("a/depth.pfm").exists());
    assert!(out.join("report.json").exists());
    let Some(SampleResult::Project {
        mask_matches_gt,
        max_abs_error_vs_gt,
        ..
    }) = &report.samples[0].result
    else {
        panic!("unexpected result");
    };
    assert_eq!(*mask_matches_gt, Some(true));
    assert!(max_abs_error_vs_gt.unwrap() < 1e-6);
}

#[test]
fn gradcheck_runs_without_manifest() {
    let mut opts = options(None, None);
    opts.config.gradcheck.width = 12;
    opts.config.gradcheck.height = 10;
    let report = run(Command::Gradcheck, &opts).unwrap();
    assert_eq!(report.summary.samples, 4);
    let Some(Aggregate::Gradcheck { max_rel_error, .. }) = &report.aggregate else {
        panic!("missing aggregate");
    };
    assert!(max_rel_error.values().all(|&e| e < 1e-4), "{max_rel_error:?}");
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let mut opts = options(None, None);
    opts.config.gradcheck.losses = vec!["nope".into()];
    assert!(run(Command::Gradcheck, &opts).is_err());
    let mut opts = options(None, None);
    opts.config.prompt_band = (10, 5);
    assert!(run(Command::Gradcheck, &opts).is_err());
}

#[test]
fn config_file_fills_missing_fields_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"neighbors": 7}"#).unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.neighbors, 7);
    assert_eq!(cfg.prompt_band, RunConfig::default().prompt_band);
    std::fs::write(&path, r#"{"neighbours": 7}"#).unwrap();
    assert!(RunConfig::load(&path).is_err());
}
