//! Whole-pipeline behaviour through the public configuration interface.

use std::path::PathBuf;

use roa_core::pipeline::{run, RunConfig, RunOptions, RunReport, StageStatus, DATASET_FILE, NET_FILE, REPORT_FILE};

fn repo_config(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::from_path(&path).unwrap()
}

fn opts(dir: &std::path::Path, jobs: usize) -> RunOptions {
    RunOptions {
        jobs: Some(jobs),
        resume: false,
        out: Some(dir.to_path_buf()),
    }
}

/// A short neural run on a system whose region of attraction is the plane.
const SMALL_NEURAL: &str = r#"{
    "system": {"name": "coupled", "f": ["-x1 + 0.5*x2", "-x2 - 0.2*x1^3"], "domain": [[-1, 1], [-1, 1]]},
    "stages": {
        "local": {}, "reach": {},
        "data": {"n_samples": 200},
        "train": {"num_colloc_pts": 4000, "max_epoch": 6, "width": 12, "alpha": 0.5},
        "neural_verify": {"target": "c2_p", "tol": 0.01}
    },
    "seed": 3,
    "volume": {"n_mc": 10000, "seed": 1}
}"#;

#[test]
fn pendulum_config_is_globally_stable() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&repo_config("pendulum.json"), &opts(dir.path(), 1)).unwrap();
    assert_eq!(r.levels.globally_stable, Some(true));
    assert!(r.halted_at.is_none());
}

#[test]
fn missing_field_is_reported_by_path() {
    let e = RunConfig::from_json(r#"{"system": {"name": "s", "domain": [[-1, 1]]}}"#).unwrap_err();
    assert_eq!(e.path(), Some("system.f"));
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg = repo_config("ten_dim_10x1_r4.json");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let one = run(&cfg, &opts(a.path(), 1)).unwrap();
    let two = run(&cfg, &opts(b.path(), 3)).unwrap();
    let strip = |r: &RunReport| {
        let c = r.stages.compositional.as_ref().unwrap().result.clone().unwrap();
        let q = c.quadratic.unwrap();
        let l = c.local.unwrap();
        (l.level, l.boxes_processed, q.level, q.boxes_processed)
    };
    assert_eq!(strip(&one), strip(&two));
    assert_eq!(one.config_hash, two.config_hash);
}

#[test]
fn embedded_config_reproduces_levels() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(&repo_config("ten_dim_monolithic.json"), &opts(dir.path(), 1)).unwrap();
    let saved = RunReport::load(&dir.path().join(REPORT_FILE)).unwrap();
    let again = tempfile::tempdir().unwrap();
    let second = run(&saved.config, &opts(again.path(), 1)).unwrap();
    assert_eq!(first.levels, second.levels);
    assert!((first.levels.c1_p.unwrap() - 0.5).abs() < 1e-4);
}

#[test]
fn invalid_stage_order_is_a_config_error() {
    let err = RunConfig::from_json(
        r#"{"system": {"name": "s", "f": ["-x1"], "domain": [[-1, 1]]}, "stages": {"reach": {}}}"#,
    )
    .unwrap_err();
    assert_eq!(err.path(), Some("stages.reach"));
}

#[test]
fn small_neural_run_populates_levels_and_nests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json(SMALL_NEURAL).unwrap();
    let r = run(&cfg, &opts(dir.path(), 1)).unwrap();
    assert!(r.halted_at.is_none(), "{:?}", r.first_failure());
    let l = &r.levels;
    let (c1p, c2p, c1v, c2v) = (l.c1_p.unwrap(), l.c2_p.unwrap(), l.c1_v.unwrap(), l.c2_v.unwrap());
    assert!(c1p <= c2p && c1v <= c2v);
    assert!(r.nesting.as_ref().unwrap().holds);
    for f in [DATASET_FILE, NET_FILE, REPORT_FILE] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let v = r.volume.as_ref().unwrap();
    let [neural_doa, _] = v.neural.unwrap();
    assert!(neural_doa.fraction > 0.0 && neural_doa.region_outside_doa == 0);

    // Resuming skips every stage and keeps the levels.
    let again = run(
        &cfg,
        &RunOptions {
            resume: true,
            ..opts(dir.path(), 1)
        },
    )
    .unwrap();
    assert_eq!(again.levels, r.levels);
    assert_eq!(again.stages.train.unwrap().status, StageStatus::Resumed);
    assert_eq!(again.stages.neural_verify.unwrap().status, StageStatus::Resumed);
}
