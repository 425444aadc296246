use std::path::Path;

use fairdiff_core::data::{Column, ColumnData, Dataset, TableSchema};
use fairdiff_core::pipeline::{self, Artifacts, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn write_inputs(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 300;
    let (mut x, mut s, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let si: u32 = rng.gen_range(0..3);
        let yi = rng.gen_bool(0.3 + 0.2 * f64::from(si));
        x.push(f64::from(u8::from(yi)) + rng.gen_range(-1.0..1.0));
        s.push(si);
        y.push(u32::from(yi));
    }
    let schema = TableSchema::new(
        vec![
            Column::numerical("x"),
            Column::categorical("group", ["a", "b", "c"]),
            Column::categorical("y", ["no", "yes"]),
        ],
        "y",
        vec!["group".into()],
    )
    .unwrap();
    let ds = Dataset::new(
        schema,
        vec![ColumnData::Numerical(x), ColumnData::Categorical(s), ColumnData::Categorical(y)],
    )
    .unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf, &[]).unwrap();
    std::fs::write(dir.join("data.csv"), buf).unwrap();
    let schema = json!({
        "columns": [
            {"name": "x", "kind": "numerical"},
            {"name": "group", "kind": "categorical", "values": ["a", "b", "c"]},
            {"name": "y", "kind": "categorical", "values": ["no", "yes"]}
        ],
        "target": "y",
        "sensitive": ["group"]
    });
    std::fs::write(dir.join("schema.json"), schema.to_string()).unwrap();
}

fn config(dir: &Path, overrides: &[(&str, &str)]) -> RunConfig {
    let base = json!({
        "paths": {"data": "data.csv", "schema": "schema.json", "out": "run"},
        "schedule": {"timesteps": 10},
        "denoiser": {"hidden": 16, "epochs": 2, "batch_size": 64},
        "sweep": {"levels": [0, 10], "seeds": [0]}
    });
    let o: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    RunConfig::from_value(base, &o, dir).unwrap()
}

#[test]
fn stages_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    let cfg = config(tmp.path(), &[]);
    let art = Artifacts::new(&cfg.paths.out);

    let manifest = pipeline::prepare(&cfg).unwrap();
    assert_eq!(manifest.source_rows, 300);
    assert_eq!(pipeline::load_manifest(&cfg).unwrap().manifest_id, manifest.manifest_id);

    let ckpt = pipeline::train_model(&cfg).unwrap();
    assert_eq!(ckpt.trained_epochs, 2);
    let curve = std::fs::read_to_string(art.loss_curve()).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let synth = pipeline::sample(&cfg).unwrap();
    let text = std::fs::read_to_string(&synth).unwrap();
    // header plus one row per training row
    assert_eq!(text.lines().count(), 151);
    assert!(text.lines().next().unwrap().contains("cond_y"));

    let report = pipeline::evaluate(&cfg, None).unwrap();
    assert_eq!(report.metadata.level, Some(10));
    assert!((0.0..=1.0).contains(&report.dpr));
    assert!(art.report().is_file());

    let rows = pipeline::sweep(&cfg).unwrap();
    assert_eq!(rows.iter().map(|r| r.level).collect::<Vec<_>>(), vec![0, 10]);
    assert!(art.sweep_svg().is_file());
}

#[test]
fn stale_artifacts_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    let cfg = config(tmp.path(), &[]);
    pipeline::prepare(&cfg).unwrap();
    pipeline::train_model(&cfg).unwrap();

    // a different denoiser invalidates the checkpoint but not the manifest
    let retuned = config(tmp.path(), &[("denoiser.hidden", "8")]);
    assert!(pipeline::load_manifest(&retuned).is_ok());
    assert!(pipeline::sample(&retuned).is_err());

    // a different seed changes the split
    let reseeded = config(tmp.path(), &[("seed", "9")]);
    assert!(pipeline::load_manifest(&reseeded).is_err());

    // guidance settings only affect sampling
    let guided = config(tmp.path(), &[("guidance.w_s", "2")]);
    assert!(pipeline::sample(&guided).is_ok());
}

#[test]
fn missing_inputs_fail_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &[]);
    let err = pipeline::prepare(&cfg).unwrap_err();
    assert_eq!(err.kind(), "config");
    assert!(!cfg.paths.out.exists());
}
