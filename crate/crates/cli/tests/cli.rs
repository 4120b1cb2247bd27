use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hotspot");

fn hotspot(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hotspot(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SCENARIO: &str = r#"{
  "grid": {"origin_x": 1000.0, "origin_y": 2000.0, "cell_size": 400.0, "n_rows": 24, "n_cols": 30},
  "baseline_intensity": 1.0,
  "blobs": [{"row": 8, "col": 10, "radius": 2, "amplitude": 8.0},
            {"row": 18, "col": 24, "radius": 1, "amplitude": 5.0}],
  "coupling": 0.4,
  "seed": 7,
  "y_blobs": [{"row": 8, "col": 10, "radius": 3, "amplitude": 4.0},
              {"row": 4, "col": 26, "radius": 2, "amplitude": 6.0}],
  "poi_layers": [{"kind": "signals", "baseline": 0.5, "affinity": 0.3},
                 {"kind": "schools", "baseline": 0.2}]
}"#;

fn synth(dir: &Path) {
    std::fs::write(dir.join("scenario.json"), SCENARIO).unwrap();
    ok(dir, &["synth", "--scenario", "scenario.json", "--output-dir", "data"]);
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let data = tmp.path().join("data");
    let stdout = ok(&data, &["pipeline", "--config", "config.json", "--permutations", "199"]);
    assert!(stdout.contains("crash_count: cells=720"));
    assert!(stdout.contains("mann-whitney: HH vs LH"));

    let out = data.join("out");
    for f in [
        "grid.json",
        "counts.csv",
        "grid_counts.geojson",
        "weights.csv",
        "global_stats.csv",
        "gi_star.csv",
        "bivariate_lisa.csv",
        "cells.csv",
        "hotspots.geojson",
        "lisa.geojson",
        "lisa_groups.csv",
        "mann_whitney.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let groups = std::fs::read_to_string(out.join("lisa_groups.csv")).unwrap();
    let total: usize = groups
        .lines()
        .skip(1)
        .filter(|l| !l.contains(",NA") && !l.contains("Not Applicable"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 720);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["parameters"]["permutations"], 199);
    assert_eq!(manifest["parameters"]["seed"], 7);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["mann_whitney"]["tests"], 2);

    let geo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("lisa.geojson")).unwrap()).unwrap();
    assert_eq!(geo["type"], "FeatureCollection");
    let features = geo["features"].as_array().unwrap();
    assert_eq!(features.len(), 720);
    assert_eq!(features[0]["geometry"]["coordinates"][0][0][0], 1000.0);
}

#[test]
fn stages_compose_to_pipeline_and_runs_repeat() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let data = tmp.path().join("data");
    let common = ["--config", "config.json", "--permutations", "99", "--seed", "5"];
    let with_out = |dir: &str| {
        let mut v: Vec<String> = common.iter().map(|s| s.to_string()).collect();
        v.extend(["--output-dir".to_string(), dir.to_string()]);
        v
    };

    let args = with_out("full");
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&data, &[&["pipeline"][..], &args].concat());
    let again = with_out("again");
    let again: Vec<&str> = again.iter().map(String::as_str).collect();
    ok(&data, &[&["--threads", "3", "pipeline"][..], &again].concat());

    let staged = with_out("staged");
    let staged: Vec<&str> = staged.iter().map(String::as_str).collect();
    for stage in ["grid", "weights", "global", "local", "bivariate", "classify", "characterize"] {
        ok(&data, &[&[stage][..], &staged].concat());
    }

    let full = read_dir_sorted(&data.join("full"));
    assert_eq!(full, read_dir_sorted(&data.join("again")));
    let without_manifest: Vec<_> = full.into_iter().filter(|(n, _)| n != "manifest.json").collect();
    assert_eq!(without_manifest, read_dir_sorted(&data.join("staged")));
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("c.csv"), "x,y\n1,1\n2,oops\n").unwrap();
    std::fs::write(dir.join("h.csv"), "x,y\n1,1\n").unwrap();

    let no_bbox = hotspot(dir, &["pipeline", "--crashes", "c.csv", "--highg", "h.csv"]);
    assert_eq!(no_bbox.status.code(), Some(2));

    let bad = hotspot(
        dir,
        &["grid", "--crashes", "c.csv", "--highg", "h.csv", "--bbox", "0,0,800,800"],
    );
    assert_eq!(bad.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("c.csv:3"), "{msg}");

    let missing = hotspot(
        dir,
        &["grid", "--crashes", "nope.csv", "--highg", "h.csv", "--bbox", "0,0,800,800"],
    );
    assert_eq!(missing.status.code(), Some(2));

    let bad_flag = hotspot(dir, &["pipeline", "--weights", "hexagon"]);
    assert_eq!(bad_flag.status.code(), Some(2));
}

#[test]
fn constant_field_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("c.csv"), "x,y\n").unwrap();
    std::fs::write(dir.join("h.csv"), "x,y\n100,100\n500,100\n").unwrap();
    let out = hotspot(
        dir,
        &[
            "pipeline", "--crashes", "c.csv", "--highg", "h.csv", "--bbox", "0,0,1200,1200",
            "--permutations", "9",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("crash_count"));
}
