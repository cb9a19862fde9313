use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::Ordering;

use twotone::cli::{RunConfig, RunContext, Task};

fn twotone(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_twotone"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("TWOTONE_OUT_DIR")
        .output()
        .expect("binary runs");
    out.status.code().expect("exited normally")
}

/// Data rows of a CSV artifact, skipping the `#` header.
fn rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            header
                .iter()
                .zip(rec.unwrap().iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn contour_at_unit_cooperativity_is_two_points() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(twotone(tmp.path(), &["contour", "--C", "1"]), 0);
    let mut pts: Vec<(f64, f64)> = rows(&tmp.path().join("contour.csv"))
        .iter()
        .map(|r| (num(r, "delta_m_norm"), num(r, "delta_c_norm")))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert_eq!(pts, vec![(-1.0, -1.0), (1.0, 1.0)]);
}

#[test]
fn map_shows_the_corridor_waist() {
    let tmp = tempfile::tempdir().unwrap();
    let code = twotone(
        tmp.path(),
        &[
            "map",
            "--C",
            "14",
            "--dm-range",
            "-18:18",
            "--dc-range",
            "-0.3:0.3",
            "--dm-n",
            "361",
            "--dc-n",
            "301",
        ],
    );
    assert_eq!(code, 0);
    let cells = rows(&tmp.path().join("stability_map.csv"));
    assert_eq!(cells.len(), 361 * 301);
    let unstable_min = cells
        .iter()
        .filter(|r| !r["class"].starts_with("stable"))
        .map(|r| num(r, "delta_c_norm").abs())
        .fold(f64::INFINITY, f64::min);
    let stable_max = cells
        .iter()
        .filter(|r| num(r, "delta_c_norm").abs() < unstable_min - 1e-9)
        .all(|r| r["class"].starts_with("stable"));
    assert!(stable_max);
    let waist = 14.0 - (14.0f64 * 14.0 - 1.0).sqrt();
    // grid step in Δ̃c is 0.002
    assert!((unstable_min - waist).abs() < 0.002 + 1e-9, "{unstable_min} vs {waist}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(
        twotone(d, &["spectrum", "--C", "2", "--dc-norm", "0.5", "--dm-norm", "1"]),
        4
    );
    assert_eq!(
        twotone(d, &["spectrum", "--C", "2", "--dc-norm", "-0.5", "--dm-norm", "1"]),
        0
    );
    assert_eq!(twotone(d, &["map", "--dm-range", "3:1"]), 1);
    assert_eq!(twotone(d, &["map", "--kappa=-1"]), 1);
    assert_eq!(twotone(d, &["bogus"]), 1);

    let bad = d.join("bad.toml");
    fs::write(&bad, "[system]\nkapa = 1.0\n").unwrap();
    assert_eq!(twotone(d, &["map", "--config", bad.to_str().unwrap()]), 1);
}

#[test]
fn interrupted_map_is_partial_and_marked() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = RunConfig {
        task: Some(Task::Map),
        ..RunConfig::default()
    };
    config.output.dir = Some(tmp.path().to_path_buf());
    let mut ctx = RunContext::new(config);
    ctx.stop.store(true, Ordering::Relaxed);
    twotone::cli::run(&mut ctx).unwrap();
    assert_eq!(ctx.outcome.exit_code(), 3);
    let text = fs::read_to_string(tmp.path().join("stability_map.csv")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# truncated")), "{text}");
}

#[test]
fn resolved_config_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let code = twotone(
        &a,
        &[
            "spectrum",
            "--C",
            "3",
            "--dc-norm",
            "-0.4",
            "--dm-norm",
            "2.5",
            "--n-th",
            "4",
            "--n-ba",
            "0.5",
            "--format",
            "json",
        ],
    );
    assert_eq!(code, 0);
    let resolved = a.join("resolved_config.toml");
    assert_eq!(twotone(&b, &["spectrum", "--config", resolved.to_str().unwrap()]), 0);
    assert_eq!(dir_contents(&a), dir_contents(&b));

    // the embedded copy parses back to the same configuration
    let embedded: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("spectrum.json")).unwrap()).unwrap();
    let from_artifact: RunConfig = serde_json::from_value(embedded["config"].clone()).unwrap();
    let from_file = RunConfig::load(&resolved).unwrap();
    assert_eq!(from_artifact, from_file);
}

#[test]
fn reproduce_targets_are_bitwise_stable() {
    let tmp = tempfile::tempdir().unwrap();
    for target in ["fig3", "fig5"] {
        let (a, b) = (
            tmp.path().join(format!("{target}a")),
            tmp.path().join(format!("{target}b")),
        );
        assert_eq!(twotone(&a, &["reproduce", "--target", target]), 0);
        assert_eq!(twotone(&b, &["reproduce", "--target", target]), 0);
        let (x, y) = (dir_contents(&a), dir_contents(&b));
        assert!(x.len() > 1);
        assert_eq!(x, y, "{target}");
    }

    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("fig5a/fig5_summary.json")).unwrap()).unwrap();
    let map = &summary["map"];
    assert!(map["saddle"].as_u64().unwrap() > 0, "{map}");
    assert!(map["unstable_spiral"].as_u64().unwrap() > 0, "{map}");
    assert_eq!(map["unstable_node"], 0);
    assert_eq!(map["failed"], 0);
}

#[test]
fn simulate_is_seed_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--C",
        "1.5",
        "--gamma-m",
        "0.05",
        "--dc-norm",
        "0.3",
        "--dm-norm=-3",
        "--n-th",
        "2",
        "--t-end",
        "200",
        "--ensemble",
        "2",
        "--scheme",
        "exact",
        "--dt",
        "0.05",
        "--seed",
        "9",
    ];
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_eq!(twotone(&a, &args), 0);
    assert_eq!(twotone(&b, &args), 0);
    let x = dir_contents(&a);
    assert!(
        x.contains_key("trajectory_9.csv") && x.contains_key("trajectory_10.csv"),
        "{:?}",
        x.keys()
    );
    assert_eq!(x, dir_contents(&b));

    // a member depends only on its own seed, not on the rest of the ensemble
    let mut reseeded = args.to_vec();
    *reseeded.last_mut().unwrap() = "10";
    assert_eq!(twotone(&c, &reseeded), 0);
    let (shared, other) = (rows(&a.join("trajectory_10.csv")), rows(&c.join("trajectory_10.csv")));
    assert_eq!(shared, other);
    assert_ne!(shared, rows(&a.join("trajectory_9.csv")));
}
