use std::path::Path;
use std::process::{Command, Output};

use beamgen::io::MatrixFile;

const FAST: [&str; 6] = [
    "--set",
    "n_calibration=40",
    "--set",
    "n_normalization=100",
    "--set",
    "n_eval=1",
];

fn beamgen(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamgen"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("BEAMGEN_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn robust_design_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = beamgen(dir.path(), &["design", "--kind", "robust"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let residual: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("orthonormality"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(residual <= 1e-10);
    assert!(text.contains("epsilon_h"));
    assert!(text.contains("alpha_clamped"));

    let path = dir.path().join("robust.txt");
    let file = MatrixFile::read(&path).unwrap();
    assert_eq!((file.values.nrows(), file.values.ncols()), (8, 16));
    let again = MatrixFile::parse(&file.to_text()).unwrap();
    assert_eq!(again, file);
    assert_eq!(file.to_text(), std::fs::read_to_string(&path).unwrap());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn adaptive_design_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = beamgen(dir.path(), &["design", "--kind", "adaptive"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("concrete channel"));
    assert!(!dir.path().join("adaptive.txt").exists());
}

#[test]
fn single_drop_simulation_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = beamgen(dir.path(), &[&FAST[..], &["simulate"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 5 designs x 5 sweep values x 2 links
    assert_eq!(csv_rows(&dir.path().join("results.csv")), 50);
    let table = stdout(&o);
    let line = table.lines().find(|l| l.starts_with("robust")).unwrap();
    let avail = line.split_whitespace().nth(5).unwrap();
    assert_eq!(avail.split('.').nth(1).unwrap().len(), 1);
    let thr = line.split_whitespace().nth(4).unwrap();
    assert_eq!(thr.split('.').nth(1).unwrap().len(), 3);
}

#[test]
fn design_and_direction_filters() {
    let dir = tempfile::tempdir().unwrap();
    let args = [&FAST[..], &["--designs", "robust,reference", "--direction", "forward", "simulate"]].concat();
    let o = beamgen(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(text.lines().count() - 1, 10);
    assert!(text.lines().skip(1).all(|l| l.contains(",forward,")));
}

#[test]
fn same_seed_gives_identical_csvs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [&FAST[..], &["--set", "n_eval=3", "--seed", "11"]].concat();
    for sub in ["simulate", "sweep"] {
        let full = [&args[..], &[sub]].concat();
        assert!(beamgen(a.path(), &full).status.success());
        assert!(beamgen(b.path(), &full).status.success());
    }
    for file in ["results.csv", "alpha_sweep.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file} differs");
    }
    let c = tempfile::tempdir().unwrap();
    let other = [&FAST[..], &["--set", "n_eval=3", "--seed", "12", "simulate"]].concat();
    assert!(beamgen(c.path(), &other).status.success());
    assert_ne!(
        std::fs::read(a.path().join("results.csv")).unwrap(),
        std::fs::read(c.path().join("results.csv")).unwrap()
    );
}

#[test]
fn export_row_count_matches_grid() {
    let dir = tempfile::tempdir().unwrap();
    let args = [&FAST[..], &["--designs", "reference,robust,onground", "simulate"]].concat();
    assert!(beamgen(dir.path(), &args).status.success());
    let o = beamgen(dir.path(), &["export"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // designs x sweep values x directions
    assert_eq!(csv_rows(&dir.path().join("plot.csv")), 3 * 5 * 2);
    let header = std::fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    assert!(header.starts_with("direction,design,x_axis,x_value,throughput,availability_pct"));
}

#[test]
fn validate_passes_and_fault_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = beamgen(dir.path(), &["validate"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("validation.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    let props = report["properties"].as_array().unwrap();
    assert!(props.len() >= 10);
    assert!(props.iter().all(|p| !p["anchor"].as_str().unwrap().is_empty()));

    let o = beamgen(dir.path(), &["validate", "--fault-scale", "1.01"]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("validation.json")).unwrap()).unwrap();
    let orth = report["properties"].as_array().unwrap().iter().find(|p| p["name"] == "orthonormality").unwrap();
    assert_eq!(orth["passed"], false);
}

#[test]
fn unknown_override_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = beamgen(dir.path(), &["--set", "no_such_key=1", "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
    assert!(!dir.path().join("results.csv").exists());
}

#[test]
fn outputs_stay_in_output_dir() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_beamgen"))
        .current_dir(root.path())
        .env("BEAMGEN_OUT", &out)
        .args(FAST)
        .arg("simulate")
        .output()
        .unwrap();
    assert!(o.status.success());
    let mut top: Vec<String> =
        std::fs::read_dir(root.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    top.sort();
    assert_eq!(top, ["run"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["scenario_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn scenario_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("s.toml");
    std::fs::write(&scen, "seed = 5\n[sim]\nbeta_values = [1.0, 2.0]\n").unwrap();
    let args = [&FAST[..], &["--scenario", scen.to_str().unwrap(), "--direction", "return", "simulate"]].concat();
    let o = beamgen(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&dir.path().join("results.csv")), 5 * 2);
    std::fs::write(&scen, "[sim]\nbogus = 1\n").unwrap();
    assert_eq!(beamgen(dir.path(), &["--scenario", scen.to_str().unwrap(), "simulate"]).status.code(), Some(2));
}

#[test]
fn shipped_scenarios_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let desk = beamgen::scenario::Scenario::load(&root.join("desk.toml")).unwrap();
    assert_eq!(desk.hash(), beamgen::scenario::Scenario::default().hash());
    let large = beamgen::scenario::Scenario::load(&root.join("large.toml")).unwrap();
    assert_eq!((large.geometry.num_feeds, large.geometry.num_beams), (155, 100));
    assert_eq!(large.sim.p_fl_values, [25.0, 50.0, 100.0, 200.0, 400.0]);
    large.geometry.build().unwrap();
}
