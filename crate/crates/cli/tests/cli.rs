use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use conevac::asymptotics::{fit_power_model, radial_scan, FitOptions, FitResult, RadialGrid};
use conevac::kernels::{dowker_kernel, JetSpec};
use conevac::stress::stress_components_in;
use conevac::{Component, Coupling, Geometry, PointPair, Precision, SplitConfig};

fn conevac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conevac"))
        .args(args)
        .env_remove("CONEVAC_PRECISION")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = conevac(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32) -> String {
    let out = conevac(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn value_line(out: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix("value = "))
        .expect("value line")
        .parse()
        .unwrap()
}

/// Data rows as numbers, header lines skipped.
fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('r'))
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn kernel_worked_values() {
    let point = ["--r", "1", "--rp", "1", "--dtheta", "0", "--dz", "1"];
    let flat = ok(&[&["kernel", "--theta1", "6.283185307179586"], &point[..]].concat());
    assert_eq!(flat, "value = 2.5330295910584444e-2\n");

    let half = value_line(&ok(&[&["kernel", "--theta1", "3.141592653589793"], &point[..]].concat()));
    assert!((half - 3.03964e-2).abs() < 5e-7, "{half}");

    let dowker = value_line(&ok(&[&["kernel", "--dowker"], &point[..]].concat()));
    let want = dowker_kernel(&PointPair::axial(1.0, 1.0, 0.0, 1.0), &JetSpec::value_only())
        .unwrap()
        .derivative(&[]);
    assert_eq!(dowker, want);
}

#[test]
fn kernel_prints_requested_derivatives() {
    let out = ok(&[
        "kernel", "--cone-N", "2", "--r", "1", "--rp", "1", "--dz", "1", "--order", "2",
    ]);
    // value, 6 first and 21 second derivatives
    assert_eq!(out.lines().count(), 28);
    assert!(out.lines().any(|l| l.starts_with("d_r^1 d_rp^1 = ")));
    assert!(out.lines().any(|l| l.starts_with("d_dz^2 = ")));
}

#[test]
fn flat_scan_is_zero() {
    let out = ok(&["scan", "--theta1-over-pi", "2", "--beta", "-0.25,0,1"]);
    let rows = rows(&out);
    assert_eq!(rows.len(), 3 * 21);
    assert!(rows.iter().all(|r| r[2..] == [0.0; 4]));
}

#[test]
fn scaled_scan_is_a_sixteenth() {
    let base = ok(&[
        "scan", "--theta1", "2.5", "--r-max", "0.1", "--cutoff", "1", "--q", "0.5", "--count", "8",
    ]);
    let scaled = ok(&[
        "scan", "--theta1", "2.5", "--r-max", "0.2", "--cutoff", "2", "--q", "0.5", "--count", "8",
    ]);
    for (a, b) in rows(&base).iter().zip(rows(&scaled)) {
        assert_eq!(b[0], 2.0 * a[0]);
        for k in 2..6 {
            assert_eq!(b[k], a[k] / 16.0);
        }
    }
}

#[test]
fn divergent_cone_grows_towards_the_axis() {
    let out = ok(&["scan", "--theta1-over-pi", "4", "--components", "trr"]);
    let trr: Vec<f64> = rows(&out).iter().map(|r| r[2].abs()).collect();
    assert!(trr.windows(2).all(|w| w[1] > w[0]), "{trr:?}");
}

#[test]
fn csv_and_json_parse_back_losslessly() {
    let geom = Geometry::cone(1.5 * PI).unwrap();
    let split = SplitConfig::temporal(0.5).unwrap();
    let args = [
        "scan",
        "--theta1-over-pi",
        "1.5",
        "--beta",
        "0,-0.25",
        "--split-axis",
        "temporal",
        "--cutoff",
        "0.5",
    ];
    let csv = ok(&args);
    let json: serde_json::Value = serde_json::from_str(&ok(&[&args[..], &["--format", "json"]].concat())).unwrap();
    let json_rows = json["rows"].as_array().unwrap();
    let csv_rows = rows(&csv);
    assert_eq!(csv_rows.len(), json_rows.len());
    for (row, obj) in csv_rows.iter().zip(json_rows) {
        let p = stress_components_in(Precision::Double, &geom, Coupling::new(row[1]), row[0], None, &split).unwrap();
        assert_eq!(row[2..], p.values());
        for (k, c) in Component::ALL.iter().enumerate() {
            assert_eq!(obj[c.name()].as_f64().unwrap(), p.values()[k]);
        }
    }
    assert!(csv.contains("# theta1 = 4.7123889803846897e0\n"));
    assert!(csv.contains("# split_axis = temporal\n"));
    assert!(csv.contains("# precision = double\n"));
    assert!(csv.contains(&format!("# version = {}\n", conevac::VERSION)));
}

#[test]
fn fit_of_a_scan_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let file = path(dir.path(), "scan.csv");
    ok(&[
        "scan",
        "--theta1-over-pi",
        "1.5",
        "--precision",
        "extended",
        "-o",
        &file,
    ]);
    let printed: FitResult = serde_json::from_str(&ok(&["fit", &file, "--json"])).unwrap();

    let split = SplitConfig::axial(1.0).unwrap();
    let grid = RadialGrid::covering(1e-3, 1e-1, 10).unwrap();
    let geom = Geometry::cone(1.5 * PI).unwrap();
    let curve = radial_scan(
        &geom,
        Coupling::new(0.0),
        Component::Trr,
        &split,
        &grid,
        Precision::Extended,
    )
    .unwrap();
    let direct = fit_power_model(&curve, &FitOptions::default()).unwrap();
    assert_eq!(printed, direct);
    assert!((printed.gamma / (2.0 / 3.0) - 1.0).abs() < 0.02);
}

#[test]
fn fit_of_json_scan_agrees_with_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "scan.csv");
    let json = path(dir.path(), "scan.json");
    ok(&["scan", "--theta1-over-pi", "4", "-o", &csv]);
    ok(&["scan", "--theta1-over-pi", "4", "--format", "json", "-o", &json]);
    let a = ok(&["fit", &csv]);
    assert_eq!(a, ok(&["fit", &json]));
    let gamma: f64 = a
        .lines()
        .find_map(|l| l.strip_prefix("gamma = "))
        .unwrap()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((gamma + 1.0).abs() < 0.02, "{gamma}");
}

#[test]
fn fit_recovers_a_synthetic_law() {
    let dir = tempfile::tempdir().unwrap();
    let file = path(dir.path(), "synthetic.csv");
    let mut text = String::from("r,beta,trr\n");
    for r in RadialGrid::covering(1e-3, 1e-1, 10).unwrap().radii() {
        text += &format!("{r:.16e},0,{:.16e}\n", 5.0 * r.powf(0.3) + 7.0);
    }
    std::fs::write(&file, text).unwrap();
    for extra in [&[][..], &["--no-r2"][..]] {
        let fit: FitResult = serde_json::from_str(&ok(&[&["fit", &file, "--json"], extra].concat())).unwrap();
        assert!((fit.gamma - 0.3).abs() <= 1e-6, "{extra:?}: {}", fit.gamma);
        assert!((fit.amplitude - 5.0).abs() <= 1e-6, "{extra:?}: {}", fit.amplitude);
        assert!(
            (fit.background.constant - 7.0).abs() <= 1e-6,
            "{extra:?}: {}",
            fit.background.constant
        );
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for format in ["csv", "json"] {
        let a = path(dir.path(), &format!("a.{format}"));
        let b = path(dir.path(), &format!("b.{format}"));
        for out in [&a, &b] {
            ok(&[
                "scan",
                "--wedge-alpha",
                "4.7",
                "--theta",
                "1.2",
                "--beta",
                "0,1",
                "--format",
                format,
                "-o",
                out,
            ]);
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = path(dir.path(), "scan.json");
    std::fs::write(
        &file,
        r#"{"geometry": {"theta1_over_pi": 1.5}, "beta": [0, 1], "r_max": 0.1, "q": 0.5, "count": 5, "split_axis": "temporal"}"#,
    )
    .unwrap();
    let from_file = ok(&["scan", "--config", &file]);
    let from_flags = ok(&[
        "scan",
        "--theta1-over-pi",
        "1.5",
        "--beta",
        "0,1",
        "--r-max",
        "0.1",
        "--q",
        "0.5",
        "--count",
        "5",
        "--split-axis",
        "temporal",
    ]);
    assert_eq!(from_file, from_flags);
    // flags override the file
    let overridden = ok(&["scan", "--config", &file, "--split-axis", "axial"]);
    assert!(overridden.contains("# split_axis = axial\n"));

    std::fs::write(&file, r#"{"geometry": {"theta1": 1.0}, "betta": [0]}"#).unwrap();
    fails(&["scan", "--config", &file], 2);
}

#[test]
fn environment_selects_precision() {
    let out = Command::new(env!("CARGO_BIN_EXE_conevac"))
        .args(["scan", "--theta1", "2", "--count", "2", "--q", "0.5"])
        .env("CONEVAC_PRECISION", "extended")
        .output()
        .unwrap();
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("# precision = extended\n"));
}

#[test]
fn beta_roots_at_three_halves_pi() {
    let out = ok(&["beta-root", "--theta1-over-pi", "1.5", "--json"]);
    let roots: serde_json::Value = serde_json::from_str(&out).unwrap();
    for root in roots.as_array().unwrap() {
        let want = match root["component"].as_str().unwrap() {
            "trr" | "tperp" => -0.25,
            _ => 0.0,
        };
        let beta = root["beta"].as_f64().unwrap();
        assert!((beta - want).abs() <= 1e-3, "{root}");
    }
}

#[test]
fn verify_quick_passes() {
    let out = ok(&["verify", "quick", "--json"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["passed"].as_bool().unwrap()));
}

#[test]
fn exit_codes() {
    fails(&["scan"], 2);
    fails(&["scan", "--theta1", "-1"], 2);
    fails(&["scan", "--wedge-alpha", "1", "--theta", "2"], 2);
    fails(&["scan", "--theta1", "1", "--count", "1", "--q", "0.5"], 2);
    fails(&["kernel", "--dowker", "--r", "0", "--rp", "1"], 2);
    fails(&["verify", "slow"], 2);

    let msg = fails(&["scan", "--theta1", "1e300", "--count", "3", "--q", "0.5"], 3);
    assert!(msg.contains("row 1 (r = "), "{msg}");

    let dir = tempfile::tempdir().unwrap();
    let flat = path(dir.path(), "flat.csv");
    ok(&["scan", "--theta1-over-pi", "2", "-o", &flat]);
    let msg = fails(&["fit", &flat], 4);
    assert!(msg.contains("non-identifiable"), "{msg}");
}
