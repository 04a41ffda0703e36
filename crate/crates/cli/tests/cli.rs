use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_navsim");

fn navsim(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("failed to start navsim")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    fs::write(
        &path,
        format!("schema_version = 1\noutput_dir = \"out\"\n{body}"),
    )
    .unwrap();
    path
}

const CIRCLE: &str = r#"
mode = "ekf-only"
[trajectory]
kind = "circle"
radius = 5.0
speed = 1.0
"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_log_metrics_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CIRCLE);
    let out = navsim(&["run", s(&cfg), "--duration", "5"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let log = fs::read_to_string(dir.path().join("out/run.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("# schema=1"));
    assert!(lines.next().unwrap().starts_with("tick,t,truth_x,truth_y"));
    assert_eq!(log.lines().count(), 2 + 50);
    assert!(dir.path().join("out/metrics.csv").exists());
    let svg = fs::read_to_string(dir.path().join("out/plot.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("est vs truth"));
}

#[test]
fn missing_config_is_a_config_error() {
    let out = navsim(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/scenario.toml"));
}

#[test]
fn invalid_values_fail_before_simulating() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CIRCLE.replace("radius = 5.0", "radius = nan"));
    let out = navsim(&["run", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("out").exists());
    assert_eq!(navsim(&["validate", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn unknown_keys_and_versions_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{CIRCLE}\nbogus = true\n"));
    let out = navsim(&["validate", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let path = dir.path().join("v2.toml");
    fs::write(&path, format!("schema_version = 2\n{CIRCLE}")).unwrap();
    let out = navsim(&["validate", s(&path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(navsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(navsim(&["run"]).status.code(), Some(1));
    assert_eq!(navsim(&["--help"]).status.code(), Some(0));
}

#[test]
fn gps_rate_override_must_divide_control_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CIRCLE);
    assert_eq!(
        navsim(&["run", s(&cfg), "--gps-rate", "3"]).status.code(),
        Some(1)
    );
    let out = navsim(&["run", s(&cfg), "--gps-rate", "2", "--duration", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let log = fs::read_to_string(dir.path().join("out/run.csv")).unwrap();
    let fixes = log
        .lines()
        .skip(2)
        .filter(|l| !l.split(',').nth(6).unwrap().is_empty())
        .count();
    assert_eq!(fixes, 10);
}

#[test]
fn batch_prints_table_one_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CIRCLE);
    let out = navsim(&["batch", s(&cfg), "-n", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 10 + 1);
    assert!(lines[0].contains("EKF max") && lines[0].contains("MEAS avg"));
    for row in &lines[1..11] {
        assert_eq!(row.split_whitespace().count(), 6, "{row}");
        assert_eq!(row.len(), lines[0].len());
    }
    assert!(lines[11].starts_with("EKF better max error in"));

    let again = navsim(&["batch", s(&cfg), "-n", "10"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), table);

    let single = navsim(&["batch", s(&cfg), "-n", "1"]);
    assert_eq!(String::from_utf8(single.stdout).unwrap().lines().count(), 3);
    assert!(dir.path().join("out/batch.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CIRCLE.replace("ekf-only", "ekf-mpc"));
    let mut logs = Vec::new();
    for _ in 0..2 {
        assert_eq!(
            navsim(&["run", s(&cfg), "--duration", "6"]).status.code(),
            Some(0)
        );
        logs.push((
            fs::read(dir.path().join("out/run.csv")).unwrap(),
            fs::read(dir.path().join("out/plot.svg")).unwrap(),
        ));
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(
        navsim(&["run", s(&cfg), "--duration", "6", "--seed", "9"])
            .status
            .code(),
        Some(0)
    );
    assert_ne!(fs::read(dir.path().join("out/run.csv")).unwrap(), logs[0].0);
}

fn polyline_points(svg: &str, id: &str) -> Vec<(f64, f64)> {
    let start = svg.find(&format!("id=\"{id}\"")).unwrap();
    let attr = &svg[start..];
    let pts = &attr[attr.find("points=\"").unwrap() + 8..];
    let pts = &pts[..pts.find('"').unwrap()];
    pts.split_whitespace()
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

#[test]
fn plot_command_renders_square_circle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &CIRCLE.replace("speed = 1.0", "speed = 1.0\nspacing = 0.1"),
    );
    assert_eq!(navsim(&["run", s(&cfg)]).status.code(), Some(0));
    let svg_path = dir.path().join("replot.svg");
    let out = navsim(&[
        "plot",
        s(&dir.path().join("out/run.csv")),
        s(&dir.path().join("out/trajectory.csv")),
        s(&svg_path),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let svg = fs::read_to_string(&svg_path).unwrap();
    let pts = polyline_points(&svg, "reference");
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let span = |v: &[f64]| {
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let (w, h) = (span(&xs), span(&ys));
    // canvas units per metre: the 10 m diameter spans the wider side
    let per_metre = w.max(h) / 10.0;
    assert!((w - h).abs() <= 0.1 * per_metre + 0.02, "{w} x {h}");
    for id in ["truth", "estimate"] {
        assert!(!polyline_points(&svg, id).is_empty());
    }
    assert!(svg.contains("x (m)") && svg.contains("legend"));
}

#[test]
fn plot_of_empty_log_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CIRCLE);
    assert_eq!(
        navsim(&["run", s(&cfg), "--duration", "1"]).status.code(),
        Some(0)
    );
    let log = fs::read_to_string(dir.path().join("out/run.csv")).unwrap();
    let header: String = log.lines().take(2).map(|l| format!("{l}\n")).collect();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, header).unwrap();
    let svg = dir.path().join("empty.svg");
    let out = navsim(&[
        "plot",
        s(&empty),
        s(&dir.path().join("out/trajectory.csv")),
        s(&svg),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!svg.exists());
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn malformed_log_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CIRCLE);
    assert_eq!(
        navsim(&["run", s(&cfg), "--duration", "1"]).status.code(),
        Some(0)
    );
    let log = fs::read_to_string(dir.path().join("out/run.csv")).unwrap();
    let broken: String = log
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 4 {
                l.replacen(",0.", ",zz", 1) + "\n"
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, broken).unwrap();
    let out = navsim(&[
        "plot",
        s(&bad),
        s(&dir.path().join("out/trajectory.csv")),
        s(&dir.path().join("x.svg")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("line 4"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn waypoint_file_scenario() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("path.csv"), "x,y\n0,0\n4,0\n6,2\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "mode = \"mpc-privileged\"\n[trajectory]\nkind = \"waypoints\"\nfile = \"path.csv\"\nspeed = 1.0\n",
    );
    let out = navsim(&["run", s(&cfg)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = navsim(&["validate", s(&path)]);
            assert_eq!(
                out.status.code(),
                Some(0),
                "{}: {}",
                path.display(),
                String::from_utf8_lossy(&out.stderr)
            );
            n += 1;
        }
    }
    assert!(n >= 3);
}
