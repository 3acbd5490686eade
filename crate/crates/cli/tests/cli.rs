use std::fs;
use std::process::{Command, Output};

fn recouple(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recouple"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn selftest_passes() {
    let o = recouple(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn efficiency_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eff.csv");
    let o = recouple(&[
        "efficiency",
        "--engine",
        "effective",
        "-s",
        "dcp",
        "--set",
        "time_points=16",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# run = efficiency");
    assert!(lines.contains(&"# engine = effective"));
    assert!(lines.contains(&"# powder = gl:32"));
    let header = lines.iter().position(|l| !l.starts_with('#')).unwrap();
    assert_eq!(lines[header], "sequence,rf_dist,time_ms,efficiency");
    let rows: Vec<&str> = lines[header + 1..].iter().copied().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 16);
    assert!(rows[0].starts_with("dcp,delta,0,0"));
    assert!(csv.contains("# peak dcp delta efficiency = 0.73"));
}

#[test]
fn output_is_byte_identical_across_runs_and_thread_counts() {
    let run = |threads: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_recouple"));
        c.args(["efficiency", "-s", "dcp", "-s", "comb3dcp", "--powder", "zcw3:30", "--set", "time_points=6"]);
        if let Some(t) = threads {
            c.env("RECOUPLE_THREADS", t);
        }
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        o.stdout
    };
    let a = run(None);
    assert_eq!(a, run(None));
    assert_eq!(a, run(Some("1")));
    assert_eq!(a, run(Some("3")));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_recouple"))
        .args(["trajectory", "-s", "dcp"])
        .env("RECOUPLE_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("RECOUPLE_THREADS"));
}

#[test]
fn config_errors_report_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "engine = effective\n# comment\nspin_speed = 12\n").unwrap();
    let o = recouple(&["efficiency", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("run.conf:3:"), "{e}");
    assert!(e.contains("spin_speed"), "{e}");
}

#[test]
fn empty_sweep_is_an_error() {
    let o = recouple(&["matching", "-s", "dcp", "--set", "rf_s_khz=30:40:0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"));
}

#[test]
fn offsets_need_the_exact_engine() {
    let o = recouple(&["profiles", "--engine", "effective"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exact engine"));
}

#[test]
fn homonuclear_sequence_rejected_by_exact_engine() {
    let o = recouple(&["efficiency", "-s", "horror", "--powder", "zcw3:10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("subspace"), "{}", stderr(&o));
}

#[test]
fn map_writes_one_file_per_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("map.csv");
    let o = recouple(&[
        "map",
        "--engine",
        "effective",
        "--set",
        "rf_scale=0.9:1.1:3",
        "--set",
        "dipole_scale=0.5:1.5:5",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["dcp", "comb3dcp", "comb6dcp"] {
        let csv = fs::read_to_string(dir.path().join(format!("map_{name}.csv"))).unwrap();
        assert!(csv.contains(&format!("# sequence = {name}")));
        assert!(csv.contains("\nrf_scale,dipole_scale,efficiency\n"));
        assert!(csv.contains("\n1,1,1\n"), "{csv}");
    }
}

#[test]
fn matching_profile_small_run() {
    let o = recouple(&["matching", "-s", "dcp", "--powder", "zcw3:10", "--set", "rf_s_khz=33:37:5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("\nsequence,rf_S_kHz,efficiency\n"));
    assert_eq!(s.lines().filter(|l| l.starts_with("dcp,")).count(), 5);
    assert!(s.contains("fwhm"));
}

#[test]
fn trajectory_labels_and_descriptor_files() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("mine.seq");
    fs::write(&seq, "name mine\nsubspace minus\nD 1\nP I 90 180\nP S 90 0\nD 2\nP I 90 0\nP S 90 180\nD 1\n").unwrap();
    let o = recouple(&[
        "trajectory",
        "-s",
        seq.to_str().unwrap(),
        "-s",
        "comb3dcp",
        "--set",
        "gamma_deg=0,90",
        "--set",
        "samples_per_quarter=2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("# engine = effective"));
    for label in ["I", "II", "III", "IV", "V"] {
        assert!(s.contains(&format!(",{label},")), "missing {label}");
    }
    let first = s.lines().find(|l| l.starts_with("mine,0,")).unwrap();
    assert!(first.ends_with(",0.707106781,0,0"), "{first}");
}

#[test]
fn unknown_sequence_fails_cleanly() {
    let o = recouple(&["efficiency", "-s", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
}
