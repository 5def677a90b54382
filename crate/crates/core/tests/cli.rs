use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "duration = 3.0\nwarmup = 0.5\nnodes = 20\narea_width = 500.0\narea_height = 400.0\nmin_pairs = 6\nflows = 4\n";

fn crmac(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crmac")).args(args).current_dir(cwd).output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn one_row_per_run_plus_summaries() {
    let dir = setup();
    let out = stdout(&crmac(&["--config", "small.toml", "--flows", "2,4", "--topologies", "2", "--reproducible"], dir.path()));
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("protocol,seed,topology_id,num_flows,"));
    let rows = &lines[1..];
    assert_eq!(rows.iter().filter(|l| l.ends_with(",run")).count(), 8);
    assert_eq!(rows.iter().filter(|l| l.ends_with(",mean")).count(), 4);
    assert_eq!(rows.iter().filter(|l| l.ends_with(",stddev")).count(), 4);
    for r in rows.iter().filter(|l| l.starts_with("baseline,") && l.ends_with(",run")) {
        assert_eq!(r.split(',').nth(5), Some("1"));
    }
}

#[test]
fn reproducible_output_is_byte_identical() {
    let dir = setup();
    let args = ["--config", "small.toml", "--flows", "1..4:2", "--seeds", "2", "--reproducible", "--out"];
    let a = crmac(&[&args[..], &["a.csv"]].concat(), dir.path());
    let b = crmac(&[&args[..], &["b.csv"]].concat(), dir.path());
    assert!(a.status.success() && b.status.success());
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn timestamp_comment_without_reproducible() {
    let dir = setup();
    let out = stdout(&crmac(&["--config", "small.toml", "--flows", "1", "--protocol", "crmac"], dir.path()));
    assert!(out.starts_with("# generated by crmac"));
    let row = out.lines().find(|l| l.ends_with(",run")).unwrap();
    // Normalization needs a baseline run.
    assert_eq!(row.split(',').nth(5), Some(""));
}

#[test]
fn one_trace_file_per_run() {
    let dir = setup();
    let o = crmac(&["--config", "small.toml", "--flows", "2", "--trace", "traces", "--reproducible"], dir.path());
    stdout(&o);
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("traces"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["baseline_f2_t0_s1.trace", "crmac_f2_t0_s1.trace"]);
    let text = std::fs::read_to_string(dir.path().join("traces/crmac_f2_t0_s1.trace")).unwrap();
    assert!(text.lines().any(|l| l.contains("ev=atim")));
    assert!(text.lines().all(|l| l.starts_with("t=")));
}

#[test]
fn config_errors_name_file_and_line() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.toml"), "seed = 3\n\n[frame]\nslots = 20\n").unwrap();
    let o = crmac(&["--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:4"), "{err}");

    std::fs::write(dir.path().join("zero.toml"), "[frame]\nnum_slots = 0\n").unwrap();
    let o = crmac(&["--config", "zero.toml"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("frame.num_slots"));
}

#[test]
fn bad_flow_list_is_rejected() {
    let dir = setup();
    let o = crmac(&["--config", "small.toml", "--flows", "4..1:2"], dir.path());
    assert!(!o.status.success());
}
