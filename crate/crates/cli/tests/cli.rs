use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcc_event::io::{load_stream, StreamFormat};

const SMALL_SCENE: &str = "\
width = 32
height = 24
duration_us = 100000
disk_radius_px = 5
disk_speed_px_per_s = 200
disk_start_x_px = 5
disk_start_y_px = 12
disk_edge_px = 2
dip_start_us = 20000
dip_end_us = 80000
dip_ramp_us = 10000
";

const CONSTANT_SCENE: &str = "\
duration_us = 100000
disk_speed_px_per_s = 0
disk_oscillation_amplitude_px = 0
noise_sigma = 0
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pcc-event"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

fn simulate_small(dir: &Path, dip: &str, out: &str) -> PathBuf {
    let scene = write(dir, "small.kv", SMALL_SCENE);
    let out = dir.join(out);
    let o = run(&[
        "simulate",
        "--scene",
        s(&scene),
        "--dip",
        dip,
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn default_scene_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/");
    let (obs, pred, out) = (d.join("obs.pcev"), d.join("pred.pcev"), d.join("run"));

    let o = run(&[
        "simulate",
        "--scene",
        &format!("{config}default_scene.kv"),
        "--out",
        s(&obs),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("events over 500000 us"));
    let count = load_stream(&obs, StreamFormat::Binary).unwrap().len();
    assert!((600_000..=1_200_000).contains(&count), "{count} events");

    let o = run(&["simulate", "--dip", "off", "--out", s(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = run(&[
        "analyze",
        "--observed",
        s(&obs),
        "--predicted",
        s(&pred),
        "--pipeline",
        &format!("{config}pipeline.kv"),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&out.join("alarms.csv")), 1);
    assert_eq!(data_rows(&out.join("metrics.csv")), 100);

    let o = run(&["report", s(&out.join("summary.kv"))]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in [
        "event_count",
        "f_vg",
        "mean_roi_fraction",
        "charge_identity_error",
    ] {
        assert!(text.contains(name), "{text}");
    }
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn self_comparison_has_no_alarm_rows() {
    let dir = tempfile::tempdir().unwrap();
    let obs = simulate_small(dir.path(), "on", "obs.pcev");
    let out = dir.path().join("run");
    let o = run(&[
        "analyze",
        "--observed",
        s(&obs),
        "--predicted",
        s(&obs),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&out.join("alarms.csv")), 0);
    assert_eq!(data_rows(&out.join("metrics.csv")), 20);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut files = Vec::new();
    for round in ["a", "b"] {
        let obs = simulate_small(d, "on", &format!("obs_{round}.pcev"));
        let pred = simulate_small(d, "off", &format!("pred_{round}.csv"));
        let out = d.join(format!("run_{round}"));
        let o = run(&[
            "analyze",
            "--observed",
            s(&obs),
            "--predicted",
            s(&pred),
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut bytes = vec![fs::read(&obs).unwrap(), fs::read(&pred).unwrap()];
        for name in ["metrics.csv", "alarms.csv", "summary.kv"] {
            bytes.push(fs::read(out.join(name)).unwrap());
        }
        files.push(bytes);
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn seed_override_changes_the_stream() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = write(d, "small.kv", SMALL_SCENE);
    let mut streams = Vec::new();
    for seed in ["1", "2"] {
        let out = d.join(format!("s{seed}.pcev"));
        let o = run(&[
            "simulate",
            "--scene",
            s(&scene),
            "--seed",
            seed,
            "--out",
            s(&out),
        ]);
        assert!(o.status.success());
        streams.push(fs::read(out).unwrap());
    }
    assert_ne!(streams[0], streams[1]);
}

#[test]
fn zero_duration_writes_an_empty_stream() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty.pcev");
    let o = run(&["simulate", "--duration-us", "0", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stream = load_stream(&out, StreamFormat::Binary).unwrap();
    assert!(stream.is_empty());
    assert_eq!(stream.duration_us(), 0);
}

#[test]
fn empty_pair_reports_no_windows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let empty = d.join("empty.pcev");
    assert!(run(&["simulate", "--duration-us", "0", "--out", s(&empty)])
        .status
        .success());
    let out = d.join("run");
    let o = run(&[
        "analyze",
        "--observed",
        s(&empty),
        "--predicted",
        s(&empty),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&out.join("metrics.csv")), 0);
    let o = run(&["report", s(&out.join("summary.kv"))]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "no windows\n");
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.kv");
    let o = run(&[
        "simulate",
        "--scene",
        s(&missing),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.kv"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write(dir.path(), "typo.kv", "dip_dpeth = 0.5\n");
    let o = run(&[
        "simulate",
        "--scene",
        s(&scene),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dip_dpeth"), "{}", stderr(&o));
}

#[test]
fn mismatched_geometries_name_both() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let small = simulate_small(d, "on", "small.pcev");
    let other = write(
        d,
        "other.kv",
        &SMALL_SCENE.replace("width = 32", "width = 40"),
    );
    let wide = d.join("wide.pcev");
    assert!(run(&["simulate", "--scene", s(&other), "--out", s(&wide)])
        .status
        .success());
    let o = run(&[
        "analyze",
        "--observed",
        s(&small),
        "--predicted",
        s(&wide),
        "--out",
        s(&d.join("run")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("32x24") && err.contains("40x24"), "{err}");
}

#[test]
fn corrupt_stream_is_a_contract_violation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.pcev",
        "NOPE and some more bytes to pass the header length",
    );
    let o = run(&[
        "analyze",
        "--observed",
        s(&bad),
        "--predicted",
        s(&bad),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bad magic"), "{}", stderr(&o));
}

#[test]
fn constant_scene_trace_has_no_events() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write(dir.path(), "constant.kv", CONSTANT_SCENE);
    let out = dir.path().join("trace.csv");
    let o = run(&[
        "trace",
        "--scene",
        s(&scene),
        "--pixel",
        "45,90",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1000);
    assert!(rows.iter().all(|r| r.ends_with(',')));
}

#[test]
fn default_trace_goes_negative_then_positive_in_the_dip() {
    let o = run(&["trace", "--pixel", "120,90"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let events: Vec<(u64, i8)> = text
        .lines()
        .skip(1)
        .filter_map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            let t: u64 = cols[0].parse().unwrap();
            let p: i8 = cols[4].parse().ok()?;
            (200_000..=300_000).contains(&t).then_some((t, p))
        })
        .collect();
    let first_up = events.iter().position(|&(_, p)| p == 1).unwrap();
    assert!(first_up > 0);
    assert!(events[..first_up].iter().all(|&(_, p)| p == -1));
    assert!(events[first_up..].iter().all(|&(_, p)| p == 1));
}

#[test]
fn out_of_bounds_pixel_fails() {
    let o = run(&["trace", "--pixel", "240,0"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("outside"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["simulate"]).status.code(), Some(1));
    assert_eq!(run(&["trace", "--pixel", "3"]).status.code(), Some(1));
    assert_eq!(
        run(&["simulate", "--dip", "maybe", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_summary_fails() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "summary.kv", "f_vg 0.1\n");
    let o = run(&["report", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let partial = write(dir.path(), "partial.kv", "f_vg = 0.1\n");
    let o = run(&["report", s(&partial)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing key"), "{}", stderr(&o));
}

#[test]
fn thread_cap_is_honoured_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write(dir.path(), "small.kv", SMALL_SCENE);
    let one = dir.path().join("one.pcev");
    let o = bin()
        .env("PCC_EVENT_THREADS", "1")
        .args(["simulate", "--scene", s(&scene), "--out", s(&one)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let auto = simulate_small(dir.path(), "on", "auto.pcev");
    assert_eq!(fs::read(one).unwrap(), fs::read(auto).unwrap());

    let o = bin()
        .env("PCC_EVENT_THREADS", "lots")
        .args([
            "simulate",
            "--scene",
            s(&scene),
            "--out",
            s(&dir.path().join("x")),
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("PCC_EVENT_THREADS"));
}
