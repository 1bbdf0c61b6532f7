use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn covct(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covct"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn covct")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = covct(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn phantom(dir: &Path) {
    ok(
        dir,
        &[
            "phantom",
            "--out",
            "ds",
            "--size",
            "64",
            "--scans-per-class",
            "3",
            "--slices-min",
            "3",
            "--slices-max",
            "5",
            "--seed",
            "4",
        ],
    );
}

const EXTRACT: &[&str] = &[
    "--work-size",
    "64",
    "--erode-radius",
    "1",
    "--close-radius",
    "3",
    "--edge-thresh",
    "10",
];

#[test]
fn phantom_then_segment_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    phantom(d);
    assert!(d.join("ds/run_manifest.cfg").is_file());
    assert!(d.join("ds/masks").is_dir());
    ok(
        d,
        &[
            "segment", "--in", "ds", "--truth", "ds/masks", "--report", "rep.csv", "--out", "seg",
        ],
    );
    let rep = fs::read_to_string(d.join("rep.csv")).unwrap();
    let mut lines = rep.lines();
    assert_eq!(lines.next(), Some("method,avg_dice,min_dice"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "otsu");
    let avg: f64 = row[1].parse().unwrap();
    assert!(avg > 0.9, "avg dice {avg}");
    assert!(d.join("seg/run_manifest.cfg").is_file());
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = covct(d, &["segment", "--method", "otsu"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--in"));
    assert_eq!(covct(d, &["segment", "--bogus"]).status.code(), Some(2));
    phantom(d);
    let out = covct(
        d,
        &["segment", "--in", "ds", "--out", "s", "--jobs", "many"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifest_from_another_command_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    phantom(d);
    let out = covct(
        d,
        &[
            "segment",
            "--config",
            "ds/run_manifest.cfg",
            "--in",
            "ds",
            "--out",
            "s",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("s").exists());
}

#[test]
fn full_flow_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    phantom(d);
    let mut args = vec!["extract", "--in", "ds", "--out", "ex"];
    args.extend(EXTRACT);
    ok(d, &args);
    ok(
        d,
        &[
            "train-clf",
            "--in",
            "ex",
            "--out",
            "clf.bin",
            "--conv-channels",
            "4,8",
            "--dense-units",
            "8",
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--input-size",
            "64",
        ],
    );
    assert!(d.join("clf.bin.cfg").is_file());

    let predict = |out: &str, jobs: &str| {
        let mut a = vec![
            "predict",
            "--in",
            "ds",
            "--model",
            "clf.bin",
            "--out",
            out,
            "--jobs",
            jobs,
            "--threshold",
            "100",
            "--fallbacks",
            "50",
        ];
        a.extend(EXTRACT);
        ok(d, &a);
        fs::read_to_string(d.join(out)).unwrap()
    };
    let p1 = predict("p1.csv", "1");
    let p4 = predict("p4.csv", "4");
    assert_eq!(p1, p4);
    assert_eq!(p1.lines().count(), 7);
    assert!(p1.starts_with(
        "scan_id,n_slices_in,n_slices_kept,threshold_used,covid_slice_fraction,verdict"
    ));

    ok(
        d,
        &[
            "predict",
            "--config",
            "p1.csv.manifest.cfg",
            "--out",
            "again.csv",
        ],
    );
    assert_eq!(fs::read_to_string(d.join("again.csv")).unwrap(), p1);

    let table = ok(
        d,
        &[
            "evaluate",
            "--predictions",
            "p1.csv",
            "--labels",
            "ds",
            "--out",
            "m.csv",
        ],
    );
    assert!(table.contains("macro F1"));
    let metrics = fs::read_to_string(d.join("m.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    ok(
        d,
        &[
            "hybrid",
            "--inputs",
            "p1.csv,p4.csv,again.csv",
            "--out",
            "h.csv",
        ],
    );
    let h = fs::read_to_string(d.join("h.csv")).unwrap();
    assert!(h.starts_with("scan_id,verdict_1,verdict_2,verdict_3,verdict\n"));
    for (row, pred) in h.lines().skip(1).zip(p1.lines().skip(1)) {
        let v: Vec<&str> = row.split(',').collect();
        assert_eq!(v[4], pred.rsplit(',').next().unwrap());
    }
    ok(
        d,
        &[
            "evaluate",
            "--predictions",
            "h.csv",
            "--labels",
            "ds",
            "--out",
            "hm.csv",
        ],
    );

    let two = covct(
        d,
        &["hybrid", "--inputs", "p1.csv,p4.csv", "--out", "bad.csv"],
    );
    assert_eq!(two.status.code(), Some(2));
}

#[test]
fn failed_run_removes_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    phantom(d);
    let victim = d.join("ds/non-covid/noncovid-002/0000.pgm");
    fs::write(&victim, b"not an image").unwrap();
    let mut args = vec!["extract", "--in", "ds", "--out", "ex"];
    args.extend(EXTRACT);
    let out = covct(d, &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("ex").exists());

    fs::create_dir(d.join("pre")).unwrap();
    let mut args = vec!["extract", "--in", "ds", "--out", "pre"];
    args.extend(EXTRACT);
    assert_eq!(covct(d, &args).status.code(), Some(1));
    assert!(d.join("pre").is_dir());
    assert_eq!(fs::read_dir(d.join("pre")).unwrap().count(), 0);
}

#[test]
fn non_empty_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    phantom(d);
    let out = covct(d, &["phantom", "--out", "ds"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(d.join("ds/run_manifest.cfg").is_file());
}
