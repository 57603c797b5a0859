use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use cobbkit::io::{read_angles_csv, read_predictions, write_predictions, AngleOrder};

fn cobbkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cobbkit"))
        .current_dir(dir)
        .env_remove("COBBKIT_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cobbkit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, count: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--count", count, "--seed", "3", "--out-dir", "syn"];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn lossless_synthetic_angles_match_oracle() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "8", &[]);
    ok(dir.path(), &["angles", "--predictions", "syn/predictions.json", "--out-dir", "out"]);
    let gt = read_angles_csv(&dir.path().join("syn/angles_gt.csv"), AngleOrder::MtPtTl).unwrap();
    let pred = read_angles_csv(&dir.path().join("out/angles.csv"), AngleOrder::MtPtTl).unwrap();
    assert_eq!(gt.len(), 8);
    assert_eq!(gt.keys().collect::<Vec<_>>(), pred.keys().collect::<Vec<_>>());
    for (id, g) in &gt {
        for (a, b) in g.as_array().iter().zip(pred[id].as_array()) {
            assert!((a - b).abs() < 1e-6, "{id}: {a} vs {b}");
        }
    }
    assert!(dir.path().join("out/pipeline_config.json").exists());
}

#[test]
fn landmark_input_gives_oracle_angles() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "8", &["--layout", "x-block-y-block", "--corner-order", "tl,bl,br,tr"]);
    ok(
        dir.path(),
        &[
            "angles",
            "--landmarks",
            "syn/landmarks.csv",
            "--layout",
            "x-block-y-block",
            "--corner-order",
            "tl,bl,br,tr",
            "--out-dir",
            "out",
        ],
    );
    let gt = read_angles_csv(&dir.path().join("syn/angles_gt.csv"), AngleOrder::MtPtTl).unwrap();
    let pred = read_angles_csv(&dir.path().join("out/angles.csv"), AngleOrder::MtPtTl).unwrap();
    for (id, g) in &gt {
        assert!((g.mt - pred[id].mt).abs() < 1e-6);
    }
}

#[test]
fn stage_dumps_and_ablation_table() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "8", &["--outliers", "1", "--drop", "1", "--noise", "1.0"]);
    ok(
        dir.path(),
        &[
            "angles",
            "--predictions",
            "syn/predictions.json",
            "--gt",
            "syn/angles_gt.csv",
            "--dump-stages",
            "--smooth",
            "--smooth-mode",
            "left-right-split",
            "--out-dir",
            "out",
        ],
    );
    let ablation = std::fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    let rows: Vec<&str> = ablation.lines().collect();
    assert_eq!(rows[0], "stage,smape,n_images,mae_mt,mae_pt,mae_tl");
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["raw", "outliers", "smoothed"]);
    for r in &rows[1..] {
        assert_eq!(r.split(',').nth(2), Some("8"));
    }

    let stages = std::fs::read_to_string(dir.path().join("out/stages.csv")).unwrap();
    assert_eq!(stages.lines().count(), 1 + 8 * 3);
    // the smoothed stage is what the final angles report
    let angles = std::fs::read_to_string(dir.path().join("out/angles.csv")).unwrap();
    let first = angles.lines().nth(1).unwrap();
    let smoothed = stages.lines().find(|l| l.starts_with("synth_0000,smoothed,")).unwrap();
    assert_eq!(first.split(',').take(4).skip(1).collect::<Vec<_>>(), smoothed.split(',').skip(2).take(3).collect::<Vec<_>>());

    let dump: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/stages/synth_0000.json")).unwrap()).unwrap();
    assert_eq!(dump["rejected_boxes"].as_array().unwrap().len(), 1);
    assert_eq!(dump["landmarks"]["vertebrae"].as_array().unwrap().len(), 17);
    assert_eq!(dump["fits"].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_predictions_exit_with_parse_code() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "8", &[]);
    let text = std::fs::read_to_string(dir.path().join("syn/predictions.json")).unwrap();
    std::fs::write(dir.path().join("truncated.json"), &text[..text.len() / 2]).unwrap();
    let out = cobbkit(dir.path(), &["angles", "--predictions", "truncated.json", "--out-dir", "out"]);
    assert_eq!(out.status.code(), Some(3));

    let wrong = text.replacen("\"version\": 1", "\"version\": 9", 1);
    std::fs::write(dir.path().join("wrong.json"), wrong).unwrap();
    let out = cobbkit(dir.path(), &["angles", "--predictions", "wrong.json", "--out-dir", "out"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn empty_detections_fail_angles_but_render_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2", &[]);
    let path = dir.path().join("syn/predictions.json");
    let mut records = read_predictions(&path).unwrap();
    records[1].detections.clear();
    write_predictions(&path, &records).unwrap();

    let out = cobbkit(dir.path(), &["angles", "--predictions", "syn/predictions.json", "--out-dir", "out"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth_0001"));
    let angles = std::fs::read_to_string(dir.path().join("out/angles.csv")).unwrap();
    assert_eq!(angles.lines().count(), 2);

    ok(dir.path(), &["render", "--predictions", "syn/predictions.json", "--out-dir", "r"]);
    let full = std::fs::read_to_string(dir.path().join("r/render/synth_0000.svg")).unwrap();
    assert_eq!(full.matches("<rect class=\"box kept\"").count(), 17);
    let empty = std::fs::read_to_string(dir.path().join("r/render/synth_0001.svg")).unwrap();
    assert!(empty.contains("<g id=\"warnings\">"));
    assert!(empty.trim_end().ends_with("</svg>"));
}

#[test]
fn render_marks_rejected_boxes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "8", &["--outliers", "2"]);
    let args = ["render", "--predictions", "syn/predictions.json", "--image-id", "synth_0003", "--jobs", "4"];
    ok(dir.path(), &[&args[..], &["--out-dir", "a"]].concat());
    ok(dir.path(), &[&args[..], &["--out-dir", "b"]].concat());
    let a = std::fs::read(dir.path().join("a/render/synth_0003.svg")).unwrap();
    let b = std::fs::read(dir.path().join("b/render/synth_0003.svg")).unwrap();
    assert_eq!(a, b);
    let svg = String::from_utf8(a).unwrap();
    assert_eq!(svg.matches("class=\"box rejected\"").count(), 2);
    assert_eq!(svg.matches("class=\"box kept\"").count(), 17);
    assert_eq!(std::fs::read_dir(dir.path().join("a/render")).unwrap().count(), 1);

    let out = cobbkit(dir.path(), &["render", "--predictions", "syn/predictions.json", "--image-id", "nope", "--out-dir", "c"]);
    assert_eq!(out.status.code(), Some(4));
}

fn write_fixture_landmarks(path: &Path) {
    let mut row = String::from("spine_a,1000,2400");
    for k in 0..17 {
        let y = 100.0 + 100.0 * k as f64;
        let x = if k == 0 { 10.0 } else { 400.0 };
        for (px, py) in [(x, y), (x + 60.0, y + 4.0), (x + 2.0, y + 30.0), (x + 62.0, y + 34.0)] {
            let _ = write!(row, ",{px},{py}");
        }
    }
    std::fs::write(path, format!("{row}\n")).unwrap();
}

#[test]
fn boxes_match_hand_computed_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture_landmarks(&dir.path().join("lm.csv"));
    ok(dir.path(), &["boxes", "--landmarks", "lm.csv", "--out-dir", "out"]);
    let text = std::fs::read_to_string(dir.path().join("out/boxes.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 17);
    // x 10..72 padded by 25 clamps to 0 on the left; y 100..134 padded by 5
    assert_eq!(&rows[0][..5], &[0.0, 0.0, 95.0, 97.0, 139.0]);
    // vertebra 3: x 400..462, y 400..434
    assert_eq!(&rows[3][..5], &[3.0, 375.0, 395.0, 487.0, 439.0]);
    // TL of vertebra 3 normalized: (25 / 112, 5 / 44)
    assert!((rows[3][5] - 25.0 / 112.0).abs() < 1e-12);
    assert!((rows[3][6] - 5.0 / 44.0).abs() < 1e-12);

    ok(dir.path(), &["boxes", "--landmarks", "lm.csv", "--pad-w", "0", "--pad-h", "0", "--out-dir", "tight"]);
    let tight = std::fs::read_to_string(dir.path().join("tight/boxes.csv")).unwrap();
    assert!(tight.lines().nth(4).unwrap().starts_with("spine_a,3,400,400,462,434,0,0,"));
}

#[test]
fn boxes_reject_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = cobbkit(dir.path(), &["boxes", "--landmarks", "empty.csv", "--out-dir", "out"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn evaluate_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("gt.csv"), "image_id,mt,pt,tl\na,10,20,30\n").unwrap();
    std::fs::write(p.join("pred.csv"), "image_id,mt,pt,tl\na,20,20,30\n").unwrap();
    let out = ok(p, &["evaluate", "--gt", "gt.csv", "--pred", "pred.csv", "--out-dir", "ev"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("SMAPE 7.6923%"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("ev/report.json")).unwrap()).unwrap();
    assert!((report["smape"].as_f64().unwrap() - 7.692307692307692).abs() < 1e-9);

    let out = ok(p, &["evaluate", "--gt", "gt.csv", "--pred", "gt.csv", "--out-dir", "same"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("SMAPE 0.0000%"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("same/report.json")).unwrap()).unwrap();
    assert_eq!(report["smape"].as_f64(), Some(0.0));

    std::fs::write(p.join("more.csv"), "image_id,mt,pt,tl\na,10,20,30\nb,1,2,3\n").unwrap();
    let out = cobbkit(p, &["evaluate", "--gt", "more.csv", "--pred", "pred.csv", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(4));

    // bare rows with sidecar ids, PT first
    std::fs::write(p.join("bare.csv"), "20,10,30\n").unwrap();
    std::fs::write(p.join("ids.txt"), "a\n").unwrap();
    std::fs::write(p.join("swapped.csv"), "image_id,pt,mt,tl\na,20,10,30\n").unwrap();
    let out = ok(
        p,
        &["evaluate", "--gt", "bare.csv", "--gt-ids", "ids.txt", "--pred", "swapped.csv", "--angle-order", "pt-mt-tl", "--out-dir", "y"],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("SMAPE 0.0000%"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("y/report.json")).unwrap()).unwrap();
    assert_eq!(report["mae_per_angle"], serde_json::json!([0.0, 0.0, 0.0]));
}

#[test]
fn config_file_flags_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "2", &[]);
    std::fs::write(p.join("c.toml"), "poly-degree = 4\nsmooth = true\nsmooth-mode = \"left-right-split\"\nout-dir = \"from-file\"\n").unwrap();

    ok(p, &["angles", "--predictions", "syn/predictions.json", "--config", "c.toml", "--poly-degree", "5"]);
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("from-file/pipeline_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["poly-degree"], 5);
    assert_eq!(cfg["smooth"], true);
    assert_eq!(cfg["smooth-mode"], "left-right-split");
    assert_eq!(cfg["command"], "angles");

    let out = Command::new(env!("CARGO_BIN_EXE_cobbkit"))
        .current_dir(p)
        .env("COBBKIT_OUT_DIR", "from-env")
        .args(["angles", "--predictions", "syn/predictions.json", "--config", "c.toml"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(p.join("from-env/angles.csv").exists());

    std::fs::write(p.join("bad.toml"), "poly-degree = \"six\"\n").unwrap();
    let out = cobbkit(p, &["angles", "--predictions", "syn/predictions.json", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(5));
    let out = cobbkit(p, &["angles", "--predictions", "syn/predictions.json", "--ref-aspect=0"]);
    assert_eq!(out.status.code(), Some(5));
    let out = cobbkit(p, &["angles", "--predictions", "syn/predictions.json", "--smooth-mode", "wiggly"]);
    assert_eq!(out.status.code(), Some(2));
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn reruns_are_byte_identical_regardless_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for (out, jobs) in [("one", "1"), ("two", "1"), ("many", "8")] {
        ok(p, &["synth", "--count", "12", "--seed", "9", "--outliers", "1", "--noise", "0.5", "--out-dir", &format!("{out}/syn"), "--jobs", jobs]);
        ok(
            p,
            &[
                "angles",
                "--predictions",
                &format!("{out}/syn/predictions.json"),
                "--dump-stages",
                "--smooth",
                "--out-dir",
                &format!("{out}/angles"),
                "--jobs",
                jobs,
            ],
        );
    }
    let one = snapshot(&p.join("one"));
    assert!(one.len() > 10);
    assert_eq!(one, snapshot(&p.join("two")));
    assert_eq!(one, snapshot(&p.join("many")));
}
