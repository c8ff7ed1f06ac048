use std::path::Path;
use std::process::{Command, Output};

fn eigenlane(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eigenlane"))
        .args(args)
        .current_dir(dir)
        .env_remove("EIGENLANE_OUTPUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("failed to launch eigenlane")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = eigenlane(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    eigenlane(dir, args).status.code().unwrap()
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth",
            "--count",
            "300",
            "--seed",
            "1",
            "-o",
            "train.jsonl",
        ],
    );
    ok(
        d,
        &["synth", "--count", "20", "--seed", "2", "-o", "test.jsonl"],
    );
    ok(
        d,
        &["build-basis", "--train", "train.jsonl", "-o", "basis.json"],
    );
    let approx = ok(
        d,
        &[
            "approx",
            "--basis",
            "basis.json",
            "--data",
            "test.jsonl",
            "-o",
            "approx.json",
        ],
    );
    assert_eq!(approx.lines().count(), 7, "{approx}");
    let rows = report(&d.join("approx.json"))["ranks"].clone();
    let rms: Vec<f64> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["rms_px"].as_f64().unwrap())
        .collect();
    assert!(rms.windows(2).all(|w| w[1] <= w[0]), "{rms:?}");

    let basis = ["--basis", "basis.json"];
    ok(
        d,
        &[
            &[
                "cluster",
                "--train",
                "train.jsonl",
                "--k",
                "100",
                "-o",
                "cands.json",
            ][..],
            &basis,
        ]
        .concat(),
    );
    ok(
        d,
        &[
            &["straight-anchors", "--k", "100", "-o", "straight.json"][..],
            &basis,
        ]
        .concat(),
    );
    for (cands, out) in [("cands.json", "c.json"), ("straight.json", "s.json")] {
        ok(
            d,
            &[
                &[
                    "eval-candidates",
                    "--candidates",
                    cands,
                    "--data",
                    "test.jsonl",
                    "-o",
                    out,
                ][..],
                &basis,
            ]
            .concat(),
        );
    }
    let clustered = report(&d.join("c.json"))["mean_best_iou"].as_f64().unwrap();
    let straight = report(&d.join("s.json"))["mean_best_iou"].as_f64().unwrap();
    assert!(clustered > straight, "{clustered} vs {straight}");

    let score = [
        &[
            "score-oracle",
            "--candidates",
            "cands.json",
            "--data",
            "test.jsonl",
        ][..],
        &basis,
    ]
    .concat();
    ok(
        d,
        &[&score[..], &["-o", "scores.jsonl", "--threads", "3"]].concat(),
    );
    ok(
        d,
        &[&score[..], &["-o", "scores1.jsonl", "--threads", "1"]].concat(),
    );
    assert_eq!(
        std::fs::read(d.join("scores.jsonl")).unwrap(),
        std::fs::read(d.join("scores1.jsonl")).unwrap()
    );

    let det = [
        &[
            "detect",
            "--candidates",
            "cands.json",
            "--scores",
            "scores.jsonl",
        ][..],
        &basis,
    ]
    .concat();
    ok(
        d,
        &[&det[..], &["-o", "det.jsonl", "--trace", "trace.jsonl"]].concat(),
    );
    ok(
        d,
        &[&det[..], &["-o", "raw.jsonl", "--no-offsets"]].concat(),
    );
    assert_eq!(
        std::fs::read_to_string(d.join("trace.jsonl"))
            .unwrap()
            .lines()
            .count(),
        20
    );

    let stdout = ok(
        d,
        &[
            "eval",
            "--pred",
            "det.jsonl",
            "--gt",
            "test.jsonl",
            "--pixel-audit",
            "-o",
            "eval.json",
        ],
    );
    assert!(stdout.contains("pixel audit"), "{stdout}");
    let refined = report(&d.join("eval.json"));
    ok(
        d,
        &[
            "eval",
            "--pred",
            "raw.jsonl",
            "--gt",
            "test.jsonl",
            "-o",
            "raw_eval.json",
        ],
    );
    let raw = report(&d.join("raw_eval.json"));
    let f = |r: &serde_json::Value| r["f_measure"]["f_measure"].as_f64().unwrap();
    assert!(f(&refined) > 0.9, "{}", f(&refined));
    assert!(f(&refined) > f(&raw));
    assert!(refined["pixel_audit_max_deviation"].as_f64().unwrap() < 1e-6);

    ok(
        d,
        &[
            &[
                "render",
                "--data",
                "test.jsonl",
                "--pred",
                "det.jsonl",
                "--candidates",
                "cands.json",
                "-o",
                "scene.svg",
            ][..],
            &basis,
        ]
        .concat(),
    );
    let svg = std::fs::read_to_string(d.join("scene.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("detections"));
}

#[test]
fn ground_truth_scores_perfectly_across_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["synth", "--count", "15", "--seed", "7", "-o", "gt.jsonl"],
    );
    ok(
        d,
        &[
            "synth", "--count", "15", "--seed", "7", "--format", "csv", "-o", "gt.csv",
        ],
    );
    ok(
        d,
        &[
            "eval", "--format", "csv", "--gt", "gt.csv", "--pred", "gt.jsonl", "-o", "r.json",
        ],
    );
    let r = report(&d.join("r.json"));
    assert_eq!(r["f_measure"]["f_measure"].as_f64(), Some(1.0));
    assert_eq!(r["tusimple"]["accuracy"].as_f64(), Some(1.0));
    assert_eq!(r["tusimple"]["fpr"].as_f64(), Some(0.0));
}

#[test]
fn config_file_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "40", "-o", "train.jsonl"]);
    std::fs::write(d.join("cfg.json"), r#"{"version":1,"rank":3,"samples":30}"#).unwrap();
    ok(
        d,
        &[
            "--config",
            "cfg.json",
            "build-basis",
            "--train",
            "train.jsonl",
            "-o",
            "b3.json",
        ],
    );
    ok(
        d,
        &[
            "build-basis",
            "--config",
            "cfg.json",
            "--rank",
            "5",
            "--train",
            "train.jsonl",
            "-o",
            "b5.json",
        ],
    );
    let (b3, b5) = (report(&d.join("b3.json")), report(&d.join("b5.json")));
    assert_eq!((b3["m"].as_u64(), b3["n"].as_u64()), (Some(3), Some(30)));
    assert_eq!((b5["m"].as_u64(), b5["n"].as_u64()), (Some(5), Some(30)));
}

#[test]
fn output_dir_env_redirects_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let status = Command::new(env!("CARGO_BIN_EXE_eigenlane"))
        .args(["synth", "--count", "3", "-o", "nested/s.jsonl"])
        .current_dir(d)
        .env("EIGENLANE_OUTPUT_DIR", d.join("out"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(d.join("out/nested/s.jsonl").is_file());
    assert!(!d.join("nested").exists());
}

#[test]
fn exit_codes_separate_bad_input_from_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "10", "-o", "train.jsonl"]);
    std::fs::write(d.join("broken.jsonl"), "{\"raw_file\": \"a\", \n").unwrap();
    std::fs::write(d.join("v2.json"), r#"{"version":2}"#).unwrap();

    // invalid inputs or settings
    assert_eq!(
        code(
            d,
            &["build-basis", "--train", "broken.jsonl", "-o", "b.json"]
        ),
        2
    );
    assert_eq!(
        code(
            d,
            &[
                "build-basis",
                "--train",
                "train.jsonl",
                "--rank",
                "60",
                "-o",
                "b.json"
            ]
        ),
        2
    );
    assert_eq!(
        code(d, &["--config", "v2.json", "synth", "-o", "x.jsonl"]),
        2
    );
    assert_eq!(code(d, &["synth", "--kappa", "4", "-o", "x.jsonl"]), 2);
    assert_eq!(
        code(d, &["synth", "--image-size", "wide", "-o", "x.jsonl"]),
        2
    );
    assert_eq!(code(d, &["synth", "--format", "culane", "-o", "x"]), 2);
    assert_eq!(code(d, &["no-such-command"]), 2);

    // environment failures
    assert_eq!(
        code(
            d,
            &["build-basis", "--train", "missing.jsonl", "-o", "b.json"]
        ),
        1
    );
    ok(
        d,
        &["build-basis", "--train", "train.jsonl", "-o", "b.json"],
    );
    assert_eq!(
        code(
            d,
            &["approx", "--basis", "b.json", "--data", "missing.jsonl"]
        ),
        1
    );
}
