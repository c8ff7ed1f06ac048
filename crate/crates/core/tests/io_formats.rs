mod common;

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use eigenlane::io::*;
use eigenlane::*;
use proptest::prelude::*;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn assert_valid(records: &[DatasetRecord]) {
    for r in records {
        r.validate().unwrap();
        for lane in &r.lanes {
            assert!(lane.len() >= 2);
        }
    }
}

#[test]
fn fixtures_load_cleanly() {
    let t = load_tusimple_jsonl(&fixtures().join("tusimple_small.jsonl"), (1280, 720)).unwrap();
    assert_eq!(t.records.len(), 3);
    assert_eq!(t.records.iter().map(|r| r.lanes.len()).sum::<usize>(), 11);
    assert_eq!(t.records[1].category.as_deref(), Some("arc"));
    assert_valid(&t.records);

    let c = load_csv(&fixtures().join("lanes.csv"), (1280, 720)).unwrap();
    assert_eq!(c.records.len(), 2);
    assert_eq!(c.records[0].image_id, "frame_a");
    assert!(c.warnings.is_empty());

    let cu = load_culane_dir(&fixtures().join("culane"), (1640, 590)).unwrap();
    let ids: Vec<&str> = cu.records.iter().map(|r| r.image_id.as_str()).collect();
    assert_eq!(
        ids,
        ["driver_00/clip_01/00000.jpg", "driver_00/clip_01/00030.jpg"]
    );
    assert_eq!(cu.records[0].lanes.len(), 4);
    assert_valid(&cu.records);
}

#[test]
fn tusimple_and_csv_round_trip() {
    let set = common::LaneSet::generate(&common::spec(20, 3));
    let mut buf = Vec::new();
    write_tusimple_jsonl(&mut buf, &set.records).unwrap();
    let back = parse_tusimple_jsonl(Cursor::new(&buf), (1280, 720)).unwrap();
    assert_eq!(back.records, set.records);

    let mut buf = Vec::new();
    write_csv(&mut buf, &set.records).unwrap();
    let back = parse_csv(Cursor::new(&buf), (1280, 720)).unwrap();
    for (a, b) in back.records.iter().zip(&set.records) {
        assert_eq!(a.image_id, b.image_id);
        assert_eq!(a.lanes, b.lanes);
    }
}

#[test]
fn tusimple_errors_carry_line_numbers() {
    let good = r#"{"raw_file":"a","h_samples":[400,410],"lanes":[[1,2]]}"#;
    let text = format!("{good}\n{{not json\n");
    match parse_tusimple_jsonl(Cursor::new(text), (1280, 720)) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let missing = r#"{"raw_file":"a","lanes":[]}"#;
    assert!(matches!(
        parse_tusimple_jsonl(Cursor::new(missing), (1280, 720)),
        Err(Error::Schema(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Arbitrary lines never produce a record that violates its invariants.
    #[test]
    fn tusimple_loader_survives_garbage(
        xs in prop::collection::vec(prop_oneof![Just(-2.0), -100.0f64..1400.0, Just(f64::NAN)], 0..12),
        hs in prop::collection::vec(-50.0f64..800.0, 0..12),
        junk in "[ -~]{0,40}",
        cut in 0usize..80,
    ) {
        let fmt = |v: &[f64]| v.iter().map(|x| if x.is_nan() { "null".into() } else { x.to_string() }).collect::<Vec<_>>().join(",");
        let line = format!(r#"{{"raw_file":"f","h_samples":[{}],"lanes":[[{}]]}}"#, fmt(&hs), fmt(&xs));
        let truncated: String = line.chars().take(cut.max(1)).collect();
        for text in [line, truncated, junk] {
            if let Ok(d) = parse_tusimple_jsonl(Cursor::new(text), (1280, 720)) {
                assert_valid(&d.records);
            }
        }
    }

    #[test]
    fn csv_and_culane_loaders_survive_garbage(rows in prop::collection::vec(("[a-c]{1,2}", -3i32..3, -100.0f64..1400.0, -100.0f64..800.0), 0..20), junk in "[ -~\n]{0,60}") {
        let mut text = String::from("image_id,lane_id,x,y\n");
        for (id, lane, x, y) in &rows {
            text.push_str(&format!("{id},{lane},{x},{y}\n"));
        }
        if let Ok(d) = parse_csv(Cursor::new(text), (1280, 720)) {
            assert_valid(&d.records);
        }
        if let Ok(d) = parse_csv(Cursor::new(format!("image_id,lane_id,x,y\n{junk}")), (1280, 720)) {
            assert_valid(&d.records);
        }
        let mut warnings = LoadWarnings::default();
        if let Ok(r) = parse_culane_lines(&junk, "x.jpg".into(), (1640, 590), &mut warnings) {
            r.validate().unwrap();
        }
    }
}

#[test]
fn basis_reload_preserves_residual() {
    let set = common::LaneSet::generate(&common::spec(200, 5));
    let matrix = LaneMatrix::from_lanes(&set.lanes()).unwrap();
    let basis = build_basis(&matrix, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("basis.json");
    save_basis(&path, &basis).unwrap();
    let back = load_basis(&path).unwrap();
    assert_eq!(back.u(), basis.u());
    assert_eq!(back.id(), basis.id());
    let (a, b) = (
        basis.approximation_error(&matrix).unwrap(),
        back.approximation_error(&matrix).unwrap(),
    );
    assert!((a - b).abs() <= 1e-12 * a.max(1.0));

    let cands = cluster_lanes(
        &basis,
        &set.lanes(),
        &ClusteringConfig {
            k: 20,
            ..Default::default()
        },
    )
    .unwrap();
    let cpath = dir.path().join("cands.json");
    save_candidates(&cpath, &cands).unwrap();
    let cback = load_candidates(&cpath, &back).unwrap();
    assert_eq!(cback.lanes(), cands.lanes());
    assert_eq!(cback.coefficients(), cands.coefficients());
}

#[test]
fn versioned_json_rejects_other_versions_and_bad_dims() {
    let grid = Arc::new(SamplingGrid::uniform(1280, 720, 4, 710.0, 220.0).unwrap());
    let data = nalgebra::DMatrix::from_fn(4, 6, |r, c| (r * 7 + c * c * 3 + r * c) as f64);
    let basis = build_basis(&LaneMatrix::from_matrix(grid, data).unwrap(), 2).unwrap();
    let text = to_versioned_json(&BasisFile::from_basis(&basis)).unwrap();
    let bumped = text.replace("\"version\":1", "\"version\":2");
    assert!(matches!(
        from_versioned_json::<BasisFile>(&bumped),
        Err(Error::Version {
            found: 2,
            expected: 1
        })
    ));
    let mut file: BasisFile = from_versioned_json(&text).unwrap();
    file.u.pop();
    assert!(matches!(file.into_basis(), Err(Error::Schema(_))));
    assert!(matches!(
        from_versioned_json::<BasisFile>("{\"version\":1"),
        Err(Error::Parse { .. })
    ));
}

fn golden_layers() -> Vec<Layer> {
    let grid = Arc::new(SamplingGrid::uniform(1280, 720, 6, 710.0, 220.0).unwrap());
    let lane = |x0: f64, slope: f64, top: usize| {
        let xs = grid
            .y_coords()
            .iter()
            .map(|&y| x0 + slope * (710.0 - y))
            .collect();
        Lane::new(Arc::clone(&grid), xs, top).unwrap()
    };
    vec![
        Layer::from_lanes(
            "ground truth",
            LayerStyle::ground_truth(),
            &[lane(300.0, 0.6, 6), lane(900.0, -0.5, 5)],
        ),
        Layer::from_lanes(
            "candidates",
            LayerStyle::candidates(),
            &[
                lane(320.0, 0.55, 6),
                lane(880.0, -0.45, 6),
                lane(640.0, 0.0, 6),
            ],
        ),
        Layer::from_lanes(
            "detections",
            LayerStyle::detections(),
            &[lane(301.5, 0.6, 6), lane(899.0, -0.5, 5)],
        ),
    ]
}

/// Set `EIGENLANE_BLESS=1` to regenerate the golden file.
#[test]
fn svg_matches_golden_file() {
    let svg = svg_string("fixture <scene> & lanes", (1280, 720), &golden_layers());
    let path = fixtures().join("golden.svg");
    if std::env::var_os("EIGENLANE_BLESS").is_some() {
        std::fs::write(&path, &svg).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap();
    assert_eq!(svg, golden);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.svg");
    render_svg(
        &out,
        "fixture <scene> & lanes",
        (1280, 720),
        &golden_layers(),
    )
    .unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), golden.as_bytes());
}
