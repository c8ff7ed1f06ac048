use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::lane::{resample_polyline, Lane, SamplingGrid};

/// TuSimple marker for a missing x value.
pub const MISSING_X: f64 = -2.0;

/// One annotated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image_id: String,
    pub image_size: (u32, u32),
    /// Polylines in image pixels, each with at least two in-bounds points.
    pub lanes: Vec<Vec<(f64, f64)>>,
    pub category: Option<String>,
}

/// Problems tolerated while loading.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadWarnings {
    pub dropped_points: usize,
    pub skipped_lanes: usize,
}

impl LoadWarnings {
    pub fn is_empty(&self) -> bool {
        self.dropped_points == 0 && self.skipped_lanes == 0
    }
}

/// Records plus the warnings raised while reading them.
#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub records: Vec<DatasetRecord>,
    pub warnings: LoadWarnings,
}

impl DatasetRecord {
    /// Builds a record, dropping out-of-bounds points and unusable lanes.
    pub fn sanitized(
        image_id: String,
        image_size: (u32, u32),
        raw_lanes: Vec<Vec<(f64, f64)>>,
        category: Option<String>,
        warnings: &mut LoadWarnings,
    ) -> Result<Self> {
        let (w, h) = image_size;
        if w == 0 || h == 0 {
            return Err(Error::InvalidConfig("image size must be positive".into()));
        }
        let mut lanes = Vec::with_capacity(raw_lanes.len());
        for (i, raw) in raw_lanes.into_iter().enumerate() {
            let before = raw.len();
            let kept: Vec<(f64, f64)> = raw
                .into_iter()
                .filter(|&(x, y)| in_bounds(x, y, image_size))
                .collect();
            if kept.len() < before {
                warn!(
                    "{image_id}: lane {i}: dropped {} out-of-bounds points",
                    before - kept.len()
                );
                warnings.dropped_points += before - kept.len();
            }
            let y_span = kept
                .iter()
                .map(|p| p.1)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
                    (lo.min(y), hi.max(y))
                });
            if kept.len() < 2 || y_span.1 <= y_span.0 {
                warn!("{image_id}: lane {i}: skipped, fewer than 2 usable points");
                warnings.skipped_lanes += 1;
                continue;
            }
            lanes.push(kept);
        }
        Ok(Self {
            image_id,
            image_size,
            lanes,
            category,
        })
    }

    /// Checks the record invariants.
    pub fn validate(&self) -> Result<()> {
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::InvalidAnnotation(format!(
                "{}: image size must be positive",
                self.image_id
            )));
        }
        for lane in &self.lanes {
            if lane.len() < 2 || lane.iter().any(|&(x, y)| !in_bounds(x, y, self.image_size)) {
                return Err(Error::InvalidAnnotation(format!(
                    "{}: lanes need at least 2 in-bounds points",
                    self.image_id
                )));
            }
        }
        Ok(())
    }

    /// Resamples every polyline onto `grid`.
    pub fn to_lanes(&self, grid: &Arc<SamplingGrid>) -> Result<Vec<Lane>> {
        if (grid.image_width(), grid.image_height()) != self.image_size {
            return Err(Error::GridMismatch);
        }
        self.lanes
            .iter()
            .map(|p| resample_polyline(p, grid))
            .collect()
    }

    /// A record holding the valid samples of `lanes`.
    ///
    /// Samples outside the image are dropped, so the result always satisfies
    /// the record invariants (lanes that end up too short are omitted).
    pub fn from_lanes(image_id: String, lanes: &[Lane], category: Option<String>) -> Result<Self> {
        let Some(first) = lanes.first() else {
            return Err(Error::EmptyInput(
                "record needs a lane to infer the image size",
            ));
        };
        let size = (first.grid().image_width(), first.grid().image_height());
        let raw = lanes
            .iter()
            .map(|l| {
                let mut pts: Vec<(f64, f64)> = l
                    .valid_points()
                    .filter(|&(x, y)| in_bounds(x, y, size))
                    .collect();
                pts.reverse();
                pts
            })
            .collect();
        Self::sanitized(image_id, size, raw, category, &mut LoadWarnings::default())
    }
}

fn in_bounds(x: f64, y: f64, (w, h): (u32, u32)) -> bool {
    x.is_finite() && y.is_finite() && x >= 0.0 && x < f64::from(w) && y >= 0.0 && y < f64::from(h)
}

fn field<'a>(obj: &'a Value, key: &str, line: usize) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Schema(format!("line {line}: missing key `{key}`")))
}

fn numbers(v: &Value, what: &str, line: usize) -> Result<Vec<f64>> {
    v.as_array()
        .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
        .ok_or_else(|| Error::Schema(format!("line {line}: `{what}` must be an array of numbers")))
}

/// Parses TuSimple-style JSON lines.
///
/// Each non-empty line holds `raw_file`, `h_samples` and `lanes` (one x array
/// per lane aligned with `h_samples`, `-2` marking gaps), and optionally a
/// `category` tag. TuSimple files carry no image size, so it is supplied.
pub fn parse_tusimple_jsonl(reader: impl BufRead, image_size: (u32, u32)) -> Result<LoadedDataset> {
    let mut out = LoadedDataset::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = field(&obj, "raw_file", line_no)?
            .as_str()
            .ok_or_else(|| Error::Schema(format!("line {line_no}: `raw_file` must be a string")))?
            .to_string();
        let hs = numbers(field(&obj, "h_samples", line_no)?, "h_samples", line_no)?;
        let lanes = field(&obj, "lanes", line_no)?
            .as_array()
            .ok_or_else(|| Error::Schema(format!("line {line_no}: `lanes` must be an array")))?;
        let category = match obj.get("category") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                return Err(Error::Schema(format!(
                    "line {line_no}: `category` must be a string"
                )))
            }
        };
        let mut raw = Vec::with_capacity(lanes.len());
        for lane in lanes {
            let xs = numbers(lane, "lanes", line_no)?;
            if xs.len() != hs.len() {
                return Err(Error::Schema(format!(
                    "line {line_no}: lane has {} xs for {} h_samples",
                    xs.len(),
                    hs.len()
                )));
            }
            raw.push(
                xs.iter()
                    .zip(&hs)
                    .filter(|(&x, _)| x != MISSING_X)
                    .map(|(&x, &y)| (x, y))
                    .collect(),
            );
        }
        let record = DatasetRecord::sanitized(id, image_size, raw, category, &mut out.warnings)?;
        out.records.push(record);
    }
    Ok(out)
}

pub fn load_tusimple_jsonl(path: &Path, image_size: (u32, u32)) -> Result<LoadedDataset> {
    parse_tusimple_jsonl(BufReader::new(File::open(path)?), image_size)
}

#[derive(Serialize)]
struct TuSimpleLine<'a> {
    raw_file: &'a str,
    h_samples: Vec<f64>,
    lanes: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    category: Option<&'a str>,
}

/// Writes records as TuSimple JSON lines.
///
/// `h_samples` is the ascending union of the record's annotated heights;
/// each lane has its x where annotated and `-2` elsewhere.
pub fn write_tusimple_jsonl(writer: impl Write, records: &[DatasetRecord]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        let mut hs: Vec<f64> = r.lanes.iter().flatten().map(|p| p.1).collect();
        hs.sort_by(f64::total_cmp);
        hs.dedup();
        let lanes = r
            .lanes
            .iter()
            .map(|lane| {
                let at: HashMap<u64, f64> = lane.iter().map(|&(x, y)| (y.to_bits(), x)).collect();
                hs.iter()
                    .map(|y| at.get(&y.to_bits()).copied().unwrap_or(MISSING_X))
                    .collect()
            })
            .collect();
        let line = TuSimpleLine {
            raw_file: &r.image_id,
            h_samples: hs,
            lanes,
            category: r.category.as_deref(),
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_tusimple_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    write_tusimple_jsonl(File::create(path)?, records)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    image_id: String,
    lane_id: String,
    x: f64,
    y: f64,
}

/// Parses `image_id,lane_id,x,y` rows (with header).
///
/// Images and lanes keep the order of their first appearance; points keep
/// file order within a lane.
pub fn parse_csv(reader: impl std::io::Read, image_size: (u32, u32)) -> Result<LoadedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut images: Vec<(String, Vec<(String, Vec<(f64, f64)>)>)> = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(i + 2, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let img = match images.iter().position(|(id, _)| *id == row.image_id) {
            Some(k) => &mut images[k].1,
            None => {
                images.push((row.image_id.clone(), Vec::new()));
                &mut images.last_mut().expect("just pushed").1
            }
        };
        match img.iter_mut().find(|(id, _)| *id == row.lane_id) {
            Some((_, pts)) => pts.push((row.x, row.y)),
            None => img.push((row.lane_id, vec![(row.x, row.y)])),
        }
    }
    let mut out = LoadedDataset::default();
    for (id, lanes) in images {
        let raw = lanes.into_iter().map(|(_, pts)| pts).collect();
        out.records.push(DatasetRecord::sanitized(
            id,
            image_size,
            raw,
            None,
            &mut out.warnings,
        )?);
    }
    Ok(out)
}

pub fn load_csv(path: &Path, image_size: (u32, u32)) -> Result<LoadedDataset> {
    parse_csv(File::open(path)?, image_size)
}

pub fn write_csv(writer: impl Write, records: &[DatasetRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        for (lane_id, lane) in r.lanes.iter().enumerate() {
            for &(x, y) in lane {
                w.serialize(CsvRow {
                    image_id: r.image_id.clone(),
                    lane_id: lane_id.to_string(),
                    x,
                    y,
                })
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses one CULane `.lines.txt` body: one lane per line as `x y x y ...`.
pub fn parse_culane_lines(
    text: &str,
    image_id: String,
    image_size: (u32, u32),
    warnings: &mut LoadWarnings,
) -> Result<DatasetRecord> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        if vals.len() % 2 != 0 {
            return Err(Error::Parse {
                line: i + 1,
                message: "odd number of coordinates".into(),
            });
        }
        raw.push(vals.chunks(2).map(|c| (c[0], c[1])).collect());
    }
    DatasetRecord::sanitized(image_id, image_size, raw, None, warnings)
}

/// Loads every `*.lines.txt` below `root`, in path order.
///
/// Image ids are the relative paths with the suffix replaced by `.jpg`.
pub fn load_culane_dir(root: &Path, image_size: (u32, u32)) -> Result<LoadedDataset> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.to_string_lossy().ends_with(".lines.txt") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, &mut files)?;
    files.sort();
    let mut out = LoadedDataset::default();
    for path in files {
        let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy();
        let id = format!("{}.jpg", rel.trim_end_matches(".lines.txt"));
        let text = fs::read_to_string(&path)?;
        out.records.push(parse_culane_lines(
            &text,
            id,
            image_size,
            &mut out.warnings,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tusimple_direct_mapping() {
        let text =
            r#"{"raw_file":"a.jpg","h_samples":[400,410,420],"lanes":[[100,110,120],[-2,-2,-2]]}"#;
        let ds = parse_tusimple_jsonl(text.as_bytes(), (1280, 720)).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(
            ds.records[0].lanes,
            vec![vec![(100.0, 400.0), (110.0, 410.0), (120.0, 420.0)]]
        );
        assert_eq!(ds.warnings.skipped_lanes, 1);
    }

    #[test]
    fn tusimple_errors() {
        let bad = "{\"raw_file\": \"a\"\n";
        assert!(matches!(
            parse_tusimple_jsonl(bad.as_bytes(), (1280, 720)),
            Err(Error::Parse { line: 1, .. })
        ));
        let missing = "\n{\"raw_file\":\"a\",\"lanes\":[]}";
        assert!(matches!(
            parse_tusimple_jsonl(missing.as_bytes(), (1280, 720)),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn out_of_bounds_points_are_dropped() {
        let text =
            r#"{"raw_file":"a","h_samples":[400,410,420],"lanes":[[-5,110,120],[2000,3000,5]]}"#;
        let ds = parse_tusimple_jsonl(text.as_bytes(), (1280, 720)).unwrap();
        assert_eq!(ds.records[0].lanes.len(), 1);
        assert_eq!(ds.warnings.dropped_points, 3);
        assert_eq!(ds.warnings.skipped_lanes, 1);
        ds.records[0].validate().unwrap();
    }

    #[test]
    fn tusimple_round_trip() {
        let rec = DatasetRecord {
            image_id: "x/1.jpg".into(),
            image_size: (1280, 720),
            lanes: vec![
                vec![(100.25, 400.0), (110.5, 410.0), (120.125, 420.0)],
                vec![(700.0 / 3.0, 410.0), (0.1, 430.0)],
            ],
            category: Some("curve".into()),
        };
        let mut buf = Vec::new();
        write_tusimple_jsonl(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let back = parse_tusimple_jsonl(buf.as_slice(), (1280, 720)).unwrap();
        assert_eq!(back.records, vec![rec]);
    }

    #[test]
    fn csv_round_trip() {
        let rec = DatasetRecord {
            image_id: "img".into(),
            image_size: (640, 360),
            lanes: vec![
                vec![(10.0, 300.0), (20.0, 200.0)],
                vec![(300.5, 350.0), (310.0, 100.0)],
            ],
            category: None,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let back = parse_csv(buf.as_slice(), (640, 360)).unwrap();
        assert_eq!(back.records, vec![rec]);
        assert!(matches!(
            parse_csv("image_id,lane_id,x,y\na,0,zz,1\n".as_bytes(), (640, 360)),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn culane_lines() {
        let mut w = LoadWarnings::default();
        let rec = parse_culane_lines(
            "10 300 20 200\n\n5 100\n",
            "a.jpg".into(),
            (1640, 590),
            &mut w,
        )
        .unwrap();
        assert_eq!(rec.lanes, vec![vec![(10.0, 300.0), (20.0, 200.0)]]);
        assert_eq!(w.skipped_lanes, 1);
        assert!(parse_culane_lines("1 2 3", "a".into(), (10, 10), &mut w).is_err());
    }

    #[test]
    fn lanes_to_record_and_back() {
        let grid = Arc::new(SamplingGrid::uniform(1280, 720, 50, 710.0, 220.0).unwrap());
        let lane = Lane::new(
            Arc::clone(&grid),
            (0..50).map(|k| 300.0 + 2.0 * k as f64).collect(),
            40,
        )
        .unwrap();
        let rec = DatasetRecord::from_lanes("a".into(), std::slice::from_ref(&lane), None).unwrap();
        assert_eq!(rec.lanes[0].len(), 40);
        let back = &rec.to_lanes(&grid).unwrap()[0];
        assert_eq!(back.top_index(), 40);
        for (a, b) in back.xs().iter().zip(lane.xs()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
