use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::lane::SamplingGrid;

/// Relative frequency of each road family (per image).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyWeights {
    pub straight: f64,
    pub arc: f64,
    pub s_curve: f64,
}

impl Default for FamilyWeights {
    fn default() -> Self {
        Self {
            straight: 0.4,
            arc: 0.35,
            s_curve: 0.25,
        }
    }
}

/// Synthetic dataset description.
///
/// Each image shows a road of parallel lane boundaries on a flat ground
/// plane, seen by a forward-looking pinhole camera. Road geometry is in
/// meters; image heights are fractions of the image height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub weights: FamilyWeights,
    /// Range of |road curvature| (1/m) for arcs and both halves of S-curves.
    pub curvature_range: (f64, f64),
    pub count: usize,
    pub seed: u64,
    pub image_size: (u32, u32),
    pub n_samples: usize,
    pub max_lanes: usize,
    /// Lane width on the road.
    pub lane_width_range: (f64, f64),
    /// Lateral camera position relative to the center of its lane.
    pub ego_offset_range: (f64, f64),
    /// Largest camera yaw against the road direction, degrees.
    pub max_yaw_deg: f64,
    pub camera_height: f64,
    /// Focal length in pixels divided by the image width.
    pub focal_ratio: f64,
    /// Range of the topmost annotated height, as a fraction of image height.
    pub top_range: (f64, f64),
    /// Range of the horizon row, as a fraction of image height.
    pub horizon_range: (f64, f64),
    /// Range of the distance at which S-curves switch bending direction.
    pub inflection_range: (f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            weights: FamilyWeights::default(),
            curvature_range: (2.0e-3, 3.0e-2),
            count: 100,
            seed: 0,
            image_size: (1280, 720),
            n_samples: 50,
            max_lanes: 5,
            lane_width_range: (3.2, 3.8),
            ego_offset_range: (-0.6, 0.6),
            max_yaw_deg: 3.0,
            camera_height: 2.1,
            focal_ratio: 0.8,
            top_range: (0.31, 0.4),
            horizon_range: (0.25, 0.27),
            inflection_range: (8.0, 25.0),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let ws = [w.straight, w.arc, w.s_curve];
        if ws.iter().any(|v| !v.is_finite() || *v < 0.0) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig(
                "family weights must be non-negative with a positive sum".into(),
            ));
        }
        let ranges = [
            ("curvature_range", self.curvature_range),
            ("lane_width_range", self.lane_width_range),
            ("top_range", self.top_range),
            ("horizon_range", self.horizon_range),
            ("inflection_range", self.inflection_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !lo.is_finite() || !hi.is_finite() || lo > hi || lo < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a finite [lo, hi] with lo >= 0"
                )));
            }
        }
        let (lo, hi) = self.ego_offset_range;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidConfig(
                "ego_offset_range must be a finite [lo, hi]".into(),
            ));
        }
        if self.lane_width_range.0 <= 0.0 {
            return Err(Error::InvalidConfig("lane width must be positive".into()));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::InvalidConfig("image size must be positive".into()));
        }
        if self.max_lanes == 0 || self.n_samples < 2 {
            return Err(Error::InvalidConfig(
                "need max_lanes >= 1 and n_samples >= 2".into(),
            ));
        }
        if !(0.0..90.0).contains(&self.max_yaw_deg) {
            return Err(Error::InvalidConfig(
                "max_yaw_deg must be in [0, 90)".into(),
            ));
        }
        if !(self.camera_height > 0.0 && self.camera_height.is_finite())
            || !(self.focal_ratio > 0.0 && self.focal_ratio.is_finite())
        {
            return Err(Error::InvalidConfig(
                "camera height and focal ratio must be positive".into(),
            ));
        }
        let (bottom, _) = grid_extent(1);
        if self.horizon_range.1 >= self.top_range.0 || self.top_range.1 >= bottom {
            return Err(Error::InvalidConfig(
                "need horizon < top of annotations < bottom grid row".into(),
            ));
        }
        self.grid().map(|_| ())
    }

    /// The sampling grid matching the generated annotations.
    pub fn grid(&self) -> Result<SamplingGrid> {
        default_grid(self.image_size, self.n_samples)
    }

    /// Vertical spacing between annotated heights (that of the grid).
    fn step(&self) -> f64 {
        let (bottom, top) = grid_extent(self.image_size.1);
        (bottom - top) / (self.n_samples - 1) as f64
    }
}

fn grid_extent(height: u32) -> (f64, f64) {
    let h = f64::from(height);
    (h * 71.0 / 72.0, h * 11.0 / 36.0)
}

/// `n` heights from just above the bottom edge to about 30% of the height
/// (710 down to 220 for a 720-pixel image).
pub fn default_grid(image_size: (u32, u32), n: usize) -> Result<SamplingGrid> {
    let (bottom, top) = grid_extent(image_size.1);
    SamplingGrid::uniform(image_size.0, image_size.1, n, bottom, top)
}

/// Pinhole camera over a flat ground plane, looking along +z.
///
/// A ground point at lateral offset `x` and distance `z` images to column
/// `cx + focal * x / z` and row `horizon + focal * height / z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub cx: f64,
    pub horizon: f64,
    pub focal: f64,
    pub height: f64,
}

impl Camera {
    /// Ground distance seen at image row `y`; `None` at or above the horizon.
    pub fn depth(&self, y: f64) -> Option<f64> {
        (y > self.horizon).then(|| self.focal * self.height / (y - self.horizon))
    }

    pub fn column(&self, x: f64, z: f64) -> f64 {
        self.cx + self.focal * x / z
    }
}

/// Ground-plane circle branch `x = x0 + side * sqrt(r^2 - (z - z0)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleBranch {
    pub x0: f64,
    pub z0: f64,
    pub r: f64,
    pub side: f64,
}

impl CircleBranch {
    pub fn lateral_at(&self, z: f64) -> Option<f64> {
        let d = self.r * self.r - (z - self.z0) * (z - self.z0);
        (d >= 0.0).then(|| self.x0 + self.side * d.sqrt())
    }
}

/// The exact ground-plane curve a synthetic lane was sampled from, in camera
/// coordinates (lateral `x`, distance `z`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LaneShape {
    /// `x = offset + slope * z`.
    Line {
        offset: f64,
        slope: f64,
    },
    Arc(CircleBranch),
    /// Two tangent arcs of opposite bending; `lower` up to distance `z_join`.
    SCurve {
        lower: CircleBranch,
        upper: CircleBranch,
        z_join: f64,
    },
}

impl LaneShape {
    pub fn lateral_at(&self, z: f64) -> Option<f64> {
        match *self {
            LaneShape::Line { offset, slope } => Some(offset + slope * z),
            LaneShape::Arc(c) => c.lateral_at(z),
            LaneShape::SCurve {
                lower,
                upper,
                z_join,
            } => {
                if z <= z_join {
                    lower.lateral_at(z)
                } else {
                    upper.lateral_at(z)
                }
            }
        }
    }

    /// Image column of the lane at row `y`, if the curve reaches that row.
    pub fn x_at(&self, camera: &Camera, y: f64) -> Option<f64> {
        let z = camera.depth(y)?;
        self.lateral_at(z).map(|x| camera.column(x, z))
    }
}

/// A generated record with the camera and shapes behind each of its lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord {
    pub record: DatasetRecord,
    pub camera: Camera,
    pub shapes: Vec<LaneShape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Straight,
    Arc,
    SCurve,
}

impl Family {
    fn name(self) -> &'static str {
        match self {
            Family::Straight => "straight",
            Family::Arc => "arc",
            Family::SCurve => "s-curve",
        }
    }
}

/// Deterministic synthetic dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<DatasetRecord>> {
    Ok(generate_synthetic_with_shapes(spec)?
        .into_iter()
        .map(|s| s.record)
        .collect())
}

/// [`generate_synthetic`] that also returns the camera and lane shapes.
pub fn generate_synthetic_with_shapes(spec: &SyntheticSpec) -> Result<Vec<SyntheticRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        loop {
            let rec = generate_record(spec, index, &mut rng);
            if !rec.shapes.is_empty() {
                out.push(rec);
                break;
            }
        }
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn pick_family(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Family {
    let w = spec.weights;
    let u = rng.random::<f64>() * (w.straight + w.arc + w.s_curve);
    if u < w.straight {
        Family::Straight
    } else if u < w.straight + w.arc || w.s_curve == 0.0 {
        Family::Arc
    } else {
        Family::SCurve
    }
}

/// Lane boundaries as parallel curves of the ego path.
///
/// The ego path leaves the camera with heading `yaw`; boundary offsets are
/// measured along its normal `(cos yaw, -sin yaw)`.
fn road_shapes(
    family: Family,
    spec: &SyntheticSpec,
    offsets: &[f64],
    yaw: f64,
    rng: &mut ChaCha8Rng,
) -> (Family, Vec<LaneShape>) {
    let (sin, cos) = yaw.sin_cos();
    if family == Family::Straight {
        let shapes = offsets
            .iter()
            .map(|&d| LaneShape::Line {
                offset: d / cos,
                slope: sin / cos,
            })
            .collect();
        return (family, shapes);
    }
    let bend = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let r1 = 1.0 / uniform(rng, spec.curvature_range).max(1e-6);
    let c1 = (bend * r1 * cos, -bend * r1 * sin);
    // offset d sits at signed distance (d - bend * r1) from c1 along the normal
    let lower = |d: f64| CircleBranch {
        x0: c1.0,
        z0: c1.1,
        r: (d - bend * r1).abs(),
        side: (d - bend * r1).signum(),
    };
    let z_join = uniform(rng, spec.inflection_range);
    let r2 = 1.0 / uniform(rng, spec.curvature_range).max(1e-6);
    let ego = lower(0.0);
    let keep = |d: f64| (d - bend * r1).signum() == ego.side;
    match (family, ego.lateral_at(z_join)) {
        (Family::SCurve, Some(xj)) => {
            let n = ((xj - c1.0) / r1, (z_join - c1.1) / r1);
            let c2 = (xj + n.0 * r2, z_join + n.1 * r2);
            let shapes = offsets
                .iter()
                .filter(|&&d| keep(d))
                .map(|&d| {
                    let low = lower(d);
                    let join = (c1.0 + n.0 * low.r, c1.1 + n.1 * low.r);
                    let upper = CircleBranch {
                        x0: c2.0,
                        z0: c2.1,
                        r: r1 + r2 - low.r,
                        side: (join.0 - c2.0).signum(),
                    };
                    LaneShape::SCurve {
                        lower: low,
                        upper,
                        z_join: join.1,
                    }
                })
                .collect();
            (Family::SCurve, shapes)
        }
        _ => {
            let shapes = offsets
                .iter()
                .filter(|&&d| keep(d))
                .map(|&d| LaneShape::Arc(lower(d)))
                .collect();
            (Family::Arc, shapes)
        }
    }
}

/// Annotated points every grid step from the bottom row up to `top`: the
/// first contiguous run of rows where the lane is inside the image.
fn annotate(shape: &LaneShape, camera: &Camera, spec: &SyntheticSpec, top: f64) -> Vec<(f64, f64)> {
    let w = f64::from(spec.image_size.0);
    let (y_base, _) = grid_extent(spec.image_size.1);
    let step = spec.step();
    let mut pts = Vec::new();
    for j in 0.. {
        let y = y_base - step * j as f64;
        if y < top - 1e-9 {
            break;
        }
        match shape.x_at(camera, y) {
            Some(x) if (0.0..w).contains(&x) => pts.push((x, y)),
            Some(_) if pts.is_empty() => continue,
            _ => break,
        }
    }
    pts.reverse();
    pts
}

fn generate_record(spec: &SyntheticSpec, index: usize, rng: &mut ChaCha8Rng) -> SyntheticRecord {
    let (w, h) = (f64::from(spec.image_size.0), f64::from(spec.image_size.1));
    let camera = Camera {
        cx: w / 2.0,
        horizon: h * uniform(rng, spec.horizon_range),
        focal: w * spec.focal_ratio,
        height: spec.camera_height,
    };
    let top = h * uniform(rng, spec.top_range);
    let family = pick_family(spec, rng);
    let yaw = uniform(rng, (-1.0, 1.0)) * spec.max_yaw_deg.to_radians();
    let lane_width = uniform(rng, spec.lane_width_range);
    let ego = uniform(rng, spec.ego_offset_range);

    // boundaries of the ego lane and its neighbors, nearest first
    let mut offsets: Vec<f64> = (-3..3)
        .map(|j| (f64::from(j) + 0.5) * lane_width - ego)
        .collect();
    offsets.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let n = rng.random_range(1..=spec.max_lanes.min(offsets.len()));
    offsets.truncate(n);
    offsets.sort_by(f64::total_cmp);

    let (family, candidates) = road_shapes(family, spec, &offsets, yaw, rng);
    let mut shapes = Vec::new();
    let mut lanes = Vec::new();
    for shape in candidates {
        let pts = annotate(&shape, &camera, spec, top);
        if pts.len() >= 2 {
            lanes.push(pts);
            shapes.push(shape);
        }
    }
    SyntheticRecord {
        record: DatasetRecord {
            image_id: format!("synth_{index:05}"),
            image_size: spec.image_size,
            lanes,
            category: Some(family.name().to_string()),
        },
        camera,
        shapes,
    }
}
