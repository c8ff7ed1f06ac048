//! Sampled lane representation.
//!
//! A lane is stored as the x-coordinates of a curve at a fixed set of image
//! heights shared by every lane of a dataset (the [`SamplingGrid`]). Index 0
//! is the sample nearest to the camera (bottom of the image). Lanes shorter
//! than the grid are extended by linear extrapolation so that every lane is a
//! complete vector; `top_index` records where the annotated part ends.
//!
//! For evaluation a lane is rasterized as a horizontal stripe of fixed width
//! on every image row of its valid extent, and two lanes are compared by the
//! intersection-over-union of their stripes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPAN_EPS: f64 = 1e-9;

/// The vertical sampling grid shared by all lanes of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct SamplingGrid {
    image_width: u32,
    image_height: u32,
    y_coords: Vec<f64>,
}

#[derive(Deserialize)]
struct RawGrid {
    image_width: u32,
    image_height: u32,
    y_coords: Vec<f64>,
}

impl TryFrom<RawGrid> for SamplingGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        SamplingGrid::new(raw.image_width, raw.image_height, raw.y_coords)
    }
}

impl SamplingGrid {
    /// Builds a grid from explicit heights, bottom of the image first.
    pub fn new(image_width: u32, image_height: u32, y_coords: Vec<f64>) -> Result<Self> {
        if image_width == 0 || image_height == 0 {
            return Err(Error::InvalidConfig("image size must be positive".into()));
        }
        if y_coords.is_empty() {
            return Err(Error::InvalidConfig(
                "sampling grid needs at least one height".into(),
            ));
        }
        let h = f64::from(image_height);
        if y_coords
            .iter()
            .any(|y| !y.is_finite() || *y < 0.0 || *y >= h)
        {
            return Err(Error::InvalidConfig(format!(
                "grid heights must lie in [0, {image_height})"
            )));
        }
        if y_coords.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig(
                "grid heights must be strictly decreasing (bottom first)".into(),
            ));
        }
        Ok(Self {
            image_width,
            image_height,
            y_coords,
        })
    }

    /// `n` heights evenly spaced from `y_bottom` up to `y_top`.
    pub fn uniform(
        image_width: u32,
        image_height: u32,
        n: usize,
        y_bottom: f64,
        y_top: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("sample count must be positive".into()));
        }
        let ys = if n == 1 {
            vec![y_bottom]
        } else {
            let step = (y_bottom - y_top) / (n - 1) as f64;
            (0..n).map(|k| y_bottom - step * k as f64).collect()
        };
        Self::new(image_width, image_height, ys)
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    pub fn n_samples(&self) -> usize {
        self.y_coords.len()
    }

    pub fn y_coords(&self) -> &[f64] {
        &self.y_coords
    }

    /// Height of the sample nearest to the camera.
    pub fn y_bottom(&self) -> f64 {
        self.y_coords[0]
    }

    /// Height of the farthest sample.
    pub fn y_top(&self) -> f64 {
        self.y_coords[self.y_coords.len() - 1]
    }

    /// Number of samples whose height is at or below `y` in image terms
    /// (i.e. `y_k >= y`). Used to cut lanes at a given top height.
    pub fn count_at_or_below(&self, y: f64) -> usize {
        self.y_coords.partition_point(|&yk| yk >= y - SPAN_EPS)
    }
}

/// A lane sampled on a [`SamplingGrid`].
#[derive(Debug, Clone)]
pub struct Lane {
    grid: Arc<SamplingGrid>,
    xs: Vec<f64>,
    top_index: usize,
}

impl PartialEq for Lane {
    fn eq(&self, other: &Self) -> bool {
        self.same_grid(other) && self.top_index == other.top_index && self.xs == other.xs
    }
}

impl Lane {
    pub fn new(grid: Arc<SamplingGrid>, xs: Vec<f64>, top_index: usize) -> Result<Self> {
        if xs.len() != grid.n_samples() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_samples(),
                found: xs.len(),
            });
        }
        if top_index > xs.len() {
            return Err(Error::IndexError {
                index: top_index,
                len: xs.len() + 1,
            });
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidAnnotation(
                "lane coordinates must be finite".into(),
            ));
        }
        Ok(Self {
            grid,
            xs,
            top_index,
        })
    }

    /// A fully annotated lane.
    pub fn full(grid: Arc<SamplingGrid>, xs: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        Self::new(grid, xs, n)
    }

    pub fn grid(&self) -> &Arc<SamplingGrid> {
        &self.grid
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn top_index(&self) -> usize {
        self.top_index
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    /// True when no sample is valid.
    pub fn is_empty(&self) -> bool {
        self.top_index == 0
    }

    /// Same coordinates with a different valid extent.
    pub fn with_top_index(&self, top_index: usize) -> Lane {
        Lane {
            grid: Arc::clone(&self.grid),
            xs: self.xs.clone(),
            top_index: top_index.min(self.xs.len()),
        }
    }

    pub fn same_grid(&self, other: &Lane) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn check_grid(&self, grid: &SamplingGrid) -> Result<()> {
        if std::ptr::eq(&*self.grid, grid) || *self.grid == *grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Valid `(x, y)` samples, bottom first.
    pub fn valid_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs[..self.top_index]
            .iter()
            .copied()
            .zip(self.grid.y_coords().iter().copied())
    }

    /// All `(x, y)` samples including extrapolated ones.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs
            .iter()
            .copied()
            .zip(self.grid.y_coords().iter().copied())
    }

    /// Height span `(top, bottom)` of the valid extent.
    pub fn valid_y_range(&self) -> Option<(f64, f64)> {
        if self.top_index == 0 {
            return None;
        }
        let ys = self.grid.y_coords();
        Some((ys[self.top_index - 1], ys[0]))
    }

    /// x-coordinate at height `y` by linear interpolation between grid
    /// samples. Returns `None` outside the grid's height range.
    pub fn x_at(&self, y: f64) -> Option<f64> {
        interp_decreasing(self.grid.y_coords(), &self.xs, y)
    }

    /// Largest absolute second difference of the sampled coordinates.
    pub fn max_second_difference(&self) -> f64 {
        self.xs
            .windows(3)
            .map(|w| (w[0] - 2.0 * w[1] + w[2]).abs())
            .fold(0.0, f64::max)
    }
}

/// Linear interpolation on strictly decreasing abscissae.
fn interp_decreasing(ys: &[f64], xs: &[f64], y: f64) -> Option<f64> {
    let n = ys.len();
    if n == 0 || y > ys[0] || y < ys[n - 1] {
        return None;
    }
    if n == 1 {
        return Some(xs[0]);
    }
    // first index with ys[k] <= y
    let k = ys.partition_point(|&yk| yk > y);
    if k == 0 {
        return Some(xs[0]);
    }
    if ys[k] == y {
        return Some(xs[k]);
    }
    let (y0, y1) = (ys[k - 1], ys[k]);
    let t = (y0 - y) / (y0 - y1);
    Some(xs[k - 1] + (xs[k] - xs[k - 1]) * t)
}

/// Resamples an annotated polyline onto `grid`.
///
/// Heights covered by the polyline are linearly interpolated. Heights above
/// the polyline are extrapolated from the two nearest annotated grid samples
/// (falling back to the polyline's end segment when fewer than two grid
/// samples fall inside the annotation), and likewise below it. Samples below
/// the annotation are counted as part of the lane; those above it are not.
pub fn resample_polyline(points: &[(f64, f64)], grid: &Arc<SamplingGrid>) -> Result<Lane> {
    if points.len() < 2 {
        return Err(Error::InvalidAnnotation(format!(
            "polyline needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidAnnotation("non-finite polyline point".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let y_min = sorted[0].1;
    let y_max = sorted[sorted.len() - 1].1;
    if y_max - y_min <= 0.0 {
        return Err(Error::InvalidAnnotation(
            "polyline has a degenerate height span".into(),
        ));
    }

    let ys = grid.y_coords();
    let n = ys.len();
    let mut xs = vec![0.0; n];
    // indices [below_end, top_index) lie inside the annotated span
    let below_end = ys.partition_point(|&y| y > y_max + SPAN_EPS);
    let top_index = ys.partition_point(|&y| y >= y_min - SPAN_EPS);

    for k in below_end..top_index {
        xs[k] = interp_sorted(&sorted, ys[k].clamp(y_min, y_max));
    }

    let inside = top_index.saturating_sub(below_end);
    let (bottom_a, bottom_b) = if inside >= 2 {
        (
            (xs[below_end], ys[below_end]),
            (xs[below_end + 1], ys[below_end + 1]),
        )
    } else {
        end_segment(&sorted, false)
    };
    let (top_a, top_b) = if inside >= 2 {
        (
            (xs[top_index - 1], ys[top_index - 1]),
            (xs[top_index - 2], ys[top_index - 2]),
        )
    } else {
        end_segment(&sorted, true)
    };
    for k in 0..below_end.min(n) {
        xs[k] = extrapolate(bottom_a, bottom_b, ys[k]);
    }
    for k in top_index..n {
        xs[k] = extrapolate(top_a, top_b, ys[k]);
    }
    Lane::new(Arc::clone(grid), xs, top_index)
}

/// Interpolates a polyline sorted by ascending y at a height within its span.
fn interp_sorted(sorted: &[(f64, f64)], y: f64) -> f64 {
    let j = sorted.partition_point(|p| p.1 < y);
    if j == 0 {
        return sorted[0].0;
    }
    let (x1, y1) = sorted[j];
    if y1 == y {
        return x1;
    }
    let (x0, y0) = sorted[j - 1];
    x0 + (x1 - x0) * (y - y0) / (y1 - y0)
}

/// The two extreme points with distinct heights at one end of a sorted
/// polyline (`top = true` for the smallest heights).
fn end_segment(sorted: &[(f64, f64)], top: bool) -> ((f64, f64), (f64, f64)) {
    if top {
        let a = sorted[0];
        let b = sorted.iter().copied().find(|p| p.1 > a.1).unwrap_or(a);
        (a, b)
    } else {
        let a = sorted[sorted.len() - 1];
        let b = sorted
            .iter()
            .rev()
            .copied()
            .find(|p| p.1 < a.1)
            .unwrap_or(a);
        (a, b)
    }
}

fn extrapolate(a: (f64, f64), b: (f64, f64), y: f64) -> f64 {
    if a.1 == b.1 {
        return a.0;
    }
    a.0 + (b.0 - a.0) * (y - a.1) / (b.1 - a.1)
}

/// A lane rasterized as a horizontal stripe.
///
/// Row `first_row + i` covers the half-open column interval `spans[i]`.
/// Rows where the stripe is clipped away entirely have an empty span.
#[derive(Debug, Clone, PartialEq)]
pub struct StripeMask {
    width: u32,
    image_width: u32,
    image_height: u32,
    first_row: u32,
    spans: Vec<(u32, u32)>,
    area: u64,
    col_min: u32,
    col_max: u32,
}

impl StripeMask {
    fn empty(width: u32, image_width: u32, image_height: u32) -> Self {
        Self {
            width,
            image_width,
            image_height,
            first_row: 0,
            spans: Vec::new(),
            area: 0,
            col_min: u32::MAX,
            col_max: 0,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn first_row(&self) -> u32 {
        self.first_row
    }

    /// Column spans, one per row starting at [`first_row`](Self::first_row).
    pub fn spans(&self) -> &[(u32, u32)] {
        &self.spans
    }

    /// Number of covered pixels.
    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    /// Span covered on image row `row`, if any.
    pub fn span_at(&self, row: u32) -> Option<(u32, u32)> {
        let i = row.checked_sub(self.first_row)? as usize;
        self.spans.get(i).copied().filter(|s| s.1 > s.0)
    }

    /// Every covered pixel as `(row, col)`.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.spans.iter().enumerate().flat_map(move |(i, &(s, e))| {
            let row = self.first_row + i as u32;
            (s..e).map(move |c| (row, c))
        })
    }

    /// Number of pixels covered by both masks, by interval overlap.
    pub fn intersection(&self, other: &StripeMask) -> u64 {
        if self.is_empty()
            || other.is_empty()
            || self.col_max < other.col_min
            || other.col_max < self.col_min
        {
            return 0;
        }
        let lo = self.first_row.max(other.first_row);
        let hi = (self.first_row + self.spans.len() as u32)
            .min(other.first_row + other.spans.len() as u32);
        let mut inter = 0u64;
        for row in lo..hi {
            let (a0, a1) = self.spans[(row - self.first_row) as usize];
            let (b0, b1) = other.spans[(row - other.first_row) as usize];
            let s = a0.max(b0);
            let e = a1.min(b1);
            if e > s {
                inter += u64::from(e - s);
            }
        }
        inter
    }

    /// Intersection over union; 0 when both masks are empty.
    pub fn iou(&self, other: &StripeMask) -> f64 {
        let inter = self.intersection(other);
        let union = self.area + other.area - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Rasterizes `lane` as a stripe `width` pixels wide.
///
/// Each integer row inside the lane's valid extent gets the columns
/// `[floor(x - width/2 + 1/2), ... + width)` clipped to the image, where `x`
/// is the lane interpolated at that row. A zero width yields an empty mask.
pub fn rasterize_stripe(lane: &Lane, width: u32) -> StripeMask {
    let grid = lane.grid();
    let (iw, ih) = (grid.image_width(), grid.image_height());
    let mut mask = StripeMask::empty(width, iw, ih);
    let Some((y_top, y_bottom)) = lane.valid_y_range() else {
        return mask;
    };
    if width == 0 {
        return mask;
    }
    let r_lo = y_top.ceil().max(0.0);
    let r_hi = y_bottom.floor().min(f64::from(ih - 1));
    if r_hi < r_lo {
        return mask;
    }
    let (r_lo, r_hi) = (r_lo as u32, r_hi as u32);
    let half = f64::from(width) / 2.0;
    let limit = f64::from(iw);
    mask.first_row = r_lo;
    mask.spans.reserve((r_hi - r_lo + 1) as usize);
    for row in r_lo..=r_hi {
        let x = lane
            .x_at(f64::from(row))
            .expect("row lies inside the grid's height range");
        let start = (x - half + 0.5).floor().clamp(-1e12, 1e12);
        let end = start + f64::from(width);
        let s = start.clamp(0.0, limit) as u32;
        let e = end.clamp(0.0, limit) as u32;
        if e > s {
            mask.area += u64::from(e - s);
            mask.col_min = mask.col_min.min(s);
            mask.col_max = mask.col_max.max(e);
        }
        mask.spans.push((s, e.max(s)));
    }
    mask
}

/// Stripe IoU of two lanes on the same grid.
pub fn stripe_iou(a: &Lane, b: &Lane, width: u32) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    Ok(rasterize_stripe(a, width).iou(&rasterize_stripe(b, width)))
}

/// Stripe IoU computed by painting both masks into a pixel bitmap.
///
/// Slow; intended for audits of the interval-based [`stripe_iou`].
pub fn stripe_iou_pixels(a: &Lane, b: &Lane, width: u32) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    let ma = rasterize_stripe(a, width);
    let mb = rasterize_stripe(b, width);
    let (iw, ih) = (ma.image_width as usize, ma.image_height as usize);
    let mut canvas = vec![0u8; iw * ih];
    for (r, c) in ma.pixels() {
        canvas[r as usize * iw + c as usize] |= 1;
    }
    for (r, c) in mb.pixels() {
        canvas[r as usize * iw + c as usize] |= 2;
    }
    let inter = canvas.iter().filter(|&&v| v == 3).count();
    let union = canvas.iter().filter(|&&v| v != 0).count();
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}
