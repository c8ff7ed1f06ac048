use crate::error::{Error, Result};
use crate::lane::Lane;

/// Dense `H x W x C` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    /// `data` is row-major with channels innermost.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::EmptyInput(
                "feature grid dimensions must be positive",
            ));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                expected: height * width * channels,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("feature grid values must be finite".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }
}

/// Maps image pixels to feature cells: `cell = floor(pixel * scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelScale {
    pub x: f64,
    pub y: f64,
}

impl PixelScale {
    pub const IDENTITY: PixelScale = PixelScale { x: 1.0, y: 1.0 };

    /// Scale from an image of `image` size onto a `feature` grid.
    pub fn between(image: (u32, u32), feature: (usize, usize)) -> Self {
        Self {
            x: feature.0 as f64 / f64::from(image.0),
            y: feature.1 as f64 / f64::from(image.1),
        }
    }
}

/// Mean feature vector along a lane.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures {
    pub values: Vec<f64>,
    /// Distinct in-bounds cells visited.
    pub n_pixels: usize,
    /// Set when the lane never touches the grid; `values` is then zero.
    pub outside: bool,
}

/// Cells on the digital line from `a` to `b` (both inclusive), in order.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Averages `grid` over the cells crossed by `lane`.
///
/// Valid samples are mapped to cells with `scale` and consecutive samples are
/// joined by Bresenham lines; each distinct in-bounds cell counts once.
pub fn line_pool(grid: &FeatureGrid, lane: &Lane, scale: PixelScale) -> PooledFeatures {
    let cells: Vec<(i64, i64)> = lane
        .valid_points()
        .map(|(x, y)| {
            (
                (x * scale.x).floor().clamp(-1e12, 1e12) as i64,
                (y * scale.y).floor().clamp(-1e12, 1e12) as i64,
            )
        })
        .collect();
    let mut path: Vec<(i64, i64)> = match cells.len() {
        0 => Vec::new(),
        1 => cells.clone(),
        _ => cells
            .windows(2)
            .flat_map(|w| bresenham(w[0], w[1]))
            .collect(),
    };
    let (w, h) = (grid.width as i64, grid.height as i64);
    path.retain(|&(c, r)| c >= 0 && c < w && r >= 0 && r < h);
    path.sort_unstable_by_key(|&(c, r)| (r, c));
    path.dedup();

    let mut values = vec![0.0; grid.channels];
    if path.is_empty() {
        return PooledFeatures {
            values,
            n_pixels: 0,
            outside: true,
        };
    }
    for &(c, r) in &path {
        for (acc, v) in values.iter_mut().zip(grid.cell(r as usize, c as usize)) {
            *acc += v;
        }
    }
    let inv = 1.0 / path.len() as f64;
    values.iter_mut().for_each(|v| *v *= inv);
    PooledFeatures {
        values,
        n_pixels: path.len(),
        outside: false,
    }
}
