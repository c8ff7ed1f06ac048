//! Detection-time selection stages.
//!
//! Given per-candidate scores produced elsewhere (lane probability, height
//! distribution, eigenlane offset) the detector
//!
//! 1. keeps up to `T` candidates by greedy IoU-based NMS,
//! 2. builds a relation matrix from per-lane features,
//! 3. picks the maximum-weight compatible clique among the kept lanes, and
//! 4. refines the clique members by their offsets and predicted heights.
//!
//! Line pooling over feature grids is provided for callers that derive lane
//! features from dense maps.

mod clique;
mod finalize;
mod nms;
mod pool;
mod relation;

use serde::{Deserialize, Serialize};

pub use clique::{compatibility, edge_weights, mwcs, CliqueResult, MAX_CLIQUE_NODES};
pub use finalize::{finalize, finalize_with, FinalizeOptions};
pub use nms::{nms_select, nms_select_masked, NmsConfig};
pub use pool::{bresenham, line_pool, FeatureGrid, PixelScale, PooledFeatures};
pub use relation::{relation_from_features, RelationMatrix};

use crate::candidates::CandidateSet;
use crate::eigenspace::{CoefficientVector, EigenBasis};
use crate::error::{Error, Result};
use crate::lane::{Lane, SamplingGrid, StripeMask};

/// Default number of lanes kept by NMS.
pub const DEFAULT_T: usize = 10;
/// Default NMS overlap threshold. Not fixed by the method; tunable.
pub const DEFAULT_NMS_IOU: f64 = 0.5;
/// Default clique edge threshold. Not fixed by the method; tunable.
pub const DEFAULT_KAPPA: f64 = 0.3;
/// Default number of predefined lane-end heights.
pub const DEFAULT_HEIGHT_BINS: usize = 25;
/// Default stripe width in pixels.
pub const DEFAULT_STRIPE_WIDTH: u32 = 30;

const DISTRIBUTION_TOL: f64 = 1e-6;

/// The predefined heights at which a lane may end, top of the image first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightBins {
    heights: Vec<f64>,
}

impl HeightBins {
    pub fn new(heights: Vec<f64>) -> Result<Self> {
        if heights.is_empty() {
            return Err(Error::EmptyInput("height bins"));
        }
        if heights.iter().any(|h| !h.is_finite()) || heights.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "height bins must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { heights })
    }

    /// `r` heights spread evenly from the grid's top sample to its bottom one.
    pub fn uniform(grid: &SamplingGrid, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidConfig("need at least one height bin".into()));
        }
        let (top, bottom) = (grid.y_top(), grid.y_bottom());
        if r == 1 {
            return Self::new(vec![top]);
        }
        let step = (bottom - top) / (r - 1) as f64;
        Self::new((0..r).map(|i| top + step * i as f64).collect())
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    /// Index of the bin nearest to `y` (lowest index on ties).
    pub fn nearest(&self, y: f64) -> usize {
        let mut best = 0;
        for (i, h) in self.heights.iter().enumerate() {
            if (h - y).abs() < (self.heights[best] - y).abs() {
                best = i;
            }
        }
        best
    }

    /// Checks that every bin lies within the grid's height range.
    pub fn check_grid(&self, grid: &SamplingGrid) -> Result<()> {
        let (lo, hi) = (grid.y_top(), grid.y_bottom());
        if self.heights.iter().any(|&h| h < lo - 1e-9 || h > hi + 1e-9) {
            return Err(Error::InvalidConfig(format!(
                "height bins must lie within [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Externally supplied per-candidate outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    probabilities: Vec<f64>,
    heights: Vec<Vec<f64>>,
    offsets: Vec<CoefficientVector>,
}

impl CandidateScores {
    pub fn new(
        probabilities: Vec<f64>,
        heights: Vec<Vec<f64>>,
        offsets: Vec<CoefficientVector>,
    ) -> Result<Self> {
        let k = probabilities.len();
        if k == 0 {
            return Err(Error::EmptyInput("candidate scores"));
        }
        for (name, len) in [("heights", heights.len()), ("offsets", offsets.len())] {
            if len != k {
                return Err(Error::Schema(format!(
                    "{name} has {len} rows for {k} candidates"
                )));
            }
        }
        if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Schema(format!(
                "lane probability {p} outside [0, 1]"
            )));
        }
        let r = heights[0].len();
        for dist in &heights {
            if dist.len() != r || r == 0 {
                return Err(Error::Schema(
                    "height distributions differ in length".into(),
                ));
            }
            let sum: f64 = dist.iter().sum();
            if dist.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > DISTRIBUTION_TOL
            {
                return Err(Error::Schema(format!(
                    "height distribution must be a probability vector (sum {sum})"
                )));
            }
        }
        let m = offsets[0].len();
        if let Some(bad) = offsets.iter().find(|o| o.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.len(),
            });
        }
        if offsets
            .iter()
            .any(|o| o.as_slice().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Schema("offsets must be finite".into()));
        }
        Ok(Self {
            probabilities,
            heights,
            offsets,
        })
    }

    pub fn k(&self) -> usize {
        self.probabilities.len()
    }

    /// Number of height bins.
    pub fn r(&self) -> usize {
        self.heights[0].len()
    }

    pub fn m(&self) -> usize {
        self.offsets[0].len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn heights(&self) -> &[Vec<f64>] {
        &self.heights
    }

    pub fn offsets(&self) -> &[CoefficientVector] {
        &self.offsets
    }

    fn check_against(&self, candidates: &CandidateSet) -> Result<()> {
        if self.k() != candidates.k() {
            return Err(Error::DimensionMismatch {
                expected: candidates.k(),
                found: self.k(),
            });
        }
        if self.m() != candidates.m() {
            return Err(Error::DimensionMismatch {
                expected: candidates.m(),
                found: self.m(),
            });
        }
        Ok(())
    }
}

/// Supplies feature vectors for a subset of candidates.
pub trait FeatureSource {
    fn features(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>>;
}

impl FeatureSource for [Vec<f64>] {
    fn features(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        indices
            .iter()
            .map(|&i| {
                self.get(i).cloned().ok_or(Error::IndexError {
                    index: i,
                    len: self.len(),
                })
            })
            .collect()
    }
}

impl FeatureSource for Vec<Vec<f64>> {
    fn features(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.as_slice().features(indices)
    }
}

/// Settings for [`detect`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub nms: NmsConfig,
    pub kappa: f64,
    pub finalize: FinalizeOptions,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            nms: NmsConfig::default(),
            kappa: DEFAULT_KAPPA,
            finalize: FinalizeOptions::default(),
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        self.nms.validate()?;
        if self.nms.t > MAX_CLIQUE_NODES {
            return Err(Error::InvalidConfig(format!(
                "t = {} exceeds the clique bound {MAX_CLIQUE_NODES}",
                self.nms.t
            )));
        }
        if !(-1.0..=1.0).contains(&self.kappa) {
            return Err(Error::InvalidConfig("kappa must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

/// Everything produced by one detector run.
#[derive(Debug, Clone)]
pub struct Detection {
    /// Candidate indices kept by NMS, in selection order.
    pub selected: Vec<usize>,
    pub relation: RelationMatrix,
    /// Clique over positions in `selected`.
    pub clique: CliqueResult,
    /// Candidate indices of the clique members.
    pub members: Vec<usize>,
    pub lanes: Vec<Lane>,
}

/// Runs NMS, relation scoring, clique selection and refinement.
///
/// `masks` are the candidates' stripe masks at `config.nms.width`.
pub fn detect(
    basis: &EigenBasis,
    candidates: &CandidateSet,
    masks: &[StripeMask],
    scores: &CandidateScores,
    features: &dyn FeatureSource,
    heights: &HeightBins,
    config: &DetectConfig,
) -> Result<Detection> {
    config.validate()?;
    scores.check_against(candidates)?;
    if masks.len() != candidates.k() {
        return Err(Error::DimensionMismatch {
            expected: candidates.k(),
            found: masks.len(),
        });
    }
    let selected = nms_select_masked(masks, scores.probabilities(), &config.nms);
    if selected.is_empty() {
        return Err(Error::EmptyInput("no candidate survived NMS"));
    }
    let feats = features.features(&selected)?;
    let (relation, _) = relation_from_features(&feats)?;
    let probs: Vec<f64> = selected
        .iter()
        .map(|&i| scores.probabilities()[i])
        .collect();
    let clique = mwcs(&relation, &probs, config.kappa)?;
    let members: Vec<usize> = clique.members.iter().map(|&v| selected[v]).collect();
    let lanes = finalize_with(
        basis,
        candidates,
        &members,
        scores,
        heights,
        &config.finalize,
    )?;
    Ok(Detection {
        selected,
        relation,
        clique,
        members,
        lanes,
    })
}
