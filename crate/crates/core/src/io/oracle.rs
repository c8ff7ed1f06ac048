//! Ground-truth-derived stand-ins for learned candidate scores.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::eigenspace::{CoefficientVector, EigenBasis};
use crate::error::{Error, Result};
use crate::lane::{rasterize_stripe, Lane, StripeMask};
use crate::pipeline::{CandidateScores, FeatureSource, HeightBins, DEFAULT_STRIPE_WIDTH};

/// Oracle settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Standard deviation of Gaussian noise added to probabilities and
    /// features. Zero gives exact scores.
    pub noise_std: f64,
    /// Candidates overlapping their best ground-truth lane at least this much
    /// receive an offset and a height; others get zeros and full height.
    pub iou_floor: f64,
    pub width: u32,
    /// Extra per-candidate feature dimensions carrying noise.
    pub noise_dim: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.0,
            iou_floor: 0.1,
            width: DEFAULT_STRIPE_WIDTH,
            noise_dim: 16,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::InvalidConfig(
                "noise_std must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.iou_floor) {
            return Err(Error::InvalidConfig("iou_floor must lie in [0, 1]".into()));
        }
        if self.width == 0 {
            return Err(Error::InvalidConfig("stripe width must be positive".into()));
        }
        Ok(())
    }
}

/// Per-candidate relation features produced by the oracle.
///
/// A candidate that is the designated match of some ground-truth lane carries
/// the scene's mean ground-truth direction in eigenlane space; the others
/// carry none. Every row additionally holds `noise_dim` Gaussian entries
/// scaled by the noise level, so with zero noise designated candidates are
/// mutually compatible (relation 1) and all others are neutral (relation 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFeatures {
    scene: Vec<f64>,
    designated: Vec<bool>,
    noise_std: f64,
    noise_dim: usize,
    seed: u64,
    stream: u64,
}

impl OracleFeatures {
    pub fn dim(&self) -> usize {
        self.scene.len() + self.noise_dim
    }

    pub fn designated(&self) -> &[bool] {
        &self.designated
    }

    fn row(&self, k: usize) -> Vec<f64> {
        let mut row: Vec<f64> = if self.designated[k] {
            self.scene.clone()
        } else {
            vec![0.0; self.scene.len()]
        };
        if self.noise_dim > 0 {
            if self.noise_std > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6665_6174);
                rng.set_stream(self.stream);
                rng.set_word_pos((k as u128) << 32);
                row.extend((0..self.noise_dim).map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    self.noise_std * z
                }));
            } else {
                row.extend(std::iter::repeat_n(0.0, self.noise_dim));
            }
        }
        row
    }

    /// All rows, row-major.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        (0..self.designated.len()).map(|k| self.row(k)).collect()
    }
}

impl FeatureSource for OracleFeatures {
    fn features(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        indices
            .iter()
            .map(|&k| {
                if k < self.designated.len() {
                    Ok(self.row(k))
                } else {
                    Err(Error::IndexError {
                        index: k,
                        len: self.designated.len(),
                    })
                }
            })
            .collect()
    }
}

/// Everything the oracle produces for one image.
#[derive(Debug, Clone)]
pub struct OracleOutput {
    pub scores: CandidateScores,
    pub features: OracleFeatures,
    /// Per ground-truth lane, its designated candidate (one-to-one).
    pub designated: Vec<Option<usize>>,
}

/// Scores candidates against the ground truth of one image.
///
/// * probability: best stripe IoU against any ground-truth lane, plus noise,
///   clamped to `[0, 1]`;
/// * offset: `project(best gt) - c_k` when that IoU reaches the floor;
/// * height: one-hot at the bin nearest to that lane's topmost valid sample;
/// * designation: each ground-truth lane claims one candidate, greedily by
///   descending IoU.
///
/// `masks` are the candidates' stripe masks at `config.width`; `stream`
/// separates the noise of different images under one seed.
pub fn oracle_scores(
    candidates: &CandidateSet,
    masks: &[StripeMask],
    ground_truth: &[Lane],
    basis: &EigenBasis,
    heights: &HeightBins,
    config: &OracleConfig,
    stream: u64,
) -> Result<OracleOutput> {
    config.validate()?;
    candidates.check_basis(basis)?;
    if masks.len() != candidates.k() {
        return Err(Error::DimensionMismatch {
            expected: candidates.k(),
            found: masks.len(),
        });
    }
    for gt in ground_truth {
        gt.check_grid(basis.grid())?;
    }
    let k = candidates.k();
    let m = candidates.m();
    let gt_masks: Vec<StripeMask> = ground_truth
        .iter()
        .map(|l| rasterize_stripe(l, config.width))
        .collect();
    let gt_coeffs = ground_truth
        .iter()
        .map(|l| basis.project(l))
        .collect::<Result<Vec<_>>>()?;

    let mut ious = vec![0.0; k * ground_truth.len()];
    let mut best: Vec<(f64, Option<usize>)> = vec![(0.0, None); k];
    for (c, mask) in masks.iter().enumerate() {
        for (g, gm) in gt_masks.iter().enumerate() {
            let iou = mask.iou(gm);
            ious[c * ground_truth.len() + g] = iou;
            if best[c].1.is_none() || iou > best[c].0 {
                best[c] = (iou, Some(g));
            }
        }
    }

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for c in 0..k {
        for g in 0..ground_truth.len() {
            let iou = ious[c * ground_truth.len() + g];
            if iou > 0.0 {
                pairs.push((iou, g, c));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut designated = vec![None; ground_truth.len()];
    let mut taken = vec![false; k];
    for (_, g, c) in pairs {
        if designated[g].is_none() && !taken[c] {
            designated[g] = Some(c);
            taken[c] = true;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let grid = basis.grid();
    let mut probabilities = Vec::with_capacity(k);
    let mut height_dists = Vec::with_capacity(k);
    let mut offsets = Vec::with_capacity(k);
    for c in 0..k {
        let (iou, g) = best[c];
        let mut p = iou;
        if config.noise_std > 0.0 {
            p += noise.sample(&mut rng);
        }
        probabilities.push(p.clamp(0.0, 1.0));
        let mut dist = vec![0.0; heights.len()];
        match g {
            Some(g) if iou >= config.iou_floor && iou > 0.0 => {
                offsets.push(&gt_coeffs[g] - &candidates.coefficients()[c]);
                let top = ground_truth[g].top_index().max(1);
                dist[heights.nearest(grid.y_coords()[top - 1])] = 1.0;
            }
            _ => {
                offsets.push(CoefficientVector::zeros(m));
                dist[0] = 1.0;
            }
        }
        height_dists.push(dist);
    }

    let mut scene = vec![0.0; m];
    for c in &gt_coeffs {
        for (s, v) in scene.iter_mut().zip(c.as_slice()) {
            *s += v;
        }
    }
    let norm = scene.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        scene.iter_mut().for_each(|v| *v /= norm);
    }
    let features = OracleFeatures {
        scene,
        designated: taken,
        noise_std: config.noise_std,
        noise_dim: config.noise_dim,
        seed: config.seed,
        stream,
    };
    Ok(OracleOutput {
        scores: CandidateScores::new(probabilities, height_dists, offsets)?,
        features,
        designated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::CandidateSet;
    use crate::eigenspace::{build_basis, LaneMatrix};
    use crate::lane::SamplingGrid;
    use crate::pipeline::relation_from_features;
    use std::sync::Arc;

    fn setup() -> (EigenBasis, CandidateSet, Arc<SamplingGrid>) {
        let grid = Arc::new(SamplingGrid::uniform(1280, 720, 50, 710.0, 220.0).unwrap());
        let lanes: Vec<Lane> = (0..20)
            .map(|i| {
                let xs = (0..50)
                    .map(|k| {
                        60.0 * i as f64
                            + (i as f64 - 10.0) * k as f64
                            + 0.001 * (i * i * k * k) as f64
                    })
                    .collect();
                Lane::full(Arc::clone(&grid), xs).unwrap()
            })
            .collect();
        let basis = build_basis(&LaneMatrix::from_lanes(&lanes).unwrap(), 3).unwrap();
        let coeffs = lanes.iter().map(|l| basis.project(l).unwrap()).collect();
        let cands = CandidateSet::from_coefficients(&basis, coeffs).unwrap();
        (basis, cands, grid)
    }

    #[test]
    fn exact_candidate_scores_one() {
        let (basis, cands, grid) = setup();
        let masks = cands.masks(30);
        let gt = vec![cands.lanes()[5].clone(), cands.lanes()[15].clone()];
        let bins = HeightBins::uniform(&grid, 25).unwrap();
        let out = oracle_scores(
            &cands,
            &masks,
            &gt,
            &basis,
            &bins,
            &OracleConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(out.scores.probabilities()[5], 1.0);
        assert!(out.scores.offsets()[5].norm() < 1e-9);
        assert_eq!(out.designated, vec![Some(5), Some(15)]);
        // full-height gt -> bin nearest the grid top
        assert_eq!(out.scores.heights()[5][0], 1.0);
        let (rel, zeros) =
            relation_from_features(&out.features.features(&[5, 15, 0]).unwrap()).unwrap();
        assert!((rel.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(zeros, vec![2]);
    }

    #[test]
    fn distant_candidate_scores_zero() {
        let (basis, cands, grid) = setup();
        let masks = cands.masks(30);
        let far = Lane::full(Arc::clone(&grid), vec![1250.0; 50]).unwrap();
        let bins = HeightBins::uniform(&grid, 25).unwrap();
        let out = oracle_scores(
            &cands,
            &masks,
            &[far],
            &basis,
            &bins,
            &OracleConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(out.scores.probabilities()[0], 0.0);
        assert_eq!(out.scores.offsets()[0].norm(), 0.0);
    }

    #[test]
    fn noise_is_seeded() {
        let (basis, cands, grid) = setup();
        let masks = cands.masks(30);
        let gt = vec![cands.lanes()[3].clone()];
        let bins = HeightBins::uniform(&grid, 25).unwrap();
        let cfg = OracleConfig {
            noise_std: 0.1,
            ..Default::default()
        };
        let run = |stream| {
            let o = oracle_scores(&cands, &masks, &gt, &basis, &bins, &cfg, stream).unwrap();
            (o.scores, o.features.dense())
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1).0, run(2).0);
        assert!(run(1)
            .0
            .probabilities()
            .iter()
            .all(|p| (0.0..=1.0).contains(p)));
    }
}
