//! Lane candidate generation.
//!
//! Training lanes are projected into the eigenlane space and grouped with
//! K-means; each centroid is mapped back to image space to give one lane
//! candidate (anchor). Because `U_M` preserves distances, clustering the
//! `M`-dimensional coefficients is equivalent to clustering the rank-`M`
//! approximated lanes in the full `N`-dimensional space.
//!
//! A straight-line anchor grid is provided as a baseline, and candidate sets
//! are scored by the mean over test lanes of the best stripe IoU.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigenspace::{CoefficientVector, EigenBasis};
use crate::error::{Error, Result};
use crate::lane::{rasterize_stripe, Lane, SamplingGrid, StripeMask};

/// How a candidate set was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    /// Reconstructed centroids; `lanes[i] == U_M coefficients[i]`.
    Clustered,
    /// Explicit lanes (e.g. straight anchors) carrying their projections.
    Projected,
}

/// K lane candidates bound to one eigenlane basis.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    lanes: Vec<Lane>,
    coefficients: Vec<CoefficientVector>,
    basis_id: String,
    kind: CandidateKind,
}

impl CandidateSet {
    /// Candidates reconstructed from eigenlane coefficients.
    pub fn from_coefficients(
        basis: &EigenBasis,
        coefficients: Vec<CoefficientVector>,
    ) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::EmptyInput("candidate set needs at least one lane"));
        }
        let lanes = coefficients
            .iter()
            .map(|c| basis.reconstruct(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lanes,
            coefficients,
            basis_id: basis.id(),
            kind: CandidateKind::Clustered,
        })
    }

    /// Candidates given as explicit lanes; coefficients are their projections.
    pub fn from_lanes(basis: &EigenBasis, lanes: Vec<Lane>) -> Result<Self> {
        if lanes.is_empty() {
            return Err(Error::EmptyInput("candidate set needs at least one lane"));
        }
        let coefficients = lanes
            .iter()
            .map(|l| basis.project(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lanes,
            coefficients,
            basis_id: basis.id(),
            kind: CandidateKind::Projected,
        })
    }

    /// Reassembles a stored set. Lanes must already be consistent with the
    /// coefficients for clustered sets.
    pub fn from_parts(
        lanes: Vec<Lane>,
        coefficients: Vec<CoefficientVector>,
        basis_id: String,
        kind: CandidateKind,
    ) -> Result<Self> {
        if lanes.is_empty() {
            return Err(Error::EmptyInput("candidate set needs at least one lane"));
        }
        if lanes.len() != coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: lanes.len(),
                found: coefficients.len(),
            });
        }
        let m = coefficients[0].len();
        if let Some(bad) = coefficients.iter().find(|c| c.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.len(),
            });
        }
        if lanes.iter().any(|l| !l.same_grid(&lanes[0])) {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            lanes,
            coefficients,
            basis_id,
            kind,
        })
    }

    pub fn k(&self) -> usize {
        self.lanes.len()
    }

    pub fn m(&self) -> usize {
        self.coefficients[0].len()
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn coefficients(&self) -> &[CoefficientVector] {
        &self.coefficients
    }

    pub fn basis_id(&self) -> &str {
        &self.basis_id
    }

    pub fn kind(&self) -> CandidateKind {
        self.kind
    }

    pub fn grid(&self) -> &Arc<SamplingGrid> {
        self.lanes[0].grid()
    }

    /// Fails unless the set was built on `basis`.
    pub fn check_basis(&self, basis: &EigenBasis) -> Result<()> {
        if self.basis_id != basis.id() || self.m() != basis.m() {
            return Err(Error::Schema(format!(
                "candidate set belongs to basis {}, not {}",
                self.basis_id,
                basis.id()
            )));
        }
        Ok(())
    }

    /// Stripe masks of every candidate.
    pub fn masks(&self, width: u32) -> Vec<StripeMask> {
        self.lanes
            .iter()
            .map(|l| rasterize_stripe(l, width))
            .collect()
    }

    /// Concatenation of two sets on the same basis.
    pub fn merged(&self, other: &CandidateSet) -> Result<CandidateSet> {
        if self.basis_id != other.basis_id {
            return Err(Error::Schema(
                "cannot merge candidates of different bases".into(),
            ));
        }
        let kind = if self.kind == other.kind {
            self.kind
        } else {
            CandidateKind::Projected
        };
        CandidateSet::from_parts(
            self.lanes.iter().chain(&other.lanes).cloned().collect(),
            self.coefficients
                .iter()
                .chain(&other.coefficients)
                .cloned()
                .collect(),
            self.basis_id.clone(),
            kind,
        )
    }
}

/// K-means settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves by this many pixels or more.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: 16,
            max_iters: 100,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a K-means run.
#[derive(Debug, Clone)]
pub struct KMeansOutcome {
    /// `k` centroids, each `dim` long.
    pub centroids: Vec<Vec<f64>>,
    /// Centroid index of every point, for the final centroids.
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansOutcome {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&0.0)
    }
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct(points: &[f64], dim: usize) -> usize {
    let mut rows: Vec<&[f64]> = points.chunks_exact(dim).collect();
    let cmp = |a: &&[f64], b: &&[f64]| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    };
    rows.sort_by(cmp);
    rows.dedup_by(|a, b| cmp(&&**a, &&**b) == Ordering::Equal);
    rows.len()
}

/// K-means over `points` (row-major, `dim` values per point).
///
/// Seeding is k-means++ driven by `config.seed`; iterations are Lloyd steps
/// with Euclidean distance. Ties go to the lowest centroid index. A cluster
/// that empties is reseeded at the point farthest from its own centroid, so
/// exactly `k` centroids are always returned.
pub fn kmeans(points: &[f64], dim: usize, config: &ClusteringConfig) -> Result<KMeansOutcome> {
    config.validate()?;
    if dim == 0 || points.is_empty() {
        return Err(Error::EmptyInput("k-means needs at least one point"));
    }
    if points.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: points.len() % dim,
        });
    }
    let n = points.len() / dim;
    let k = config.k;
    let distinct = count_distinct(points, dim);
    if k > distinct {
        return Err(Error::TooManyClusters {
            requested: k,
            distinct,
        });
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            chosen = Some(i);
            if acc > target {
                break;
            }
        }
        let chosen = chosen.expect("k <= distinct points leaves a positive distance");
        centroids.extend_from_slice(point(chosen));
        let c = point(chosen);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(point(i), c));
        }
    }

    let assign = |centroids: &[f64], assignments: &mut [usize], dists: &mut [f64]| -> f64 {
        let mut objective = 0.0;
        for i in 0..n {
            let p = point(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.chunks_exact(dim).enumerate() {
                let d = dist2(p, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assignments[i] = best;
            dists[i] = best_d;
            objective += best_d;
        }
        objective
    };

    let mut assignments = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let tol2 = config.tolerance * config.tolerance;

    while iterations < config.max_iters {
        let objective = assign(&centroids, &mut assignments, &mut dists);
        if let Some(&prev) = history.last() {
            debug_assert!(
                objective <= prev + 1e-9 * prev.abs().max(1.0),
                "k-means objective increased: {prev} -> {objective}"
            );
        }
        history.push(objective);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = assignments[i];
            counts[j] += 1;
            for (s, v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        let mut next = vec![0.0; k * dim];
        let mut empty = Vec::new();
        for j in 0..k {
            if counts[j] == 0 {
                empty.push(j);
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for d in 0..dim {
                next[j * dim + d] = sums[j * dim + d] * inv;
            }
        }
        if !empty.is_empty() {
            let mut far: Vec<usize> = (0..n).collect();
            far.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
            for (j, &i) in empty.iter().zip(&far) {
                next[j * dim..(j + 1) * dim].copy_from_slice(point(i));
            }
        }
        let shift2 = centroids
            .chunks_exact(dim)
            .zip(next.chunks_exact(dim))
            .map(|(a, b)| dist2(a, b))
            .fold(0.0, f64::max);
        centroids = next;
        iterations += 1;
        if shift2 < tol2 {
            converged = true;
            break;
        }
    }
    let objective = assign(&centroids, &mut assignments, &mut dists);
    history.push(objective);

    Ok(KMeansOutcome {
        centroids: centroids.chunks_exact(dim).map(<[f64]>::to_vec).collect(),
        assignments,
        objective_history: history,
        iterations,
        converged,
    })
}

/// Clusters `lanes` in the eigenlane space and reconstructs the centroids.
pub fn cluster_lanes(
    basis: &EigenBasis,
    lanes: &[Lane],
    config: &ClusteringConfig,
) -> Result<CandidateSet> {
    cluster_lanes_detailed(basis, lanes, config).map(|(set, _)| set)
}

/// Like [`cluster_lanes`], also returning the K-means run.
pub fn cluster_lanes_detailed(
    basis: &EigenBasis,
    lanes: &[Lane],
    config: &ClusteringConfig,
) -> Result<(CandidateSet, KMeansOutcome)> {
    if lanes.is_empty() {
        return Err(Error::EmptyInput("clustering needs training lanes"));
    }
    let mut points = Vec::with_capacity(lanes.len() * basis.m());
    for lane in lanes {
        points.extend(basis.project(lane)?.into_inner());
    }
    let outcome = kmeans(&points, basis.m(), config)?;
    let coefficients = outcome
        .centroids
        .iter()
        .cloned()
        .map(CoefficientVector::new)
        .collect();
    let set = CandidateSet::from_coefficients(basis, coefficients)?;
    Ok((set, outcome))
}

/// Largest slope angle of the straight anchor grid, in degrees from vertical.
pub const STRAIGHT_ANCHOR_MAX_ANGLE_DEG: f64 = 75.0;

fn anchor_grid_shape(n: usize) -> (usize, usize) {
    let root = (n as f64).sqrt();
    let divisor = (1..=root.floor() as usize)
        .rev()
        .find(|d| n % d == 0)
        .unwrap_or(1);
    if divisor as f64 >= root / 2.0 {
        (n / divisor, divisor)
    } else {
        let angles = root.floor() as usize;
        (n.div_ceil(angles), angles)
    }
}

fn linspace(lo: f64, hi: f64, count: usize, single: f64) -> Vec<f64> {
    if count == 1 {
        return vec![single];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// `n` straight lanes over a uniform grid of bottom intercepts and slopes.
///
/// Intercepts on the bottom grid row span `[-W/2, 3W/2]` so that anchors can
/// enter from the image sides; slope angles span +/-75 degrees from
/// vertical. Enumeration is intercept-major, angle-minor, truncated to `n`.
/// This is a stand-in for published straight-anchor layouts, whose exact
/// enumeration differs.
pub fn straight_anchor_grid(grid: &Arc<SamplingGrid>, n: usize) -> Vec<Lane> {
    if n == 0 {
        return Vec::new();
    }
    let (n_pos, n_ang) = anchor_grid_shape(n);
    let w = f64::from(grid.image_width());
    let positions = linspace(-0.5 * w, 1.5 * w, n_pos, w / 2.0);
    let max = STRAIGHT_ANCHOR_MAX_ANGLE_DEG.to_radians();
    let angles = linspace(-max, max, n_ang, 0.0);
    let y0 = grid.y_bottom();
    let mut lanes = Vec::with_capacity(n);
    'outer: for &x0 in &positions {
        for &theta in &angles {
            if lanes.len() == n {
                break 'outer;
            }
            let slope = theta.tan();
            let xs = grid
                .y_coords()
                .iter()
                .map(|&y| x0 + slope * (y0 - y))
                .collect();
            lanes.push(Lane::full(Arc::clone(grid), xs).expect("anchor matches grid"));
        }
    }
    lanes
}

/// Straight anchors carried into `basis` as a candidate set.
pub fn straight_anchor_set(basis: &EigenBasis, n: usize) -> Result<CandidateSet> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "anchor count must be at least 1".into(),
        ));
    }
    CandidateSet::from_lanes(basis, straight_anchor_grid(basis.grid(), n))
}

/// For each test lane, the best stripe IoU against any candidate.
pub fn best_ious(candidates: &CandidateSet, test_lanes: &[Lane], width: u32) -> Result<Vec<f64>> {
    let grid = candidates.grid();
    for lane in test_lanes {
        lane.check_grid(grid)?;
    }
    let masks = candidates.masks(width);
    Ok(best_ious_masked(&masks, test_lanes, width))
}

/// [`best_ious`] against precomputed candidate masks.
pub fn best_ious_masked(masks: &[StripeMask], test_lanes: &[Lane], width: u32) -> Vec<f64> {
    test_lanes
        .iter()
        .map(|lane| {
            let m = rasterize_stripe(lane, width);
            masks.iter().map(|c| c.iou(&m)).fold(0.0, f64::max)
        })
        .collect()
}

/// Mean over test lanes of the best candidate IoU.
pub fn mean_best_iou(candidates: &CandidateSet, test_lanes: &[Lane], width: u32) -> Result<f64> {
    if test_lanes.is_empty() {
        return Err(Error::EmptyInput("no test lanes"));
    }
    let best = best_ious(candidates, test_lanes, width)?;
    Ok(best.iter().sum::<f64>() / best.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigenspace::{build_basis, LaneMatrix};

    fn grid() -> Arc<SamplingGrid> {
        Arc::new(SamplingGrid::uniform(1280, 720, 50, 710.0, 220.0).unwrap())
    }

    fn line(g: &Arc<SamplingGrid>, x0: f64, slope: f64) -> Lane {
        let xs = g
            .y_coords()
            .iter()
            .map(|y| x0 + slope * (710.0 - y))
            .collect();
        Lane::full(Arc::clone(g), xs).unwrap()
    }

    fn lines(g: &Arc<SamplingGrid>) -> Vec<Lane> {
        (0..12)
            .map(|i| line(g, 200.0 + 70.0 * i as f64, -0.5 + 0.09 * i as f64))
            .collect()
    }

    #[test]
    fn config_validation() {
        let mut c = ClusteringConfig::default();
        assert!(c.validate().is_ok());
        c.tolerance = 0.0;
        assert!(c.validate().is_err());
        c = ClusteringConfig {
            k: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c = ClusteringConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn singleton_clusters_reproduce_points() {
        let pts = [0.0, 0.0, 10.0, 0.0, 0.0, 10.0, 7.0, 7.0];
        let cfg = ClusteringConfig {
            k: 4,
            ..Default::default()
        };
        let out = kmeans(&pts, 2, &cfg).unwrap();
        assert_eq!(out.objective(), 0.0);
        let mut cs: Vec<Vec<f64>> = out.centroids.clone();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        assert_eq!(
            cs,
            vec![
                vec![0.0, 0.0],
                vec![0.0, 10.0],
                vec![7.0, 7.0],
                vec![10.0, 0.0]
            ]
        );
    }

    #[test]
    fn too_many_clusters() {
        let pts = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let cfg = ClusteringConfig {
            k: 3,
            ..Default::default()
        };
        assert!(matches!(
            kmeans(&pts, 2, &cfg),
            Err(Error::TooManyClusters {
                requested: 3,
                distinct: 2
            })
        ));
    }

    #[test]
    fn duplicate_points_still_yield_k_centroids() {
        // many duplicates force empty clusters during Lloyd steps
        let mut pts = vec![0.0; 40];
        pts.extend_from_slice(&[5.0, 5.0, 9.0, 1.0, 3.0, 8.0]);
        let cfg = ClusteringConfig {
            k: 4,
            seed: 3,
            ..Default::default()
        };
        let out = kmeans(&pts, 2, &cfg).unwrap();
        assert_eq!(out.centroids.len(), 4);
        let used: std::collections::BTreeSet<_> = out.assignments.iter().collect();
        assert_eq!(used.len(), 4);
    }

    #[test]
    fn clustering_is_deterministic() {
        let g = grid();
        let basis = build_basis(&LaneMatrix::from_lanes(&lines(&g)).unwrap(), 2).unwrap();
        let cfg = ClusteringConfig {
            k: 3,
            seed: 42,
            ..Default::default()
        };
        let a = cluster_lanes(&basis, &lines(&g), &cfg).unwrap();
        let b = cluster_lanes(&basis, &lines(&g), &cfg).unwrap();
        assert_eq!(a.coefficients(), b.coefficients());
        assert_eq!(a.k(), 3);
        assert_eq!(a.kind(), CandidateKind::Clustered);
    }

    #[test]
    fn anchor_grid_layout() {
        assert_eq!(anchor_grid_shape(1), (1, 1));
        assert_eq!(anchor_grid_shape(1000), (40, 25));
        assert_eq!(anchor_grid_shape(10_000), (100, 100));
        let (p, a) = anchor_grid_shape(997);
        assert!(p * a >= 997);

        let g = grid();
        let one = straight_anchor_grid(&g, 1);
        assert_eq!(one.len(), 1);
        assert!(one[0].xs().iter().all(|&x| x == 640.0));

        let many = straight_anchor_grid(&g, 997);
        assert_eq!(many.len(), 997);
        for lane in &many {
            assert!(lane.max_second_difference() <= 1e-9);
        }
    }

    #[test]
    fn mean_best_iou_examples() {
        let g = grid();
        let ls = lines(&g);
        let basis = build_basis(&LaneMatrix::from_lanes(&ls).unwrap(), 2).unwrap();
        let set = CandidateSet::from_lanes(&basis, ls.clone()).unwrap();
        assert_eq!(mean_best_iou(&set, &ls, 30).unwrap(), 1.0);

        let single = CandidateSet::from_lanes(&basis, vec![line(&g, 100.0, 0.0)]).unwrap();
        let far = vec![line(&g, 1150.0, 0.0), line(&g, 1200.0, 0.0)];
        assert_eq!(mean_best_iou(&single, &far, 30).unwrap(), 0.0);
        assert!(matches!(
            mean_best_iou(&single, &[], 30),
            Err(Error::EmptyInput(_))
        ));
    }
}
