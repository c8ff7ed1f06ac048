//! The eigenlane space.
//!
//! Training lanes are stacked as the columns of an `N x L` lane matrix `A`
//! and decomposed as `A = U S V^T`. The first `M` left singular vectors
//! (the eigenlanes) span the space in which lanes are described:
//! `c = U_M^T x` and `x ~ U_M c`.
//!
//! The lane matrix is **not** mean-centered. This is a best low-rank
//! approximation of `A`, not PCA; centering would break the identity
//! `sum_i |x_i - U_M U_M^T x_i|^2 = sum_{i > M} s_i^2`.

use std::fmt;
use std::ops::{Add, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lane::{Lane, SamplingGrid};

/// Singular values below `RANK_CUTOFF * s_1` are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Default rank for datasets with simple curvature (TuSimple-like).
pub const DEFAULT_RANK_SIMPLE: usize = 4;
/// Default rank for structurally diverse datasets.
pub const DEFAULT_RANK_DIVERSE: usize = 6;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// `N x L` matrix whose columns are lanes on one grid.
#[derive(Debug, Clone)]
pub struct LaneMatrix {
    grid: Arc<SamplingGrid>,
    data: DMatrix<f64>,
}

impl LaneMatrix {
    pub fn from_lanes(lanes: &[Lane]) -> Result<Self> {
        let first = lanes
            .first()
            .ok_or(Error::EmptyInput("lane matrix needs lanes"))?;
        let grid = Arc::clone(first.grid());
        if lanes.iter().any(|l| !l.same_grid(first)) {
            return Err(Error::GridMismatch);
        }
        let n = grid.n_samples();
        let data = DMatrix::from_fn(n, lanes.len(), |r, c| lanes[c].xs()[r]);
        Ok(Self { grid, data })
    }

    pub fn from_matrix(grid: Arc<SamplingGrid>, data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::EmptyInput("lane matrix needs lanes"));
        }
        if data.nrows() != grid.n_samples() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_samples(),
                found: data.nrows(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidAnnotation(
                "lane matrix entries must be finite".into(),
            ));
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> &Arc<SamplingGrid> {
        &self.grid
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn n_lanes(&self) -> usize {
        self.data.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Coordinates of a lane in the eigenlane space (pixels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientVector(Vec<f64>);

impl CoefficientVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &CoefficientVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for CoefficientVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Add for &CoefficientVector {
    type Output = CoefficientVector;

    fn add(self, rhs: &CoefficientVector) -> CoefficientVector {
        CoefficientVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &CoefficientVector {
    type Output = CoefficientVector;

    fn sub(self, rhs: &CoefficientVector) -> CoefficientVector {
        CoefficientVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

/// The first `m` eigenlanes of a lane matrix plus its singular spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    grid: Arc<SamplingGrid>,
    u: DMatrix<f64>,
    singular_values: Vec<f64>,
    m: usize,
}

/// Computes the rank-`m` eigenlane basis of `matrix`.
///
/// Columns of `U_M` are sign-normalized so that each column's entry of
/// largest magnitude is non-negative (lowest index wins ties).
pub fn build_basis(matrix: &LaneMatrix, m: usize) -> Result<EigenBasis> {
    if m == 0 {
        return Err(Error::InvalidConfig("rank must be at least 1".into()));
    }
    let svd = matrix.data.clone().svd(true, false);
    let u_full = svd.u.expect("left singular vectors were requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let s1 = sigma.first().copied().unwrap_or(0.0);
    let rank = if s1 > 0.0 {
        sigma.iter().take_while(|&&s| s >= RANK_CUTOFF * s1).count()
    } else {
        0
    };
    if m > rank {
        return Err(Error::RankDeficient {
            requested: m,
            achievable: rank,
        });
    }
    let n = matrix.n_samples();
    let mut u = DMatrix::zeros(n, m);
    for (j, &src) in order.iter().take(m).enumerate() {
        let col = u_full.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            u[(i, j)] = sign * col[i];
        }
    }
    Ok(EigenBasis {
        grid: Arc::clone(&matrix.grid),
        u,
        singular_values: sigma[..rank].to_vec(),
        m,
    })
}

impl EigenBasis {
    /// Reassembles a basis from stored parts, re-checking its invariants.
    pub fn from_parts(
        grid: Arc<SamplingGrid>,
        u: DMatrix<f64>,
        singular_values: Vec<f64>,
    ) -> Result<Self> {
        let m = u.ncols();
        if u.nrows() != grid.n_samples() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_samples(),
                found: u.nrows(),
            });
        }
        if m == 0 || m > singular_values.len() || m > u.nrows() {
            return Err(Error::Schema(format!(
                "basis rank {m} inconsistent with {} singular values",
                singular_values.len()
            )));
        }
        if singular_values.iter().any(|s| !s.is_finite() || *s <= 0.0)
            || singular_values.windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::Schema(
                "singular values must be positive and non-increasing".into(),
            ));
        }
        let basis = Self {
            grid,
            u,
            singular_values,
            m,
        };
        if basis.orthonormality_error() > ORTHONORMAL_TOL {
            return Err(Error::Schema("eigenlanes are not orthonormal".into()));
        }
        Ok(basis)
    }

    pub fn grid(&self) -> &Arc<SamplingGrid> {
        &self.grid
    }

    /// `N x M` matrix of eigenlanes.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Numerical rank of the source matrix.
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn n_samples(&self) -> usize {
        self.u.nrows()
    }

    /// Energy not captured by the first `m` eigenlanes: `sum_{i>m} s_i^2`.
    pub fn trailing_energy(&self) -> f64 {
        self.singular_values[self.m..].iter().map(|s| s * s).sum()
    }

    /// Largest elementwise deviation of `U_M^T U_M` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.u.transpose() * &self.u;
        let mut worst: f64 = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Eigenlane `i` as a full-length lane.
    pub fn eigenlane(&self, i: usize) -> Result<Lane> {
        if i >= self.m {
            return Err(Error::IndexError {
                index: i,
                len: self.m,
            });
        }
        Lane::full(
            Arc::clone(&self.grid),
            self.u.column(i).iter().copied().collect(),
        )
    }

    /// `c = U_M^T x`.
    pub fn project(&self, lane: &Lane) -> Result<CoefficientVector> {
        lane.check_grid(&self.grid)?;
        Ok(self.project_slice(lane.xs()))
    }

    fn project_slice(&self, xs: &[f64]) -> CoefficientVector {
        let c = (0..self.m)
            .map(|j| {
                self.u
                    .column(j)
                    .iter()
                    .zip(xs)
                    .map(|(u, x)| u * x)
                    .sum::<f64>()
            })
            .collect();
        CoefficientVector(c)
    }

    /// Coefficients of every column of `matrix`, as an `M x L` matrix.
    pub fn project_matrix(&self, matrix: &LaneMatrix) -> Result<DMatrix<f64>> {
        if *matrix.grid != *self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self.u.transpose() * &matrix.data)
    }

    /// `x = U_M c`, as a fully valid lane.
    pub fn reconstruct(&self, c: &CoefficientVector) -> Result<Lane> {
        if c.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: c.len(),
            });
        }
        let xs = (&self.u * DVector::from_column_slice(c.as_slice()))
            .iter()
            .copied()
            .collect();
        Lane::full(Arc::clone(&self.grid), xs)
    }

    /// `U_M (c + delta)`. Since `U_M` is an isometry, the lane moves by
    /// exactly `|delta|`.
    pub fn refine(&self, c: &CoefficientVector, delta: &CoefficientVector) -> Result<Lane> {
        if delta.len() != c.len() {
            return Err(Error::DimensionMismatch {
                expected: c.len(),
                found: delta.len(),
            });
        }
        self.reconstruct(&(c + delta))
    }

    /// Rank-`M` approximation of `lane`.
    pub fn approximate(&self, lane: &Lane) -> Result<Lane> {
        let approx = self.reconstruct(&self.project(lane)?)?;
        Ok(approx.with_top_index(lane.top_index()))
    }

    /// `sum_i |x_i - U_M U_M^T x_i|^2`, computed from the residuals.
    pub fn approximation_error(&self, matrix: &LaneMatrix) -> Result<f64> {
        let coeffs = self.project_matrix(matrix)?;
        let approx = &self.u * coeffs;
        Ok((&matrix.data - approx).iter().map(|v| v * v).sum())
    }

    /// Short content hash used to bind candidate sets and scores to a basis.
    pub fn id(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.m as u64).to_le_bytes());
        hasher.update((self.grid.n_samples() as u64).to_le_bytes());
        hasher.update(self.grid.image_width().to_le_bytes());
        hasher.update(self.grid.image_height().to_le_bytes());
        for y in self.grid.y_coords() {
            hasher.update(y.to_bits().to_le_bytes());
        }
        for v in self.u.iter() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        for s in &self.singular_values {
            hasher.update(s.to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for EigenBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "eigenlane basis N={} M={} rank={}",
            self.n_samples(),
            self.m,
            self.rank()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Arc<SamplingGrid> {
        Arc::new(SamplingGrid::uniform(1280, 720, n, 710.0, 220.0).unwrap())
    }

    fn random_matrix(n: usize, l: usize, seed: u64) -> LaneMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(n, l, |_, _| rng.random_range(-100.0..100.0));
        LaneMatrix::from_matrix(grid(n), data).unwrap()
    }

    #[test]
    fn rank_one_matrix() {
        let g = grid(5);
        let x = Lane::full(Arc::clone(&g), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let a = LaneMatrix::from_lanes(&[x.clone(), x.clone()]).unwrap();
        let basis = build_basis(&a, 1).unwrap();
        assert_eq!(basis.rank(), 1);
        let norm = 55f64.sqrt();
        for (i, v) in basis.u().column(0).iter().enumerate() {
            assert!((v - x.xs()[i] / norm).abs() < 1e-12);
        }
        assert!(matches!(
            build_basis(&a, 2),
            Err(Error::RankDeficient {
                requested: 2,
                achievable: 1
            })
        ));
        assert!(basis.approximation_error(&a).unwrap() < 1e-18 * a.frobenius_sq());
    }

    #[test]
    fn diagonal_matrix() {
        let g = Arc::new(SamplingGrid::new(10, 10, vec![5.0, 2.0]).unwrap());
        let a = LaneMatrix::from_matrix(g, DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]))
            .unwrap();
        let basis = build_basis(&a, 2).unwrap();
        assert!((basis.singular_values()[0] - 3.0).abs() < 1e-12);
        assert!((basis.singular_values()[1] - 1.0).abs() < 1e-12);
        assert!((basis.u() - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn zero_matrix_is_rank_deficient() {
        let a = LaneMatrix::from_matrix(grid(4), DMatrix::zeros(4, 3)).unwrap();
        assert!(matches!(
            build_basis(&a, 1),
            Err(Error::RankDeficient { achievable: 0, .. })
        ));
    }

    #[test]
    fn sign_convention_makes_largest_entry_non_negative() {
        let basis = build_basis(&random_matrix(8, 12, 3), 8).unwrap();
        for j in 0..basis.m() {
            let col = basis.u().column(j);
            let mut pivot = 0;
            for i in 1..col.len() {
                if col[i].abs() > col[pivot].abs() {
                    pivot = i;
                }
            }
            assert!(col[pivot] >= 0.0);
        }
    }

    #[test]
    fn project_reconstruct_round_trip() {
        let basis = build_basis(&random_matrix(10, 30, 7), 4).unwrap();
        let c = CoefficientVector::new(vec![12.0, -3.5, 0.25, 7.0]);
        let lane = basis.reconstruct(&c).unwrap();
        assert_eq!(lane.top_index(), 10);
        let back = basis.project(&lane).unwrap();
        assert!(back.distance(&c) < 1e-9);

        let s1 = basis.singular_values()[0];
        let scaled = basis
            .reconstruct(&CoefficientVector::new(vec![s1, 0.0, 0.0, 0.0]))
            .unwrap();
        for (x, u) in scaled.xs().iter().zip(basis.u().column(0).iter()) {
            assert_eq!(*x, s1 * u);
        }
        let c1 = basis.project(&scaled).unwrap();
        assert!((c1.as_slice()[0] - s1).abs() < 1e-9 * s1);
        assert!(c1.as_slice()[1..].iter().all(|v| v.abs() < 1e-9 * s1));

        let zero = basis.reconstruct(&CoefficientVector::zeros(4)).unwrap();
        assert!(zero.xs().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dimension_and_grid_errors() {
        let basis = build_basis(&random_matrix(10, 30, 7), 3).unwrap();
        assert!(matches!(
            basis.reconstruct(&CoefficientVector::zeros(2)),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
        assert!(basis
            .refine(&CoefficientVector::zeros(3), &CoefficientVector::zeros(4))
            .is_err());
        let other = Lane::full(grid(9), vec![0.0; 9]).unwrap();
        assert!(matches!(basis.project(&other), Err(Error::GridMismatch)));
    }

    #[test]
    fn full_rank_reconstruction_has_no_error() {
        let a = random_matrix(6, 9, 11);
        let basis = build_basis(&a, 6).unwrap();
        assert!(basis.approximation_error(&a).unwrap() <= 1e-9 * a.frobenius_sq());
        assert!(basis.trailing_energy() == 0.0);
    }

    #[test]
    fn refine_with_zero_delta_is_identity() {
        let basis = build_basis(&random_matrix(10, 20, 5), 3).unwrap();
        let c = CoefficientVector::new(vec![1.0, 2.0, 3.0]);
        assert_eq!(
            basis.refine(&c, &CoefficientVector::zeros(3)).unwrap(),
            basis.reconstruct(&c).unwrap()
        );
    }

    #[test]
    fn builds_are_deterministic() {
        let a = random_matrix(12, 40, 9);
        let b1 = build_basis(&a, 5).unwrap();
        let b2 = build_basis(&a, 5).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(b1.id(), b2.id());
    }

    #[test]
    fn from_parts_validates() {
        let basis = build_basis(&random_matrix(6, 10, 1), 3).unwrap();
        let ok = EigenBasis::from_parts(
            Arc::clone(basis.grid()),
            basis.u().clone(),
            basis.singular_values().to_vec(),
        )
        .unwrap();
        assert_eq!(ok, basis);
        let mut bad = basis.u().clone();
        bad[(0, 0)] += 0.1;
        assert!(EigenBasis::from_parts(
            Arc::clone(basis.grid()),
            bad,
            basis.singular_values().to_vec()
        )
        .is_err());
    }
}
