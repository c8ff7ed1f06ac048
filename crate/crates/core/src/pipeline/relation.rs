use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T x T` pairwise compatibility scores in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMatrix {
    t: usize,
    values: Vec<f64>,
}

impl RelationMatrix {
    /// `values` is row-major.
    pub fn new(t: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != t * t {
            return Err(Error::DimensionMismatch {
                expected: t * t,
                found: values.len(),
            });
        }
        if let Some(v) = values
            .iter()
            .find(|v| !v.is_finite() || !(-1.0..=1.0).contains(*v))
        {
            return Err(Error::Schema(format!("relation score {v} outside [-1, 1]")));
        }
        Ok(Self { t, values })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.t + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Relation scores as cosine similarities of the feature rows.
///
/// Both feature transforms are taken to be plain l2 normalization, so the
/// result is symmetric. Rows with zero norm score 0 against everything and
/// their indices are returned separately.
pub fn relation_from_features(features: &[Vec<f64>]) -> Result<(RelationMatrix, Vec<usize>)> {
    let t = features.len();
    if t == 0 {
        return Err(Error::EmptyInput("relation needs at least one feature row"));
    }
    let c = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != c) {
        return Err(Error::DimensionMismatch {
            expected: c,
            found: bad.len(),
        });
    }
    let mut zero_rows = Vec::new();
    let normalized: Vec<Option<Vec<f64>>> = features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                Some(f.iter().map(|v| v / norm).collect())
            } else {
                zero_rows.push(i);
                None
            }
        })
        .collect();
    let mut values = vec![0.0; t * t];
    for i in 0..t {
        for j in 0..t {
            if let (Some(a), Some(b)) = (&normalized[i], &normalized[j]) {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                values[i * t + j] = dot.clamp(-1.0, 1.0);
            }
        }
    }
    Ok((RelationMatrix::new(t, values)?, zero_rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_score_one() {
        let f = vec![vec![1.0, 2.0, 3.0]; 3];
        let (r, zeros) = relation_from_features(&f).unwrap();
        assert!(zeros.is_empty());
        assert!(r.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn orthogonal_rows_score_zero() {
        let f = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ];
        let (r, _) = relation_from_features(&f).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(r.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_rows_are_flagged() {
        let f = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
        let (r, zeros) = relation_from_features(&f).unwrap();
        assert_eq!(zeros, vec![1]);
        assert_eq!(r.get(0, 1), 0.0);
        assert_eq!(r.get(1, 1), 0.0);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(relation_from_features(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(relation_from_features(&[]).is_err());
        assert!(RelationMatrix::new(2, vec![0.0, 1.5, 0.0, 0.0]).is_err());
    }
}
