//! Versioned JSON containers.
//!
//! Matrices are stored row-major with explicit dimensions. serde_json writes
//! floats as the shortest decimal that parses back to the same value, so
//! every container round-trips bit-exactly.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::candidates::{CandidateKind, CandidateSet};
use crate::eigenspace::{CoefficientVector, EigenBasis};
use crate::error::{Error, Result};
use crate::lane::{Lane, SamplingGrid};
use crate::pipeline::{CandidateScores, HeightBins, RelationMatrix};

pub const SCHEMA_VERSION: u32 = 1;

/// Serializes `value` with a `version` field added at the top level.
pub fn to_versioned_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    match &mut v {
        Value::Object(map) => {
            map.insert("version".into(), Value::from(SCHEMA_VERSION));
        }
        _ => return Err(Error::Schema("top-level value must be an object".into())),
    }
    serde_json::to_string(&v).map_err(|e| Error::Schema(e.to_string()))
}

/// Parses a container written by [`to_versioned_json`].
pub fn from_versioned_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let Value::Object(map) = &mut v else {
        return Err(Error::Schema("top-level value must be an object".into()));
    };
    let version = map
        .remove("version")
        .ok_or_else(|| Error::Schema("missing `version`".into()))?;
    let found = version
        .as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| Error::Schema("`version` must be an unsigned integer".into()))?;
    if found != SCHEMA_VERSION {
        return Err(Error::Version {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(v).map_err(|e| Error::Schema(e.to_string()))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_versioned_json(value)? + "\n")?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_versioned_json(&fs::read_to_string(path)?)
}

fn check_len(what: &str, found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::Schema(format!(
            "{what} holds {found} values, dims require {expected}"
        )))
    }
}

fn rows(flat: &[f64], cols: usize) -> impl Iterator<Item = &[f64]> {
    flat.chunks(cols.max(1))
}

/// Stored eigenlane basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFile {
    pub grid: SamplingGrid,
    pub n: usize,
    pub m: usize,
    /// `U_M`, N x M row-major.
    pub u: Vec<f64>,
    pub singular_values: Vec<f64>,
}

impl BasisFile {
    pub fn from_basis(basis: &EigenBasis) -> Self {
        let (n, m) = (basis.n_samples(), basis.m());
        let u = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| basis.u()[(i, j)])
            .collect();
        Self {
            grid: (**basis.grid()).clone(),
            n,
            m,
            u,
            singular_values: basis.singular_values().to_vec(),
        }
    }

    pub fn into_basis(self) -> Result<EigenBasis> {
        check_len("u", self.u.len(), self.n * self.m)?;
        if self.grid.n_samples() != self.n {
            return Err(Error::Schema(format!(
                "n = {} but the grid has {} heights",
                self.n,
                self.grid.n_samples()
            )));
        }
        let u = DMatrix::from_row_slice(self.n, self.m, &self.u);
        EigenBasis::from_parts(Arc::new(self.grid), u, self.singular_values)
    }
}

pub fn save_basis(path: &Path, basis: &EigenBasis) -> Result<()> {
    save_json(path, &BasisFile::from_basis(basis))
}

pub fn load_basis(path: &Path) -> Result<EigenBasis> {
    load_json::<BasisFile>(path)?.into_basis()
}

/// Stored candidate set. Lanes share the grid of their basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFile {
    pub basis_id: String,
    pub kind: CandidateKind,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    /// K x M row-major.
    pub coefficients: Vec<f64>,
    /// K x N row-major lane x values.
    pub lanes: Vec<f64>,
    pub top_indices: Vec<usize>,
}

impl CandidateFile {
    pub fn from_set(set: &CandidateSet) -> Self {
        Self {
            basis_id: set.basis_id().to_string(),
            kind: set.kind(),
            k: set.k(),
            m: set.m(),
            n: set.grid().n_samples(),
            coefficients: set
                .coefficients()
                .iter()
                .flat_map(|c| c.as_slice().iter().copied())
                .collect(),
            lanes: set
                .lanes()
                .iter()
                .flat_map(|l| l.xs().iter().copied())
                .collect(),
            top_indices: set.lanes().iter().map(Lane::top_index).collect(),
        }
    }

    /// Rebuilds the set on `basis`'s grid, checking that it belongs there.
    pub fn into_set(self, basis: &EigenBasis) -> Result<CandidateSet> {
        check_len("coefficients", self.coefficients.len(), self.k * self.m)?;
        check_len("lanes", self.lanes.len(), self.k * self.n)?;
        check_len("top_indices", self.top_indices.len(), self.k)?;
        if self.n != basis.n_samples() {
            return Err(Error::Schema(
                "candidate lanes do not match the basis grid".into(),
            ));
        }
        let grid = basis.grid();
        let lanes = rows(&self.lanes, self.n)
            .zip(&self.top_indices)
            .map(|(xs, &top)| Lane::new(Arc::clone(grid), xs.to_vec(), top))
            .collect::<Result<Vec<_>>>()?;
        let coeffs = rows(&self.coefficients, self.m)
            .map(|c| CoefficientVector::new(c.to_vec()))
            .collect();
        let set = CandidateSet::from_parts(lanes, coeffs, self.basis_id, self.kind)?;
        set.check_basis(basis)?;
        Ok(set)
    }
}

pub fn save_candidates(path: &Path, set: &CandidateSet) -> Result<()> {
    save_json(path, &CandidateFile::from_set(set))
}

pub fn load_candidates(path: &Path, basis: &EigenBasis) -> Result<CandidateSet> {
    load_json::<CandidateFile>(path)?.into_set(basis)
}

/// Per-image candidate scores, optionally with relation features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresFile {
    pub image_id: String,
    pub k: usize,
    pub r: usize,
    pub m: usize,
    pub probabilities: Vec<f64>,
    /// K x R row-major.
    pub heights: Vec<f64>,
    /// K x M row-major.
    pub offsets: Vec<f64>,
    pub height_bins: Vec<f64>,
    /// Feature dimension; 0 when no features are stored.
    pub feature_dim: usize,
    /// K x feature_dim row-major.
    pub features: Vec<f64>,
}

impl ScoresFile {
    pub fn new(
        image_id: String,
        scores: &CandidateScores,
        bins: &HeightBins,
        features: Option<&[Vec<f64>]>,
    ) -> Result<Self> {
        let feature_dim = features.and_then(|f| f.first()).map_or(0, Vec::len);
        if let Some(f) = features {
            if f.len() != scores.k() || f.iter().any(|row| row.len() != feature_dim) {
                return Err(Error::Schema(
                    "feature rows do not match the candidates".into(),
                ));
            }
        }
        Ok(Self {
            image_id,
            k: scores.k(),
            r: scores.r(),
            m: scores.m(),
            probabilities: scores.probabilities().to_vec(),
            heights: scores.heights().iter().flatten().copied().collect(),
            offsets: scores
                .offsets()
                .iter()
                .flat_map(|o| o.as_slice().iter().copied())
                .collect(),
            height_bins: bins.heights().to_vec(),
            feature_dim,
            features: features
                .map(|f| f.iter().flatten().copied().collect())
                .unwrap_or_default(),
        })
    }

    /// Scores, height bins and feature rows (empty when absent).
    pub fn into_parts(self) -> Result<(CandidateScores, HeightBins, Vec<Vec<f64>>)> {
        check_len("probabilities", self.probabilities.len(), self.k)?;
        check_len("heights", self.heights.len(), self.k * self.r)?;
        check_len("offsets", self.offsets.len(), self.k * self.m)?;
        check_len("height_bins", self.height_bins.len(), self.r)?;
        check_len("features", self.features.len(), self.k * self.feature_dim)?;
        let heights = rows(&self.heights, self.r).map(<[f64]>::to_vec).collect();
        let offsets = rows(&self.offsets, self.m)
            .map(|o| CoefficientVector::new(o.to_vec()))
            .collect();
        let features = if self.feature_dim == 0 {
            Vec::new()
        } else {
            rows(&self.features, self.feature_dim)
                .map(<[f64]>::to_vec)
                .collect()
        };
        Ok((
            CandidateScores::new(self.probabilities, heights, offsets)?,
            HeightBins::new(self.height_bins)?,
            features,
        ))
    }
}

/// Stored relation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationFile {
    pub t: usize,
    pub values: Vec<f64>,
}

impl RelationFile {
    pub fn from_matrix(r: &RelationMatrix) -> Self {
        Self {
            t: r.t(),
            values: r.values().to_vec(),
        }
    }

    pub fn into_matrix(self) -> Result<RelationMatrix> {
        check_len("values", self.values.len(), self.t * self.t)?;
        RelationMatrix::new(self.t, self.values)
    }
}

/// Writes one versioned JSON object per line.
pub fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&to_versioned_json(item)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads the lines written by [`save_jsonl`]; errors carry line numbers.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            from_versioned_json(l).map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse {
                    line: i + 1,
                    message,
                },
                Error::Schema(msg) => Error::Schema(format!("line {}: {msg}", i + 1)),
                other => other,
            })
        })
        .collect()
}
