use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{CandidateScores, HeightBins};
use crate::candidates::{CandidateKind, CandidateSet};
use crate::eigenspace::EigenBasis;
use crate::error::{Error, Result};
use crate::lane::Lane;

/// Which refinements [`finalize_with`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizeOptions {
    pub apply_offsets: bool,
    pub apply_heights: bool,
}

impl Default for FinalizeOptions {
    fn default() -> Self {
        Self {
            apply_offsets: true,
            apply_heights: true,
        }
    }
}

/// Refines the selected candidates by their offsets and predicted heights.
pub fn finalize(
    basis: &EigenBasis,
    candidates: &CandidateSet,
    members: &[usize],
    scores: &CandidateScores,
    heights: &HeightBins,
) -> Result<Vec<Lane>> {
    finalize_with(
        basis,
        candidates,
        members,
        scores,
        heights,
        &FinalizeOptions::default(),
    )
}

/// [`finalize`] with individual refinements switchable.
///
/// Each member `i` becomes `U_M (c_i + dc_i)` and is then cut at the height
/// bin with the highest probability: samples above that height are marked
/// invalid. Lanes are returned in `members` order.
pub fn finalize_with(
    basis: &EigenBasis,
    candidates: &CandidateSet,
    members: &[usize],
    scores: &CandidateScores,
    heights: &HeightBins,
    options: &FinalizeOptions,
) -> Result<Vec<Lane>> {
    candidates.check_basis(basis)?;
    scores.check_against(candidates)?;
    heights.check_grid(basis.grid())?;
    if scores.r() != heights.len() {
        return Err(Error::DimensionMismatch {
            expected: heights.len(),
            found: scores.r(),
        });
    }
    members
        .iter()
        .map(|&i| {
            if i >= candidates.k() {
                return Err(Error::IndexError {
                    index: i,
                    len: candidates.k(),
                });
            }
            let mut lane = if !options.apply_offsets {
                candidates.lanes()[i].clone()
            } else if candidates.kind() == CandidateKind::Clustered {
                basis.refine(&candidates.coefficients()[i], &scores.offsets()[i])?
            } else {
                let shift = basis.u() * DVector::from_column_slice(scores.offsets()[i].as_slice());
                let base = &candidates.lanes()[i];
                let xs = base
                    .xs()
                    .iter()
                    .zip(shift.iter())
                    .map(|(x, d)| x + d)
                    .collect();
                Lane::full(Arc::clone(base.grid()), xs)?
            };
            if options.apply_heights {
                let dist = &scores.heights()[i];
                let mut bin = 0;
                for (b, p) in dist.iter().enumerate() {
                    if *p > dist[bin] {
                        bin = b;
                    }
                }
                let top = basis.grid().count_at_or_below(heights.heights()[bin]);
                lane = lane.with_top_index(top);
            }
            Ok(lane)
        })
        .collect()
}
