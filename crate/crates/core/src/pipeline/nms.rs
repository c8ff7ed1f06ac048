use serde::{Deserialize, Serialize};

use super::{CandidateScores, DEFAULT_NMS_IOU, DEFAULT_STRIPE_WIDTH, DEFAULT_T};
use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::lane::StripeMask;

/// Greedy NMS settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    /// Maximum number of lanes to keep.
    pub t: usize,
    /// Candidates whose IoU with a kept lane exceeds this are removed.
    pub iou_threshold: f64,
    pub width: u32,
    /// Stop early once the best remaining probability falls below this.
    /// `None` keeps picking regardless, which favors recall.
    pub min_probability: Option<f64>,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            t: DEFAULT_T,
            iou_threshold: DEFAULT_NMS_IOU,
            width: DEFAULT_STRIPE_WIDTH,
            min_probability: None,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::InvalidConfig("t must be at least 1".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(
                "NMS IoU threshold must lie in (0, 1]".into(),
            ));
        }
        if self.width == 0 {
            return Err(Error::InvalidConfig("stripe width must be positive".into()));
        }
        Ok(())
    }
}

/// Picks up to `t` candidates in order of probability, suppressing overlaps.
pub fn nms_select(
    candidates: &CandidateSet,
    scores: &CandidateScores,
    config: &NmsConfig,
) -> Result<Vec<usize>> {
    config.validate()?;
    scores.check_against(candidates)?;
    let masks = candidates.masks(config.width);
    Ok(nms_select_masked(&masks, scores.probabilities(), config))
}

/// [`nms_select`] over precomputed stripe masks.
pub fn nms_select_masked(
    masks: &[StripeMask],
    probabilities: &[f64],
    config: &NmsConfig,
) -> Vec<usize> {
    let mut alive = vec![true; probabilities.len().min(masks.len())];
    let mut picks = Vec::with_capacity(config.t);
    while picks.len() < config.t {
        let mut best: Option<usize> = None;
        for (i, &a) in alive.iter().enumerate() {
            if a && best.is_none_or(|b| probabilities[i] > probabilities[b]) {
                best = Some(i);
            }
        }
        let Some(i) = best else { break };
        if config
            .min_probability
            .is_some_and(|min| probabilities[i] < min)
        {
            break;
        }
        picks.push(i);
        alive[i] = false;
        for j in 0..alive.len() {
            if alive[j] && masks[i].iou(&masks[j]) > config.iou_threshold {
                alive[j] = false;
            }
        }
    }
    picks
}
