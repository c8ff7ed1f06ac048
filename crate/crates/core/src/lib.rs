//! Eigenlane lane descriptors.
//!
//! Lanes sampled at fixed image heights are described in a low-rank basis
//! learned from training data (the eigenlanes). On top of that representation
//! this crate provides data-driven candidate generation, the selection stages
//! of an anchor-based detector (NMS, compatibility cliques, refinement), lane
//! evaluation metrics, and the file formats and synthetic data used by the
//! `eigenlane` command-line tool.

pub mod candidates;
pub mod eigenspace;
pub mod error;
pub mod io;
pub mod lane;
pub mod metrics;
pub mod pipeline;

pub use candidates::{
    cluster_lanes, kmeans, mean_best_iou, straight_anchor_grid, straight_anchor_set, CandidateKind,
    CandidateSet, ClusteringConfig, KMeansOutcome,
};
pub use eigenspace::{build_basis, CoefficientVector, EigenBasis, LaneMatrix};
pub use error::{Error, Result};
pub use lane::{rasterize_stripe, resample_polyline, stripe_iou, Lane, SamplingGrid, StripeMask};
pub use metrics::{
    evaluate_f_measure, f_measure, match_lanes, tusimple_score, ImageLanes, MatchReport,
    PointAccuracyConfig, PointAccuracyReport,
};
pub use pipeline::{
    detect, finalize, finalize_with, mwcs, nms_select, relation_from_features, CandidateScores,
    CliqueResult, DetectConfig, Detection, FinalizeOptions, HeightBins, NmsConfig, RelationMatrix,
};
