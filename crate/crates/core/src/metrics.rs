//! Lane detection metrics.
//!
//! Two protocols are supported:
//!
//! * stripe-IoU matching (lanes widened to 30 px stripes, a prediction is a
//!   true positive when it overlaps a ground-truth lane with IoU above 0.5),
//!   summarized by precision, recall and F-measure;
//! * point accuracy: the fraction of ground-truth points whose matched
//!   prediction lies within a pixel distance, plus lane-level false positive
//!   and false negative rates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lane::{rasterize_stripe, Lane, StripeMask};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
pub const DEFAULT_POINT_DISTANCE: f64 = 20.0;
pub const DEFAULT_LANE_ACCURACY_FLOOR: f64 = 0.85;

/// One image's predictions and annotations.
#[derive(Debug, Clone)]
pub struct ImageLanes {
    pub image_id: String,
    pub category: Option<String>,
    pub predictions: Vec<Lane>,
    pub ground_truth: Vec<Lane>,
}

/// A matched prediction / ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub prediction: usize,
    pub ground_truth: usize,
    pub score: f64,
}

/// Stripe-IoU matching for a single image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneMatching {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// True-positive pairs in the order they were accepted.
    pub pairs: Vec<MatchPair>,
    /// Per prediction, its best IoU against any ground-truth lane.
    pub best_ious: Vec<f64>,
    /// True positives under an optimal (maximum cardinality) assignment;
    /// differs from `tp` only where greedy matching is suboptimal.
    pub optimal_tp: usize,
}

/// Greedy one-to-one matching in descending IoU order.
///
/// Ties are broken by the lower prediction index, then the lower ground-truth
/// index. Pairs with IoU above `iou_threshold` are true positives.
pub fn match_lanes(
    predictions: &[Lane],
    ground_truth: &[Lane],
    iou_threshold: f64,
    width: u32,
) -> Result<LaneMatching> {
    check_threshold(iou_threshold)?;
    check_shared_grid(predictions.iter().chain(ground_truth))?;
    let pm: Vec<StripeMask> = predictions
        .iter()
        .map(|l| rasterize_stripe(l, width))
        .collect();
    let gm: Vec<StripeMask> = ground_truth
        .iter()
        .map(|l| rasterize_stripe(l, width))
        .collect();
    let ious: Vec<Vec<f64>> = pm
        .iter()
        .map(|p| gm.iter().map(|g| p.iou(g)).collect())
        .collect();
    Ok(match_from_ious(&ious, ground_truth.len(), iou_threshold))
}

/// [`match_lanes`] on a precomputed `preds x gts` IoU table.
pub fn match_from_ious(ious: &[Vec<f64>], n_gt: usize, iou_threshold: f64) -> LaneMatching {
    let n_pred = ious.len();
    let mut edges: Vec<MatchPair> = Vec::new();
    for (p, row) in ious.iter().enumerate() {
        for (g, &score) in row.iter().enumerate() {
            if score > iou_threshold {
                edges.push(MatchPair {
                    prediction: p,
                    ground_truth: g,
                    score,
                });
            }
        }
    }
    edges.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.prediction.cmp(&b.prediction))
            .then(a.ground_truth.cmp(&b.ground_truth))
    });
    let mut pred_used = vec![false; n_pred];
    let mut gt_used = vec![false; n_gt];
    let mut pairs = Vec::new();
    for e in &edges {
        if !pred_used[e.prediction] && !gt_used[e.ground_truth] {
            pred_used[e.prediction] = true;
            gt_used[e.ground_truth] = true;
            pairs.push(*e);
        }
    }
    let tp = pairs.len();
    let best_ious = ious
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .collect();
    LaneMatching {
        tp,
        fp: n_pred - tp,
        fn_: n_gt - tp,
        pairs,
        best_ious,
        optimal_tp: max_bipartite_matching(n_pred, n_gt, &edges),
    }
}

fn max_bipartite_matching(n_pred: usize, n_gt: usize, edges: &[MatchPair]) -> usize {
    let mut adj = vec![Vec::new(); n_pred];
    for e in edges {
        adj[e.prediction].push(e.ground_truth);
    }
    fn augment(
        p: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &g in &adj[p] {
            if !seen[g] {
                seen[g] = true;
                if owner[g].is_none_or(|q| augment(q, adj, seen, owner)) {
                    owner[g] = Some(p);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; n_gt];
    (0..n_pred)
        .filter(|&p| augment(p, &adj, &mut vec![false; n_gt], &mut owner))
        .count()
}

/// Precision, recall and F-measure, each defined as 0 where undefined.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (p, r, f)
}

/// Matching result for one image inside a [`MatchReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMatch {
    pub image_id: String,
    pub category: Option<String>,
    pub matching: LaneMatching,
}

/// Counts summed over images with the derived ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub per_image: Vec<ImageMatch>,
}

impl MatchReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let (precision, recall, f_measure) = prf(tp, fp, fn_);
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_measure,
            per_image: Vec::new(),
        }
    }

    /// Images whose greedy matching found fewer pairs than an optimal one.
    pub fn greedy_divergences(&self) -> impl Iterator<Item = &ImageMatch> {
        self.per_image
            .iter()
            .filter(|m| m.matching.optimal_tp != m.matching.tp)
    }
}

/// Sums per-image counts and applies the precision / recall / F formulas.
pub fn f_measure(per_image: Vec<ImageMatch>) -> MatchReport {
    let (tp, fp, fn_) = per_image.iter().fold((0, 0, 0), |(a, b, c), m| {
        (a + m.matching.tp, b + m.matching.fp, c + m.matching.fn_)
    });
    MatchReport {
        per_image,
        ..MatchReport::from_counts(tp, fp, fn_)
    }
}

/// Matches every image and aggregates.
pub fn evaluate_f_measure(
    images: &[ImageLanes],
    iou_threshold: f64,
    width: u32,
) -> Result<MatchReport> {
    let per_image = images
        .iter()
        .map(|img| {
            Ok(ImageMatch {
                image_id: img.image_id.clone(),
                category: img.category.clone(),
                matching: match_lanes(&img.predictions, &img.ground_truth, iou_threshold, width)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(f_measure(per_image))
}

/// Counts for one category tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub images: usize,
    /// Only false positives are meaningful for this category.
    pub fp_only: bool,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Per-category breakdown plus the overall totals under the same convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub overall: CategoryReport,
    pub categories: Vec<CategoryReport>,
}

/// Aggregates a report by image category.
///
/// Untagged images fall under `"uncategorized"`. In categories listed in
/// `fp_only` annotations are ignored: every prediction counts as a false
/// positive and no true positives or misses are recorded.
pub fn f_measure_by_category(
    report: &MatchReport,
    fp_only: &BTreeSet<String>,
) -> CategoryBreakdown {
    let mut groups: BTreeMap<String, (usize, usize, usize, usize)> = BTreeMap::new();
    let mut total = (0, 0, 0, 0);
    for img in &report.per_image {
        let cat = img
            .category
            .clone()
            .unwrap_or_else(|| "uncategorized".into());
        let m = &img.matching;
        let (tp, fp, fn_) = if fp_only.contains(&cat) {
            (0, m.tp + m.fp, 0)
        } else {
            (m.tp, m.fp, m.fn_)
        };
        let g = groups.entry(cat).or_default();
        for acc in [g, &mut total] {
            acc.0 += 1;
            acc.1 += tp;
            acc.2 += fp;
            acc.3 += fn_;
        }
    }
    let build = |category: String, (images, tp, fp, fn_): (usize, usize, usize, usize)| {
        let (precision, recall, f_measure) = prf(tp, fp, fn_);
        CategoryReport {
            fp_only: fp_only.contains(&category),
            category,
            images,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_measure,
        }
    };
    CategoryBreakdown {
        overall: build("total".into(), total),
        categories: groups.into_iter().map(|(c, v)| build(c, v)).collect(),
    }
}

/// Point-accuracy protocol settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointAccuracyConfig {
    /// A point is correct when strictly closer than this (pixels).
    pub distance_threshold: f64,
    /// Matched lanes below this point accuracy still count as wrong.
    pub lane_accuracy_floor: f64,
}

impl Default for PointAccuracyConfig {
    fn default() -> Self {
        Self {
            distance_threshold: DEFAULT_POINT_DISTANCE,
            lane_accuracy_floor: DEFAULT_LANE_ACCURACY_FLOOR,
        }
    }
}

/// Point accuracy for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePointAccuracy {
    pub image_id: String,
    pub n_correct: usize,
    pub n_gt_points: usize,
    pub n_pred: usize,
    pub n_gt: usize,
    /// Predictions that are unmatched or below the lane accuracy floor.
    pub false_pred: usize,
    /// Ground-truth lanes that are unmatched or below the floor.
    pub missed_gt: usize,
    /// Matched pairs scored by per-lane point accuracy.
    pub pairs: Vec<MatchPair>,
}

/// Point accuracy with lane-level error rates, aggregated over images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAccuracyReport {
    pub n_correct: usize,
    pub n_gt_points: usize,
    pub accuracy: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub n_pred: usize,
    pub n_gt: usize,
    pub false_pred: usize,
    pub missed_gt: usize,
    pub per_image: Vec<ImagePointAccuracy>,
}

/// Point accuracy of one image.
///
/// A ground-truth sample `k` (within its valid extent) is correct for a
/// prediction valid at `k` whose x differs by less than the threshold.
/// Lanes are paired greedily by per-lane accuracy (highest first, ties to the
/// lower prediction then ground-truth index); only pairs with at least one
/// correct point are eligible.
pub fn point_accuracy(
    image_id: &str,
    predictions: &[Lane],
    ground_truth: &[Lane],
    config: &PointAccuracyConfig,
) -> Result<ImagePointAccuracy> {
    check_shared_grid(predictions.iter().chain(ground_truth))?;
    let mut candidates: Vec<(MatchPair, usize)> = Vec::new();
    for (p, pred) in predictions.iter().enumerate() {
        for (g, gt) in ground_truth.iter().enumerate() {
            let n = gt.top_index();
            if n == 0 {
                continue;
            }
            let correct = (0..n.min(pred.top_index()))
                .filter(|&k| (pred.xs()[k] - gt.xs()[k]).abs() < config.distance_threshold)
                .count();
            if correct > 0 {
                let score = correct as f64 / n as f64;
                candidates.push((
                    MatchPair {
                        prediction: p,
                        ground_truth: g,
                        score,
                    },
                    correct,
                ));
            }
        }
    }
    candidates.sort_by(|(a, _), (b, _)| {
        b.score
            .total_cmp(&a.score)
            .then(a.prediction.cmp(&b.prediction))
            .then(a.ground_truth.cmp(&b.ground_truth))
    });
    let mut pred_used = vec![false; predictions.len()];
    let mut gt_used = vec![false; ground_truth.len()];
    let mut pairs = Vec::new();
    let mut n_correct = 0;
    let mut good = 0;
    for (pair, correct) in candidates {
        if !pred_used[pair.prediction] && !gt_used[pair.ground_truth] {
            pred_used[pair.prediction] = true;
            gt_used[pair.ground_truth] = true;
            n_correct += correct;
            if pair.score >= config.lane_accuracy_floor {
                good += 1;
            }
            pairs.push(pair);
        }
    }
    Ok(ImagePointAccuracy {
        image_id: image_id.to_string(),
        n_correct,
        n_gt_points: ground_truth.iter().map(Lane::top_index).sum(),
        n_pred: predictions.len(),
        n_gt: ground_truth.len(),
        false_pred: predictions.len() - good,
        missed_gt: ground_truth.len() - good,
        pairs,
    })
}

/// Scores every image and aggregates counts globally.
pub fn tusimple_score(
    images: &[ImageLanes],
    config: &PointAccuracyConfig,
) -> Result<PointAccuracyReport> {
    let per_image = images
        .iter()
        .map(|img| point_accuracy(&img.image_id, &img.predictions, &img.ground_truth, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(PointAccuracyReport::from_images(per_image))
}

impl PointAccuracyReport {
    pub fn from_images(per_image: Vec<ImagePointAccuracy>) -> Self {
        let sum = |f: fn(&ImagePointAccuracy) -> usize| per_image.iter().map(f).sum::<usize>();
        let n_correct = sum(|i| i.n_correct);
        let n_gt_points = sum(|i| i.n_gt_points);
        let n_pred = sum(|i| i.n_pred);
        let n_gt = sum(|i| i.n_gt);
        let false_pred = sum(|i| i.false_pred);
        let missed_gt = sum(|i| i.missed_gt);
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            n_correct,
            n_gt_points,
            accuracy: ratio(n_correct, n_gt_points),
            fpr: ratio(false_pred, n_pred),
            fnr: ratio(missed_gt, n_gt),
            n_pred,
            n_gt,
            false_pred,
            missed_gt,
            per_image,
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "IoU threshold {t} outside (0, 1]"
        )))
    }
}

fn check_shared_grid<'a>(mut lanes: impl Iterator<Item = &'a Lane>) -> Result<()> {
    if let Some(first) = lanes.next() {
        for lane in lanes {
            if !first.same_grid(lane) {
                return Err(Error::GridMismatch);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane::SamplingGrid;
    use std::sync::Arc;

    fn grid() -> Arc<SamplingGrid> {
        Arc::new(SamplingGrid::uniform(1280, 720, 50, 710.0, 220.0).unwrap())
    }

    fn vertical(g: &Arc<SamplingGrid>, x: f64) -> Lane {
        Lane::full(Arc::clone(g), vec![x; 50]).unwrap()
    }

    #[test]
    fn prf_examples() {
        assert_eq!(prf(1, 0, 0), (1.0, 1.0, 1.0));
        assert_eq!(prf(0, 3, 2).2, 0.0);
        assert_eq!(prf(0, 0, 0), (0.0, 0.0, 0.0));
        let (p, r, f) = prf(86, 14, 25);
        assert!((p - 0.86).abs() < 1e-12);
        assert!((r - 86.0 / 111.0).abs() < 1e-12);
        // 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN)
        assert!((f - 172.0 / 211.0).abs() < 1e-12);
    }

    #[test]
    fn identical_sets_match_fully() {
        let g = grid();
        let lanes: Vec<Lane> = [200.0, 600.0, 1000.0]
            .iter()
            .map(|&x| vertical(&g, x))
            .collect();
        let m = match_lanes(&lanes, &lanes, 0.5, 30).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (3, 0, 0));
        let m = match_lanes(&[], &lanes, 0.5, 30).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 0, 3));
    }

    #[test]
    fn threshold_is_strict() {
        let g = grid();
        // 10 px apart at width 30: IoU = 20/40 = 0.5, not a match
        let m = match_lanes(&[vertical(&g, 300.0)], &[vertical(&g, 310.0)], 0.5, 30).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
        assert!((m.best_ious[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn greedy_divergence_is_reported() {
        // greedy takes (0,0) at 0.9, leaving pred 1 without a partner
        let ious = vec![vec![0.9, 0.8], vec![0.7, 0.0]];
        let m = match_from_ious(&ious, 2, 0.5);
        assert_eq!(m.tp, 1);
        assert_eq!(m.optimal_tp, 2);
    }

    #[test]
    fn point_accuracy_examples() {
        let g = grid();
        let gts: Vec<Lane> = [100.0, 400.0, 700.0, 1000.0]
            .iter()
            .map(|&x| vertical(&g, x))
            .collect();
        let cfg = PointAccuracyConfig::default();
        let exact = point_accuracy("a", &gts, &gts, &cfg).unwrap();
        assert_eq!(exact.n_correct, 200);
        assert_eq!((exact.false_pred, exact.missed_gt), (0, 0));

        let none =
            PointAccuracyReport::from_images(vec![point_accuracy("a", &[], &gts, &cfg).unwrap()]);
        assert_eq!(none.fnr, 1.0);
        assert_eq!(none.fpr, 0.0);

        let mut preds = gts.clone();
        preds[2] = vertical(&g, 721.0);
        let r =
            PointAccuracyReport::from_images(
                vec![point_accuracy("a", &preds, &gts, &cfg).unwrap()],
            );
        assert_eq!(r.n_correct, 150);
        assert!((r.fpr - 0.25).abs() < 1e-12);
        assert!((r.fnr - 0.25).abs() < 1e-12);
    }

    #[test]
    fn categories_aggregate() {
        let g = grid();
        let lanes = vec![vertical(&g, 300.0)];
        let img = |id: &str, cat: &str, preds: Vec<Lane>, gts: Vec<Lane>| ImageLanes {
            image_id: id.into(),
            category: Some(cat.into()),
            predictions: preds,
            ground_truth: gts,
        };
        let images = vec![
            img("a", "normal", lanes.clone(), lanes.clone()),
            img("b", "cross", lanes.clone(), vec![]),
            img("c", "normal", vec![], lanes.clone()),
        ];
        let report = evaluate_f_measure(&images, 0.5, 30).unwrap();
        let fp_only: BTreeSet<String> = ["cross".to_string()].into();
        let b = f_measure_by_category(&report, &fp_only);
        assert_eq!(b.categories.len(), 2);
        let cross = &b.categories[0];
        assert!(cross.fp_only);
        assert_eq!((cross.tp, cross.fp, cross.fn_), (0, 1, 0));
        let normal = &b.categories[1];
        assert_eq!((normal.tp, normal.fp, normal.fn_), (1, 0, 1));
        assert_eq!((b.overall.tp, b.overall.fp, b.overall.fn_), (1, 1, 1));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = vertical(&grid(), 300.0);
        let other = Arc::new(SamplingGrid::uniform(1280, 720, 50, 700.0, 210.0).unwrap());
        let b = vertical(&other, 300.0);
        assert!(matches!(
            match_lanes(&[a.clone()], &[b.clone()], 0.5, 30),
            Err(Error::GridMismatch)
        ));
        assert!(point_accuracy("x", &[a], &[b], &PointAccuracyConfig::default()).is_err());
        assert!(match_lanes(&[], &[], 0.0, 30).is_err());
    }
}
