use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use eigenlane::candidates::cluster_lanes_detailed;
use eigenlane::io::{
    default_grid, generate_synthetic, load_basis, load_candidates, load_csv, load_culane_dir,
    load_jsonl, load_tusimple_jsonl, oracle_scores, render_svg, save_basis, save_candidates,
    save_json, save_jsonl, save_tusimple_jsonl, write_csv, DatasetRecord, FamilyWeights, Layer,
    LayerStyle, LoadedDataset, OracleConfig, RelationFile, ScoresFile, SyntheticSpec,
};
use eigenlane::lane::stripe_iou_pixels;
use eigenlane::metrics::{f_measure_by_category, CategoryBreakdown};
use eigenlane::pipeline::DEFAULT_HEIGHT_BINS;
use eigenlane::{
    evaluate_f_measure, straight_anchor_set, stripe_iou, tusimple_score, CandidateSet,
    ClusteringConfig, DetectConfig, EigenBasis, Error, FinalizeOptions, HeightBins, ImageLanes,
    Lane, LaneMatrix, MatchReport, NmsConfig, PointAccuracyConfig, PointAccuracyReport,
    SamplingGrid,
};
use log::{info, warn};
use serde::Serialize;

use crate::config::{Format, Settings};
use crate::par::par_map;
use crate::{
    ApproxArgs, BuildBasisArgs, ClusterArgs, DetectArgs, EvalArgs, EvalCandidatesArgs, RenderArgs,
    ScoreOracleArgs, StraightArgs, SynthArgs,
};

type Result<T> = anyhow::Result<T>;

fn load_records(path: &Path, s: &Settings) -> Result<Vec<DatasetRecord>> {
    let loaded: LoadedDataset = match s.format {
        Format::Tusimple => load_tusimple_jsonl(path, s.image_size),
        Format::Csv => load_csv(path, s.image_size),
        Format::Culane => load_culane_dir(path, s.image_size),
    }
    .with_context(|| format!("loading {}", path.display()))?;
    let w = &loaded.warnings;
    if !w.is_empty() {
        warn!(
            "{}: dropped {} out-of-bounds points, skipped {} lanes",
            path.display(),
            w.dropped_points,
            w.skipped_lanes
        );
    }
    info!("{}: {} images", path.display(), loaded.records.len());
    Ok(loaded.records)
}

/// Resamples every record onto `grid`, one entry per record.
fn record_lanes(
    records: &[DatasetRecord],
    grid: &Arc<SamplingGrid>,
    threads: usize,
) -> Result<Vec<Vec<Lane>>> {
    let lanes = par_map(records, threads, |_, r| r.to_lanes(grid))
        .into_iter()
        .collect::<eigenlane::Result<Vec<_>>>()?;
    Ok(lanes)
}

fn load_basis_from(path: &Path) -> Result<EigenBasis> {
    load_basis(path).with_context(|| format!("loading basis {}", path.display()))
}

fn load_candidates_from(path: &Path, basis: &EigenBasis) -> Result<CandidateSet> {
    load_candidates(path, basis).with_context(|| format!("loading candidates {}", path.display()))
}

fn write_report<T: Serialize>(s: &Settings, path: Option<&Path>, report: &T) -> Result<()> {
    if let Some(path) = path {
        let out = s.output_path(path)?;
        save_json(&out, report)?;
        info!("wrote {}", out.display());
    }
    Ok(())
}

pub fn synth(s: &Settings, a: &SynthArgs) -> Result<()> {
    let mut spec = SyntheticSpec {
        count: a.count,
        seed: s.seed,
        image_size: s.image_size,
        n_samples: s.samples,
        ..Default::default()
    };
    if let Some(w) = &a.weights {
        spec.weights = FamilyWeights {
            straight: w[0],
            arc: w[1],
            s_curve: w[2],
        };
    }
    if let Some(c) = &a.curvature {
        spec.curvature_range = (c[0], c[1]);
    }
    if let Some(n) = a.max_lanes {
        spec.max_lanes = n;
    }
    let records = generate_synthetic(&spec)?;
    let out = s.output_path(&a.out)?;
    match s.format {
        Format::Tusimple => save_tusimple_jsonl(&out, &records)?,
        Format::Csv => write_csv(File::create(&out)?, &records)?,
        Format::Culane => {
            return Err(
                Error::InvalidConfig("synthetic data is written as tusimple or csv".into()).into(),
            )
        }
    }
    let lanes: usize = records.iter().map(|r| r.lanes.len()).sum();
    println!(
        "wrote {} images with {lanes} lanes to {}",
        records.len(),
        out.display()
    );
    Ok(())
}

pub fn build_basis(s: &Settings, a: &BuildBasisArgs) -> Result<()> {
    let records = load_records(&a.train, s)?;
    let grid = Arc::new(default_grid(s.image_size, s.samples)?);
    let lanes: Vec<Lane> = record_lanes(&records, &grid, s.threads)?
        .into_iter()
        .flatten()
        .collect();
    let matrix = LaneMatrix::from_lanes(&lanes)?;
    let basis = eigenlane::build_basis(&matrix, s.rank)?;
    let out = s.output_path(&a.out)?;
    save_basis(&out, &basis)?;
    let energy = matrix.frobenius_sq();
    println!(
        "basis {} (N={}, M={}) from {} lanes: residual {:.6e} ({:.4e} of total energy)",
        basis.id(),
        basis.n_samples(),
        basis.m(),
        lanes.len(),
        basis.trailing_energy(),
        basis.trailing_energy() / energy
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ApproxRow {
    rank: usize,
    residual: f64,
    relative_residual: f64,
    rms_px: f64,
    mean_iou: f64,
}

#[derive(Debug, Serialize)]
struct ApproxReport {
    basis_id: String,
    lanes: usize,
    stripe_width: u32,
    ranks: Vec<ApproxRow>,
}

fn truncated(basis: &EigenBasis, m: usize) -> eigenlane::Result<EigenBasis> {
    EigenBasis::from_parts(
        Arc::clone(basis.grid()),
        basis.u().columns(0, m).into_owned(),
        basis.singular_values().to_vec(),
    )
}

pub fn approx(s: &Settings, a: &ApproxArgs) -> Result<()> {
    let basis = load_basis_from(&a.basis)?;
    let records = load_records(&a.data, s)?;
    let lanes: Vec<Lane> = record_lanes(&records, basis.grid(), s.threads)?
        .into_iter()
        .flatten()
        .collect();
    let matrix = LaneMatrix::from_lanes(&lanes)?;
    let total = matrix.frobenius_sq();
    let cells = (matrix.n_lanes() * matrix.n_samples()) as f64;
    let mut rows = Vec::new();
    println!("rank  residual        relative    rms px   mean IoU");
    for m in 1..=basis.m() {
        let b = truncated(&basis, m)?;
        let residual = b.approximation_error(&matrix)?;
        let ious = par_map(&lanes, s.threads, |_, lane| {
            stripe_iou(&b.approximate(lane)?, lane, s.stripe_width)
        })
        .into_iter()
        .collect::<eigenlane::Result<Vec<f64>>>()?;
        let row = ApproxRow {
            rank: m,
            residual,
            relative_residual: residual / total,
            rms_px: (residual / cells).sqrt(),
            mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
        };
        println!(
            "{:>4}  {:<14.6e}  {:<10.4e}  {:>7.3}  {:>8.4}",
            row.rank, row.residual, row.relative_residual, row.rms_px, row.mean_iou
        );
        rows.push(row);
    }
    let report = ApproxReport {
        basis_id: basis.id(),
        lanes: lanes.len(),
        stripe_width: s.stripe_width,
        ranks: rows,
    };
    write_report(s, a.out.as_deref(), &report)
}

pub fn cluster(s: &Settings, a: &ClusterArgs) -> Result<()> {
    let basis = load_basis_from(&a.basis)?;
    let records = load_records(&a.train, s)?;
    let lanes: Vec<Lane> = record_lanes(&records, basis.grid(), s.threads)?
        .into_iter()
        .flatten()
        .collect();
    let config = ClusteringConfig {
        k: s.k,
        seed: s.seed,
        max_iters: a.max_iters,
        ..Default::default()
    };
    let (set, outcome) = cluster_lanes_detailed(&basis, &lanes, &config)?;
    let out = s.output_path(&a.out)?;
    save_candidates(&out, &set)?;
    println!(
        "{} candidates from {} lanes: objective {:.6e} after {} iterations{}",
        set.k(),
        lanes.len(),
        outcome.objective(),
        outcome.iterations,
        if outcome.converged {
            ""
        } else {
            " (not converged)"
        }
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn straight_anchors(s: &Settings, a: &StraightArgs) -> Result<()> {
    let basis = load_basis_from(&a.basis)?;
    let set = straight_anchor_set(&basis, s.k)?;
    let out = s.output_path(&a.out)?;
    save_candidates(&out, &set)?;
    println!("{} straight anchors; wrote {}", set.k(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct CategoryIou {
    lanes: usize,
    mean_best_iou: f64,
}

#[derive(Debug, Serialize)]
struct CandidateReport {
    candidates: usize,
    lanes: usize,
    stripe_width: u32,
    mean_best_iou: f64,
    categories: BTreeMap<String, CategoryIou>,
}

pub fn eval_candidates(s: &Settings, a: &EvalCandidatesArgs) -> Result<()> {
    let basis = load_basis_from(&a.basis)?;
    let set = load_candidates_from(&a.candidates, &basis)?;
    let records = load_records(&a.data, s)?;
    let per_record = record_lanes(&records, basis.grid(), s.threads)?;
    let tagged: Vec<(&str, Lane)> = records
        .iter()
        .zip(per_record)
        .flat_map(|(r, lanes)| {
            let cat = r.category.as_deref().unwrap_or("uncategorized");
            lanes.into_iter().map(move |l| (cat, l))
        })
        .collect();
    if tagged.is_empty() {
        return Err(Error::EmptyInput("no test lanes").into());
    }
    let masks = set.masks(s.stripe_width);
    let best = par_map(&tagged, s.threads, |_, (_, lane)| {
        eigenlane::candidates::best_ious_masked(&masks, std::slice::from_ref(lane), s.stripe_width)
            [0]
    });
    let mut categories: BTreeMap<String, CategoryIou> = BTreeMap::new();
    for ((cat, _), iou) in tagged.iter().zip(&best) {
        let c = categories.entry((*cat).to_string()).or_insert(CategoryIou {
            lanes: 0,
            mean_best_iou: 0.0,
        });
        c.lanes += 1;
        c.mean_best_iou += iou;
    }
    for c in categories.values_mut() {
        c.mean_best_iou /= c.lanes as f64;
    }
    let report = CandidateReport {
        candidates: set.k(),
        lanes: best.len(),
        stripe_width: s.stripe_width,
        mean_best_iou: best.iter().sum::<f64>() / best.len() as f64,
        categories,
    };
    println!(
        "mean best IoU of {} candidates over {} lanes: {:.4}",
        report.candidates, report.lanes, report.mean_best_iou
    );
    for (name, c) in &report.categories {
        println!("  {name:<14} {:>6} lanes  {:.4}", c.lanes, c.mean_best_iou);
    }
    write_report(s, a.out.as_deref(), &report)
}

pub fn score_oracle(s: &Settings, a: &ScoreOracleArgs) -> Result<()> {
    let basis = load_basis_from(&a.basis)?;
    let set = load_candidates_from(&a.candidates, &basis)?;
    let records = load_records(&a.data, s)?;
    let config = OracleConfig {
        noise_std: a.noise,
        noise_dim: a.noise_dim,
        width: s.stripe_width,
        seed: s.seed,
        ..Default::default()
    };
    config.validate()?;
    let bins = HeightBins::uniform(basis.grid(), DEFAULT_HEIGHT_BINS)?;
    let masks = set.masks(config.width);
    let files = par_map(&records, s.threads, |i, r| {
        let gt = r.to_lanes(basis.grid())?;
        let o = oracle_scores(&set, &masks, &gt, &basis, &bins, &config, i as u64)?;
        ScoresFile::new(
            r.image_id.clone(),
            &o.scores,
            &bins,
            Some(&o.features.dense()),
        )
    })
    .into_iter()
    .collect::<eigenlane::Result<Vec<_>>>()?;
    let out = s.output_path(&a.out)?;
    save_jsonl(&out, &files)?;
    println!(
        "scored {} candidates on {} images; wrote {}",
        set.k(),
        files.len(),
        out.display()
    );
    Ok(())
}

/// Intermediate detector state for one image.
#[derive(Debug, Serialize)]
struct DetectTrace {
    image_id: String,
    selected: Vec<usize>,
    relation: RelationFile,
    members: Vec<usize>,
    compatibility: f64,
    fallback: bool,
}

pub fn detect(s: &Settings, a: &DetectArgs) -> Result<()> {
    let basis = load_basis_from(&a.basis)?;
    let set = load_candidates_from(&a.candidates, &basis)?;
    let scores: Vec<ScoresFile> =
        load_jsonl(&a.scores).with_context(|| format!("loading {}", a.scores.display()))?;
    let config = DetectConfig {
        nms: NmsConfig {
            t: s.t,
            iou_threshold: s.iou_thresh,
            width: s.stripe_width,
            ..Default::default()
        },
        kappa: s.kappa,
        finalize: FinalizeOptions {
            apply_offsets: !a.no_offsets,
            apply_heights: !a.no_heights,
        },
    };
    config.validate()?;
    let masks = set.masks(config.nms.width);
    let size = (basis.grid().image_width(), basis.grid().image_height());
    let results = par_map(&scores, s.threads, |_, file| {
        let image_id = file.image_id.clone();
        let (cand_scores, bins, features) = file.clone().into_parts()?;
        bins.check_grid(basis.grid())?;
        if features.is_empty() {
            return Err(Error::Schema(format!(
                "{image_id}: scores carry no relation features"
            )));
        }
        let d = eigenlane::detect(
            &basis,
            &set,
            &masks,
            &cand_scores,
            &features,
            &bins,
            &config,
        )?;
        let record = if d.lanes.is_empty() {
            DatasetRecord {
                image_id: image_id.clone(),
                image_size: size,
                lanes: Vec::new(),
                category: None,
            }
        } else {
            DatasetRecord::from_lanes(image_id.clone(), &d.lanes, None)?
        };
        let trace = DetectTrace {
            image_id,
            selected: d.selected,
            relation: RelationFile::from_matrix(&d.relation),
            members: d.members,
            compatibility: d.clique.compatibility,
            fallback: d.clique.fallback,
        };
        Ok((record, trace))
    })
    .into_iter()
    .collect::<eigenlane::Result<Vec<_>>>()?;
    let (records, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let out = s.output_path(&a.out)?;
    save_tusimple_jsonl(&out, &records)?;
    let lanes: usize = records.iter().map(|r| r.lanes.len()).sum();
    println!(
        "detected {lanes} lanes on {} images; wrote {}",
        records.len(),
        out.display()
    );
    if let Some(path) = &a.trace {
        let out = s.output_path(path)?;
        save_jsonl(&out, &traces)?;
        info!("wrote {}", out.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    iou_threshold: f64,
    stripe_width: u32,
    f_measure: MatchReport,
    categories: CategoryBreakdown,
    tusimple: PointAccuracyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pixel_audit_max_deviation: Option<f64>,
}

pub fn eval(s: &Settings, a: &EvalArgs) -> Result<()> {
    let gt = load_records(&a.gt, s)?;
    let pred = load_tusimple_jsonl(&a.pred, s.image_size)
        .with_context(|| format!("loading {}", a.pred.display()))?
        .records;
    let mut by_id: HashMap<&str, &DatasetRecord> = HashMap::new();
    for r in &pred {
        if by_id.insert(&r.image_id, r).is_some() {
            return Err(Error::Schema(format!("duplicate prediction for {}", r.image_id)).into());
        }
    }
    let gt_ids: BTreeSet<&str> = gt.iter().map(|r| r.image_id.as_str()).collect();
    if let Some(extra) = pred.iter().find(|r| !gt_ids.contains(r.image_id.as_str())) {
        return Err(
            Error::Schema(format!("prediction for unknown image {}", extra.image_id)).into(),
        );
    }
    let grid = Arc::new(default_grid(s.image_size, s.samples)?);
    let images = par_map(&gt, s.threads, |_, r| {
        let predictions = match by_id.get(r.image_id.as_str()) {
            Some(p) => p.to_lanes(&grid)?,
            None => Vec::new(),
        };
        Ok(ImageLanes {
            image_id: r.image_id.clone(),
            category: r.category.clone(),
            predictions,
            ground_truth: r.to_lanes(&grid)?,
        })
    })
    .into_iter()
    .collect::<eigenlane::Result<Vec<_>>>()?;
    let missing = images.len() - by_id.len();
    if missing > 0 {
        warn!("{missing} images have no predictions; their lanes count as misses");
    }

    let f = evaluate_f_measure(&images, s.iou_thresh, s.stripe_width)?;
    let fp_only: BTreeSet<String> = a.fp_only.iter().cloned().collect();
    let categories = f_measure_by_category(&f, &fp_only);
    let tusimple = tusimple_score(&images, &PointAccuracyConfig::default())?;
    let audit = if a.pixel_audit {
        let devs = par_map(&images, s.threads, |i, img| {
            f.per_image[i]
                .matching
                .pairs
                .iter()
                .map(|p| {
                    let px = stripe_iou_pixels(
                        &img.predictions[p.prediction],
                        &img.ground_truth[p.ground_truth],
                        s.stripe_width,
                    )?;
                    Ok((px - p.score).abs())
                })
                .try_fold(0.0f64, |acc, d: eigenlane::Result<f64>| Ok(acc.max(d?)))
        })
        .into_iter()
        .collect::<eigenlane::Result<Vec<f64>>>()?;
        Some(devs.into_iter().fold(0.0, f64::max))
    } else {
        None
    };

    println!(
        "F-measure {:.4} (precision {:.4}, recall {:.4}; tp {} fp {} fn {})",
        f.f_measure, f.precision, f.recall, f.tp, f.fp, f.fn_
    );
    let divergent = f.greedy_divergences().count();
    if divergent > 0 {
        println!("  greedy matching is below the optimal assignment on {divergent} images");
    }
    for c in &categories.categories {
        println!(
            "  {:<14} {:>5} images  F {:.4}{}",
            c.category,
            c.images,
            c.f_measure,
            if c.fp_only { "  (fp only)" } else { "" }
        );
    }
    println!(
        "TuSimple accuracy {:.4}, FPR {:.4}, FNR {:.4}",
        tusimple.accuracy, tusimple.fpr, tusimple.fnr
    );
    if let Some(dev) = audit {
        println!("pixel audit: largest IoU deviation {dev:.3e}");
    }
    let report = EvalReport {
        iou_threshold: s.iou_thresh,
        stripe_width: s.stripe_width,
        f_measure: f,
        categories,
        tusimple,
        pixel_audit_max_deviation: audit,
    };
    write_report(s, a.out.as_deref(), &report)
}

pub fn render(s: &Settings, a: &RenderArgs) -> Result<()> {
    let records = load_records(&a.data, s)?;
    let record = match &a.image {
        Some(id) => records.iter().find(|r| &r.image_id == id),
        None => records.first(),
    }
    .ok_or_else(|| {
        Error::InvalidConfig(match &a.image {
            Some(id) => format!("image {id} not found"),
            None => "dataset is empty".into(),
        })
    })?;
    let mut layers = Vec::new();
    if let (Some(cpath), Some(bpath)) = (&a.candidates, &a.basis) {
        let basis = load_basis_from(bpath)?;
        let set = load_candidates_from(cpath, &basis)?;
        let n = set.k().min(a.max_candidates);
        layers.push(Layer::from_lanes(
            "candidates",
            LayerStyle::candidates(),
            &set.lanes()[..n],
        ));
    }
    layers.push(Layer {
        name: "ground truth".into(),
        style: LayerStyle::ground_truth(),
        lanes: record.lanes.clone(),
    });
    if let Some(path) = &a.pred {
        let pred = load_tusimple_jsonl(path, record.image_size)?.records;
        let lanes = pred
            .into_iter()
            .find(|r| r.image_id == record.image_id)
            .map(|r| r.lanes)
            .unwrap_or_default();
        layers.push(Layer {
            name: "detections".into(),
            style: LayerStyle::detections(),
            lanes,
        });
    }
    let out = s.output_path(&a.out)?;
    render_svg(&out, &record.image_id, record.image_size, &layers)?;
    println!("wrote {}", out.display());
    Ok(())
}
