//! Scoring and experiment harness: MAE/RMSE, k-fold cross-validation,
//! cold-start bucket reports and hyperparameter sweeps.
//!
//! Predictions are clamped to the rating scale at evaluation time only;
//! training always sees raw inner products. Fold metrics are aggregated
//! as unweighted means (folds are equal-sized by construction).

use serde::{Deserialize, Serialize};

use crate::coupling::{build_graph, CouplingConfig, SimilarityGraph};
use crate::dataset::{
    bucket_items, kfold_split, Fold, FoldManifest, ItemAttributeTable, ItemSupportBuckets,
    RatingScale, SparseRatingMatrix,
};
use crate::error::{Error, Result};
use crate::factorization::{predict, train, FactorModel, TrainConfig};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// A ground-truth rating and the model's clamped prediction for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionPair {
    pub truth: f64,
    pub prediction: f64,
}

/// MAE/RMSE over one prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub rmse: f64,
    pub count: usize,
}

/// Mean absolute deviation between truths and predictions.
pub fn mae(pairs: &[PredictionPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let total: f64 = pairs.iter().map(|p| (p.truth - p.prediction).abs()).sum();
    Ok(total / pairs.len() as f64)
}

/// Root of the mean squared deviation between truths and predictions.
pub fn rmse(pairs: &[PredictionPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let total: f64 = pairs
        .iter()
        .map(|p| (p.truth - p.prediction) * (p.truth - p.prediction))
        .sum();
    Ok((total / pairs.len() as f64).sqrt())
}

fn report_from_pairs(pairs: &[PredictionPair]) -> Result<EvalReport> {
    Ok(EvalReport {
        mae: mae(pairs)?,
        rmse: rmse(pairs)?,
        count: pairs.len(),
    })
}

/// Predicts every test entry, clamps to the scale, and aggregates
/// MAE/RMSE. Users or items never seen in training keep their
/// initialized latent vectors, so they still produce (clamped)
/// predictions.
pub fn evaluate(
    model: &FactorModel,
    test: &SparseRatingMatrix,
    scale: RatingScale,
) -> Result<EvalReport> {
    let pairs = prediction_pairs(model, test, scale)?;
    report_from_pairs(&pairs)
}

fn prediction_pairs(
    model: &FactorModel,
    test: &SparseRatingMatrix,
    scale: RatingScale,
) -> Result<Vec<PredictionPair>> {
    if test.n_ratings() == 0 {
        return Err(Error::EmptyPredictions);
    }
    if model.n_users() != test.n_users() || model.n_items() != test.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{} but test matrix has {} users / {} items",
            model.n_users(),
            model.n_items(),
            test.n_users(),
            test.n_items()
        )));
    }
    test.entries()
        .iter()
        .map(|e| {
            let raw = predict(model, e.user, e.item)?;
            Ok(PredictionPair {
                truth: e.rating,
                prediction: scale.clamp(raw),
            })
        })
        .collect()
}

/// Per-bucket metrics; buckets with no test entries carry `count = 0`
/// and no metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub label: String,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}

/// Cold-start report: one [`BucketReport`] per support bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartReport {
    pub buckets: Vec<BucketReport>,
}

impl ColdStartReport {
    pub fn bucket(&self, label: &str) -> Option<&BucketReport> {
        self.buckets.iter().find(|b| b.label == label)
    }

    pub fn total_count(&self) -> usize {
        self.buckets.iter().map(|b| b.count).sum()
    }
}

/// Evaluates test entries grouped by the support bucket of their item.
pub fn coldstart_eval(
    model: &FactorModel,
    test: &SparseRatingMatrix,
    buckets: &ItemSupportBuckets,
    scale: RatingScale,
) -> Result<ColdStartReport> {
    if buckets.n_items() != test.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "buckets cover {} items but test matrix has {}",
            buckets.n_items(),
            test.n_items()
        )));
    }
    let mut grouped: Vec<Vec<PredictionPair>> = vec![Vec::new(); buckets.n_buckets()];
    for e in test.entries() {
        let raw = predict(model, e.user, e.item)?;
        grouped[buckets.bucket_of(e.item)].push(PredictionPair {
            truth: e.rating,
            prediction: scale.clamp(raw),
        });
    }
    let reports = grouped
        .iter()
        .zip(buckets.labels())
        .map(|(pairs, label)| {
            if pairs.is_empty() {
                BucketReport {
                    label: label.clone(),
                    count: 0,
                    mae: None,
                    rmse: None,
                }
            } else {
                BucketReport {
                    label: label.clone(),
                    count: pairs.len(),
                    mae: mae(pairs).ok(),
                    rmse: rmse(pairs).ok(),
                }
            }
        })
        .collect();
    Ok(ColdStartReport { buckets: reports })
}

/// Cross-validation controls.
#[derive(Debug, Clone)]
pub struct CvOptions {
    pub k_folds: usize,
    pub seed: u64,
    /// When set, per-fold cold-start reports over these bucket edges.
    pub coldstart_edges: Option<Vec<u32>>,
}

impl CvOptions {
    pub fn new(k_folds: usize, seed: u64) -> Self {
        Self {
            k_folds,
            seed,
            coldstart_edges: None,
        }
    }

    pub fn with_coldstart(mut self, edges: Vec<u32>) -> Self {
        self.coldstart_edges = Some(edges);
        self
    }
}

/// Aggregate over folds for one support bucket: counts are summed,
/// metrics are unweighted means over the folds where the bucket was
/// nonempty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAggregate {
    pub label: String,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}

/// Full cross-validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub per_fold: Vec<EvalReport>,
    pub mean: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coldstart_per_fold: Option<Vec<ColdStartReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coldstart_mean: Option<Vec<BucketAggregate>>,
    pub manifest: FoldManifest,
}

struct FoldOutcome {
    report: EvalReport,
    coldstart: Option<ColdStartReport>,
}

fn run_fold(
    fold: &Fold,
    graph: Option<&SimilarityGraph>,
    config: &TrainConfig,
    coldstart_edges: Option<&[u32]>,
) -> Result<FoldOutcome> {
    let (model, _) = train(&fold.train, graph, config)?;
    let scale = fold.test.scale();
    let report = evaluate(&model, &fold.test, scale)?;
    let coldstart = match coldstart_edges {
        Some(edges) => {
            let buckets = bucket_items(&fold.train, edges)?;
            Some(coldstart_eval(&model, &fold.test, &buckets, scale)?)
        }
        None => None,
    };
    Ok(FoldOutcome { report, coldstart })
}

fn aggregate(seed: u64, manifest: FoldManifest, outcomes: Vec<FoldOutcome>) -> CvResult {
    let _ = seed;
    let k = outcomes.len();
    let per_fold: Vec<EvalReport> = outcomes.iter().map(|o| o.report).collect();
    let mean = EvalReport {
        mae: per_fold.iter().map(|r| r.mae).sum::<f64>() / k as f64,
        rmse: per_fold.iter().map(|r| r.rmse).sum::<f64>() / k as f64,
        count: per_fold.iter().map(|r| r.count).sum(),
    };
    let coldstart_per_fold: Option<Vec<ColdStartReport>> = outcomes
        .iter()
        .map(|o| o.coldstart.clone())
        .collect::<Option<Vec<_>>>();
    let coldstart_mean = coldstart_per_fold.as_ref().map(|reports| {
        let n_buckets = reports[0].buckets.len();
        (0..n_buckets)
            .map(|b| {
                let label = reports[0].buckets[b].label.clone();
                let count = reports.iter().map(|r| r.buckets[b].count).sum();
                let maes: Vec<f64> = reports.iter().filter_map(|r| r.buckets[b].mae).collect();
                let rmses: Vec<f64> = reports.iter().filter_map(|r| r.buckets[b].rmse).collect();
                BucketAggregate {
                    label,
                    count,
                    mae: (!maes.is_empty())
                        .then(|| maes.iter().sum::<f64>() / maes.len() as f64),
                    rmse: (!rmses.is_empty())
                        .then(|| rmses.iter().sum::<f64>() / rmses.len() as f64),
                }
            })
            .collect()
    });
    CvResult {
        per_fold,
        mean,
        coldstart_per_fold,
        coldstart_mean,
        manifest,
    }
}

/// k-fold cross-validation: split, train per fold, evaluate, aggregate.
/// Folds run on the rayon pool when the `parallel` feature is enabled;
/// results are keyed by fold index, so the outcome does not depend on
/// scheduling.
pub fn cross_validate(
    data: &SparseRatingMatrix,
    graph: Option<&SimilarityGraph>,
    config: &TrainConfig,
    opts: &CvOptions,
) -> Result<CvResult> {
    let split = kfold_split(data, opts.k_folds, opts.seed)?;
    let manifest = split.manifest();
    let edges = opts.coldstart_edges.as_deref();

    #[cfg(feature = "parallel")]
    let outcomes: Result<Vec<FoldOutcome>> = split
        .folds
        .par_iter()
        .map(|fold| run_fold(fold, graph, config, edges))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let outcomes: Result<Vec<FoldOutcome>> = split
        .folds
        .iter()
        .map(|fold| run_fold(fold, graph, config, edges))
        .collect();

    Ok(aggregate(opts.seed, manifest, outcomes?))
}

/// Sequential cross-validation, regardless of features. Produces output
/// identical to [`cross_validate`].
pub fn cross_validate_serial(
    data: &SparseRatingMatrix,
    graph: Option<&SimilarityGraph>,
    config: &TrainConfig,
    opts: &CvOptions,
) -> Result<CvResult> {
    let split = kfold_split(data, opts.k_folds, opts.seed)?;
    let manifest = split.manifest();
    let edges = opts.coldstart_edges.as_deref();
    let outcomes: Result<Vec<FoldOutcome>> = split
        .folds
        .iter()
        .map(|fold| run_fold(fold, graph, config, edges))
        .collect();
    Ok(aggregate(opts.seed, manifest, outcomes?))
}

/// Hyperparameter axes a sweep can walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Beta,
    LatentDim,
    Neighborhood,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepAxis::Beta => write!(f, "beta"),
            SweepAxis::LatentDim => write!(f, "k_dim"),
            SweepAxis::Neighborhood => write!(f, "neighborhood"),
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "beta" => Ok(SweepAxis::Beta),
            "k" | "k_dim" | "latent_dim" => Ok(SweepAxis::LatentDim),
            "neighborhood" | "neighbors" | "t" => Ok(SweepAxis::Neighborhood),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis {other:?}; expected beta, k_dim or neighborhood"
            ))),
        }
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub per_fold: Vec<EvalReport>,
    pub mean: EvalReport,
}

/// Sweep outcome across all grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Grid point with the lowest mean MAE.
    pub fn best_by_mae(&self) -> Option<&SweepPoint> {
        self.points
            .iter()
            .min_by(|a, b| a.mean.mae.partial_cmp(&b.mean.mae).unwrap())
    }

    /// Writes `axis_value,fold,mae,rmse` rows plus a `mean` row per
    /// axis value.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "axis_value,fold,mae,rmse")?;
        for point in &self.points {
            for (i, report) in point.per_fold.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    point.value,
                    i + 1,
                    report.mae,
                    report.rmse
                )?;
            }
            writeln!(
                w,
                "{},mean,{},{}",
                point.value, point.mean.mae, point.mean.rmse
            )?;
        }
        Ok(())
    }
}

/// Runs one cross-validation per grid value along the chosen axis.
///
/// `beta` and `k_dim` sweeps reuse `graph`; a `neighborhood` sweep
/// rebuilds the graph per point from `attributes` (which must already be
/// aligned to the rating matrix's item dictionary).
pub fn sweep(
    data: &SparseRatingMatrix,
    attributes: Option<&ItemAttributeTable>,
    graph: Option<&SimilarityGraph>,
    coupling: &CouplingConfig,
    config: &TrainConfig,
    axis: SweepAxis,
    values: &[f64],
    opts: &CvOptions,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep values must be nonempty".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let result = match axis {
            SweepAxis::Beta => {
                if value < 0.0 {
                    return Err(Error::InvalidConfig(format!("negative beta {value}")));
                }
                let point_cfg = TrainConfig {
                    beta: value,
                    ..config.clone()
                };
                cross_validate(data, graph, &point_cfg, opts)?
            }
            SweepAxis::LatentDim => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "latent dimension must be a positive integer, got {value}"
                    )));
                }
                let point_cfg = TrainConfig {
                    latent_dim: value as usize,
                    ..config.clone()
                };
                cross_validate(data, graph, &point_cfg, opts)?
            }
            SweepAxis::Neighborhood => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "neighborhood size must be a positive integer, got {value}"
                    )));
                }
                let table = attributes.ok_or_else(|| {
                    Error::InvalidConfig(
                        "neighborhood sweep needs the attribute table to rebuild graphs".into(),
                    )
                })?;
                let point_coupling = CouplingConfig {
                    neighborhood_size: value as usize,
                    ..coupling.clone()
                };
                let point_graph = build_graph(table, &point_coupling)?;
                cross_validate(data, Some(&point_graph), config, opts)?
            }
        };
        points.push(SweepPoint {
            value,
            per_fold: result.per_fold,
            mean: result.mean,
        });
    }
    Ok(SweepResult { axis, points })
}
