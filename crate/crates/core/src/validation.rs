//! Weak-to-strong holdout evaluation.
//!
//! Models are split into a weaker training side and a stronger test side by
//! FLOPs or by target accuracy. A [`ScalingMethod`] is fitted on a dataset that
//! has been physically restricted to the training models, so nothing from
//! the test side (benchmarks, targets, imputation, PCA) can reach the fit.
//! Errors are measured on the floor-normalized target.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::capability::fit_capability_space;
use crate::dataset::{Dataset, ModelRecord, TargetMetric};
use crate::error::{Error, Result, StageExt};
use crate::impute::{fit_imputer, ImputeConfig, ImputerModel};
use crate::par::{self, Execution};
use crate::scalinglaw::{fit_compute_baseline, fit_observational, ComputeLaw, ObservationalLaw, ScaleMeasure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    /// Train on models with FLOPs at or below the threshold.
    FlopsCutoff,
    /// Train on models whose target accuracy is at or below the threshold.
    AccuracyCutoff,
    /// Hold out the top `threshold` fraction of labeled models by target accuracy.
    TopFractionHoldout,
}

/// Side for models whose FLOPs are unknown under a FLOPs cutoff.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownFlops {
    Train,
    #[default]
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub threshold: f64,
    pub inclusive: bool,
    pub unknown_flops: UnknownFlops,
}

impl SplitSpec {
    pub fn flops_cutoff(threshold: f64) -> Self {
        SplitSpec {
            kind: SplitKind::FlopsCutoff,
            threshold,
            inclusive: true,
            unknown_flops: UnknownFlops::default(),
        }
    }

    pub fn accuracy_cutoff(threshold: f64) -> Self {
        SplitSpec {
            kind: SplitKind::AccuracyCutoff,
            threshold,
            inclusive: true,
            unknown_flops: UnknownFlops::default(),
        }
    }

    pub fn top_fraction(fraction: f64) -> Self {
        SplitSpec {
            kind: SplitKind::TopFractionHoldout,
            threshold: fraction,
            inclusive: true,
            unknown_flops: UnknownFlops::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let t = self.threshold;
        let ok = match self.kind {
            SplitKind::FlopsCutoff => t > 0.0 && t.is_finite(),
            SplitKind::AccuracyCutoff => (0.0..=1.0).contains(&t),
            SplitKind::TopFractionHoldout => t > 0.0 && t < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Split(format!("threshold {t} is not valid for {:?}", self.kind)))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

fn below(v: f64, threshold: f64, inclusive: bool) -> bool {
    if inclusive {
        v <= threshold
    } else {
        v < threshold
    }
}

/// Partitions every model into train or test, preserving input order.
///
/// Under accuracy-based splits, models without a target value go to train:
/// they can shape the capability space but are never scored.
pub fn split(models: &[ModelRecord], target: &TargetMetric, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut out = Split::default();
    let accuracy_threshold = match spec.kind {
        SplitKind::TopFractionHoldout => Some(top_fraction_threshold(models, target, spec.threshold)?),
        SplitKind::AccuracyCutoff => Some(spec.threshold),
        SplitKind::FlopsCutoff => None,
    };
    for m in models {
        let train = match (spec.kind, accuracy_threshold) {
            (SplitKind::FlopsCutoff, _) => match m.flops {
                Some(c) => below(c, spec.threshold, spec.inclusive),
                None => spec.unknown_flops == UnknownFlops::Train,
            },
            (_, Some(t)) => target
                .value(&m.model_id)
                .is_none_or(|v| below(v, t, spec.inclusive || spec.kind == SplitKind::TopFractionHoldout)),
            (_, None) => unreachable!(),
        };
        if train {
            out.train.push(m.model_id.clone());
        } else {
            out.test.push(m.model_id.clone());
        }
    }
    if out.train.is_empty() || out.test.is_empty() {
        return Err(Error::Split(format!(
            "split leaves {} train and {} test models",
            out.train.len(),
            out.test.len()
        )));
    }
    Ok(out)
}

/// Largest train value such that about `fraction` of `values` lie above it.
///
/// `n_test = round(fraction · n)`; ties at the threshold fall to train, so
/// the realized test set can be smaller than requested.
pub fn fraction_threshold(values: &[f64], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!("fraction {fraction} outside (0, 1)")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let n_test = (fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Split(format!(
            "fraction {fraction} of {n} values leaves an empty side"
        )));
    }
    Ok(v[n - n_test - 1])
}

fn top_fraction_threshold(models: &[ModelRecord], target: &TargetMetric, fraction: f64) -> Result<f64> {
    let values: Vec<f64> = models.iter().filter_map(|m| target.value(&m.model_id)).collect();
    fraction_threshold(&values, fraction)
}

/// A law fitted on training data only.
pub trait Fitted: Send + Sync {
    /// Floor-normalized predictions for `ids`; `None` where the law cannot
    /// say anything (for example unknown FLOPs under a compute baseline).
    fn predict(&self, data: &Dataset, ids: &[String]) -> Result<Vec<Option<f64>>>;
}

/// Something that can be fitted on a training dataset.
pub trait ScalingMethod: Sync {
    fn name(&self) -> String;
    fn fit(&self, train: &Dataset) -> Result<Box<dyn Fitted>>;
}

/// Impute → PCA → scaled sigmoid on capability scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Observational {
    pub k: usize,
    pub impute: ImputeConfig,
}

impl Default for Observational {
    fn default() -> Self {
        Observational {
            k: crate::capability::DEFAULT_COMPONENTS,
            impute: ImputeConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FittedObservational {
    pub imputer: Option<ImputerModel>,
    pub law: ObservationalLaw,
}

/// Runs the observational pipeline on `data` (which must already be the training set).
pub fn fit_observational_pipeline(data: &Dataset, k: usize, impute: &ImputeConfig) -> Result<FittedObservational> {
    // fitted even on complete training rows, so held-out rows with gaps can be filled
    let imp = fit_imputer(&data.benchmarks, impute).stage("impute")?;
    let complete = imp.apply(&data.benchmarks).stage("impute")?;
    let imputer = Some(imp);
    let space = fit_capability_space(&complete, k).stage("pca")?;
    let scores = space.score(&complete).stage("pca")?;
    let law = fit_observational(&space, &scores, &data.target).stage("fit")?;
    Ok(FittedObservational { imputer, law })
}

impl ScalingMethod for Observational {
    fn name(&self) -> String {
        format!("pc{}", self.k)
    }

    fn fit(&self, train: &Dataset) -> Result<Box<dyn Fitted>> {
        Ok(Box::new(fit_observational_pipeline(train, self.k, &self.impute)?))
    }
}

impl Fitted for FittedObservational {
    fn predict(&self, data: &Dataset, ids: &[String]) -> Result<Vec<Option<f64>>> {
        let rows: Vec<&String> = ids.iter().filter(|id| data.benchmarks.row_of(id).is_some()).collect();
        let table = data.benchmarks.select_rows(&rows)?;
        let complete = match &self.imputer {
            Some(imp) => imp.apply(&table)?,
            None if table.is_complete() => table.to_complete()?,
            None => {
                return Err(Error::validation(
                    "benchmarks have missing cells but the law was fitted without an imputer",
                ))
            }
        };
        let pred = self.law.predict(&complete)?;
        Ok(ids
            .iter()
            .map(|id| complete.model_ids().iter().position(|m| m == id).map(|i| pred[i]))
            .collect())
    }
}

/// Scaled sigmoid on log₁₀ FLOPs or log₁₀ parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Compute(pub ScaleMeasure);

impl ScalingMethod for Compute {
    fn name(&self) -> String {
        self.0.label().to_string()
    }

    fn fit(&self, train: &Dataset) -> Result<Box<dyn Fitted>> {
        Ok(Box::new(fit_compute_baseline(&train.models, &train.target, self.0).stage("fit")?))
    }
}

impl Fitted for ComputeLaw {
    fn predict(&self, data: &Dataset, ids: &[String]) -> Result<Vec<Option<f64>>> {
        Ok(ids
            .iter()
            .map(|id| data.model(id).and_then(|m| self.predict_model(m)))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub model_id: String,
    pub side: Side,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub method: String,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub train_mse: f64,
    pub test_mse: f64,
    pub residuals: Vec<Residual>,
    /// Labeled models the method could not predict.
    pub unpredicted: Vec<String>,
}

/// Fits `method` on the training side and scores both sides.
pub fn evaluate(method: &dyn ScalingMethod, data: &Dataset, split: &Split) -> Result<HoldoutReport> {
    let train_set: HashSet<&str> = split.train.iter().map(String::as_str).collect();
    if let Some(id) = split.test.iter().find(|id| train_set.contains(id.as_str())) {
        return Err(Error::Split(format!("model `{id}` is on both sides")));
    }
    let fitted = method
        .fit(&data.restricted(&split.train)?)
        .map_err(|e| e.in_stage("holdout fit"))?;

    let mut residuals = Vec::new();
    let mut unpredicted = Vec::new();
    for (side, ids) in [(Side::Train, &split.train), (Side::Test, &split.test)] {
        let labeled: Vec<String> = ids
            .iter()
            .filter(|id| data.target.normalized(id).is_some())
            .cloned()
            .collect();
        let pred = fitted.predict(data, &labeled)?;
        for (id, p) in labeled.into_iter().zip(pred) {
            match p {
                Some(predicted) => residuals.push(Residual {
                    actual: data.target.normalized(&id).expect("labeled"),
                    model_id: id,
                    side,
                    predicted,
                }),
                None => unpredicted.push(id),
            }
        }
    }
    let side_mse = |side: Side| {
        let sq: Vec<f64> = residuals
            .iter()
            .filter(|r| r.side == side)
            .map(|r| (r.predicted - r.actual).powi(2))
            .collect();
        crate::linalg::mean(&sq)
    };
    let test_mse = side_mse(Side::Test);
    if test_mse.is_nan() {
        return Err(Error::Split("no labeled test model could be predicted".into()));
    }
    Ok(HoldoutReport {
        method: method.name(),
        train_ids: split.train.clone(),
        test_ids: split.test.clone(),
        train_mse: side_mse(Side::Train),
        test_mse,
        residuals,
        unpredicted,
    })
}

/// `n` linearly spaced test fractions from 0.60 down to 0.05.
pub fn default_fractions(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.6],
        _ => (0..n).map(|i| 0.6 - 0.55 * i as f64 / (n - 1) as f64).collect(),
    }
}

pub const DEFAULT_SWEEP_POINTS: usize = 12;

/// What the sweep threshold is placed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Flops,
    Accuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PointStatus {
    Ok,
    Skipped { reason: String },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub threshold: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    #[serde(flatten)]
    pub status: PointStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub method: String,
    pub kind: SweepKind,
    pub points: Vec<SweepPoint>,
    /// `None` when fewer than two points succeeded.
    pub aue: Option<f64>,
}

/// Trapezoidal area of `(fraction, mse)` pairs over the fraction axis.
///
/// Points are sorted by fraction first, so direction does not matter.
pub fn area_under_error_curve(points: &[(f64, f64)]) -> f64 {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    p.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

pub const MIN_SWEEP_TEST: usize = 2;

/// Evaluates `method` at each test fraction; failures are recorded, not fatal.
pub fn cutoff_sweep(
    method: &dyn ScalingMethod,
    data: &Dataset,
    kind: SweepKind,
    fractions: &[f64],
    unknown_flops: UnknownFlops,
    exec: Execution,
) -> Result<SweepReport> {
    if fractions.len() < 2 {
        return Err(Error::Config(format!(
            "a sweep needs at least 2 fractions, got {}",
            fractions.len()
        )));
    }
    let labeled: HashSet<String> = data.labeled_ids().into_iter().collect();
    let key: Vec<f64> = data
        .models
        .iter()
        .filter(|m| labeled.contains(&m.model_id))
        .filter_map(|m| match kind {
            SweepKind::Flops => m.flops,
            SweepKind::Accuracy => data.target.value(&m.model_id),
        })
        .collect();

    let points = par::map(exec, fractions, |&fraction| {
        let mut point = SweepPoint {
            fraction,
            threshold: f64::NAN,
            n_train: 0,
            n_test: 0,
            train_mse: None,
            test_mse: None,
            status: PointStatus::Ok,
        };
        let threshold = match fraction_threshold(&key, fraction) {
            Ok(t) => t,
            Err(e) => {
                point.status = PointStatus::Skipped { reason: e.to_string() };
                return point;
            }
        };
        point.threshold = threshold;
        let spec = SplitSpec {
            kind: match kind {
                SweepKind::Flops => SplitKind::FlopsCutoff,
                SweepKind::Accuracy => SplitKind::AccuracyCutoff,
            },
            threshold,
            inclusive: true,
            unknown_flops,
        };
        let sp = match split(&data.models, &data.target, &spec) {
            Ok(sp) => sp,
            Err(e) => {
                point.status = PointStatus::Skipped { reason: e.to_string() };
                return point;
            }
        };
        point.n_train = sp.train.iter().filter(|id| labeled.contains(*id)).count();
        point.n_test = sp.test.iter().filter(|id| labeled.contains(*id)).count();
        if point.n_test < MIN_SWEEP_TEST {
            point.status = PointStatus::Skipped {
                reason: format!("{} labeled test models; need at least {MIN_SWEEP_TEST}", point.n_test),
            };
            return point;
        }
        match evaluate(method, data, &sp) {
            Ok(r) => {
                point.train_mse = Some(r.train_mse);
                point.test_mse = Some(r.test_mse);
            }
            Err(e) => point.status = PointStatus::Failed { error: e.to_string() },
        }
        point
    });

    let curve: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.test_mse.map(|m| (p.fraction, m)))
        .collect();
    Ok(SweepReport {
        method: method.name(),
        kind,
        aue: (curve.len() >= 2).then(|| area_under_error_curve(&curve)),
        points,
    })
}
