//! Scaled-sigmoid scaling laws.
//!
//! A law maps a linear predictor `x` to accuracy through
//! `φ(x, h) = (1 − h) + h·σ(x)`, where `h ∈ [0.8, 1]` absorbs a floor on the
//! error (equivalently `E = h·σ(−x)` in error orientation). Fits scan `h` over
//! a fixed grid, regress the clamped logit `σ⁻¹((Y − (1 − h)) / h)` on the
//! predictors by OLS, and keep the `h` with the lowest probability-space MSE
//! on the training rows.
//!
//! Observational laws use capability scores as predictors; compute laws use
//! log₁₀ FLOPs or log₁₀ parameters. Family calibrations turn the aggregated
//! capability `P = βᵀS + α` into reference-family-equivalent FLOPs.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::capability::{CapabilityScores, CapabilitySpace};
use crate::dataset::{CompleteTable, ModelRecord, TargetMetric};
use crate::error::{Error, Result};
use crate::impute::ImputerModel;
use crate::linalg::{fit_line, mse, ols_with_intercept};

/// Clamp applied to normalized targets before the logit.
pub const LOGIT_EPS: f64 = 1e-4;
pub const H_MIN: f64 = 0.8;
pub const H_MAX: f64 = 1.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `(1 − h) + h·σ(x)`.
pub fn phi(x: f64, h: f64) -> f64 {
    (1.0 - h) + h * sigmoid(x)
}

/// Inverse of [`phi`]; defined for `1 − h < y < 1`.
pub fn phi_inv(y: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Domain(format!("sigmoid scale {h} outside (0, 1]")));
    }
    if !(y > 1.0 - h && y < 1.0) {
        return Err(Error::Domain(format!(
            "{y} outside ({}, 1) for h = {h}",
            1.0 - h
        )));
    }
    Ok(logit((y - (1.0 - h)) / h))
}

/// `{0.80, 0.81, …, 1.00}`.
pub fn h_grid() -> Vec<f64> {
    (80..=100).map(|c| c as f64 / 100.0).collect()
}

fn linearized(y: f64, h: f64) -> f64 {
    logit(((y - (1.0 - h)) / h).clamp(LOGIT_EPS, 1.0 - LOGIT_EPS))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub h: f64,
    pub train_mse: f64,
}

impl SigmoidFit {
    fn linear(&self, row: impl Iterator<Item = f64>) -> f64 {
        self.intercept + row.zip(&self.coef).map(|(x, b)| x * b).sum::<f64>()
    }
}

/// Grid-over-`h` logit OLS of `y` (in `[0, 1]`) on the columns of `design`.
///
/// Ties in training MSE go to the larger `h`.
pub fn fit_scaled_sigmoid(design: &DMatrix<f64>, y: &[f64]) -> Result<SigmoidFit> {
    let (n, p) = design.shape();
    if n < p + 2 {
        return Err(Error::RankDeficient(format!(
            "{n} rows for {} parameters; need at least {}",
            p + 1,
            p + 2
        )));
    }
    if y.iter().all(|v| *v == y[0]) {
        return Err(Error::Degenerate("all target values are equal".into()));
    }
    let mut best: Option<SigmoidFit> = None;
    for h in h_grid().into_iter().rev() {
        let z: Vec<f64> = y.iter().map(|v| linearized(*v, h)).collect();
        let (coef, intercept) = ols_with_intercept(design, &z)?;
        let mut fit = SigmoidFit {
            coef: coef.iter().copied().collect(),
            intercept,
            h,
            train_mse: 0.0,
        };
        let pred: Vec<f64> = (0..n)
            .map(|i| phi(fit.linear(design.row(i).iter().copied()), h))
            .collect();
        fit.train_mse = mse(&pred, y);
        if best.as_ref().is_none_or(|b| fit.train_mse < b.train_mse) {
            best = Some(fit);
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Observational scaling law `Y ≈ φ(βᵀS + α, h)` over a capability space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationalLaw {
    pub target_name: String,
    pub space: CapabilitySpace,
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub h: f64,
    pub train_mse: f64,
    pub train_ids: Vec<String>,
}

pub fn fit_observational(
    space: &CapabilitySpace,
    scores: &CapabilityScores,
    target: &TargetMetric,
) -> Result<ObservationalLaw> {
    if scores.scores.ncols() != space.k() {
        return Err(Error::validation(format!(
            "scores have {} components, space has {}",
            scores.scores.ncols(),
            space.k()
        )));
    }
    let rows: Vec<(usize, f64)> = scores
        .model_ids
        .iter()
        .enumerate()
        .filter_map(|(i, id)| Some((i, target.normalized(id)?)))
        .collect();
    let k = space.k();
    if rows.len() < k + 2 {
        return Err(Error::RankDeficient(format!(
            "{} labeled models for a {k}-component law; need at least {}",
            rows.len(),
            k + 2
        )));
    }
    let design = DMatrix::from_fn(rows.len(), k, |r, c| scores.scores[(rows[r].0, c)]);
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let fit = fit_scaled_sigmoid(&design, &y)?;
    Ok(ObservationalLaw {
        target_name: target.name.clone(),
        space: space.clone(),
        beta: fit.coef,
        alpha: fit.intercept,
        h: fit.h,
        train_mse: fit.train_mse,
        train_ids: rows.iter().map(|r| scores.model_ids[r.0].clone()).collect(),
    })
}

impl ObservationalLaw {
    /// Aggregated capability `P = βᵀS + α` per score row.
    pub fn capability(&self, scores: &CapabilityScores) -> Vec<f64> {
        (0..scores.scores.nrows())
            .map(|i| {
                self.alpha
                    + scores
                        .scores
                        .row(i)
                        .iter()
                        .zip(&self.beta)
                        .map(|(s, b)| s * b)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn predict_scores(&self, scores: &CapabilityScores) -> Vec<f64> {
        self.capability(scores).into_iter().map(|p| phi(p, self.h)).collect()
    }

    pub fn predict(&self, table: &CompleteTable) -> Result<Vec<f64>> {
        predict(self, table)
    }
}

pub fn predict(law: &ObservationalLaw, table: &CompleteTable) -> Result<Vec<f64>> {
    Ok(law.predict_scores(&law.space.score(table)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMeasure {
    Flops,
    Params,
}

impl ScaleMeasure {
    pub fn log10_of(self, m: &ModelRecord) -> Option<f64> {
        match self {
            ScaleMeasure::Flops => m.log10_flops(),
            ScaleMeasure::Params => m.log10_params(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ScaleMeasure::Flops => "flops",
            ScaleMeasure::Params => "params",
        }
    }
}

/// Compute baseline `Y ≈ φ(slope · log₁₀ C + intercept, h)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeLaw {
    pub target_name: String,
    pub predictor: ScaleMeasure,
    pub slope: f64,
    pub intercept: f64,
    pub h: f64,
    pub train_mse: f64,
    /// Labeled models left out because the predictor is unknown.
    pub excluded: Vec<String>,
}

pub const MIN_BASELINE_MODELS: usize = 3;

pub fn fit_compute_baseline(
    models: &[ModelRecord],
    target: &TargetMetric,
    predictor: ScaleMeasure,
) -> Result<ComputeLaw> {
    let mut excluded = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for m in models {
        let Some(v) = target.normalized(&m.model_id) else {
            continue;
        };
        match predictor.log10_of(m) {
            Some(lc) => {
                x.push(lc);
                y.push(v);
            }
            None => excluded.push(m.model_id.clone()),
        }
    }
    if x.len() < MIN_BASELINE_MODELS {
        return Err(Error::RankDeficient(format!(
            "{} usable models for a {} baseline; need at least {MIN_BASELINE_MODELS}",
            x.len(),
            predictor.label()
        )));
    }
    let fit = fit_scaled_sigmoid(&DMatrix::from_column_slice(x.len(), 1, &x), &y)?;
    Ok(ComputeLaw {
        target_name: target.name.clone(),
        predictor,
        slope: fit.coef[0],
        intercept: fit.intercept,
        h: fit.h,
        train_mse: fit.train_mse,
        excluded,
    })
}

impl ComputeLaw {
    /// Prediction for one model; `None` when its predictor is unknown.
    pub fn predict_model(&self, m: &ModelRecord) -> Option<f64> {
        self.predictor
            .log10_of(m)
            .map(|lc| phi(self.slope * lc + self.intercept, self.h))
    }
}

/// Affine map `P = w · log₁₀ C + b` within one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyCalibration {
    pub family: String,
    pub w: f64,
    pub b: f64,
    pub r2: f64,
    pub n_models: usize,
    pub log10_flops_min: f64,
    pub log10_flops_max: f64,
}

pub fn calibrate_family(
    law: &ObservationalLaw,
    scores: &CapabilityScores,
    models: &[ModelRecord],
    family: &str,
) -> Result<FamilyCalibration> {
    let p = law.capability(scores);
    let (x, y): (Vec<f64>, Vec<f64>) = models
        .iter()
        .filter(|m| m.family == family)
        .filter_map(|m| Some((m.log10_flops()?, p[scores.row_of(&m.model_id)?])))
        .unzip();
    if x.len() < 3 {
        return Err(Error::validation(format!(
            "family `{family}` has {} models with known FLOPs and scores; need at least 3",
            x.len()
        )));
    }
    let fit = fit_line(&x, &y)?;
    if fit.slope <= 0.0 {
        log::warn!(
            "family `{family}` calibration slope {} is not positive",
            fit.slope
        );
    }
    Ok(FamilyCalibration {
        family: family.to_string(),
        w: fit.slope,
        b: fit.intercept,
        r2: fit.r2,
        n_models: x.len(),
        log10_flops_min: x.iter().copied().fold(f64::INFINITY, f64::min),
        log10_flops_max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalentFlops {
    pub model_id: String,
    pub log10_flops: f64,
    /// Outside the FLOPs range of the calibrating family.
    pub extrapolated: bool,
}

/// `log₁₀ C̄ = (βᵀS + α − b) / w` for every score row.
pub fn equivalent_flops(
    calib: &FamilyCalibration,
    law: &ObservationalLaw,
    scores: &CapabilityScores,
) -> Result<Vec<EquivalentFlops>> {
    if calib.w == 0.0 || !calib.w.is_finite() {
        return Err(Error::Degenerate(format!(
            "family `{}` calibration slope is {}",
            calib.family, calib.w
        )));
    }
    Ok(law
        .capability(scores)
        .into_iter()
        .zip(&scores.model_ids)
        .map(|(p, id)| {
            let lc = (p - calib.b) / calib.w;
            EquivalentFlops {
                model_id: id.clone(),
                log10_flops: lc,
                extrapolated: lc < calib.log10_flops_min || lc > calib.log10_flops_max,
            }
        })
        .collect())
}

/// The law expanded over raw benchmarks: `φ(Σ wᵢ Bᵢ + c, h)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkWeights {
    pub metric_names: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub h: f64,
}

/// Back-projects β through the loadings: `w = βᵀγ`, `c = α − w·mean`.
pub fn project_weights(law: &ObservationalLaw) -> BenchmarkWeights {
    let g = law.space.loadings_matrix();
    let weights: Vec<f64> = (0..g.ncols())
        .map(|j| (0..g.nrows()).map(|k| law.beta[k] * g[(k, j)]).sum())
        .collect();
    let shift: f64 = weights.iter().zip(&law.space.mean).map(|(w, m)| w * m).sum();
    BenchmarkWeights {
        metric_names: law.space.metric_names.clone(),
        weights,
        intercept: law.alpha - shift,
        h: law.h,
    }
}

impl BenchmarkWeights {
    /// Prediction for a benchmark row ordered like `metric_names`.
    pub fn evaluate(&self, row: &[f64]) -> f64 {
        let x: f64 = self.intercept + self.weights.iter().zip(row).map(|(w, b)| w * b).sum::<f64>();
        phi(x, self.h)
    }

    /// `"w₁·metric₁ + … + c"` with two decimals.
    pub fn expanded_form(&self) -> String {
        let mut s = String::new();
        for (i, (name, w)) in self.metric_names.iter().zip(&self.weights).enumerate() {
            if i == 0 {
                s.push_str(&format!("{w:.2}·{name}"));
            } else if *w < 0.0 {
                s.push_str(&format!(" - {:.2}·{name}", -w));
            } else {
                s.push_str(&format!(" + {w:.2}·{name}"));
            }
        }
        if self.intercept < 0.0 {
            s.push_str(&format!(" - {:.2}", -self.intercept));
        } else {
            s.push_str(&format!(" + {:.2}", self.intercept));
        }
        s
    }
}

/// JSON form of a fitted law; doubles as a preregistration artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawDocument {
    pub task: String,
    pub h: f64,
    /// Benchmark-space weights; with `intercept` these define the prediction.
    pub weights: BTreeMap<String, f64>,
    pub intercept: f64,
    pub metric_names: Vec<String>,
    pub mean: Vec<f64>,
    pub loadings: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub train_mse: f64,
    pub train_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<FamilyCalibration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imputer: Option<ImputerModel>,
    pub dataset_fingerprint: String,
}

impl LawDocument {
    pub fn new(
        law: &ObservationalLaw,
        calibration: Option<FamilyCalibration>,
        imputer: Option<&ImputerModel>,
        dataset_fingerprint: String,
    ) -> Self {
        let bw = project_weights(law);
        LawDocument {
            task: law.target_name.clone(),
            h: law.h,
            weights: bw.metric_names.iter().cloned().zip(bw.weights.iter().copied()).collect(),
            intercept: bw.intercept,
            metric_names: law.space.metric_names.clone(),
            mean: law.space.mean.clone(),
            loadings: law.space.loadings.clone(),
            explained_variance_ratio: law.space.explained_variance_ratio.clone(),
            beta: law.beta.clone(),
            alpha: law.alpha,
            train_mse: law.train_mse,
            train_ids: law.train_ids.clone(),
            calibration,
            imputer: imputer.map(|imp| ImputerModel {
                change_history: Vec::new(),
                ..imp.clone()
            }),
            dataset_fingerprint,
        }
    }

    pub fn law(&self) -> ObservationalLaw {
        ObservationalLaw {
            target_name: self.task.clone(),
            space: CapabilitySpace {
                metric_names: self.metric_names.clone(),
                mean: self.mean.clone(),
                loadings: self.loadings.clone(),
                explained_variance_ratio: self.explained_variance_ratio.clone(),
            },
            beta: self.beta.clone(),
            alpha: self.alpha,
            h: self.h,
            train_mse: self.train_mse,
            train_ids: self.train_ids.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigmoid_logit_round_trip() {
        for i in 0..=1000 {
            let y = LOGIT_EPS + (1.0 - 2.0 * LOGIT_EPS) * i as f64 / 1000.0;
            assert!((sigmoid(logit(y)) - y).abs() < 1e-12);
        }
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn phi_domain() {
        assert!(phi_inv(0.05, 0.9).is_err());
        assert!(phi_inv(1.0, 0.9).is_err());
        assert!(phi_inv(0.5, 0.0).is_err());
        let x = phi_inv(0.5, 0.9).unwrap();
        assert_abs_diff_eq!(phi(x, 0.9), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn grid_has_21_points() {
        let g = h_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.8);
        assert_eq!(g[20], 1.0);
    }

    #[test]
    fn recovers_noiseless_compute_law() {
        let models: Vec<ModelRecord> = (0..8)
            .map(|i| {
                let lc = 19.0 + 0.5 * i as f64;
                ModelRecord::new(format!("m{i}"), "f", None, None, Some(10f64.powf(lc))).unwrap()
            })
            .collect();
        let target = TargetMetric::from_values(
            "t",
            models
                .iter()
                .map(|m| (m.model_id.clone(), sigmoid(0.5 * m.log10_flops().unwrap() - 10.0))),
        )
        .unwrap();
        let law = fit_compute_baseline(&models, &target, ScaleMeasure::Flops).unwrap();
        assert_abs_diff_eq!(law.slope, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(law.intercept, -10.0, epsilon = 1e-6);
        assert_eq!(law.h, 1.0);
    }

    #[test]
    fn baseline_needs_three_models() {
        let models: Vec<ModelRecord> = (0..3)
            .map(|i| {
                let flops = (i < 2).then(|| 1e21 * (i + 1) as f64);
                ModelRecord::new(format!("m{i}"), "f", None, None, flops).unwrap()
            })
            .collect();
        let target =
            TargetMetric::from_values("t", models.iter().map(|m| (m.model_id.clone(), 0.3))).unwrap();
        assert!(fit_compute_baseline(&models, &target, ScaleMeasure::Flops).is_err());
        assert!(fit_compute_baseline(&models, &target, ScaleMeasure::Params).is_err());
    }

    #[test]
    fn constant_targets_rejected() {
        let design = DMatrix::from_fn(5, 1, |i, _| i as f64);
        let err = fit_scaled_sigmoid(&design, &[0.4; 5]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn constant_scores_rejected() {
        let design = DMatrix::from_element(6, 1, 0.7);
        let err = fit_scaled_sigmoid(&design, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)));
    }

    #[test]
    fn too_few_rows() {
        let design = DMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        assert!(fit_scaled_sigmoid(&design, &[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn recovers_floor_above_zero() {
        // accuracy with a 10% floor: Y = 0.1 + 0.9σ(x)
        let x: Vec<f64> = (0..30).map(|i| -3.0 + 0.2 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| phi(1.5 * v + 0.25, 0.9)).collect();
        let fit = fit_scaled_sigmoid(&DMatrix::from_column_slice(30, 1, &x), &y).unwrap();
        assert_abs_diff_eq!(fit.h, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coef[0], 1.5, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.intercept, 0.25, epsilon = 1e-8);
    }

    #[test]
    fn calibration_inverts_exact_line() {
        let space = CapabilitySpace {
            metric_names: vec!["a".into()],
            mean: vec![0.0],
            loadings: vec![vec![1.0]],
            explained_variance_ratio: vec![1.0],
        };
        let law = ObservationalLaw {
            target_name: "t".into(),
            space,
            beta: vec![1.0],
            alpha: 0.0,
            h: 1.0,
            train_mse: 0.0,
            train_ids: vec![],
        };
        let lcs = [21.0, 22.0, 23.5, 24.0];
        let models: Vec<ModelRecord> = lcs
            .iter()
            .enumerate()
            .map(|(i, lc)| ModelRecord::new(format!("m{i}"), "ref", None, None, Some(10f64.powf(*lc))).unwrap())
            .chain([ModelRecord::new("big", "other", None, None, None).unwrap()])
            .collect();
        let ids: Vec<String> = models.iter().map(|m| m.model_id.clone()).collect();
        let p: Vec<f64> = lcs.iter().map(|lc| 3.0 * lc + 2.0).chain([3.0 * 30.0 + 2.0]).collect();
        let scores = CapabilityScores {
            model_ids: ids,
            scores: DMatrix::from_column_slice(5, 1, &p),
        };
        let cal = calibrate_family(&law, &scores, &models, "ref").unwrap();
        assert_abs_diff_eq!(cal.w, 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(cal.b, 2.0, epsilon = 1e-8);
        let eq = equivalent_flops(&cal, &law, &scores).unwrap();
        for (e, lc) in eq.iter().zip(lcs) {
            assert_abs_diff_eq!(e.log10_flops, lc, epsilon = 1e-10);
            assert!(!e.extrapolated);
        }
        assert_abs_diff_eq!(eq[4].log10_flops, 30.0, epsilon = 1e-10);
        assert!(eq[4].extrapolated);

        assert!(calibrate_family(&law, &scores, &models, "other").is_err());
        let zero = FamilyCalibration { w: 0.0, ..cal };
        assert!(equivalent_flops(&zero, &law, &scores).is_err());
    }

    #[test]
    fn identical_family_flops_rejected() {
        let space = CapabilitySpace {
            metric_names: vec!["a".into()],
            mean: vec![0.0],
            loadings: vec![vec![1.0]],
            explained_variance_ratio: vec![1.0],
        };
        let law = ObservationalLaw {
            target_name: "t".into(),
            space,
            beta: vec![1.0],
            alpha: 0.0,
            h: 1.0,
            train_mse: 0.0,
            train_ids: vec![],
        };
        let models: Vec<ModelRecord> = (0..3)
            .map(|i| ModelRecord::new(format!("m{i}"), "f", None, None, Some(1e22)).unwrap())
            .collect();
        let scores = CapabilityScores {
            model_ids: models.iter().map(|m| m.model_id.clone()).collect(),
            scores: DMatrix::from_column_slice(3, 1, &[0.1, 0.2, 0.3]),
        };
        assert!(matches!(
            calibrate_family(&law, &scores, &models, "f"),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn expanded_form_formatting() {
        let bw = BenchmarkWeights {
            metric_names: vec!["MMLU".into(), "GSM8K".into()],
            weights: vec![2.456, -0.48],
            intercept: -6.45,
            h: 0.99,
        };
        assert_eq!(bw.expanded_form(), "2.46·MMLU - 0.48·GSM8K - 6.45");
    }
}
