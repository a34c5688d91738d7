//! Frozen functional forms evaluated on new models without refitting.
//!
//! A form predicts `Y = (1 − h) + h·σ(Σ wᵢBᵢ + c)` from raw benchmark values.
//! Forms load from a JSON list of `{task, h, weights, intercept}` objects;
//! fitted-law documents have the same top-level keys and load as forms too.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{BenchmarkTable, TargetMetric};
use crate::error::{Error, Result};
use crate::scalinglaw::{phi, LawDocument};

pub use crate::scalinglaw::phi_inv;

/// `slope · log C̄ + intercept`, in the published units; informational.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsForm {
    pub slope: f64,
    pub intercept: f64,
}

/// Principal-component form; informational since the loadings are not frozen with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcForm {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreregisteredForm {
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup: Option<String>,
    pub h: f64,
    pub weights: BTreeMap<String, f64>,
    pub intercept: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops_form: Option<FlopsForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pc_form: Option<PcForm>,
    /// `"as-published"` for coefficients transcribed at printed precision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<String>,
}

impl PreregisteredForm {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::validation(format!(
                "form `{}`: h = {} outside (0, 1]",
                self.task, self.h
            )));
        }
        if !self.intercept.is_finite() || self.weights.values().any(|w| !w.is_finite()) {
            return Err(Error::validation(format!("form `{}` has non-finite coefficients", self.task)));
        }
        Ok(())
    }

    /// `Σ wᵢBᵢ + c`.
    pub fn linear<F: Fn(&str) -> Option<f64>>(&self, lookup: F) -> Result<f64> {
        let mut x = self.intercept;
        for (metric, w) in &self.weights {
            let v = lookup(metric).ok_or_else(|| {
                Error::validation(format!("form `{}` needs metric `{metric}`, which is missing", self.task))
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!(
                    "form `{}`: metric `{metric}` = {v} outside [0, 1]",
                    self.task
                )));
            }
            x += w * v;
        }
        Ok(x)
    }
}

impl From<&LawDocument> for PreregisteredForm {
    fn from(doc: &LawDocument) -> Self {
        PreregisteredForm {
            task: doc.task.clone(),
            setup: None,
            h: doc.h,
            weights: doc.weights.clone(),
            intercept: doc.intercept,
            // on the calibrating family the linear predictor is w·log₁₀ C + b
            flops_form: doc.calibration.as_ref().map(|c| FlopsForm {
                slope: c.w,
                intercept: c.b,
            }),
            pc_form: Some(PcForm {
                weights: doc.beta.clone(),
                intercept: doc.alpha,
            }),
            precision: None,
        }
    }
}

/// Predicted accuracy for one model's benchmark values.
pub fn evaluate_form(form: &PreregisteredForm, benchmarks: &BTreeMap<String, f64>) -> Result<f64> {
    form.validate()?;
    Ok(phi(form.linear(|m| benchmarks.get(m).copied())?, form.h))
}

pub fn parse_forms(text: &str) -> Result<Vec<PreregisteredForm>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let forms: Vec<PreregisteredForm> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    for f in &forms {
        f.validate()?;
    }
    Ok(forms)
}

pub fn load_forms(path: impl AsRef<Path>) -> Result<Vec<PreregisteredForm>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_forms(&text)
}

pub const BUNDLED_FORMS_JSON: &str = include_str!("../data/prereg_forms.json");

/// The eleven published forms, at printed two-decimal precision.
pub fn bundled_forms() -> Vec<PreregisteredForm> {
    parse_forms(BUNDLED_FORMS_JSON).expect("bundled forms are valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreregRow {
    pub task: String,
    pub model_id: String,
    pub predicted: Option<f64>,
    pub observed: Option<f64>,
    pub abs_error: Option<f64>,
    pub sq_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Evaluates every form on every row of `new_models`.
///
/// `observed` is matched to a form by task name, or to the only form when
/// a single form is given. Rows that cannot be evaluated (for example a
/// missing metric) carry a note instead of failing the report.
pub fn prereg_report(
    forms: &[PreregisteredForm],
    new_models: &BenchmarkTable,
    observed: Option<&TargetMetric>,
) -> Vec<PreregRow> {
    let mut rows = Vec::new();
    for form in forms {
        let obs = observed.filter(|o| o.name == form.task || forms.len() == 1);
        for (i, id) in new_models.model_ids().iter().enumerate() {
            let lookup = |m: &str| {
                let j = new_models.metric_names().iter().position(|n| n == m)?;
                new_models.get(i, j)
            };
            let (predicted, note) = match form.validate().and_then(|_| form.linear(lookup)) {
                Ok(x) => (Some(phi(x, form.h)), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let observed = obs.and_then(|o| o.normalized(id));
            let err = predicted.zip(observed).map(|(p, o)| p - o);
            rows.push(PreregRow {
                task: form.task.clone(),
                model_id: id.clone(),
                predicted,
                observed,
                abs_error: err.map(f64::abs),
                sq_error: err.map(|e| e * e),
                note,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalinglaw::sigmoid;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bundled_forms_load() {
        let forms = bundled_forms();
        assert_eq!(forms.len(), 11);
        let agent = forms.iter().find(|f| f.task == "AgentBench").unwrap();
        assert_eq!(agent.h, 0.99);
        assert_eq!(agent.weights["GSM8K"], -0.48);
        assert_eq!(agent.intercept, -6.45);
        assert!(forms.iter().all(|f| f.precision.as_deref() == Some("as-published")));
    }

    #[test]
    fn zero_vector_leaves_intercept() {
        for f in bundled_forms() {
            let zeros = f.weights.keys().map(|k| (k.clone(), 0.0)).collect();
            assert_abs_diff_eq!(
                evaluate_form(&f, &zeros).unwrap(),
                (1.0 - f.h) + f.h * sigmoid(f.intercept),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn missing_metric_is_named() {
        let f = &bundled_forms()[4];
        let partial: BTreeMap<String, f64> = f.weights.keys().filter(|k| *k != "GSM8K").map(|k| (k.clone(), 0.5)).collect();
        let err = evaluate_form(f, &partial).unwrap_err();
        assert!(err.to_string().contains("GSM8K"), "{err}");
    }

    #[test]
    fn report_rows_without_observation() {
        let forms = bundled_forms();
        let table = BenchmarkTable::new(
            vec!["new".into()],
            vec!["MMLU".into()],
            vec![vec![Some(0.5)]],
        )
        .unwrap();
        let rows = prereg_report(&forms, &table, None);
        assert_eq!(rows.len(), 11);
        assert!(rows.iter().all(|r| r.predicted.is_none() && r.note.is_some()));
    }

    #[test]
    fn single_form_single_object() {
        let f = parse_forms(r#"{"task": "t", "h": 1.0, "weights": {"a": 1.0}, "intercept": 0.0}"#).unwrap();
        assert_eq!(f.len(), 1);
        assert!(parse_forms(r#"[{"task": "t", "h": 1.5, "weights": {}, "intercept": 0.0}]"#).is_err());
    }
}
