//! Principal capability space of a complete benchmark table.
//!
//! PCA is computed from the thin SVD of the mean-centered models × metrics
//! matrix, without column scaling. Each loading row is sign-normalized so its
//! entries sum to a nonnegative value, which makes fits deterministic and lets
//! PC-1 read as a positively weighted "general capability".

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{CompleteTable, ModelRecord};
use crate::error::{Error, Result};
use crate::linalg::{fit_line, sorted_svd, LineFit};

pub const DEFAULT_COMPONENTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapabilitySpace {
    pub metric_names: Vec<String>,
    pub mean: Vec<f64>,
    /// `K × T` loadings with orthonormal rows.
    pub loadings: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
}

pub fn fit_capability_space(table: &CompleteTable, k: usize) -> Result<CapabilitySpace> {
    let (m, t) = table.values().shape();
    if k == 0 || k > m.min(t) {
        return Err(Error::Config(format!(
            "number of components {k} outside 1..={}",
            m.min(t)
        )));
    }
    let x = table.values();
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(m, t, |i, j| x[(i, j)] - mean[j]);
    let total: f64 = centered.iter().map(|v| v * v).sum();
    let raw: f64 = x.iter().map(|v| v * v).sum();
    if total <= 1e-24 * raw.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "every benchmark column is constant; there is no variance to explain".into(),
        ));
    }
    let (_, s, v_t) = sorted_svd(&centered);
    let loadings = (0..k)
        .map(|r| {
            let mut row: Vec<f64> = v_t.row(r).iter().copied().collect();
            if sign_flip(&row) {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            row
        })
        .collect();
    Ok(CapabilitySpace {
        metric_names: table.metric_names().to_vec(),
        mean: mean.iter().copied().collect(),
        loadings,
        explained_variance_ratio: s.iter().take(k).map(|v| v * v / total).collect(),
    })
}

/// Whether a loading row must be negated: negative sum, or a zero sum whose
/// first nonzero entry is negative.
fn sign_flip(row: &[f64]) -> bool {
    let sum: f64 = row.iter().sum();
    let scale: f64 = row.iter().map(|v| v.abs()).sum();
    if sum.abs() > 1e-12 * scale {
        return sum < 0.0;
    }
    row.iter().find(|v| v.abs() > 1e-12 * scale).is_some_and(|v| *v < 0.0)
}

impl CapabilitySpace {
    pub fn k(&self) -> usize {
        self.loadings.len()
    }

    pub fn loadings_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k(), self.metric_names.len(), |r, j| self.loadings[r][j])
    }

    pub fn cumulative_explained_variance(&self) -> f64 {
        self.explained_variance_ratio.iter().sum()
    }

    /// Running totals of the explained-variance ratios, one per component.
    pub fn cumulative_variance_curve(&self) -> Vec<f64> {
        self.explained_variance_ratio
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    /// Scores `S = (B - mean) γᵀ` for each row of `table`.
    pub fn score(&self, table: &CompleteTable) -> Result<CapabilityScores> {
        score(self, table)
    }

    /// `mean + S γ` for each score row.
    pub fn reconstruct(&self, scores: &CapabilityScores) -> DMatrix<f64> {
        let r = &scores.scores * self.loadings_matrix();
        DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| r[(i, j)] + self.mean[j])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapabilityScores {
    pub model_ids: Vec<String>,
    /// `M × K`.
    pub scores: DMatrix<f64>,
}

impl CapabilityScores {
    pub fn row_of(&self, model_id: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == model_id)
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.scores.column(k).iter().copied().collect()
    }

    pub fn select_rows<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let index: HashMap<&str, usize> = self
            .model_ids
            .iter()
            .enumerate()
            .map(|(i, m)| (m.as_str(), i))
            .collect();
        let rows: Vec<usize> = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_ref())
                    .copied()
                    .ok_or_else(|| Error::UnknownModels(vec![id.as_ref().to_string()]))
            })
            .collect::<Result<_>>()?;
        Ok(CapabilityScores {
            model_ids: ids.iter().map(|s| s.as_ref().to_string()).collect(),
            scores: DMatrix::from_fn(rows.len(), self.scores.ncols(), |i, j| {
                self.scores[(rows[i], j)]
            }),
        })
    }
}

pub fn score(space: &CapabilitySpace, table: &CompleteTable) -> Result<CapabilityScores> {
    let x = table.aligned_to(&space.metric_names)?;
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - space.mean[j]);
    Ok(CapabilityScores {
        model_ids: table.model_ids().to_vec(),
        scores: centered * space.loadings_matrix().transpose(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyLinearity {
    pub family: String,
    pub n_models: usize,
    #[serde(flatten)]
    pub fit: LineFit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub component: usize,
    pub fits: Vec<FamilyLinearity>,
    /// Families skipped, with the number of eligible models they had.
    pub skipped: Vec<(String, usize)>,
}

/// Minimum number of FLOPs-known models a family needs for a linearity fit.
pub const MIN_FAMILY_MODELS: usize = 3;

/// OLS of one score component on log₁₀ FLOPs within each family.
pub fn per_family_linearity(
    scores: &CapabilityScores,
    models: &[ModelRecord],
    component: usize,
) -> Result<LinearityReport> {
    if component >= scores.scores.ncols() {
        return Err(Error::Config(format!(
            "component {component} not in 0..{}",
            scores.scores.ncols()
        )));
    }
    let mut report = LinearityReport {
        component,
        ..Default::default()
    };
    for family in crate::dataset::families(models) {
        let (x, y): (Vec<f64>, Vec<f64>) = models
            .iter()
            .filter(|m| m.family == family)
            .filter_map(|m| Some((m.log10_flops()?, scores.row_of(&m.model_id)?)))
            .map(|(lc, r)| (lc, scores.scores[(r, component)]))
            .unzip();
        if x.len() < MIN_FAMILY_MODELS {
            report.skipped.push((family, x.len()));
            continue;
        }
        match fit_line(&x, &y) {
            Ok(fit) => report.fits.push(FamilyLinearity {
                family,
                n_models: x.len(),
                fit,
            }),
            Err(_) => report.skipped.push((family, x.len())),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::bundled;
    use crate::impute::{fit_imputer, ImputeConfig};
    use approx::assert_abs_diff_eq;

    fn table(rows: &[&[f64]]) -> CompleteTable {
        let m = rows.len();
        let t = rows[0].len();
        CompleteTable::new(
            (0..m).map(|i| format!("m{i}")).collect(),
            (0..t).map(|j| format!("b{j}")).collect(),
            DMatrix::from_fn(m, t, |i, j| rows[i][j]),
        )
        .unwrap()
    }

    fn bundled_complete() -> CompleteTable {
        let t = bundled::base_benchmarks();
        fit_imputer(&t, &ImputeConfig::default()).unwrap().apply(&t).unwrap()
    }

    #[test]
    fn all_constant_matrix_errors() {
        let t = table(&[&[0.5, 0.2], &[0.5, 0.2], &[0.5, 0.2]]);
        assert!(matches!(fit_capability_space(&t, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn constant_column_contributes_nothing() {
        let t = table(&[&[0.1, 0.2], &[0.4, 0.2], &[0.9, 0.2]]);
        let s = fit_capability_space(&t, 2).unwrap();
        assert_abs_diff_eq!(s.explained_variance_ratio[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.explained_variance_ratio[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.loadings[0][1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn k_out_of_range() {
        let t = table(&[&[0.1, 0.2], &[0.4, 0.3]]);
        assert!(fit_capability_space(&t, 0).is_err());
        assert!(fit_capability_space(&t, 3).is_err());
    }

    #[test]
    fn mean_row_scores_zero() {
        let t = bundled_complete();
        let space = fit_capability_space(&t, 3).unwrap();
        let mean_row = CompleteTable::new(
            vec!["mean".into()],
            space.metric_names.clone(),
            DMatrix::from_row_slice(1, space.mean.len(), &space.mean),
        )
        .unwrap();
        let s = space.score(&mean_row).unwrap();
        assert!(s.scores.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn bundled_space_properties() {
        let t = bundled_complete();
        let space = fit_capability_space(&t, 3).unwrap();
        let g = space.loadings_matrix();
        let gram = &g * g.transpose();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[(i, j)], want, epsilon = 1e-10);
            }
        }
        let evr = &space.explained_variance_ratio;
        assert!(evr.windows(2).all(|w| w[0] >= w[1]));
        assert!(space.loadings.iter().all(|r| r.iter().sum::<f64>() >= 0.0));
        // PC-1 weights every benchmark positively
        assert!(space.loadings[0].iter().all(|v| *v > 0.0));

        // reconstruction R² is at least the explained variance
        let scores = space.score(&t).unwrap();
        let recon = space.reconstruct(&scores);
        let x = t.values();
        let ss_res: f64 = (x - &recon).iter().map(|v| v * v).sum();
        let ss_tot: f64 = (0..x.nrows())
            .flat_map(|i| (0..x.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| (x[(i, j)] - space.mean[j]).powi(2))
            .sum();
        assert!(1.0 - ss_res / ss_tot >= space.cumulative_explained_variance() - 1e-12);
    }

    #[test]
    fn reconstruction_error_non_increasing_in_k() {
        let t = bundled_complete();
        let mut last = f64::INFINITY;
        for k in 1..=7 {
            let space = fit_capability_space(&t, k).unwrap();
            let recon = space.reconstruct(&space.score(&t).unwrap());
            let err: f64 = (t.values() - recon).iter().map(|v| v * v).sum();
            assert!(err <= last + 1e-12);
            last = err;
        }
        assert!(last < 1e-20);
    }

    #[test]
    fn noiseless_family_line() {
        let models: Vec<ModelRecord> = (0..4)
            .map(|i| {
                let f = 10f64.powf(20.0 + i as f64);
                ModelRecord::new(format!("m{i}"), "fam", None, None, Some(f)).unwrap()
            })
            .collect();
        let scores = CapabilityScores {
            model_ids: (0..4).map(|i| format!("m{i}")).collect(),
            scores: DMatrix::from_fn(4, 1, |i, _| 2.0 * (20.0 + i as f64) + 1.0),
        };
        let rep = per_family_linearity(&scores, &models, 0).unwrap();
        let fit = rep.fits[0].fit;
        assert_abs_diff_eq!(fit.slope, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.intercept, 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(fit.r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn small_families_are_skipped() {
        let t = bundled_complete();
        let space = fit_capability_space(&t, 1).unwrap();
        let scores = space.score(&t).unwrap();
        let rep = per_family_linearity(&scores, &bundled::base_models(), 0).unwrap();
        let skipped: Vec<&str> = rep.skipped.iter().map(|(f, _)| f.as_str()).collect();
        for fam in ["Mistral", "Mixtral", "Yi", "Gemma", "Phi", "MPT", "Llama-3"] {
            assert!(skipped.contains(&fam), "{fam} should be skipped");
        }
        assert_eq!(rep.fits.len() + rep.skipped.len(), 21);
    }
}
