//! Iterative PCA imputation of missing benchmark cells.
//!
//! Fitting starts from column-mean imputation and alternates a rank-`r` PCA
//! reconstruction with overwriting the missing cells until the largest change
//! drops below the tolerance. The fitted model keeps the column means and the
//! rank-`r` basis; applying it to new rows projects their observed cells onto
//! that basis and never refits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{BenchmarkTable, CompleteTable};
use crate::error::{Error, Result};
use crate::linalg::sorted_svd;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputeConfig {
    pub rank: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the maximum absolute change of an imputed cell.
    pub tolerance: f64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            rank: 1,
            max_iterations: 1000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputerModel {
    pub metric_names: Vec<String>,
    pub mean: Vec<f64>,
    /// `rank` orthonormal rows over the metrics.
    pub basis: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Max absolute cell change at each iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub change_history: Vec<f64>,
    pub imputed_cells: usize,
}

pub fn fit_imputer(table: &BenchmarkTable, cfg: &ImputeConfig) -> Result<ImputerModel> {
    let (m, t) = (table.n_models(), table.n_metrics());
    if cfg.rank == 0 || cfg.rank > m.min(t) {
        return Err(Error::Config(format!(
            "imputation rank {} outside 1..={}",
            cfg.rank,
            m.min(t)
        )));
    }
    if cfg.max_iterations == 0 {
        return Err(Error::Config("max_iterations must be at least 1".into()));
    }
    if !(cfg.tolerance >= 0.0) {
        return Err(Error::Config("tolerance must be nonnegative".into()));
    }
    for (j, name) in table.metric_names().iter().enumerate() {
        let present = (0..m).filter(|&i| table.get(i, j).is_some()).count();
        if present < 2 {
            return Err(Error::validation(format!(
                "metric `{name}` has {present} present values; at least 2 are needed"
            )));
        }
    }
    for (i, id) in table.model_ids().iter().enumerate() {
        if table.row(i).iter().all(Option::is_none) {
            return Err(Error::validation(format!("model `{id}` has no benchmark values")));
        }
    }

    let missing: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..t).map(move |j| (i, j)))
        .filter(|&(i, j)| table.get(i, j).is_none())
        .collect();

    let col_means: Vec<f64> = (0..t)
        .map(|j| {
            let vals: Vec<f64> = (0..m).filter_map(|i| table.get(i, j)).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    let mut y = DMatrix::from_fn(m, t, |i, j| table.get(i, j).unwrap_or(col_means[j]));

    let mut history = Vec::new();
    let mut converged = missing.is_empty();
    let (mut mean, mut basis) = pca_basis(&y, cfg.rank);
    if !missing.is_empty() {
        for _ in 0..cfg.max_iterations {
            let recon = reconstruct(&y, &mean, &basis);
            let mut change = 0.0f64;
            for &(i, j) in &missing {
                change = change.max((recon[(i, j)] - y[(i, j)]).abs());
                y[(i, j)] = recon[(i, j)];
            }
            history.push(change);
            (mean, basis) = pca_basis(&y, cfg.rank);
            if change < cfg.tolerance {
                converged = true;
                break;
            }
        }
    }

    Ok(ImputerModel {
        metric_names: table.metric_names().to_vec(),
        mean: mean.iter().copied().collect(),
        basis: (0..basis.nrows())
            .map(|r| basis.row(r).iter().copied().collect())
            .collect(),
        iterations: history.len(),
        converged,
        change_history: history,
        imputed_cells: missing.len(),
    })
}

/// Column means and the top-`rank` right singular vectors of the centered matrix.
fn pca_basis(y: &DMatrix<f64>, rank: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mean = y.row_mean().transpose();
    let centered = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - mean[j]);
    let (_, _, v_t) = sorted_svd(&centered);
    (mean, v_t.rows(0, rank).into_owned())
}

fn reconstruct(y: &DMatrix<f64>, mean: &DVector<f64>, basis: &DMatrix<f64>) -> DMatrix<f64> {
    let centered = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - mean[j]);
    let recon = &centered * basis.transpose() * basis;
    DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| recon[(i, j)] + mean[j])
}

impl ImputerModel {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        let t = self.metric_names.len();
        DMatrix::from_fn(self.rank(), t, |r, j| self.basis[r][j])
    }

    /// Fills the missing cells of `table` from the learned basis.
    pub fn apply(&self, table: &BenchmarkTable) -> Result<CompleteTable> {
        apply_imputer(self, table)
    }
}

/// Completes `table` with the fitted imputer. Present cells are returned as-is.
pub fn apply_imputer(imputer: &ImputerModel, table: &BenchmarkTable) -> Result<CompleteTable> {
    let names = table.metric_names();
    let mismatch = || Error::MetricMismatch {
        expected: imputer.metric_names.clone(),
        found: names.to_vec(),
    };
    if names.len() != imputer.metric_names.len() {
        return Err(mismatch());
    }
    // imputer column for each table column
    let col: Vec<usize> = names
        .iter()
        .map(|n| imputer.metric_names.iter().position(|m| m == n).ok_or_else(mismatch))
        .collect::<Result<_>>()?;
    let basis = imputer.basis_matrix();
    let r = basis.nrows();

    let mut out = DMatrix::zeros(table.n_models(), names.len());
    for i in 0..table.n_models() {
        let row = table.row(i);
        let observed: Vec<usize> = (0..row.len()).filter(|&j| row[j].is_some()).collect();
        if observed.len() == row.len() {
            for j in 0..row.len() {
                out[(i, j)] = row[j].unwrap();
            }
            continue;
        }
        if observed.is_empty() {
            return Err(Error::validation(format!(
                "model `{}` has no benchmark values",
                table.model_ids()[i]
            )));
        }
        // least-squares scores from the observed coordinates
        let a = DMatrix::from_fn(observed.len(), r, |k, c| basis[(c, col[observed[k]])]);
        let b = DVector::from_fn(observed.len(), |k, _| {
            row[observed[k]].unwrap() - imputer.mean[col[observed[k]]]
        });
        let svd = a.svd(true, true);
        let tol = svd.singular_values.max() * 1e-12;
        let s = svd
            .solve(&b, tol)
            .map_err(|e| Error::Degenerate(format!("imputation projection: {e}")))?;
        for j in 0..row.len() {
            out[(i, j)] = match row[j] {
                Some(v) => v,
                None => {
                    let c = col[j];
                    imputer.mean[c] + (0..r).map(|k| basis[(k, c)] * s[k]).sum::<f64>()
                }
            };
        }
    }
    CompleteTable::new(table.model_ids().to_vec(), names.to_vec(), out)
}
