//! Picking a small set of model families that pins down a law well.
//!
//! The criterion is V-optimality: for a candidate subset `M` of score rows,
//! `Tr(SᵀS (S_MᵀS_M)⁻¹)` is proportional to the expected prediction variance
//! over the full set `S` of an OLS fit on `M` alone. Search is exhaustive over
//! whole families, always including the mandatory ones, within a model budget.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capability::CapabilityScores;
use crate::dataset::{Dataset, ModelRecord, DEFAULT_REFERENCE_FAMILY};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::validation::{evaluate, HoldoutReport, ScalingMethod, Split};

/// Gram matrices with a condition number above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

fn gram(s: &DMatrix<f64>, rows: impl Iterator<Item = usize>) -> DMatrix<f64> {
    let k = s.ncols();
    let mut g = DMatrix::zeros(k, k);
    for i in rows {
        let r = s.row(i);
        g += r.transpose() * r;
    }
    g
}

/// `Tr(A B⁻¹)`, or `+∞` when `B` is singular or too ill-conditioned.
fn trace_ratio(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let eig = b.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmin > 0.0) || lmax / lmin > MAX_CONDITION {
        return f64::INFINITY;
    }
    match b.clone().cholesky() {
        Some(ch) => (ch.solve(a)).trace(),
        None => f64::INFINITY,
    }
}

/// `Tr(SᵀS (S_MᵀS_M)⁻¹)` for the rows `members` of `s`.
///
/// Fewer than `K` rows or an ill-conditioned subset give `+∞`; the full row
/// set gives exactly `K`.
pub fn v_objective(s: &DMatrix<f64>, members: &[usize]) -> f64 {
    let (n, k) = s.shape();
    let distinct: HashSet<usize> = members.iter().copied().filter(|&i| i < n).collect();
    if distinct.len() < k {
        return f64::INFINITY;
    }
    if distinct.len() == n {
        return k as f64;
    }
    trace_ratio(&gram(s, 0..n), &gram(s, distinct.into_iter()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    /// Maximum number of models in the selection.
    pub budget: usize,
    pub mandatory_families: Vec<String>,
    /// Families allowed in the selection; empty means every family present.
    pub candidate_families: Vec<String>,
    /// Only models with at most this many parameters are selectable.
    pub max_params: Option<f64>,
}

impl SubsetSpec {
    pub fn new(budget: usize) -> Self {
        SubsetSpec {
            budget,
            mandatory_families: vec![DEFAULT_REFERENCE_FAMILY.to_string()],
            candidate_families: Vec::new(),
            max_params: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub families: Vec<String>,
    pub n_models: usize,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Sorted family names.
    pub chosen_families: Vec<String>,
    pub chosen_model_ids: Vec<String>,
    pub objective: f64,
    /// Number of within-budget combinations evaluated.
    pub evaluated: usize,
}

/// Families and their selectable score rows, sorted by family name.
struct Pool {
    full: DMatrix<f64>,
    model_ids: Vec<String>,
    mandatory: Vec<usize>,
    optional: Vec<usize>,
    names: Vec<String>,
    rows: Vec<Vec<usize>>,
    grams: Vec<DMatrix<f64>>,
}

impl Pool {
    fn new(scores: &CapabilityScores, models: &[ModelRecord], spec: &SubsetSpec) -> Result<Self> {
        let k = scores.scores.ncols();
        if spec.budget < k + 2 {
            return Err(Error::Config(format!(
                "budget {} is below K + 2 = {}",
                spec.budget,
                k + 2
            )));
        }
        let allowed: Option<HashSet<&str>> = (!spec.candidate_families.is_empty())
            .then(|| spec.candidate_families.iter().map(String::as_str).collect());
        let mut by_family: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for m in models {
            if allowed.as_ref().is_some_and(|a| !a.contains(m.family.as_str())) {
                continue;
            }
            if let Some(limit) = spec.max_params {
                if m.params.is_none_or(|p| p > limit) {
                    continue;
                }
            }
            if let Some(row) = scores.row_of(&m.model_id) {
                by_family.entry(m.family.clone()).or_default().push(row);
            }
        }
        let names: Vec<String> = by_family.keys().cloned().collect();
        let mut mandatory = Vec::new();
        for f in &spec.mandatory_families {
            match names.iter().position(|n| n == f) {
                Some(i) if !mandatory.contains(&i) => mandatory.push(i),
                Some(_) => {}
                None => {
                    return Err(Error::Infeasible(format!(
                        "mandatory family `{f}` has no selectable models"
                    )))
                }
            }
        }
        let optional = (0..names.len()).filter(|i| !mandatory.contains(i)).collect();
        let rows: Vec<Vec<usize>> = by_family.into_values().collect();
        let grams = rows.iter().map(|r| gram(&scores.scores, r.iter().copied())).collect();
        Ok(Pool {
            full: gram(&scores.scores, 0..scores.scores.nrows()),
            model_ids: scores.model_ids.clone(),
            mandatory,
            optional,
            names,
            rows,
            grams,
        })
    }

    fn n_models(&self, fams: &[usize]) -> usize {
        fams.iter().map(|&f| self.rows[f].len()).sum()
    }

    fn objective(&self, fams: &[usize]) -> f64 {
        let all_rows = fams.iter().map(|&f| self.rows[f].len()).sum::<usize>() == self.model_ids.len();
        if all_rows {
            return self.full.nrows() as f64;
        }
        let mut b = DMatrix::zeros(self.full.nrows(), self.full.ncols());
        for &f in fams {
            b += &self.grams[f];
        }
        trace_ratio(&self.full, &b)
    }

    fn families_for_mask(&self, mask: u64) -> Vec<usize> {
        let mut fams = self.mandatory.clone();
        fams.extend(
            self.optional
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, &f)| f),
        );
        fams.sort_unstable();
        fams
    }

    fn result(&self, fams: &[usize], objective: f64, evaluated: usize) -> SelectionResult {
        let mut rows: Vec<usize> = fams.iter().flat_map(|&f| self.rows[f].iter().copied()).collect();
        rows.sort_unstable();
        SelectionResult {
            chosen_families: fams.iter().map(|&f| self.names[f].clone()).collect(),
            chosen_model_ids: rows.iter().map(|&r| self.model_ids[r].clone()).collect(),
            objective,
            evaluated,
        }
    }
}

/// Lower objective wins; equal objectives go to the lexicographically
/// smaller sorted family-name list (family indices are sorted by name).
fn better(a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1))
}

const MAX_OPTIONAL_FAMILIES: usize = 30;

/// Exhaustive V-optimal family selection.
///
/// `scores` rows define the full set `S`; only models in `models` (after the
/// candidate and size filters) are selectable.
pub fn select(
    scores: &CapabilityScores,
    models: &[ModelRecord],
    spec: &SubsetSpec,
    exec: Execution,
) -> Result<SelectionResult> {
    select_recording(scores, models, spec, exec, false).map(|(r, _)| r)
}

/// [`select`], optionally also returning every within-budget combination.
pub fn select_recording(
    scores: &CapabilityScores,
    models: &[ModelRecord],
    spec: &SubsetSpec,
    exec: Execution,
    record: bool,
) -> Result<(SelectionResult, Vec<Combination>)> {
    let pool = Pool::new(scores, models, spec)?;
    if pool.optional.len() > MAX_OPTIONAL_FAMILIES {
        return Err(Error::Config(format!(
            "{} optional families is too many for exhaustive search",
            pool.optional.len()
        )));
    }
    if pool.n_models(&pool.mandatory) > spec.budget {
        return Err(Error::Infeasible(format!(
            "mandatory families alone have {} models, above the budget of {}",
            pool.n_models(&pool.mandatory),
            spec.budget
        )));
    }
    let n_masks = 1usize << pool.optional.len();
    let base = pool.n_models(&pool.mandatory);
    let sizes: Vec<usize> = pool.optional.iter().map(|&f| pool.rows[f].len()).collect();
    let eval = |mask: usize| {
        // cheap budget check before building the family list
        let mut n = base;
        let mut bits = mask;
        while bits != 0 {
            n += sizes[bits.trailing_zeros() as usize];
            bits &= bits - 1;
        }
        (n <= spec.budget).then(|| {
            let fams = pool.families_for_mask(mask as u64);
            (pool.objective(&fams), fams)
        })
    };

    let (best, evaluated, combos) = if record {
        let all: Vec<(f64, Vec<usize>)> = par::map_range(exec, n_masks, eval).into_iter().flatten().collect();
        let best = all.iter().min_by(|a, b| better(a, b)).cloned();
        let combos = all
            .iter()
            .map(|(obj, fams)| Combination {
                families: fams.iter().map(|&f| pool.names[f].clone()).collect(),
                n_models: pool.n_models(fams),
                objective: *obj,
            })
            .collect();
        (best, all.len(), combos)
    } else {
        let best = par::min_by_range(
            exec,
            n_masks,
            |m| eval(m).map(|c| (c, 1usize)),
            |a, b| {
                let n = a.1 + b.1;
                let c = if better(&a.0, &b.0) == Ordering::Greater { b.0 } else { a.0 };
                (c, n)
            },
        );
        let evaluated = best.as_ref().map_or(0, |b| b.1);
        (best.map(|b| b.0), evaluated, Vec::new())
    };

    match best {
        Some((obj, fams)) if obj.is_finite() => Ok((pool.result(&fams, obj, evaluated), combos)),
        _ => Err(Error::Infeasible(format!(
            "no family combination within a budget of {} gives full-rank scores",
            spec.budget
        ))),
    }
}

/// Seeded random family combinations as a baseline for [`select`].
///
/// Each trial starts from the mandatory families, visits the others in a
/// random order and adds every family that still fits the budget, so each
/// draw is a random maximal combination.
pub fn random_baseline(
    scores: &CapabilityScores,
    models: &[ModelRecord],
    spec: &SubsetSpec,
    seed: u64,
    trials: usize,
) -> Result<Vec<SelectionResult>> {
    if trials == 0 {
        return Err(Error::Config("at least one random trial is required".into()));
    }
    let pool = Pool::new(scores, models, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut order = pool.optional.clone();
        order.shuffle(&mut rng);
        let mut fams = pool.mandatory.clone();
        let mut n = pool.n_models(&fams);
        for f in order {
            if n + pool.rows[f].len() <= spec.budget {
                n += pool.rows[f].len();
                fams.push(f);
            }
        }
        fams.sort_unstable();
        let obj = pool.objective(&fams);
        out.push(pool.result(&fams, obj, 1));
    }
    Ok(out)
}

/// Holdout evaluation of a law fitted only on the target values of `chosen`.
///
/// Benchmarks of every training model stay visible (they are cheap to
/// obtain); target labels on the training side are kept only for `chosen`.
pub fn subset_holdout(
    method: &dyn ScalingMethod,
    data: &Dataset,
    split: &Split,
    chosen: &[String],
) -> Result<HoldoutReport> {
    let keep: Vec<&String> = chosen.iter().chain(&split.test).collect();
    let masked = Dataset {
        target: data.target.masked_except(&keep),
        ..data.clone()
    };
    evaluate(method, &masked, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fam_models(spec: &[(&str, usize)]) -> Vec<ModelRecord> {
        spec.iter()
            .flat_map(|(f, n)| {
                (0..*n).map(move |i| {
                    ModelRecord::new(format!("{f}-{i}"), *f, Some(1e9 * (i + 1) as f64), None, None).unwrap()
                })
            })
            .collect()
    }

    fn scores_for(models: &[ModelRecord], s: DMatrix<f64>) -> CapabilityScores {
        CapabilityScores {
            model_ids: models.iter().map(|m| m.model_id.clone()).collect(),
            scores: s,
        }
    }

    #[test]
    fn full_set_is_exactly_k() {
        let s = DMatrix::from_fn(6, 2, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        assert_eq!(v_objective(&s, &[0, 1, 2, 3, 4, 5]), 2.0);
        assert_eq!(v_objective(&s, &[0]), f64::INFINITY);
    }

    #[test]
    fn collinear_subset_is_infinite() {
        let s = DMatrix::from_row_slice(4, 2, &[1., 2., 2., 4., 3., 6., 1., 0.]);
        assert_eq!(v_objective(&s, &[0, 1, 2]), f64::INFINITY);
        assert!(v_objective(&s, &[0, 3]).is_finite());
    }

    #[test]
    fn budget_equal_to_total_picks_everything() {
        let models = fam_models(&[("Llama-2", 2), ("a", 3), ("b", 2)]);
        let s = DMatrix::from_fn(7, 2, |i, j| (i as f64 + 1.0).powi(j as i32 + 1) / 7.0);
        let sc = scores_for(&models, s);
        let r = select(&sc, &models, &SubsetSpec::new(7), Execution::Sequential).unwrap();
        assert_eq!(r.chosen_families, ["Llama-2", "a", "b"]);
        assert_eq!(r.objective, 2.0);
        for t in random_baseline(&sc, &models, &SubsetSpec::new(7), 3, 5).unwrap() {
            assert_eq!(t.objective, 2.0);
        }
    }

    #[test]
    fn parallel_and_recording_agree() {
        let models = fam_models(&[("Llama-2", 2), ("a", 3), ("b", 2), ("c", 4), ("d", 1)]);
        let s = DMatrix::from_fn(12, 3, |i, j| ((i * 7 + j * 11) % 13) as f64 / 13.0 + 0.1 * j as f64);
        let sc = scores_for(&models, s);
        let spec = SubsetSpec::new(7);
        let a = select(&sc, &models, &spec, Execution::Sequential).unwrap();
        let b = select(&sc, &models, &spec, Execution::Parallel).unwrap();
        let (c, combos) = select_recording(&sc, &models, &spec, Execution::Parallel, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(combos.len(), a.evaluated);
        assert!(combos.iter().all(|c| c.n_models <= 7 && c.families.contains(&"Llama-2".to_string())));
    }

    #[test]
    fn infeasible_and_invalid_specs() {
        let models = fam_models(&[("Llama-2", 6), ("a", 3)]);
        let s = DMatrix::from_fn(9, 2, |i, j| (i + j * i) as f64);
        let sc = scores_for(&models, s);
        assert!(matches!(
            select(&sc, &models, &SubsetSpec::new(3), Execution::Sequential),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            select(&sc, &models, &SubsetSpec::new(5), Execution::Sequential),
            Err(Error::Infeasible(_))
        ));
        let spec = SubsetSpec {
            mandatory_families: vec!["nope".into()],
            ..SubsetSpec::new(8)
        };
        assert!(select(&sc, &models, &spec, Execution::Sequential).is_err());
        assert!(random_baseline(&sc, &models, &SubsetSpec::new(8), 0, 0).is_err());
    }

    #[test]
    fn size_filter_is_inclusive() {
        let models = fam_models(&[("Llama-2", 4), ("a", 4)]);
        let s = DMatrix::from_fn(8, 2, |i, j| ((i * 5 + j * 3) % 8) as f64);
        let sc = scores_for(&models, s);
        let spec = SubsetSpec {
            max_params: Some(3e9),
            ..SubsetSpec::new(8)
        };
        let r = select(&sc, &models, &spec, Execution::Sequential).unwrap();
        assert_eq!(r.chosen_model_ids.len(), 6);
        assert!(r.chosen_model_ids.iter().all(|id| !id.ends_with("-3")));
    }

    #[test]
    fn seeded_baseline_is_reproducible() {
        let models = fam_models(&[("Llama-2", 2), ("a", 3), ("b", 2), ("c", 4), ("d", 1), ("e", 2)]);
        let s = DMatrix::from_fn(14, 2, |i, j| ((i * 7 + j * 11) % 13) as f64);
        let sc = scores_for(&models, s);
        let spec = SubsetSpec::new(8);
        let a = random_baseline(&sc, &models, &spec, 42, 20).unwrap();
        let b = random_baseline(&sc, &models, &spec, 42, 20).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.chosen_model_ids.len() <= 8));
        let best = select(&sc, &models, &spec, Execution::Sequential).unwrap();
        assert!(a.iter().all(|r| r.objective >= best.objective - 1e-12));
        assert_abs_diff_eq!(best.objective, v_objective(&sc.scores, &row_indices(&sc, &best.chosen_model_ids)), epsilon = 1e-9);
    }

    fn row_indices(sc: &CapabilityScores, ids: &[String]) -> Vec<usize> {
        ids.iter().map(|id| sc.row_of(id).unwrap()).collect()
    }
}
