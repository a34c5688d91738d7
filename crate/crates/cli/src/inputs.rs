//! Loading tables and building the holdout split from a [`RunConfig`].

use std::path::{Path, PathBuf};

use obscaling::dataset::{
    bundled, flops_cutoff_default, load_models, load_targets, parse_benchmarks, BenchmarkOptions,
    BenchmarkTable, CompleteTable, Dataset, ModelRecord, TargetMetric,
};
use obscaling::validation::{fraction_threshold, split, Split, SplitSpec};
use obscaling::{Error, Result};

use crate::config::{CutoffMode, RunConfig};

/// Which bundled tables stand in for paths that were not given.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bundle {
    Base,
    Instruct,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn models(cfg: &RunConfig, bundle: Bundle) -> Result<Vec<ModelRecord>> {
    match &cfg.models {
        Some(p) => load_models(p),
        None => Ok(match bundle {
            Bundle::Base => bundled::base_models(),
            Bundle::Instruct => bundled::instruct_models(),
        }),
    }
    .map_err(|e| e.in_stage("load"))
}

/// Benchmarks with the configured metrics removed.
pub fn benchmarks(cfg: &RunConfig, models: &[ModelRecord], bundle: Bundle) -> Result<BenchmarkTable> {
    let (text, origin) = match &cfg.benchmarks {
        Some(p) => (read(p).map_err(|e| e.in_stage("load"))?, p.display().to_string()),
        None => match bundle {
            Bundle::Base => (bundled::BASE_BENCHMARKS_CSV.to_string(), "bundled base_benchmarks.csv".into()),
            Bundle::Instruct => (
                bundled::INSTRUCT_BENCHMARKS_CSV.to_string(),
                "bundled instruct_benchmarks.csv".into(),
            ),
        },
    };
    let table = parse_benchmarks(&text, &origin, models, &BenchmarkOptions::default())
        .map_err(|e| e.in_stage("load"))?;
    for m in &cfg.exclude_metrics {
        if !table.metric_names().contains(m) {
            log::warn!("excluded metric `{m}` is not in {origin}");
        }
    }
    Ok(table.without_metrics(&cfg.exclude_metrics))
}

pub fn target_path(cfg: &RunConfig) -> Result<&PathBuf> {
    cfg.targets
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs a downstream target; pass --targets".into()).in_stage("load"))
}

pub fn target(path: &Path, models: &[ModelRecord]) -> Result<TargetMetric> {
    load_targets(path, models).map_err(|e| e.in_stage("load"))
}

pub fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let models = models(cfg, Bundle::Base)?;
    let benchmarks = benchmarks(cfg, &models, Bundle::Base)?;
    let target = target(target_path(cfg)?, &models)?;
    Dataset::new(models, benchmarks, target).map_err(|e| e.in_stage("load"))
}

/// The split rule selected by the cutoff flags, or `None` for no holdout.
pub fn split_spec(cfg: &RunConfig, data: &Dataset) -> Result<Option<SplitSpec>> {
    let reference = || flops_cutoff_default(&data.models, &cfg.reference_model);
    let spec = match (cfg.cutoff_flops, cfg.cutoff_mode) {
        (Some(_), CutoffMode::Accuracy | CutoffMode::TopFraction | CutoffMode::None) => {
            return Err(Error::Config(format!(
                "--cutoff-flops cannot be combined with cutoff mode {:?}",
                cfg.cutoff_mode
            )))
        }
        (Some(c), _) => Some(SplitSpec::flops_cutoff(c)),
        (None, CutoffMode::Default) => Some(SplitSpec::flops_cutoff(reference()?)),
        (None, CutoffMode::Quarter) => Some(SplitSpec::flops_cutoff(reference()? / 4.0)),
        (None, CutoffMode::Accuracy) => {
            let values: Vec<f64> = data
                .labeled_ids()
                .iter()
                .filter_map(|id| data.target.value(id))
                .collect();
            Some(SplitSpec::accuracy_cutoff(fraction_threshold(&values, cfg.cutoff_fraction)?))
        }
        (None, CutoffMode::TopFraction) => Some(SplitSpec::top_fraction(cfg.cutoff_fraction)),
        (None, CutoffMode::None) => None,
    };
    Ok(spec.map(|s| SplitSpec {
        unknown_flops: cfg.unknown_flops,
        ..s
    }))
}

pub fn holdout(cfg: &RunConfig, data: &Dataset) -> Result<Option<Split>> {
    split_spec(cfg, data)
        .and_then(|spec| spec.map(|s| split(&data.models, &data.target, &s)).transpose())
        .map_err(|e| e.in_stage("split"))
}

pub fn require_holdout(cfg: &RunConfig, data: &Dataset) -> Result<Split> {
    holdout(cfg, data)?
        .ok_or_else(|| Error::Config("this command needs a holdout split; cutoff mode is `none`".into()).in_stage("split"))
}

pub fn load_extra(path: &Path, models: &[ModelRecord]) -> Result<BenchmarkTable> {
    let text = read(path).map_err(|e| e.in_stage("load"))?;
    parse_benchmarks(&text, &path.display().to_string(), models, &BenchmarkOptions::default())
        .map_err(|e| e.in_stage("load"))
}

/// Appends the columns of `extra` to `table`; models absent from `extra` get
/// missing cells. Column names must not overlap.
pub fn merge_columns(table: &BenchmarkTable, extra: &BenchmarkTable) -> Result<BenchmarkTable> {
    if let Some(dup) = extra.metric_names().iter().find(|m| table.metric_names().contains(m)) {
        return Err(Error::Config(format!("metric `{dup}` is in both tables")));
    }
    let mut names = table.metric_names().to_vec();
    names.extend_from_slice(extra.metric_names());
    let rows = (0..table.n_models())
        .map(|i| {
            let mut row = table.row(i).to_vec();
            match extra.row_of(&table.model_ids()[i]) {
                Some(r) => row.extend_from_slice(extra.row(r)),
                None => row.extend(std::iter::repeat_n(None, extra.n_metrics())),
            }
            row
        })
        .collect();
    BenchmarkTable::new(table.model_ids().to_vec(), names, rows)
}

/// Rows of `table` with every metric present.
pub fn complete_rows(table: &BenchmarkTable) -> Result<CompleteTable> {
    let ids: Vec<&String> = (0..table.n_models())
        .filter(|&i| table.row(i).iter().all(Option::is_some))
        .map(|i| &table.model_ids()[i])
        .collect();
    if ids.len() < table.n_models() {
        log::warn!(
            "{} models with missing benchmark cells are left out",
            table.n_models() - ids.len()
        );
    }
    table.select_rows(&ids)?.to_complete()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled_with_target() -> Dataset {
        let models = bundled::base_models();
        let target = TargetMetric::from_values("t", models.iter().map(|m| (m.model_id.clone(), 0.5))).unwrap();
        Dataset::new(models, bundled::base_benchmarks(), target).unwrap()
    }

    #[test]
    fn quarter_mode_is_a_quarter_of_the_reference() {
        let data = bundled_with_target();
        let cfg = RunConfig {
            cutoff_mode: CutoffMode::Quarter,
            ..Default::default()
        };
        let spec = split_spec(&cfg, &data).unwrap().unwrap();
        assert!((spec.threshold - 2.1e22).abs() < 1e9, "{}", spec.threshold);
        let default = split_spec(&RunConfig::default(), &data).unwrap().unwrap();
        assert!((default.threshold - 8.4e22).abs() < 1e9);
    }

    #[test]
    fn default_split_is_47_30() {
        let data = bundled_with_target();
        let sp = holdout(&RunConfig::default(), &data).unwrap().unwrap();
        assert_eq!((sp.train.len(), sp.test.len()), (47, 30));
    }

    #[test]
    fn explicit_flops_conflicts_with_accuracy_mode() {
        let data = bundled_with_target();
        let cfg = RunConfig {
            cutoff_flops: Some(1e22),
            cutoff_mode: CutoffMode::Accuracy,
            ..Default::default()
        };
        assert!(split_spec(&cfg, &data).is_err());
        assert!(holdout(&RunConfig { cutoff_mode: CutoffMode::None, ..Default::default() }, &data)
            .unwrap()
            .is_none());
    }

    #[test]
    fn excluded_metric_is_dropped() {
        let models = bundled::base_models();
        let cfg = RunConfig {
            exclude_metrics: vec!["HumanEval".into()],
            ..Default::default()
        };
        let b = benchmarks(&cfg, &models, Bundle::Base).unwrap();
        assert_eq!(b.n_metrics(), 6);
        assert!(!b.metric_names().contains(&"HumanEval".to_string()));
    }

    #[test]
    fn merged_columns_fill_by_id() {
        let a = BenchmarkTable::new(
            vec!["x".into(), "y".into()],
            vec!["MMLU".into()],
            vec![vec![Some(0.5)], vec![Some(0.6)]],
        )
        .unwrap();
        let b = BenchmarkTable::new(vec!["y".into()], vec!["GSM8K".into()], vec![vec![Some(0.3)]]).unwrap();
        let m = merge_columns(&a, &b).unwrap();
        assert_eq!(m.metric_names(), ["MMLU", "GSM8K"]);
        assert_eq!(m.row(0), [Some(0.5), None]);
        assert_eq!(m.row(1), [Some(0.6), Some(0.3)]);
        assert!(merge_columns(&a, &a).is_err());
    }

    #[test]
    fn missing_targets_names_path() {
        let cfg = RunConfig {
            targets: Some("/nonexistent/dir/task.csv".into()),
            ..Default::default()
        };
        let err = dataset(&cfg).unwrap_err().to_string();
        assert!(err.contains("/nonexistent/dir/task.csv") && err.starts_with("load"), "{err}");
    }
}
