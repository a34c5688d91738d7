//! Run configuration: command-line flags layered over an optional
//! `key = value` file. Every key mirrors a global flag (dashes or
//! underscores both accepted) and flags win on conflict.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use obscaling::dataset::{DEFAULT_REFERENCE_FAMILY, DEFAULT_REFERENCE_MODEL};
use obscaling::impute::ImputeConfig;
use obscaling::par::Execution;
use obscaling::validation::UnknownFlops;
use obscaling::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum CutoffMode {
    /// Train on models up to the reference model's FLOPs.
    #[default]
    Default,
    /// A quarter of the default FLOPs cutoff.
    Quarter,
    /// Hold out the best-scoring fraction of models by target accuracy.
    Accuracy,
    /// Hold out the largest fraction of models by FLOPs.
    TopFraction,
    /// No holdout; fit on every labeled model.
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum UnknownSide {
    Train,
    #[default]
    Test,
}

/// Global flags, all optional so a config file can fill them in.
#[derive(Args, Clone, Debug, Default)]
pub struct GlobalArgs {
    /// `key = value` file mirroring these flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Models CSV (model_id,family,params_b,tokens_t,flops_1e21); bundled table if absent.
    #[arg(long, global = true)]
    pub models: Option<PathBuf>,
    /// Benchmarks CSV (model_id, then one column per metric); bundled table if absent.
    #[arg(long, global = true)]
    pub benchmarks: Option<PathBuf>,
    /// Downstream target CSV (model_id,value[,floor]).
    #[arg(long, global = true)]
    pub targets: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Number of principal capability components.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Explicit FLOPs cutoff (absolute FLOPs, inclusive on the train side).
    #[arg(long, global = true)]
    pub cutoff_flops: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub cutoff_mode: Option<CutoffMode>,
    /// Held-out fraction for the accuracy and top-fraction modes.
    #[arg(long, global = true)]
    pub cutoff_fraction: Option<f64>,
    /// Comma-separated metrics dropped before imputation and PCA.
    #[arg(long, global = true, value_delimiter = ',')]
    pub exclude_metrics: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub reference_family: Option<String>,
    /// Model whose FLOPs set the default cutoff.
    #[arg(long, global = true)]
    pub reference_model: Option<String>,
    /// Side for models with unknown FLOPs under FLOPs cutoffs.
    #[arg(long, global = true, value_enum)]
    pub unknown_flops: Option<UnknownSide>,
    #[arg(long, global = true)]
    pub impute_rank: Option<usize>,
    #[arg(long, global = true)]
    pub impute_max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub impute_tol: Option<f64>,
    /// Run sweeps and subset search on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub models: Option<PathBuf>,
    pub benchmarks: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub out: PathBuf,
    pub k: usize,
    pub seed: u64,
    pub cutoff_flops: Option<f64>,
    pub cutoff_mode: CutoffMode,
    pub cutoff_fraction: f64,
    pub exclude_metrics: Vec<String>,
    pub reference_family: String,
    pub reference_model: String,
    pub unknown_flops: UnknownFlops,
    pub impute: ImputeConfig,
    pub exec: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            models: None,
            benchmarks: None,
            targets: None,
            out: PathBuf::from("out"),
            k: obscaling::capability::DEFAULT_COMPONENTS,
            seed: 0,
            cutoff_flops: None,
            cutoff_mode: CutoffMode::Default,
            cutoff_fraction: 0.4,
            exclude_metrics: Vec::new(),
            reference_family: DEFAULT_REFERENCE_FAMILY.into(),
            reference_model: DEFAULT_REFERENCE_MODEL.into(),
            unknown_flops: UnknownFlops::Test,
            impute: ImputeConfig::default(),
            exec: Execution::Parallel,
        }
    }
}

/// Parsed config file: key → (line number, raw value).
#[derive(Debug, Default)]
struct FileValues {
    origin: String,
    base: PathBuf,
    values: BTreeMap<String, (usize, String)>,
}

pub fn parse_config(text: &str, origin: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut values = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("{origin}:{}: expected `key = value`", i + 1)));
        };
        let key = key.trim().replace('_', "-");
        if values.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
            return Err(Error::Config(format!("{origin}:{}: `{key}` set twice", i + 1)));
        }
    }
    Ok(values)
}

impl FileValues {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let Some((line, raw)) = self.values.remove(key) else {
            return Ok(None);
        };
        raw.parse().map(Some).map_err(|_| {
            Error::Config(format!("{}:{line}: `{key}` has invalid value `{raw}`", self.origin))
        })
    }

    fn take_enum<T: ValueEnum>(&mut self, key: &str) -> Result<Option<T>> {
        let Some((line, raw)) = self.values.remove(key) else {
            return Ok(None);
        };
        T::from_str(&raw, true)
            .map(Some)
            .map_err(|e| Error::Config(format!("{}:{line}: `{key}`: {e}", self.origin)))
    }

    /// Paths in a config file are relative to the file.
    fn take_path(&mut self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.take::<PathBuf>(key)?.map(|p| self.base.join(p)))
    }

    fn take_list(&mut self, key: &str) -> Option<Vec<String>> {
        self.values.remove(key).map(|(_, raw)| split_list(&raw))
    }
}

pub fn split_list(raw: &str) -> Vec<String> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn read_config(path: &Path) -> Result<FileValues> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let origin = path.display().to_string();
    Ok(FileValues {
        values: parse_config(&text, &origin)?,
        base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        origin,
    })
}

impl RunConfig {
    pub fn resolve(flags: &GlobalArgs) -> Result<Self> {
        let mut file = match &flags.config {
            Some(p) => read_config(p)?,
            None => FileValues::default(),
        };
        let d = RunConfig::default();
        let cfg = RunConfig {
            models: flags.models.clone().or(file.take_path("models")?),
            benchmarks: flags.benchmarks.clone().or(file.take_path("benchmarks")?),
            targets: flags.targets.clone().or(file.take_path("targets")?),
            out: flags.out.clone().or(file.take_path("out")?).unwrap_or(d.out),
            k: flags.k.or(file.take("k")?).unwrap_or(d.k),
            seed: flags.seed.or(file.take("seed")?).unwrap_or(d.seed),
            cutoff_flops: flags.cutoff_flops.or(file.take("cutoff-flops")?),
            cutoff_mode: flags.cutoff_mode.or(file.take_enum("cutoff-mode")?).unwrap_or(d.cutoff_mode),
            cutoff_fraction: flags
                .cutoff_fraction
                .or(file.take("cutoff-fraction")?)
                .unwrap_or(d.cutoff_fraction),
            exclude_metrics: flags
                .exclude_metrics
                .clone()
                .or(file.take_list("exclude-metrics"))
                .unwrap_or_default(),
            reference_family: flags
                .reference_family
                .clone()
                .or(file.take("reference-family")?)
                .unwrap_or(d.reference_family),
            reference_model: flags
                .reference_model
                .clone()
                .or(file.take("reference-model")?)
                .unwrap_or(d.reference_model),
            unknown_flops: match flags.unknown_flops.or(file.take_enum("unknown-flops")?) {
                Some(UnknownSide::Train) => UnknownFlops::Train,
                Some(UnknownSide::Test) | None => UnknownFlops::Test,
            },
            impute: ImputeConfig {
                rank: flags.impute_rank.or(file.take("impute-rank")?).unwrap_or(d.impute.rank),
                max_iterations: flags
                    .impute_max_iters
                    .or(file.take("impute-max-iters")?)
                    .unwrap_or(d.impute.max_iterations),
                tolerance: flags.impute_tol.or(file.take("impute-tol")?).unwrap_or(d.impute.tolerance),
            },
            exec: if flags.sequential || file.take::<bool>("sequential")?.unwrap_or(false) {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
        };
        if let Some((key, (line, _))) = file.values.iter().next() {
            return Err(Error::Config(format!("{}:{line}: unknown key `{key}`", file.origin)));
        }
        if cfg.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(cfg.cutoff_fraction > 0.0 && cfg.cutoff_fraction < 1.0) {
            return Err(Error::Config(format!(
                "cutoff fraction {} outside (0, 1)",
                cfg.cutoff_fraction
            )));
        }
        Ok(cfg)
    }
}
