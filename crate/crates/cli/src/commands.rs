//! One function per subcommand. Each loads its inputs, calls into the
//! library, and writes CSV/SVG/JSON artifacts plus a short stdout summary.

use std::collections::HashMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use obscaling::capability::{fit_capability_space, per_family_linearity, CapabilityScores};
use obscaling::dataset::{CompleteTable, Dataset, ModelRecord};
use obscaling::impute::fit_imputer;
use obscaling::prereg::{bundled_forms, load_forms, prereg_report};
use obscaling::scalinglaw::{
    calibrate_family, equivalent_flops, project_weights, LawDocument, ObservationalLaw, ScaleMeasure,
};
use obscaling::subset::{random_baseline, select_recording, SubsetSpec};
use obscaling::validation::{
    cutoff_sweep, default_fractions, evaluate, fit_observational_pipeline, Compute, FittedObservational,
    HoldoutReport, Observational, PointStatus, ScalingMethod, Side, SweepKind, DEFAULT_SWEEP_POINTS,
};
use obscaling::{Error, Result};

use crate::config::RunConfig;
use crate::inputs::{self, Bundle};
use crate::output::{num, opt, slug, OutDir};
use crate::svg::{Chart, Series, Style};

fn side_label(side: Side) -> &'static str {
    match side {
        Side::Train => "train",
        Side::Test => "test",
    }
}

fn family_of(models: &[ModelRecord]) -> HashMap<&str, &ModelRecord> {
    models.iter().map(|m| (m.model_id.as_str(), m)).collect()
}

/// Complete benchmark rows for every model the fitted imputer (if any) can fill.
fn complete_all(fitted: &FittedObservational, data: &Dataset) -> Result<CompleteTable> {
    match &fitted.imputer {
        Some(imp) => imp.apply(&data.benchmarks),
        None => inputs::complete_rows(&data.benchmarks),
    }
    .map_err(|e| e.in_stage("impute"))
}

fn observational(cfg: &RunConfig) -> Observational {
    Observational {
        k: cfg.k,
        impute: cfg.impute,
    }
}

fn print_holdout(r: &HoldoutReport) {
    println!(
        "{:<8} train n={:<3} mse={:.6}  test n={:<3} mse={:.6}{}",
        r.method,
        r.train_ids.len(),
        r.train_mse,
        r.test_ids.len(),
        r.test_mse,
        if r.unpredicted.is_empty() {
            String::new()
        } else {
            format!("  ({} unpredicted)", r.unpredicted.len())
        }
    );
}

fn finish(out: &OutDir) {
    for p in out.written() {
        println!("wrote {}", p.display());
    }
}

pub fn fit(cfg: &RunConfig) -> Result<()> {
    let data = inputs::dataset(cfg)?;
    let split = inputs::holdout(cfg, &data)?;
    let train_ids: Vec<String> = match &split {
        Some(s) => s.train.clone(),
        None => data.models.iter().map(|m| m.model_id.clone()).collect(),
    };
    let train = data.restricted(&train_ids).map_err(|e| e.in_stage("split"))?;
    let fitted = fit_observational_pipeline(&train, cfg.k, &cfg.impute)?;
    let law = &fitted.law;

    let complete = complete_all(&fitted, &data)?;
    let scores = law.space.score(&complete).map_err(|e| e.in_stage("pca"))?;
    let calib = calibrate_family(law, &scores, &data.models, &cfg.reference_family)
        .map_err(|e| e.in_stage("calibrate"))?;
    let equiv = equivalent_flops(&calib, law, &scores).map_err(|e| e.in_stage("equivalent-flops"))?;
    let predicted = law.predict_scores(&scores);
    let fingerprint = data.fingerprint().map_err(|e| e.in_stage("write"))?;
    let doc = LawDocument::new(law, Some(calib.clone()), fitted.imputer.as_ref(), fingerprint);

    let task = slug(&data.target.name);
    let mut out = OutDir::create(&cfg.out)?;
    out.write_text(&format!("{task}_law.json"), &(doc.to_json().map_err(|e| e.in_stage("write"))? + "\n"))?;

    let test: std::collections::HashSet<&str> = split
        .as_ref()
        .map(|s| s.test.iter().map(String::as_str).collect())
        .unwrap_or_default();
    let by_id = family_of(&data.models);
    let rows: Vec<Vec<String>> = scores
        .model_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let m = by_id[id.as_str()];
            vec![
                id.clone(),
                m.family.clone(),
                if test.contains(id.as_str()) { "test" } else { "train" }.into(),
                opt(m.log10_flops()),
                num(equiv[i].log10_flops),
                equiv[i].extrapolated.to_string(),
                opt(data.target.normalized(id)),
                num(predicted[i]),
            ]
        })
        .collect();
    out.write_csv(
        &format!("{task}_predictions.csv"),
        &[
            "model_id",
            "family",
            "side",
            "log10_flops",
            "equivalent_log10_flops",
            "extrapolated",
            "actual",
            "predicted",
        ],
        rows,
    )?;

    let mut chart = Chart::new(
        format!("{}: observed vs. law", data.target.name),
        format!("{}-equivalent FLOPs", cfg.reference_family),
        "normalized accuracy",
    )
    .log_x();
    for side in ["train", "test"] {
        let (pts, labels): (Vec<(f64, f64)>, Vec<String>) = scores
            .model_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| test.contains(id.as_str()) == (side == "test"))
            .filter_map(|(i, id)| Some(((10f64.powf(equiv[i].log10_flops), data.target.normalized(id)?), id.clone())))
            .unzip();
        let s = Series::new(side, Style::Scatter, pts);
        chart.push(if side == "test" { s.with_labels(labels) } else { s });
    }
    chart.push(Series::new(
        "law",
        Style::Line,
        equiv.iter().zip(&predicted).map(|(e, p)| (10f64.powf(e.log10_flops), *p)).collect(),
    ));
    out.write_text(&format!("{task}_fit.svg"), &chart.render())?;

    println!("task {}: h = {}, {} training models", data.target.name, law.h, law.train_ids.len());
    println!("benchmark form: {}", project_weights(law).expanded_form());
    println!(
        "calibration on {}: w = {:.4}, b = {:.4}, R² = {:.4}",
        calib.family, calib.w, calib.b, calib.r2
    );
    if let Some(split) = &split {
        print_holdout(&evaluate(&observational(cfg), &data, split)?);
    }
    finish(&out);
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    /// Law JSON written by `fit`.
    #[arg(long)]
    pub law: PathBuf,
    /// Use the bundled instruction-tuned tables when no paths are given.
    #[arg(long)]
    pub instruct: bool,
}

pub fn predict(cfg: &RunConfig, args: &PredictArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.law).map_err(|source| {
        Error::Io {
            path: args.law.clone(),
            source,
        }
        .in_stage("load")
    })?;
    let doc = LawDocument::from_json(&text).map_err(|e| e.in_stage("load"))?;
    let law: ObservationalLaw = doc.law();
    let bundle = if args.instruct { Bundle::Instruct } else { Bundle::Base };
    let models = inputs::models(cfg, bundle)?;
    let table = inputs::benchmarks(cfg, &models, bundle)?;
    let extra: Vec<String> = table
        .metric_names()
        .iter()
        .filter(|m| !doc.metric_names.contains(m))
        .cloned()
        .collect();
    let table = table.without_metrics(&extra);
    let complete = match &doc.imputer {
        Some(imp) => imp.apply(&table),
        None => inputs::complete_rows(&table),
    }
    .map_err(|e| e.in_stage("impute"))?;
    let scores = law.space.score(&complete).map_err(|e| e.in_stage("pca"))?;
    let predicted = law.predict_scores(&scores);
    let equiv = match &doc.calibration {
        Some(c) => Some(equivalent_flops(c, &law, &scores).map_err(|e| e.in_stage("equivalent-flops"))?),
        None => None,
    };
    let observed = match &cfg.targets {
        Some(p) => Some(inputs::target(p, &models)?),
        None => None,
    };

    let rows: Vec<Vec<String>> = scores
        .model_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            vec![
                id.clone(),
                equiv.as_ref().map(|e| num(e[i].log10_flops)).unwrap_or_default(),
                opt(observed.as_ref().and_then(|t| t.normalized(id))),
                num(predicted[i]),
            ]
        })
        .collect();
    for r in &rows {
        println!("{:<40} {}", r[0], r[3]);
    }
    let mut out = OutDir::create(&cfg.out)?;
    out.write_csv(
        &format!("{}_predict.csv", slug(&doc.task)),
        &["model_id", "equivalent_log10_flops", "actual", "predicted"],
        rows,
    )?;
    finish(&out);
    Ok(())
}

fn methods(cfg: &RunConfig) -> Vec<Box<dyn ScalingMethod>> {
    vec![
        Box::new(observational(cfg)),
        Box::new(Compute(ScaleMeasure::Flops)),
        Box::new(Compute(ScaleMeasure::Params)),
    ]
}

pub fn compare(cfg: &RunConfig) -> Result<()> {
    let data = inputs::dataset(cfg)?;
    let split = inputs::require_holdout(cfg, &data)?;
    let reports = methods(cfg)
        .iter()
        .map(|m| evaluate(m.as_ref(), &data, &split).map_err(|e| e.in_stage("compare")))
        .collect::<Result<Vec<_>>>()?;
    let task = slug(&data.target.name);
    let mut out = OutDir::create(&cfg.out)?;
    out.write_csv(
        &format!("{task}_compare.csv"),
        &["predictor", "n_train", "n_test", "train_mse", "test_mse", "unpredicted"],
        reports.iter().map(|r| {
            vec![
                r.method.clone(),
                r.train_ids.len().to_string(),
                r.test_ids.len().to_string(),
                num(r.train_mse),
                num(r.test_mse),
                r.unpredicted.len().to_string(),
            ]
        }),
    )?;
    out.write_csv(
        &format!("{task}_compare_residuals.csv"),
        &["predictor", "model_id", "side", "actual", "predicted"],
        reports.iter().flat_map(|r| {
            r.residuals.iter().map(|x| {
                vec![
                    r.method.clone(),
                    x.model_id.clone(),
                    side_label(x.side).into(),
                    num(x.actual),
                    num(x.predicted),
                ]
            })
        }),
    )?;

    let by_id = family_of(&data.models);
    let flops_of = |id: &str| by_id.get(id).and_then(|m| m.flops);
    let mut chart = Chart::new(
        format!("{}: predictors on held-out models", data.target.name),
        "training FLOPs",
        "normalized accuracy",
    )
    .log_x();
    chart.push(Series::new(
        "observed",
        Style::Scatter,
        data.labeled_ids()
            .iter()
            .filter_map(|id| Some((flops_of(id)?, data.target.normalized(id)?)))
            .collect(),
    ));
    for r in &reports {
        chart.push(Series::new(
            r.method.clone(),
            Style::Scatter,
            r.residuals
                .iter()
                .filter(|x| x.side == Side::Test)
                .filter_map(|x| Some((flops_of(&x.model_id)?, x.predicted)))
                .collect(),
        ));
    }
    out.write_text(&format!("{task}_compare.svg"), &chart.render())?;
    for r in &reports {
        print_holdout(r);
    }
    finish(&out);
    Ok(())
}

pub fn holdout_eval(cfg: &RunConfig) -> Result<()> {
    let data = inputs::dataset(cfg)?;
    let split = inputs::require_holdout(cfg, &data)?;
    let report = evaluate(&observational(cfg), &data, &split)?;
    let by_id = family_of(&data.models);
    let task = slug(&data.target.name);
    let mut out = OutDir::create(&cfg.out)?;
    out.write_csv(
        &format!("{task}_holdout.csv"),
        &["model_id", "family", "side", "log10_flops", "actual", "predicted"],
        report.residuals.iter().map(|r| {
            let m = by_id[r.model_id.as_str()];
            vec![
                r.model_id.clone(),
                m.family.clone(),
                side_label(r.side).into(),
                opt(m.log10_flops()),
                num(r.actual),
                num(r.predicted),
            ]
        }),
    )?;
    let mut chart = Chart::new(
        format!("{}: holdout ({} train / {} test)", data.target.name, split.train.len(), split.test.len()),
        "training FLOPs",
        "normalized accuracy",
    )
    .log_x();
    for side in [Side::Train, Side::Test] {
        let rs: Vec<_> = report.residuals.iter().filter(|r| r.side == side).collect();
        let flops = |id: &str| by_id[id].flops;
        chart.push(Series::new(
            format!("{} observed", side_label(side)),
            Style::Scatter,
            rs.iter().filter_map(|r| Some((flops(&r.model_id)?, r.actual))).collect(),
        ));
        chart.push(Series::new(
            format!("{} predicted", side_label(side)),
            Style::Scatter,
            rs.iter().filter_map(|r| Some((flops(&r.model_id)?, r.predicted))).collect(),
        ));
    }
    out.write_text(&format!("{task}_holdout.svg"), &chart.render())?;
    print_holdout(&report);
    finish(&out);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Flops,
    Accuracy,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    /// Quantity the holdout threshold is placed on.
    #[arg(long, value_enum, default_value = "flops")]
    pub kind: SweepAxis,
    /// Number of linearly spaced test fractions between 0.6 and 0.05.
    #[arg(long, default_value_t = DEFAULT_SWEEP_POINTS)]
    pub points: usize,
}

pub fn sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<()> {
    let data = inputs::dataset(cfg)?;
    let kind = match args.kind {
        SweepAxis::Flops => SweepKind::Flops,
        SweepAxis::Accuracy => SweepKind::Accuracy,
    };
    let fractions = default_fractions(args.points);
    let reports = methods(cfg)
        .iter()
        .map(|m| {
            cutoff_sweep(m.as_ref(), &data, kind, &fractions, cfg.unknown_flops, cfg.exec)
                .map_err(|e| e.in_stage("sweep"))
        })
        .collect::<Result<Vec<_>>>()?;
    let axis = match args.kind {
        SweepAxis::Flops => "flops",
        SweepAxis::Accuracy => "accuracy",
    };
    let task = slug(&data.target.name);
    let mut out = OutDir::create(&cfg.out)?;
    out.write_csv(
        &format!("{task}_sweep_{axis}.csv"),
        &["method", "fraction", "threshold", "n_train", "n_test", "train_mse", "test_mse", "status", "note"],
        reports.iter().flat_map(|r| {
            r.points.iter().map(|p| {
                let (status, note) = match &p.status {
                    PointStatus::Ok => ("ok", String::new()),
                    PointStatus::Skipped { reason } => ("skipped", reason.clone()),
                    PointStatus::Failed { error } => ("failed", error.clone()),
                };
                vec![
                    r.method.clone(),
                    num(p.fraction),
                    if p.threshold.is_nan() { String::new() } else { num(p.threshold) },
                    p.n_train.to_string(),
                    p.n_test.to_string(),
                    opt(p.train_mse),
                    opt(p.test_mse),
                    status.into(),
                    note,
                ]
            })
        }),
    )?;
    out.write_csv(
        &format!("{task}_sweep_{axis}_aue.csv"),
        &["method", "aue"],
        reports.iter().map(|r| vec![r.method.clone(), opt(r.aue)]),
    )?;
    let mut chart = Chart::new(
        format!("{}: {axis} cutoff sweep", data.target.name),
        "held-out fraction",
        "test MSE",
    );
    for r in &reports {
        chart.push(Series::new(
            r.method.clone(),
            Style::Line,
            r.points.iter().filter_map(|p| Some((p.fraction, p.test_mse?))).collect(),
        ));
    }
    out.write_text(&format!("{task}_sweep_{axis}.svg"), &chart.render())?;
    for r in &reports {
        let ok = r.points.iter().filter(|p| p.status == PointStatus::Ok).count();
        match r.aue {
            Some(a) => println!("{:<8} AUE = {a:.6} ({ok}/{} points)", r.method, r.points.len()),
            None => println!("{:<8} AUE unavailable ({ok}/{} points)", r.method, r.points.len()),
        }
    }
    finish(&out);
    Ok(())
}

/// Imputes (when needed) and projects every model onto `k` components.
fn full_scores(cfg: &RunConfig, models: &[ModelRecord], bundle: Bundle) -> Result<(CompleteTable, CapabilityScores)> {
    let table = inputs::benchmarks(cfg, models, bundle)?;
    let complete = if table.is_complete() {
        table.to_complete()
    } else {
        fit_imputer(&table, &cfg.impute).and_then(|imp| imp.apply(&table))
    }
    .map_err(|e| e.in_stage("impute"))?;
    let space = fit_capability_space(&complete, cfg.k).map_err(|e| e.in_stage("pca"))?;
    let scores = space.score(&complete).map_err(|e| e.in_stage("pca"))?;
    Ok((complete, scores))
}

#[derive(Args, Debug, Clone)]
pub struct SubsetArgs {
    /// Maximum number of models in the selection.
    #[arg(long)]
    pub budget: usize,
    /// Families that must be included; defaults to the reference family.
    #[arg(long, value_delimiter = ',')]
    pub mandatory: Option<Vec<String>>,
    /// Only models with at most this many billion parameters are selectable.
    #[arg(long)]
    pub max_params: Option<f64>,
    /// Seeded random family combinations to report alongside the optimum.
    #[arg(long, default_value_t = 0)]
    pub random_trials: usize,
}

pub fn select_subset(cfg: &RunConfig, args: &SubsetArgs) -> Result<()> {
    let models = inputs::models(cfg, Bundle::Base)?;
    let (_, scores) = full_scores(cfg, &models, Bundle::Base)?;
    let spec = SubsetSpec {
        budget: args.budget,
        mandatory_families: args.mandatory.clone().unwrap_or_else(|| vec![cfg.reference_family.clone()]),
        candidate_families: Vec::new(),
        max_params: args.max_params.map(|b| b * 1e9),
    };
    let (best, combos) =
        select_recording(&scores, &models, &spec, cfg.exec, true).map_err(|e| e.in_stage("select"))?;
    let mut out = OutDir::create(&cfg.out)?;
    out.write_csv(
        "subset_combinations.csv",
        &["families", "n_models", "objective"],
        combos
            .iter()
            .map(|c| vec![c.families.join(";"), c.n_models.to_string(), num(c.objective)]),
    )?;
    let by_id = family_of(&models);
    out.write_csv(
        "subset_selection.csv",
        &["family", "model_id"],
        best.chosen_model_ids
            .iter()
            .map(|id| vec![by_id[id.as_str()].family.clone(), id.clone()]),
    )?;
    println!("families: {}", best.chosen_families.join(", "));
    println!("models ({}): {}", best.chosen_model_ids.len(), best.chosen_model_ids.join(", "));
    println!("objective: {} ({} combinations within budget)", best.objective, best.evaluated);
    if args.random_trials > 0 {
        let draws = random_baseline(&scores, &models, &spec, cfg.seed, args.random_trials)
            .map_err(|e| e.in_stage("select"))?;
        out.write_csv(
            "subset_random.csv",
            &["trial", "families", "n_models", "objective"],
            draws.iter().enumerate().map(|(i, d)| {
                vec![
                    i.to_string(),
                    d.chosen_families.join(";"),
                    d.chosen_model_ids.len().to_string(),
                    num(d.objective),
                ]
            }),
        )?;
        let worse = draws.iter().filter(|d| d.objective >= best.objective).count();
        println!("random draws with objective at or above the optimum: {worse}/{}", draws.len());
    }
    finish(&out);
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct PreregArgs {
    /// JSON forms (a list, or a single fitted-law document); bundled forms if absent.
    #[arg(long)]
    pub forms: Option<PathBuf>,
    /// Observed downstream values (model_id,value[,floor]).
    #[arg(long)]
    pub observed: Option<PathBuf>,
    /// Use the bundled base-model tables instead of the instruction-tuned ones.
    #[arg(long)]
    pub base: bool,
    /// Extra metric columns (same layout as a benchmarks CSV) merged in by model id,
    /// for metrics such as GSM8K that the main table lacks.
    #[arg(long)]
    pub extra: Option<PathBuf>,
}

pub fn prereg_eval(cfg: &RunConfig, args: &PreregArgs) -> Result<()> {
    let forms = match &args.forms {
        Some(p) => load_forms(p).map_err(|e| e.in_stage("load"))?,
        None => bundled_forms(),
    };
    let bundle = if args.base { Bundle::Base } else { Bundle::Instruct };
    let models = inputs::models(cfg, bundle)?;
    let mut table = inputs::benchmarks(cfg, &models, bundle)?;
    if let Some(p) = &args.extra {
        table = inputs::merge_columns(&table, &inputs::load_extra(p, &models)?).map_err(|e| e.in_stage("load"))?;
    }
    let observed = match args.observed.as_ref().or(cfg.targets.as_ref()) {
        Some(p) => Some(inputs::target(p, &models)?),
        None => None,
    };
    let rows = prereg_report(&forms, &table, observed.as_ref());
    let mut out = OutDir::create(&cfg.out)?;
    out.write_csv(
        "prereg.csv",
        &["task", "model_id", "predicted", "observed", "abs_error", "sq_error", "note"],
        rows.iter().map(|r| {
            vec![
                r.task.clone(),
                r.model_id.clone(),
                opt(r.predicted),
                opt(r.observed),
                opt(r.abs_error),
                opt(r.sq_error),
                r.note.clone().unwrap_or_default(),
            ]
        }),
    )?;
    for f in &forms {
        let done = rows.iter().filter(|r| r.task == f.task && r.predicted.is_some()).count();
        let total = rows.iter().filter(|r| r.task == f.task).count();
        println!("{:<28} {done}/{total} models evaluated", f.task);
    }
    finish(&out);
    Ok(())
}

pub fn pca_report(cfg: &RunConfig) -> Result<()> {
    let models = inputs::models(cfg, Bundle::Base)?;
    let (complete, scores) = full_scores(cfg, &models, Bundle::Base)?;
    let all = complete.metric_names().len().min(complete.n_models());
    let space = fit_capability_space(&complete, all).map_err(|e| e.in_stage("pca"))?;
    let linearity = per_family_linearity(&scores, &models, 0).map_err(|e| e.in_stage("pca"))?;

    let mut out = OutDir::create(&cfg.out)?;
    let mut header = vec!["component"];
    header.extend(space.metric_names.iter().map(String::as_str));
    out.write_csv(
        "pca_loadings.csv",
        &header,
        space.loadings.iter().enumerate().map(|(i, row)| {
            let mut r = vec![format!("PC-{}", i + 1)];
            r.extend(row.iter().map(|v| num(*v)));
            r
        }),
    )?;
    let cumulative = space.cumulative_variance_curve();
    out.write_csv(
        "pca_variance.csv",
        &["component", "explained_variance_ratio", "cumulative"],
        space
            .explained_variance_ratio
            .iter()
            .zip(&cumulative)
            .enumerate()
            .map(|(i, (v, c))| vec![format!("PC-{}", i + 1), num(*v), num(*c)]),
    )?;
    out.write_csv(
        "pca_linearity.csv",
        &["family", "n_models", "slope", "intercept", "r2"],
        linearity.fits.iter().map(|f| {
            vec![
                f.family.clone(),
                f.n_models.to_string(),
                num(f.fit.slope),
                num(f.fit.intercept),
                num(f.fit.r2),
            ]
        }),
    )?;
    let mut chart = Chart::new("Explained variance", "principal component", "variance ratio");
    chart.push(Series::new(
        "per component",
        Style::Line,
        space.explained_variance_ratio.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)).collect(),
    ));
    chart.push(Series::new(
        "cumulative",
        Style::Line,
        cumulative.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)).collect(),
    ));
    out.write_text("pca_variance.svg", &chart.render())?;

    println!("{} models × {} metrics", complete.n_models(), complete.metric_names().len());
    for (i, (v, c)) in space.explained_variance_ratio.iter().zip(&cumulative).enumerate() {
        println!("PC-{}: {:.4} (cumulative {:.4})", i + 1, v, c);
    }
    for f in &linearity.fits {
        println!("{:<14} n={:<2} R² = {:.4}", f.family, f.n_models, f.fit.r2);
    }
    finish(&out);
    Ok(())
}
