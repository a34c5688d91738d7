use obscaling::dataset::{bundled, families, BenchmarkTable, Dataset, TargetMetric};
use obscaling::par::Execution;
use obscaling::scalinglaw::{fit_compute_baseline, phi, sigmoid, LawDocument, ScaleMeasure};
use obscaling::validation::{
    cutoff_sweep, default_fractions, evaluate, fit_observational_pipeline, split, Compute, Fitted, Observational,
    ScalingMethod, Side, SplitSpec, SweepKind, UnknownFlops,
};
use obscaling::Result;

/// Bundled base models with a target driven by MMLU and HellaSwag.
fn bundled_task() -> Dataset {
    let models = bundled::base_models();
    let bench = bundled::base_benchmarks();
    let col = |name: &str| bench.metric_names().iter().position(|m| m == name).unwrap();
    let (mmlu, hs) = (col("MMLU"), col("HellaSwag"));
    let values = bench.model_ids().iter().enumerate().map(|(i, id)| {
        let x = 10.0 * (bench.get(i, mmlu).unwrap() - 0.55) + 4.0 * (bench.get(i, hs).unwrap() - 0.75);
        (id.clone(), sigmoid(x))
    });
    let target = TargetMetric::from_values("task", values).unwrap();
    Dataset::new(models, bench, target).unwrap()
}

#[test]
fn bundled_tables_shape() {
    let models = bundled::base_models();
    assert_eq!(models.len(), 77);
    assert_eq!(families(&models).len(), 21);
    let l13 = models.iter().find(|m| m.model_id == "Llama-2-13b-hf").unwrap();
    assert!((l13.flops.unwrap() - 1.56e23).abs() < 1e9);
    let b = bundled::base_benchmarks();
    assert_eq!((b.n_models(), b.n_metrics()), (77, 7));
    assert_eq!(b.missing_count(), 6);
}

#[test]
fn bundled_csv_round_trip() {
    let b = bundled::base_benchmarks();
    let mut buf = Vec::new();
    b.write_csv(&mut buf).unwrap();
    let again = obscaling::dataset::parse_benchmarks(
        std::str::from_utf8(&buf).unwrap(),
        "round trip",
        &bundled::base_models(),
        &Default::default(),
    )
    .unwrap();
    assert_eq!(again, b);
}

#[test]
fn test_benchmarks_do_not_leak_into_the_fit() {
    let data = bundled_task();
    let sp = split(&data.models, &data.target, &SplitSpec::flops_cutoff(8.4e22)).unwrap();
    // overwrite every held-out benchmark cell with junk
    let rows = (0..data.benchmarks.n_models())
        .map(|i| {
            let held_out = sp.test.contains(&data.benchmarks.model_ids()[i]);
            data.benchmarks
                .row(i)
                .iter()
                .enumerate()
                .map(|(j, v)| if held_out { Some(((i * 7 + j * 3) % 10) as f64 / 10.0) } else { *v })
                .collect()
        })
        .collect();
    let junk = Dataset {
        benchmarks: BenchmarkTable::new(
            data.benchmarks.model_ids().to_vec(),
            data.benchmarks.metric_names().to_vec(),
            rows,
        )
        .unwrap(),
        ..data.clone()
    };
    let method = Observational::default();
    let a = evaluate(&method, &data, &sp).unwrap();
    let b = evaluate(&method, &junk, &sp).unwrap();
    assert_eq!(a.train_mse, b.train_mse);
    let train = |r: &obscaling::validation::HoldoutReport| -> Vec<f64> {
        r.residuals.iter().filter(|x| x.side == Side::Train).map(|x| x.predicted).collect()
    };
    assert_eq!(train(&a), train(&b));
    assert_ne!(a.test_mse, b.test_mse);
}

struct Constant(f64);

impl Fitted for Constant {
    fn predict(&self, _: &Dataset, ids: &[String]) -> Result<Vec<Option<f64>>> {
        Ok(vec![Some(self.0); ids.len()])
    }
}

impl ScalingMethod for Constant {
    fn name(&self) -> String {
        "constant".into()
    }

    fn fit(&self, _: &Dataset) -> Result<Box<dyn Fitted>> {
        Ok(Box::new(Constant(self.0)))
    }
}

#[test]
fn constant_predictor_scores_the_test_variance() {
    let data = bundled_task();
    let sp = split(&data.models, &data.target, &SplitSpec::flops_cutoff(8.4e22)).unwrap();
    let ys: Vec<f64> = sp.test.iter().filter_map(|id| data.target.normalized(id)).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
    let r = evaluate(&Constant(mean), &data, &sp).unwrap();
    assert!((r.test_mse - var).abs() < 1e-12, "{} vs {var}", r.test_mse);
}

#[test]
fn flops_baseline_recovers_its_generator() {
    let models = bundled::base_models();
    let values = models
        .iter()
        .filter_map(|m| Some((m.model_id.clone(), phi(1.3 * m.log10_flops()? - 29.5, 1.0))));
    let target = TargetMetric::from_values("t", values).unwrap();
    let law = fit_compute_baseline(&models, &target, ScaleMeasure::Flops).unwrap();
    assert!((law.slope - 1.3).abs() < 1e-8 && (law.intercept + 29.5).abs() < 1e-6, "{law:?}");
    assert_eq!(law.h, 1.0);
    assert_eq!(law.excluded.len(), 0);

    // the holdout wrapper gives the same law as the direct fit
    let data = Dataset::new(models.clone(), bundled::base_benchmarks(), target).unwrap();
    let sp = split(&data.models, &data.target, &SplitSpec::flops_cutoff(8.4e22)).unwrap();
    let r = evaluate(&Compute(ScaleMeasure::Flops), &data, &sp).unwrap();
    assert!(r.test_mse < 1e-12);
}

#[test]
fn law_document_round_trips_exactly() {
    let data = bundled_task();
    let fitted = fit_observational_pipeline(&data, 3, &Default::default()).unwrap();
    let doc = LawDocument::new(&fitted.law, None, fitted.imputer.as_ref(), data.fingerprint().unwrap());
    let back = LawDocument::from_json(&doc.to_json().unwrap()).unwrap();
    assert_eq!(back, doc);
    assert_eq!(back.law().beta, fitted.law.beta);
}

#[test]
fn observational_beats_flops_on_bundled_holdout() {
    let data = bundled_task();
    let sp = split(&data.models, &data.target, &SplitSpec::flops_cutoff(8.4e22)).unwrap();
    let pc = evaluate(&Observational::default(), &data, &sp).unwrap();
    let fl = evaluate(&Compute(ScaleMeasure::Flops), &data, &sp).unwrap();
    assert!(pc.test_mse < fl.test_mse, "{} vs {}", pc.test_mse, fl.test_mse);
}

#[test]
fn bundled_sweep_is_mode_independent() {
    let data = bundled_task();
    let fr = default_fractions(8);
    let method = Observational::default();
    let par = cutoff_sweep(&method, &data, SweepKind::Flops, &fr, UnknownFlops::Test, Execution::Parallel).unwrap();
    let seq = cutoff_sweep(&method, &data, SweepKind::Flops, &fr, UnknownFlops::Test, Execution::Sequential).unwrap();
    assert_eq!(par, seq);
    assert!(par.aue.unwrap() >= 0.0);
    assert_eq!(par.points.len(), 8);
}
