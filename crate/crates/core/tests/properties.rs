use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;

use obscaling::dataset::ModelRecord;
use obscaling::par::Execution;
use obscaling::scalinglaw::{phi, phi_inv};
use obscaling::subset::{select, v_objective, SubsetSpec};
use obscaling::synthetic::{generate, SyntheticConfig};
use obscaling::validation::{area_under_error_curve, fraction_threshold, split, SplitSpec};

proptest! {
    #[test]
    fn phi_inverts_inside_the_band(h in 0.8f64..=1.0, z in 1e-3f64..0.999) {
        let y = (1.0 - h) + h * z;
        let back = phi(phi_inv(y, h).unwrap(), h);
        prop_assert!((back - y).abs() < 1e-12, "y {y} h {h} back {back}");
    }

    #[test]
    fn more_rows_never_raise_the_objective(
        vals in prop::collection::vec(-2.0f64..2.0, 20),
        pick in prop::collection::btree_set(0usize..10, 3..9),
        extra in 0usize..10,
    ) {
        let s = DMatrix::from_row_slice(10, 2, &vals);
        let members: Vec<usize> = pick.iter().copied().collect();
        let before = v_objective(&s, &members);
        prop_assume!(before.is_finite());
        let mut more = members.clone();
        more.push(extra);
        let after = v_objective(&s, &more);
        prop_assert!(after <= before * (1.0 + 1e-9), "{after} > {before}");
        prop_assert!(after >= 2.0 - 1e-9);
    }

    #[test]
    fn flops_split_is_a_partition(seed in 0u64..200, cut in 20.0f64..25.0) {
        let d = generate(&SyntheticConfig { seed, ..Default::default() }).unwrap().dataset;
        let Ok(sp) = split(&d.models, &d.target, &SplitSpec::flops_cutoff(10f64.powf(cut))) else {
            return Ok(());
        };
        prop_assert_eq!(sp.train.len() + sp.test.len(), d.models.len());
        let mut all: Vec<&String> = sp.train.iter().chain(&sp.test).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), d.models.len());
        for id in &sp.train {
            prop_assert!(d.model(id).unwrap().flops.unwrap() <= 10f64.powf(cut));
        }
    }

    #[test]
    fn fraction_threshold_holds_out_the_rounded_count(
        vals in prop::collection::btree_set(0u32..100_000, 5..60),
        f in 0.05f64..0.6,
    ) {
        let values: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
        let n = values.len();
        let want = (f * n as f64).round() as usize;
        prop_assume!(want >= 1 && want < n);
        let t = fraction_threshold(&values, f).unwrap();
        prop_assert_eq!(values.iter().filter(|&&v| v > t).count(), want);
    }

    #[test]
    fn aue_is_nonnegative(mses in prop::collection::vec(0.0f64..1.0, 2..12)) {
        let n = mses.len();
        let pts: Vec<(f64, f64)> = mses.iter().enumerate().map(|(i, m)| (0.05 + 0.5 * i as f64 / (n - 1) as f64, *m)).collect();
        let a = area_under_error_curve(&pts);
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a == 0.0, mses.iter().all(|&m| m == 0.0));
    }
}

/// Plain enumeration over family subsets, independent of the bitmask search.
fn brute_force(scores: &obscaling::capability::CapabilityScores, models: &[ModelRecord], budget: usize) -> (f64, Vec<String>) {
    let mut fams: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for m in models {
        fams.entry(m.family.as_str()).or_default().push(scores.row_of(&m.model_id).unwrap());
    }
    let names: Vec<&str> = fams.keys().copied().collect();
    let mut best: Option<(f64, Vec<String>)> = None;
    for mask in 0u32..(1 << names.len()) {
        let chosen: Vec<&str> = (0..names.len()).filter(|b| mask >> b & 1 == 1).map(|b| names[b]).collect();
        if !chosen.contains(&"Llama-2") {
            continue;
        }
        let rows: Vec<usize> = chosen.iter().flat_map(|f| fams[f].iter().copied()).collect();
        if rows.len() > budget {
            continue;
        }
        let obj = v_objective(&scores.scores, &rows);
        let cand = (obj, chosen.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        best = match best {
            Some(b) if b.0 < cand.0 || (b.0 == cand.0 && b.1 <= cand.1) => Some(b),
            _ => Some(cand),
        };
    }
    best.unwrap()
}

#[test]
fn search_matches_brute_force_on_small_pools() {
    for seed in 0..12 {
        let d = generate(&SyntheticConfig {
            n_families: 6,
            models_per_family: (2, 4),
            seed,
            ..Default::default()
        })
        .unwrap();
        let budget = 10;
        let got = select(&d.scores, &d.dataset.models, &SubsetSpec::new(budget), Execution::Sequential).unwrap();
        let (obj, fams) = brute_force(&d.scores, &d.dataset.models, budget);
        assert!((got.objective - obj).abs() <= 1e-9 * obj, "seed {seed}: {} vs {obj}", got.objective);
        assert_eq!(got.chosen_families, fams, "seed {seed}");
    }
}

#[test]
fn duplicate_mandatory_families_are_harmless() {
    let d = generate(&SyntheticConfig { seed: 4, ..Default::default() }).unwrap();
    let once = select(&d.scores, &d.dataset.models, &SubsetSpec::new(12), Execution::Parallel).unwrap();
    let twice = SubsetSpec {
        mandatory_families: vec!["Llama-2".into(), "Llama-2".into()],
        ..SubsetSpec::new(12)
    };
    assert_eq!(select(&d.scores, &d.dataset.models, &twice, Execution::Parallel).unwrap(), once);
}
