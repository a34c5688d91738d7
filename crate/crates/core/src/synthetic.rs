//! Seeded multi-family data with a known generating law.
//!
//! Each family converts compute into capabilities along its own line,
//! `S = θ_f · c + ν_f` with `c` the centered and scaled log₁₀ FLOPs, so
//! families differ in compute efficiency. Benchmarks are an affine map of the
//! capabilities plus optional noise, and the target is `φ(βᵀS + α + ε, h)`
//! with optional Gaussian `ε`. Target noise lives on the logit scale, where
//! the laws are fitted, so near-floor and near-ceiling models do not get
//! clipped to exactly 0 or 1.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::capability::CapabilityScores;
use crate::dataset::{BenchmarkTable, Dataset, ModelRecord, TargetEntry, TargetMetric, DEFAULT_REFERENCE_FAMILY};
use crate::error::{Error, Result};
use crate::scalinglaw::phi;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_families: usize,
    /// Inclusive range of models per family.
    pub models_per_family: (usize, usize),
    /// Latent capability dimensions.
    pub k: usize,
    pub n_metrics: usize,
    /// Range of log₁₀ training FLOPs.
    pub log10_flops: (f64, f64),
    /// Widest log₁₀ FLOPs span within one family.
    pub family_span: f64,
    /// Standard deviation of per-family capability offsets.
    pub efficiency_spread: f64,
    pub benchmark_noise: f64,
    /// Standard deviation of the logit-scale target noise.
    pub target_noise: f64,
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub h: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_families: 12,
            models_per_family: (2, 6),
            k: 3,
            n_metrics: 7,
            log10_flops: (20.0, 25.0),
            family_span: 2.5,
            efficiency_spread: 0.5,
            benchmark_noise: 0.0,
            target_noise: 0.0,
            beta: vec![1.2, 0.6, -0.4],
            alpha: -0.5,
            h: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Generating capabilities, one row per model.
    pub scores: CapabilityScores,
    /// Benchmark loadings, `n_metrics × k`.
    pub gamma: DMatrix<f64>,
    pub offsets: Vec<f64>,
    /// Benchmark cells clipped into `[0, 1]`; zero means the map is exactly affine.
    pub clipped_cells: usize,
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite nonnegative standard deviation")
}

/// The first family is named after the default reference family and is
/// centered on the FLOPs range.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    let (lo_n, hi_n) = cfg.models_per_family;
    if cfg.n_families == 0 || lo_n == 0 || lo_n > hi_n {
        return Err(Error::Config("invalid family sizes".into()));
    }
    if cfg.k == 0 || cfg.beta.len() != cfg.k || cfg.n_metrics < cfg.k {
        return Err(Error::Config(format!(
            "need k ≥ 1, beta of length k and at least k metrics (k = {}, beta = {}, metrics = {})",
            cfg.k,
            cfg.beta.len(),
            cfg.n_metrics
        )));
    }
    let (lc_lo, lc_hi) = cfg.log10_flops;
    if !(lc_hi > lc_lo) || !(cfg.family_span > 0.0) {
        return Err(Error::Config("invalid FLOPs range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.k;
    let mid = (lc_lo + lc_hi) / 2.0;
    let half = (lc_hi - lc_lo) / 2.0;
    let span = cfg.family_span.min(lc_hi - lc_lo);

    let mut models = Vec::new();
    let mut latent: Vec<Vec<f64>> = Vec::new();
    for f in 0..cfg.n_families {
        let family = if f == 0 {
            DEFAULT_REFERENCE_FAMILY.to_string()
        } else {
            format!("family-{f:02}")
        };
        let theta: Vec<f64> = (0..k)
            .map(|d| if d == 0 { rng.random_range(0.6..1.4) } else { normal(0.3).sample(&mut rng) })
            .collect();
        let nu: Vec<f64> = (0..k).map(|_| normal(cfg.efficiency_spread).sample(&mut rng)).collect();
        let tokens_per_param: f64 = rng.random_range(10.0..200.0);
        let n = rng.random_range(lo_n..=hi_n);
        let start = rng.random_range(lc_lo..=lc_hi - span);
        let mut lcs: Vec<f64> = (0..n).map(|_| start + rng.random_range(0.0..span)).collect();
        if f == 0 {
            // the reference family evenly straddles the middle of the range
            lcs = (0..n)
                .map(|i| mid - span / 2.0 + span * i as f64 / (n - 1).max(1) as f64)
                .collect();
        }
        lcs.sort_by(f64::total_cmp);
        for (i, lc) in lcs.into_iter().enumerate() {
            let c = 1.5 * (lc - mid) / half;
            latent.push((0..k).map(|d| theta[d] * c + nu[d]).collect());
            let flops = 10f64.powf(lc);
            let params = (flops / (6.0 * tokens_per_param)).sqrt();
            models.push(ModelRecord::new(
                format!("{family}-{i}"),
                family.clone(),
                Some(params),
                Some(params * tokens_per_param),
                Some(flops),
            )?);
        }
    }

    let m = models.len();
    let t = cfg.n_metrics;
    let gamma = DMatrix::from_fn(t, k, |_, d| {
        if d == 0 {
            rng.random_range(0.05..0.09)
        } else {
            normal(0.03).sample(&mut rng)
        }
    });
    let offsets: Vec<f64> = (0..t).map(|_| rng.random_range(0.4..0.6)).collect();
    let bench_noise = normal(cfg.benchmark_noise);
    let mut clipped_cells = 0;
    let mut rows = Vec::with_capacity(m);
    for s in &latent {
        let row = (0..t)
            .map(|j| {
                let mut v = offsets[j] + (0..k).map(|d| gamma[(j, d)] * s[d]).sum::<f64>();
                if cfg.benchmark_noise > 0.0 {
                    v += bench_noise.sample(&mut rng);
                }
                if !(0.0..=1.0).contains(&v) {
                    clipped_cells += 1;
                    v = v.clamp(0.0, 1.0);
                }
                Some(v)
            })
            .collect();
        rows.push(row);
    }
    let ids: Vec<String> = models.iter().map(|r| r.model_id.clone()).collect();
    let metric_names: Vec<String> = (0..t).map(|j| format!("bench-{j}")).collect();
    let benchmarks = BenchmarkTable::new(ids.clone(), metric_names, rows)?;

    let target_noise = normal(cfg.target_noise);
    let entries = latent
        .iter()
        .zip(&ids)
        .map(|(s, id)| {
            let mut x = cfg.alpha + s.iter().zip(&cfg.beta).map(|(a, b)| a * b).sum::<f64>();
            if cfg.target_noise > 0.0 {
                x += target_noise.sample(&mut rng);
            }
            let y = phi(x, cfg.h);
            TargetEntry {
                model_id: id.clone(),
                value: Some(y),
                floor: 0.0,
            }
        })
        .collect();
    let target = TargetMetric::new("synthetic", entries)?;

    Ok(SyntheticData {
        scores: CapabilityScores {
            model_ids: ids,
            scores: DMatrix::from_fn(m, k, |i, d| latent[i][d]),
        },
        dataset: Dataset::new(models, benchmarks, target)?,
        gamma,
        offsets,
        clipped_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = SyntheticConfig {
            seed: 9,
            benchmark_noise: 0.01,
            target_noise: 0.02,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.dataset.benchmarks, b.dataset.benchmarks);
        assert_eq!(a.dataset.target, b.dataset.target);
        let c = generate(&SyntheticConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.dataset.benchmarks, c.dataset.benchmarks);
    }

    #[test]
    fn noiseless_default_is_unclipped() {
        for seed in 0..20 {
            let d = generate(&SyntheticConfig { seed, ..Default::default() }).unwrap();
            assert_eq!(d.clipped_cells, 0, "seed {seed}");
            assert_eq!(d.dataset.models[0].family, DEFAULT_REFERENCE_FAMILY);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SyntheticConfig { beta: vec![1.0], ..Default::default() }).is_err());
        assert!(generate(&SyntheticConfig { models_per_family: (3, 2), ..Default::default() }).is_err());
    }
}
