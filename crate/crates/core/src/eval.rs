//! Test-set metrics: accuracies, per-sample achieved SE and its CDF,
//! zero-SE rate, wall-clock benchmarks, and the report files.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocators::{erp, random_feasible};
use crate::dataset::LabeledSample;
use crate::rate::{evaluate, Allocation};
use crate::scalar::Scalar;
use crate::scenario::{stream_rng, ScenarioConfig};

/// Reference allocation source evaluated next to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// The exhaustive labels carried by the dataset.
    Optimal,
    /// Equally-reduced-power.
    Erp,
    /// Uniform feasible draws.
    Random,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Optimal => "optimal",
            Baseline::Erp => "erp",
            Baseline::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Baseline::Optimal, Baseline::Erp, Baseline::Random]
            .into_iter()
            .find(|b| b.name() == s)
    }
}

/// Allocations a baseline produces for every sample. ERP falls back to
/// all-off on the (label-filtered, so never expected) inadmissible sample.
pub fn baseline_allocations<F: Scalar>(
    baseline: Baseline,
    samples: &[LabeledSample<F>],
    config: &ScenarioConfig<F>,
    seed: u64,
) -> Vec<Allocation> {
    match baseline {
        Baseline::Optimal => samples.iter().map(|s| s.allocation()).collect(),
        Baseline::Erp => samples
            .par_iter()
            .map(|s| erp(&s.csi, config).unwrap_or_else(|_| Allocation::all_off(config.n_pairs)))
            .collect(),
        Baseline::Random => samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = stream_rng(seed, i as u64);
                random_feasible(&s.csi, config, &mut rng)
            })
            .collect(),
    }
}

/// Per-sample average D2D SE achieved by the given allocations. A sample
/// scores exactly 0 when its allocation violates the CUE constraint
/// (admission denied); an all-off decode also lands on 0.
pub fn se_outcomes<F: Scalar>(
    allocations: &[Allocation],
    samples: &[LabeledSample<F>],
    config: &ScenarioConfig<F>,
) -> Vec<f64> {
    assert_eq!(allocations.len(), samples.len());
    allocations
        .par_iter()
        .zip(samples.par_iter())
        .map(|(alloc, sample)| {
            let report = evaluate(&sample.csi, alloc, config);
            if !report.feasible {
                return 0.0;
            }
            let sum: f64 = report.se_due.iter().map(|v| v.to_f64_lossy()).sum();
            sum / report.se_due.len() as f64
        })
        .collect()
}

/// Sorted (value, cumulative fraction) pairs; the last fraction is 1.
pub fn cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n as f64))
        .collect()
}

/// Fraction of exact zeros.
pub fn zero_rate(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v == 0.0).count() as f64 / values.len() as f64
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Wall-clock seconds of `run`: one warmup call, then the median of three
/// timed calls.
pub fn bench_seconds(mut run: impl FnMut()) -> f64 {
    run();
    let mut times: Vec<f64> = (0..3)
        .map(|_| {
            let t = Instant::now();
            run();
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[1]
}

// ---------------------------------------------------------------------------
// report schema
// ---------------------------------------------------------------------------

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One evaluated allocator (the model or a baseline).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocatorMetrics {
    pub channel_accuracy: f64,
    pub power_accuracy: f64,
    pub mean_se: f64,
    pub zero_se_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub kind: String,
    pub parameters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bs_side_parameters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_side_parameters: Option<usize>,
    #[serde(flatten)]
    pub metrics: AllocatorMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSection {
    pub what: String,
    pub samples: usize,
    pub seconds: f64,
    pub os: String,
    pub arch: String,
    pub workers: usize,
}

/// Machine-readable evaluation report. CDF point lists are emitted as
/// separate two-column text files named here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: ScenarioConfig<f64>,
    pub dataset_seed: u64,
    pub n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<(String, AllocatorMetrics)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cdf_files: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bench: Vec<BenchSection>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Fixed-width text table of every allocator section.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>10} {:>10} {:>10} {:>10}\n",
            "allocator", "chan acc", "power acc", "mean SE", "zero rate"
        ));
        let mut row = |name: &str, m: &AllocatorMetrics| {
            out.push_str(&format!(
                "{:<16} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
                name, m.channel_accuracy, m.power_accuracy, m.mean_se, m.zero_se_rate
            ));
        };
        if let Some(model) = &self.model {
            row(&model.kind, &model.metrics);
        }
        for (name, metrics) in &self.baselines {
            row(name, metrics);
        }
        for bench in &self.bench {
            out.push_str(&format!(
                "bench {:<18} {:>8} samples {:>12.4} s ({} workers)\n",
                bench.what, bench.samples, bench.seconds, bench.workers
            ));
        }
        out
    }
}

/// Two-column text rendering of a CDF point list.
pub fn cdf_to_text(points: &[(f64, f64)]) -> String {
    let mut out = String::with_capacity(points.len() * 32);
    for (v, p) in points {
        out.push_str(&format!("{v:.12e} {p:.8}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, Split};

    #[test]
    fn cdf_properties() {
        let values = vec![3.0, 1.0, 2.0, 1.0];
        let points = cdf(&values);
        assert_eq!(points.len(), 4);
        assert_eq!(points.last().unwrap().1, 1.0);
        for w in points.windows(2) {
            assert!(w[0].0 <= w[1].0);
            assert!(w[0].1 < w[1].1);
        }
        let text = cdf_to_text(&points);
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn zero_rate_counts_exact_zeros() {
        assert_eq!(zero_rate(&[0.0, 1.0, 0.0, 2.0]), 0.5);
        assert_eq!(zero_rate(&[1e-300]), 0.0);
        assert_eq!(zero_rate(&[]), 0.0);
    }

    #[test]
    fn optimal_baseline_dominates_and_is_feasible() {
        let mut cfg = ScenarioConfig::<f64>::default();
        cfg.power_levels_w = vec![0.0, 0.1, 0.2];
        let ds = build_dataset(&cfg, 25, 3, Split::Test, None).unwrap();
        let optimal = baseline_allocations(Baseline::Optimal, &ds.samples, &cfg, 0);
        let opt_se = se_outcomes(&optimal, &ds.samples, &cfg);
        // labels are feasible, so no zero from admission denial (an all-off
        // optimum would still be a legitimate 0)
        for (outcome, sample) in opt_se.iter().zip(&ds.samples) {
            let expect = sample.optimal_sum_se / (2 * cfg.n_pairs) as f64;
            assert!((outcome - expect).abs() < 1e-9);
        }
        for baseline in [Baseline::Erp, Baseline::Random] {
            let allocs = baseline_allocations(baseline, &ds.samples, &cfg, 7);
            let se = se_outcomes(&allocs, &ds.samples, &cfg);
            for (b, o) in se.iter().zip(&opt_se) {
                assert!(*b <= o + 1e-9, "{} beat the optimum", baseline.name());
            }
        }
    }

    #[test]
    fn infeasible_allocation_scores_zero() {
        let mut cfg = ScenarioConfig::<f64>::default();
        cfg.power_levels_w = vec![0.0, 0.1, 0.2];
        let ds = build_dataset(&cfg, 40, 11, Split::Test, None).unwrap();
        // max power on a shared channel is frequently infeasible; find one
        let greedy = Allocation {
            channel: vec![0, 0],
            power_level: vec![2; 4],
        };
        let allocs = vec![greedy; ds.samples.len()];
        let se = se_outcomes(&allocs, &ds.samples, &cfg);
        for (outcome, sample) in se.iter().zip(&ds.samples) {
            let report = evaluate(&sample.csi, &allocs[0], &cfg);
            if report.feasible {
                assert!(*outcome > 0.0);
            } else {
                assert_eq!(*outcome, 0.0);
            }
        }
        // all-off scores exactly zero everywhere
        let off = vec![Allocation::all_off(2); ds.samples.len()];
        let se = se_outcomes(&off, &ds.samples, &cfg);
        assert!(se.iter().all(|&v| v == 0.0));
        assert_eq!(zero_rate(&se), 1.0);
    }

    #[test]
    fn uniform_random_decoding_accuracy_baseline() {
        // chance level against the labels: 1/K per pair, 1/L per user
        use crate::models::train::{accuracy_of, PreparedData};
        use crate::scenario::stream_rng;
        use rand::Rng;
        let cfg = ScenarioConfig::<f64>::default();
        let ds = build_dataset(&cfg, 2000, 21, Split::Test, None).unwrap();
        let stats = crate::dataset::compute_stats(&ds.samples);
        let data = PreparedData::from_samples(&ds.samples, &stats, cfg.n_channels, cfg.n_levels());
        let mut rng = stream_rng(23, 0);
        let allocs: Vec<Allocation> = (0..ds.samples.len())
            .map(|_| Allocation {
                channel: (0..2).map(|_| rng.gen_range(0..2)).collect(),
                power_level: (0..4).map(|_| rng.gen_range(0..8)).collect(),
            })
            .collect();
        let (ch, pw) = accuracy_of(&allocs, &data);
        assert!((ch - 0.5).abs() < 0.02, "channel accuracy {ch}");
        assert!((pw - 0.125).abs() < 0.02, "power accuracy {pw}");
    }

    #[test]
    fn bench_returns_positive_median() {
        let mut counter = 0u64;
        let secs = bench_seconds(|| {
            for i in 0..100_000u64 {
                counter = counter.wrapping_add(i);
            }
        });
        assert!(secs >= 0.0);
        assert!(counter > 0);
    }

    #[test]
    fn report_round_trip() {
        let report = Report {
            schema_version: REPORT_SCHEMA_VERSION,
            config: ScenarioConfig::default(),
            dataset_seed: 5,
            n_samples: 100,
            model: Some(ModelSection {
                kind: "sp-conv-att".into(),
                parameters: 1234,
                bs_side_parameters: None,
                user_side_parameters: None,
                metrics: AllocatorMetrics {
                    channel_accuracy: 0.9,
                    power_accuracy: 0.6,
                    mean_se: 4.2,
                    zero_se_rate: 0.05,
                },
            }),
            baselines: vec![(
                "erp".into(),
                AllocatorMetrics {
                    channel_accuracy: 0.5,
                    power_accuracy: 0.2,
                    mean_se: 2.0,
                    zero_se_rate: 0.2,
                },
            )],
            cdf_files: vec![("sp-conv-att".into(), "cdf_sp.txt".into())],
            bench: vec![],
        };
        let json = report.to_json();
        let back = Report::from_json(&json).unwrap();
        assert_eq!(back.schema_version, report.schema_version);
        assert_eq!(back.model.as_ref().unwrap().parameters, 1234);
        assert_eq!(back.baselines.len(), 1);
        let table = report.render_table();
        assert!(table.contains("sp-conv-att"));
        assert!(table.contains("erp"));
    }
}
