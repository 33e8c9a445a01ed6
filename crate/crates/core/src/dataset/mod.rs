//! Labeled-sample generation, normalization, model-input views, and the
//! dataset file format.

pub mod io;

use rayon::prelude::*;
use thiserror::Error;

use crate::allocators::exhaustive_optimal;
use crate::rate::Allocation;
use crate::scalar::Scalar;
use crate::scenario::{
    build_csi_rng, place_users_rng, stream_rng, ChannelState, ScenarioConfig, RETRY_CAP,
};
use crate::tensor::NdArray;

/// Floor applied to the stored standard deviation when normalizing.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("normalization statistics missing (generate the train split first)")]
    MissingStats,
    #[error("user index {got} out of range 0..{bound}")]
    UserOutOfRange { got: usize, bound: usize },
    #[error("sample generation failed: {0}")]
    Generation(#[from] crate::scenario::ScenarioError),
}

/// Which split a dataset belongs to; folded into the RNG stream so splits
/// are disjoint by construction even under one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Test => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Dev),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// RNG stream id for (split, sample index, rejection attempt).
fn sample_stream(split: Split, index: u64, attempt: u64) -> u64 {
    debug_assert!(index < 1 << 40);
    debug_assert!(attempt < 1 << 16);
    ((split.tag() as u64) << 56) | (index << 16) | attempt
}

/// A channel snapshot plus its exhaustive-optimal allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<F> {
    pub csi: ChannelState<F>,
    /// Optimal channel per pair, 0-based.
    pub label_channel: Vec<u8>,
    /// Optimal power level per user, 0-based (0 is the 0 W level).
    pub label_power: Vec<u8>,
    pub optimal_sum_se: F,
}

impl<F: Scalar> LabeledSample<F> {
    pub fn allocation(&self) -> Allocation {
        Allocation {
            channel: self.label_channel.iter().map(|&c| c as usize).collect(),
            power_level: self.label_power.iter().map(|&l| l as usize).collect(),
        }
    }
}

/// Per-entry mean and standard deviation of the dB-domain gains over a
/// train split; both tensors are [K][2N+1][2N+1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<F> {
    pub mean: NdArray<F>,
    pub std: NdArray<F>,
}

/// A split in memory together with everything its file header records.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    pub config: ScenarioConfig<F>,
    pub split: Split,
    pub seed: u64,
    pub samples: Vec<LabeledSample<F>>,
    /// Present on train splits (computed) and on splits that inherited the
    /// train statistics.
    pub stats: Option<NormStats<F>>,
}

/// Generates and labels the sample at `index` of a split. Inadmissible draws
/// (no feasible allocation at all) are replaced from fresh attempt streams,
/// so the result does not depend on how many workers run or in what order.
pub fn generate_one<F: Scalar>(
    config: &ScenarioConfig<F>,
    seed: u64,
    split: Split,
    index: u64,
) -> Result<LabeledSample<F>, DatasetError> {
    for attempt in 0..RETRY_CAP as u64 {
        let mut rng = stream_rng(seed, sample_stream(split, index, attempt));
        let layout = place_users_rng(config, &mut rng)?;
        let csi = build_csi_rng(&layout, config, &mut rng);
        match exhaustive_optimal(&csi, config) {
            Ok((alloc, sum_se)) => {
                return Ok(LabeledSample {
                    csi,
                    label_channel: alloc.channel.iter().map(|&c| c as u8).collect(),
                    label_power: alloc.power_level.iter().map(|&l| l as u8).collect(),
                    optimal_sum_se: sum_se,
                });
            }
            Err(_) => continue,
        }
    }
    Err(DatasetError::Generation(
        crate::scenario::ScenarioError::RetryCapExceeded("labeling an admissible sample"),
    ))
}

/// Generates `n` labeled samples in parallel (output order is by index, so
/// results are identical to a sequential run).
pub fn generate_and_label<F: Scalar>(
    config: &ScenarioConfig<F>,
    n: usize,
    seed: u64,
    split: Split,
) -> Result<Vec<LabeledSample<F>>, DatasetError> {
    config.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|index| generate_one(config, seed, split, index))
        .collect()
}

/// Builds a dataset for one split; train splits get statistics computed from
/// their own samples, dev/test inherit via `inherited_stats`.
pub fn build_dataset<F: Scalar>(
    config: &ScenarioConfig<F>,
    n: usize,
    seed: u64,
    split: Split,
    inherited_stats: Option<NormStats<F>>,
) -> Result<Dataset<F>, DatasetError> {
    let samples = generate_and_label(config, n, seed, split)?;
    let stats = match split {
        Split::Train => Some(compute_stats(&samples)),
        _ => inherited_stats,
    };
    Ok(Dataset {
        config: config.clone(),
        split,
        seed,
        samples,
        stats,
    })
}

fn db10<F: Scalar>(g: F) -> F {
    F::from_f64(10.0) * g.log10()
}

/// Per-entry mean/std of 10*log10(gain) across samples.
pub fn compute_stats<F: Scalar>(samples: &[LabeledSample<F>]) -> NormStats<F> {
    assert!(!samples.is_empty(), "stats need at least one sample");
    let shape = samples[0].csi.tensor().shape().to_vec();
    let len = samples[0].csi.tensor().len();
    let n = F::from_usize(samples.len());

    let mut mean = vec![F::zero(); len];
    for s in samples {
        for (m, &g) in mean.iter_mut().zip(s.csi.tensor().data()) {
            *m += db10(g);
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }

    let mut var = vec![F::zero(); len];
    for s in samples {
        for ((v, &g), &m) in var.iter_mut().zip(s.csi.tensor().data()).zip(&mean) {
            let d = db10(g) - m;
            *v += d * d;
        }
    }
    let std = var.iter().map(|&v| (v / n).sqrt()).collect();

    NormStats {
        mean: NdArray::from_vec(&shape, mean),
        std: NdArray::from_vec(&shape, std),
    }
}

/// dB-domain standardization: (10*log10(g) - mean) / max(std, floor).
pub fn normalize<F: Scalar>(csi: &ChannelState<F>, stats: &NormStats<F>) -> NdArray<F> {
    let floor = F::from_f64(STD_FLOOR);
    let data = csi
        .tensor()
        .data()
        .iter()
        .zip(stats.mean.data())
        .zip(stats.std.data())
        .map(|((&g, &m), &s)| (db10(g) - m) / s.max(floor))
        .collect();
    NdArray::from_vec(csi.tensor().shape(), data)
}

/// Inverse of [`normalize`], back to linear gains.
pub fn denormalize<F: Scalar>(x: &NdArray<F>, stats: &NormStats<F>) -> NdArray<F> {
    let floor = F::from_f64(STD_FLOOR);
    let ten = F::from_f64(10.0);
    let data = x
        .data()
        .iter()
        .zip(stats.mean.data())
        .zip(stats.std.data())
        .map(|((&v, &m), &s)| ten.powf((v * s.max(floor) + m) / ten))
        .collect();
    NdArray::from_vec(x.shape(), data)
}

/// Normalized tensor [K][2N+1][2N+1]: the centralized model input.
pub fn view_centralized<F: Scalar>(
    sample: &LabeledSample<F>,
    stats: &NormStats<F>,
) -> NdArray<F> {
    normalize(&sample.csi, stats)
}

/// Normalized gains flattened to K*(2N+1)^2 values, channel-major.
pub fn view_flat<F: Scalar>(sample: &LabeledSample<F>, stats: &NormStats<F>) -> NdArray<F> {
    let n = normalize(&sample.csi, stats);
    let len = n.len();
    n.reshape(&[len])
}

/// Receiver `user`'s local view: a [2N+1][K] matrix whose element [t][k] is
/// the normalized gain from transmitter `t` on channel `k` into this
/// receiver. `user` 0..2N are D2D users, 2N is the BS.
pub fn view_per_user<F: Scalar>(
    sample: &LabeledSample<F>,
    stats: &NormStats<F>,
    user: usize,
) -> Result<NdArray<F>, DatasetError> {
    let normalized = normalize(&sample.csi, stats);
    per_user_slice(&normalized, user)
}

/// The per-user slice of an already-normalized centralized tensor.
pub fn per_user_slice<F: Scalar>(
    normalized: &NdArray<F>,
    user: usize,
) -> Result<NdArray<F>, DatasetError> {
    let shape = normalized.shape();
    let (k_count, nodes) = (shape[0], shape[1]);
    if user >= nodes {
        return Err(DatasetError::UserOutOfRange {
            got: user,
            bound: nodes,
        });
    }
    Ok(NdArray::from_fn(&[nodes, k_count], |ix| {
        normalized.at3(ix[1], user, ix[0])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::evaluate;

    type Cfg = ScenarioConfig<f64>;

    fn tiny_cfg() -> Cfg {
        let mut cfg = Cfg::default();
        // L = 4 keeps the exhaustive label cheap in unit tests
        cfg.power_levels_w = vec![0.0, 0.2 / 3.0, 0.4 / 3.0, 0.2];
        cfg
    }

    #[test]
    fn generation_is_deterministic_and_order_independent() {
        let cfg = tiny_cfg();
        let a = generate_and_label(&cfg, 12, 42, Split::Train).unwrap();
        let b = generate_and_label(&cfg, 12, 42, Split::Train).unwrap();
        assert_eq!(a, b);
        // per-index generation matches the batch path
        for (i, s) in a.iter().enumerate().take(3) {
            assert_eq!(s, &generate_one(&cfg, 42, Split::Train, i as u64).unwrap());
        }
        // splits are disjoint streams
        let dev = generate_and_label(&cfg, 12, 42, Split::Dev).unwrap();
        assert_ne!(a[0], dev[0]);
    }

    #[test]
    fn labels_are_feasible_and_reproduce_their_sum_se() {
        let cfg = tiny_cfg();
        let samples = generate_and_label(&cfg, 12, 7, Split::Test).unwrap();
        for s in &samples {
            let report = evaluate(&s.csi, &s.allocation(), &cfg);
            assert!(report.feasible);
            let rel = (report.sum_due_se - s.optimal_sum_se).abs()
                / s.optimal_sum_se.max(1e-30);
            assert!(rel < 1e-9, "label SE round-trip off by {rel}");
        }
    }

    #[test]
    fn stats_standardize_the_train_split() {
        let cfg = tiny_cfg();
        let samples = generate_and_label(&cfg, 200, 3, Split::Train).unwrap();
        let stats = compute_stats(&samples);
        // applying train stats to the train split re-centers every entry
        let len = stats.mean.len();
        let mut mean = vec![0.0; len];
        let mut var = vec![0.0; len];
        for s in &samples {
            let n = normalize(&s.csi, &stats);
            for (acc, &v) in mean.iter_mut().zip(n.data()) {
                *acc += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= samples.len() as f64;
        }
        for s in &samples {
            let n = normalize(&s.csi, &stats);
            for ((acc, &v), &m) in var.iter_mut().zip(n.data()).zip(&mean) {
                *acc += (v - m).powi(2);
            }
        }
        for (i, (&m, &v)) in mean.iter().zip(&var).enumerate() {
            assert!(m.abs() < 0.05, "entry {i} mean {m}");
            let std = (v / samples.len() as f64).sqrt();
            assert!((std - 1.0).abs() < 0.05, "entry {i} std {std}");
        }
    }

    #[test]
    fn normalize_centering_and_round_trip() {
        let cfg = tiny_cfg();
        let samples = generate_and_label(&cfg, 20, 9, Split::Train).unwrap();
        let stats = compute_stats(&samples);
        // a gain equal to its train mean (in dB) maps to 0
        let mean_gain = 10f64.powf(stats.mean.data()[7] / 10.0);
        let mut tensor = samples[0].csi.tensor().clone();
        tensor.data_mut()[7] = mean_gain;
        let csi = ChannelState::from_gains(cfg.n_pairs, tensor);
        let n = normalize(&csi, &stats);
        assert!(n.data()[7].abs() < 1e-9);
        // affine round trip
        let back = denormalize(&n, &stats);
        for (a, b) in back.data().iter().zip(csi.tensor().data()) {
            assert!((a - b).abs() / b < 1e-12);
        }
    }

    #[test]
    fn views_have_spec_shapes_and_values() {
        let cfg = tiny_cfg();
        let samples = generate_and_label(&cfg, 4, 11, Split::Train).unwrap();
        let stats = compute_stats(&samples);
        let s = &samples[0];
        let central = view_centralized(s, &stats);
        assert_eq!(central.shape(), &[2, 5, 5]);
        let flat = view_flat(s, &stats);
        assert_eq!(flat.shape(), &[50]);
        assert_eq!(flat.data(), central.data());
        for user in 0..5 {
            let v = view_per_user(s, &stats, user).unwrap();
            assert_eq!(v.shape(), &[5, 2]);
            for t in 0..5 {
                for k in 0..2 {
                    assert_eq!(v.at2(t, k), central.at3(k, user, t));
                }
            }
        }
        assert!(view_per_user(s, &stats, 5).is_err());
        // all per-user views together cover every entry of the centralized
        // view exactly once (a permutation of it)
        let mut collected: Vec<f64> = (0..5)
            .flat_map(|u| view_per_user(s, &stats, u).unwrap().into_data())
            .collect();
        let mut reference = central.data().to_vec();
        collected.sort_by(f64::total_cmp);
        reference.sort_by(f64::total_cmp);
        assert_eq!(collected, reference);
    }
}
