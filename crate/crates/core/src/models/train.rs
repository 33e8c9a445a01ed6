//! Supervised training against the exhaustive labels.

use rand::Rng;
use thiserror::Error;

use super::{decode_batch, loss_and_grads, AnyModel};
use crate::dataset::{normalize, LabeledSample, NormStats};
use crate::nn::{Mode, NnError, ParameterStore};
use crate::rate::Allocation;
use crate::scalar::Scalar;
use crate::scenario::stream_rng;
use crate::tensor::NdArray;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Normalized features and labels laid out for batching.
pub struct PreparedData<F> {
    /// [n, K, 2N+1, 2N+1], already normalized.
    pub features: NdArray<F>,
    /// Channel label per pair, [n * N], batch-major.
    pub ch_labels: Vec<u8>,
    /// Power label per user, [n * 2N].
    pub pw_labels: Vec<u8>,
    pub n: usize,
    pub n_pairs: usize,
    pub n_channels: usize,
    pub n_levels: usize,
}

impl<F: Scalar> PreparedData<F> {
    pub fn from_samples(
        samples: &[LabeledSample<F>],
        stats: &NormStats<F>,
        n_channels: usize,
        n_levels: usize,
    ) -> Self {
        assert!(!samples.is_empty());
        let n = samples.len();
        let n_pairs = samples[0].csi.n_pairs();
        let nodes = 2 * n_pairs + 1;
        let sample_len = n_channels * nodes * nodes;
        let mut data = Vec::with_capacity(n * sample_len);
        let mut ch_labels = Vec::with_capacity(n * n_pairs);
        let mut pw_labels = Vec::with_capacity(n * 2 * n_pairs);
        for s in samples {
            data.extend_from_slice(normalize(&s.csi, stats).data());
            ch_labels.extend_from_slice(&s.label_channel);
            pw_labels.extend_from_slice(&s.label_power);
        }
        PreparedData {
            features: NdArray::from_vec(&[n, n_channels, nodes, nodes], data),
            ch_labels,
            pw_labels,
            n,
            n_pairs,
            n_channels,
            n_levels,
        }
    }

    /// Precision-cast copy (labels shared, features converted).
    pub fn cast<G: Scalar>(&self) -> PreparedData<G> {
        PreparedData {
            features: self.features.cast(),
            ch_labels: self.ch_labels.clone(),
            pw_labels: self.pw_labels.clone(),
            n: self.n,
            n_pairs: self.n_pairs,
            n_channels: self.n_channels,
            n_levels: self.n_levels,
        }
    }

    fn sample_len(&self) -> usize {
        self.features.len() / self.n
    }

    /// Copies the rows at `indices` into one batch.
    pub fn gather(&self, indices: &[usize]) -> (NdArray<F>, Vec<u8>, Vec<u8>) {
        let nodes = 2 * self.n_pairs + 1;
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        let mut ch = Vec::with_capacity(indices.len() * self.n_pairs);
        let mut pw = Vec::with_capacity(indices.len() * 2 * self.n_pairs);
        for &i in indices {
            data.extend_from_slice(&self.features.data()[i * len..(i + 1) * len]);
            ch.extend_from_slice(&self.ch_labels[i * self.n_pairs..(i + 1) * self.n_pairs]);
            pw.extend_from_slice(&self.pw_labels[i * 2 * self.n_pairs..(i + 1) * 2 * self.n_pairs]);
        }
        (
            NdArray::from_vec(&[indices.len(), self.n_channels, nodes, nodes], data),
            ch,
            pw,
        )
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub loss: f64,
    pub dev_channel_acc: f64,
    pub dev_power_acc: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Trains a model and returns the checkpoint with the best combined
/// (channel + power) DEV accuracy seen within the epoch budget.
pub fn train<F: Scalar>(
    model: &AnyModel,
    train_data: &PreparedData<F>,
    dev_data: &PreparedData<F>,
    mut on_epoch: impl FnMut(usize, &EpochStats),
) -> Result<(ParameterStore<F>, TrainLog), TrainError> {
    let hp = &model.spec().hp;
    let mut rng_init = stream_rng(hp.seed, 0);
    let mut rng_shuffle = stream_rng(hp.seed, 1);
    let mut rng_dropout = stream_rng(hp.seed, 2);

    let mut store: ParameterStore<F> = model.init(&mut rng_init);
    let lr = F::from_f64(hp.lr);
    let (b1, b2, eps) = (
        F::from_f64(0.9),
        F::from_f64(0.999),
        F::from_f64(1e-8),
    );

    let mut order: Vec<usize> = (0..train_data.n).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ParameterStore<F>)> = None;

    for epoch in 0..hp.epochs {
        // seeded Fisher-Yates shuffle per epoch
        for i in (1..order.len()).rev() {
            let j = rng_shuffle.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut rows = 0usize;
        for (batch_idx, chunk) in order.chunks(hp.batch).enumerate() {
            if chunk.len() < 2 {
                continue; // train-mode batch norm needs at least two rows
            }
            let (x, ch, pw) = train_data.gather(chunk);
            let (out, cache) = model.forward(&store, &x, Mode::Train, &mut rng_dropout)?;
            let (loss, grads) = loss_and_grads(&out, &ch, &pw);
            let loss_f64 = loss.to_f64_lossy();
            if !loss_f64.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            store.zero_grads();
            model.backward(&mut store, &cache, &grads);
            store.adam_step(lr, b1, b2, eps);
            loss_sum += loss_f64 * chunk.len() as f64;
            rows += chunk.len();
        }

        let (dev_ch, dev_pw) = accuracy(model, &store, dev_data, hp.batch)?;
        let stats = EpochStats {
            loss: loss_sum / rows.max(1) as f64,
            dev_channel_acc: dev_ch,
            dev_power_acc: dev_pw,
        };
        on_epoch(epoch, &stats);
        let combined = dev_ch + dev_pw;
        if best.as_ref().map_or(true, |(b, _)| combined > *b) {
            best = Some((combined, store.clone()));
            log.best_epoch = epoch;
        }
        log.epochs.push(stats);
    }

    let (_, best_store) = best.expect("at least one epoch");
    Ok((best_store, log))
}

/// Hard decodes for every sample, batched, in infer mode.
pub fn predict_all<F: Scalar>(
    model: &AnyModel,
    store: &ParameterStore<F>,
    data: &PreparedData<F>,
    batch: usize,
) -> Result<Vec<Allocation>, NnError> {
    let mut rng = stream_rng(0, 0); // unused in infer mode
    let mut result = Vec::with_capacity(data.n);
    let indices: Vec<usize> = (0..data.n).collect();
    for chunk in indices.chunks(batch) {
        let (x, _, _) = data.gather(chunk);
        let (out, _) = model.forward(store, &x, Mode::Infer, &mut rng)?;
        result.extend(decode_batch(&out));
    }
    Ok(result)
}

/// (channel accuracy per pair, power accuracy per user) of the decoded
/// predictions against the labels.
pub fn accuracy<F: Scalar>(
    model: &AnyModel,
    store: &ParameterStore<F>,
    data: &PreparedData<F>,
    batch: usize,
) -> Result<(f64, f64), NnError> {
    let decoded = predict_all(model, store, data, batch)?;
    Ok(accuracy_of(&decoded, data))
}

/// Accuracy of arbitrary allocations against the labels in `data`.
pub fn accuracy_of<F: Scalar>(allocations: &[Allocation], data: &PreparedData<F>) -> (f64, f64) {
    assert_eq!(allocations.len(), data.n);
    let mut ch_hits = 0usize;
    let mut pw_hits = 0usize;
    for (i, alloc) in allocations.iter().enumerate() {
        for p in 0..data.n_pairs {
            if alloc.channel[p] == data.ch_labels[i * data.n_pairs + p] as usize {
                ch_hits += 1;
            }
        }
        for u in 0..2 * data.n_pairs {
            if alloc.power_level[u] == data.pw_labels[i * 2 * data.n_pairs + u] as usize {
                pw_hits += 1;
            }
        }
    }
    (
        ch_hits as f64 / (data.n * data.n_pairs) as f64,
        pw_hits as f64 / (data.n * 2 * data.n_pairs) as f64,
    )
}
