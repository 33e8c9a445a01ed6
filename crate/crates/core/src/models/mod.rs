//! The four allocator models, their training loop, and checkpoint format.
//!
//! All models consume the normalized centralized tensor [B][K][2N+1][2N+1]
//! and derive their own input view from it; they emit per-pair channel and
//! per-user power probability heads.

pub mod blocks;
pub mod checkpoint;
pub mod dist;
pub mod fc_dnn;
pub mod sp_conv_att;
pub mod train;
pub mod verify;


use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::ops::{cross_entropy_mean, softmax, softmax_xent_grad};
use crate::nn::{Mode, NnError, ParameterStore};
use crate::rate::Allocation;
use crate::scalar::Scalar;
use crate::tensor::NdArray;

pub use dist::DistModel;
pub use fc_dnn::FcDnn;
pub use sp_conv_att::SpConvAtt;

/// Learning constants; defaults follow the reference settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Trunk width (hidden neurons).
    pub f_h: usize,
    /// Residual block count.
    pub r_blocks: usize,
    /// Per-user feature size sent to the BS.
    pub f_b: usize,
    /// Per-DUE feature size returned by the BS.
    pub f_d: usize,
    /// Convolution filter count per branch.
    pub conv_filters: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            f_h: 256,
            r_blocks: 3,
            f_b: 10,
            f_d: 32,
            conv_filters: 8,
            lr: 1e-4,
            batch: 1024,
            epochs: 40,
            dropout: 0.2,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("f_h", self.f_h),
            ("r_blocks", self.r_blocks),
            ("f_b", self.f_b),
            ("f_d", self.f_d),
            ("conv_filters", self.conv_filters),
            ("batch", self.batch),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err("lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    FcDnn,
    SpConvAtt,
    DistAtt,
    DistAttConv,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::FcDnn,
        ModelKind::SpConvAtt,
        ModelKind::DistAtt,
        ModelKind::DistAttConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FcDnn => "fc-dnn",
            ModelKind::SpConvAtt => "sp-conv-att",
            ModelKind::DistAtt => "dist-att",
            ModelKind::DistAttConv => "dist-att-conv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn tag(self) -> u8 {
        match self {
            ModelKind::FcDnn => 0,
            ModelKind::SpConvAtt => 1,
            ModelKind::DistAtt => 2,
            ModelKind::DistAttConv => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn is_distributed(self) -> bool {
        matches!(self, ModelKind::DistAtt | ModelKind::DistAttConv)
    }
}

/// Problem sizing every model is built against.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub n_pairs: usize,
    pub n_channels: usize,
    pub n_levels: usize,
    pub hp: Hyperparams,
}

impl ModelSpec {
    pub fn n_users(&self) -> usize {
        2 * self.n_pairs
    }

    pub fn n_nodes(&self) -> usize {
        2 * self.n_pairs + 1
    }
}

/// Probability heads of one forward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput<F> {
    /// Pair-level channel distributions [B, N, K]; for distributed models
    /// these are assembled from the per-user heads by summed log-probability.
    pub channel_probs: NdArray<F>,
    /// Per-user power-level distributions [B, 2N, L].
    pub power_probs: NdArray<F>,
    /// Per-user channel distributions [B, 2N, K]; distributed models only
    /// (the supervised head).
    pub user_channel_probs: Option<NdArray<F>>,
}

/// Loss gradients at the pre-softmax head logits.
pub struct HeadGrads<F> {
    /// [B, N, K] for centralized models, [B, 2N, K] for distributed ones.
    pub channel: NdArray<F>,
    /// [B, 2N, L].
    pub power: NdArray<F>,
}

/// Any of the four allocator models behind one dispatch surface.
pub enum AnyModel {
    FcDnn(FcDnn),
    SpConvAtt(SpConvAtt),
    DistAtt(DistModel),
    DistAttConv(DistModel),
}

pub enum ModelCache<F> {
    FcDnn(fc_dnn::Cache<F>),
    SpConvAtt(sp_conv_att::Cache<F>),
    Dist(dist::Cache<F>),
}

impl AnyModel {
    pub fn new(kind: ModelKind, spec: ModelSpec) -> Self {
        match kind {
            ModelKind::FcDnn => AnyModel::FcDnn(FcDnn::new(spec)),
            ModelKind::SpConvAtt => AnyModel::SpConvAtt(SpConvAtt::new(spec)),
            ModelKind::DistAtt => AnyModel::DistAtt(DistModel::new(spec, false)),
            ModelKind::DistAttConv => AnyModel::DistAttConv(DistModel::new(spec, true)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::FcDnn(_) => ModelKind::FcDnn,
            AnyModel::SpConvAtt(_) => ModelKind::SpConvAtt,
            AnyModel::DistAtt(_) => ModelKind::DistAtt,
            AnyModel::DistAttConv(_) => ModelKind::DistAttConv,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        match self {
            AnyModel::FcDnn(m) => &m.spec,
            AnyModel::SpConvAtt(m) => &m.spec,
            AnyModel::DistAtt(m) | AnyModel::DistAttConv(m) => &m.spec,
        }
    }

    pub fn init<F: Scalar, R: Rng>(&self, rng: &mut R) -> ParameterStore<F> {
        let mut store = ParameterStore::new();
        match self {
            AnyModel::FcDnn(m) => m.register(&mut store, rng),
            AnyModel::SpConvAtt(m) => m.register(&mut store, rng),
            AnyModel::DistAtt(m) | AnyModel::DistAttConv(m) => m.register(&mut store, rng),
        }
        store
    }

    /// Forward over a centralized batch [B, K, 2N+1, 2N+1].
    pub fn forward<F: Scalar, R: Rng>(
        &self,
        store: &ParameterStore<F>,
        x: &NdArray<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(ModelOutput<F>, ModelCache<F>), NnError> {
        match self {
            AnyModel::FcDnn(m) => {
                let (out, cache) = m.forward(store, x, mode, rng)?;
                Ok((out, ModelCache::FcDnn(cache)))
            }
            AnyModel::SpConvAtt(m) => {
                let (out, cache) = m.forward(store, x, mode, rng)?;
                Ok((out, ModelCache::SpConvAtt(cache)))
            }
            AnyModel::DistAtt(m) | AnyModel::DistAttConv(m) => {
                let (out, cache) = m.forward(store, x, mode, rng)?;
                Ok((out, ModelCache::Dist(cache)))
            }
        }
    }

    /// Accumulates parameter gradients (and batch-norm running statistics)
    /// for one forward pass.
    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParameterStore<F>,
        cache: &ModelCache<F>,
        grads: &HeadGrads<F>,
    ) {
        match (self, cache) {
            (AnyModel::FcDnn(m), ModelCache::FcDnn(c)) => m.backward(store, c, grads),
            (AnyModel::SpConvAtt(m), ModelCache::SpConvAtt(c)) => m.backward(store, c, grads),
            (AnyModel::DistAtt(m) | AnyModel::DistAttConv(m), ModelCache::Dist(c)) => {
                m.backward(store, c, grads)
            }
            _ => panic!("cache does not match model"),
        }
    }

    /// Trainable parameter total and, for distributed models, the
    /// (BS-side, user-side) split by name prefix.
    pub fn parameter_counts<F: Scalar>(&self, store: &ParameterStore<F>) -> ParameterCounts {
        let total = store.num_trainable();
        let split = if self.kind().is_distributed() {
            let bs = store.num_trainable_with_prefix("bs.");
            Some((bs, total - bs))
        } else {
            None
        };
        ParameterCounts { total, split }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterCounts {
    pub total: usize,
    /// (BS-side, user-side) for distributed models.
    pub split: Option<(usize, usize)>,
}

// ---------------------------------------------------------------------------
// shared head plumbing
// ---------------------------------------------------------------------------

/// Softmax over the last axis reshaped to [batch, rows, classes].
pub(crate) fn head_probs<F: Scalar>(
    logits: NdArray<F>,
    batch: usize,
    rows: usize,
    classes: usize,
) -> NdArray<F> {
    softmax(&logits.reshape(&[batch, rows, classes]))
}

/// Pair-level channel distributions from per-user ones: softmax over the
/// summed log-probabilities of the pair's two users.
pub(crate) fn assemble_pair_probs<F: Scalar>(user_probs: &NdArray<F>) -> NdArray<F> {
    let (batch, users, classes) = (
        user_probs.shape()[0],
        user_probs.shape()[1],
        user_probs.shape()[2],
    );
    let pairs = users / 2;
    let eps = F::from_f64(1e-12);
    let mut scores = NdArray::zeros(&[batch, pairs, classes]);
    for b in 0..batch {
        for i in 0..pairs {
            for k in 0..classes {
                let s = (user_probs.at3(b, 2 * i, k) + eps).ln()
                    + (user_probs.at3(b, 2 * i + 1, k) + eps).ln();
                scores.set3(b, i, k, s);
            }
        }
    }
    softmax(&scores)
}

fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Decodes every sample of a batch into a hard allocation: per-pair channel
/// argmax and per-user power argmax, ties to the lowest index.
pub fn decode_batch<F: Scalar>(out: &ModelOutput<F>) -> Vec<Allocation> {
    let (batch, pairs, k) = (
        out.channel_probs.shape()[0],
        out.channel_probs.shape()[1],
        out.channel_probs.shape()[2],
    );
    let (users, levels) = (out.power_probs.shape()[1], out.power_probs.shape()[2]);
    let mut result = Vec::with_capacity(batch);
    for b in 0..batch {
        let channel = (0..pairs)
            .map(|i| {
                let base = (b * pairs + i) * k;
                argmax(&out.channel_probs.data()[base..base + k])
            })
            .collect();
        let power_level = (0..users)
            .map(|u| {
                let base = (b * users + u) * levels;
                argmax(&out.power_probs.data()[base..base + levels])
            })
            .collect();
        result.push(Allocation {
            channel,
            power_level,
        });
    }
    result
}

/// Total loss (channel + power cross-entropy summed over supervised rows,
/// averaged over the batch) and its gradients at the head logits.
/// `ch_labels` holds one channel per pair ([B*N], batch-major); `pw_labels`
/// one level per user ([B*2N]).
pub fn loss_and_grads<F: Scalar>(
    out: &ModelOutput<F>,
    ch_labels: &[u8],
    pw_labels: &[u8],
) -> (F, HeadGrads<F>) {
    let batch = out.channel_probs.shape()[0];
    let pairs = out.channel_probs.shape()[1];
    let users = out.power_probs.shape()[1];
    debug_assert_eq!(ch_labels.len(), batch * pairs);
    debug_assert_eq!(pw_labels.len(), batch * users);

    let (ch_loss, ch_grad) = match &out.user_channel_probs {
        Some(user_probs) => {
            // both users of a pair carry the pair's channel label
            let targets: Vec<usize> = (0..batch * users)
                .map(|row| {
                    let (b, u) = (row / users, row % users);
                    ch_labels[b * pairs + u / 2] as usize
                })
                .collect();
            (
                cross_entropy_mean(user_probs, &targets, batch),
                softmax_xent_grad(user_probs, &targets, batch),
            )
        }
        None => {
            let targets: Vec<usize> = ch_labels.iter().map(|&c| c as usize).collect();
            (
                cross_entropy_mean(&out.channel_probs, &targets, batch),
                softmax_xent_grad(&out.channel_probs, &targets, batch),
            )
        }
    };

    let pw_targets: Vec<usize> = pw_labels.iter().map(|&l| l as usize).collect();
    let pw_loss = cross_entropy_mean(&out.power_probs, &pw_targets, batch);
    let pw_grad = softmax_xent_grad(&out.power_probs, &pw_targets, batch);

    (
        ch_loss + pw_loss,
        HeadGrads {
            channel: ch_grad,
            power: pw_grad,
        },
    )
}

// ---------------------------------------------------------------------------
// column concat/split used by the model assemblies
// ---------------------------------------------------------------------------

pub(crate) fn concat_cols<F: Scalar>(parts: &[&NdArray<F>]) -> NdArray<F> {
    let rows = parts[0].shape()[0];
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = NdArray::zeros(&[rows, total]);
    for r in 0..rows {
        let mut col = 0;
        for p in parts {
            let w = p.shape()[1];
            out.data_mut()[r * total + col..r * total + col + w].copy_from_slice(p.row(r));
            col += w;
        }
    }
    out
}

pub(crate) fn split_cols<F: Scalar>(x: &NdArray<F>, widths: &[usize]) -> Vec<NdArray<F>> {
    let rows = x.shape()[0];
    let total = x.shape()[1];
    debug_assert_eq!(widths.iter().sum::<usize>(), total);
    let mut parts: Vec<NdArray<F>> = widths.iter().map(|&w| NdArray::zeros(&[rows, w])).collect();
    for r in 0..rows {
        let mut col = 0;
        for (p, &w) in parts.iter_mut().zip(widths) {
            p.data_mut()[r * w..(r + 1) * w].copy_from_slice(&x.data()[r * total + col..r * total + col + w]);
            col += w;
        }
    }
    parts
}
