//! Centralized model: two spatial convolution branches over the CSI tensor
//! (transmitter-major and channel-major), a fused dense trunk gated by a
//! per-dimension attention, residual blocks, two heads.

use rand::Rng;

use super::blocks::{Conv, ConvCache, Dense, DenseCache, ResBlock, ResBlockCache};
use super::{concat_cols, head_probs, split_cols, HeadGrads, ModelOutput, ModelSpec};
use crate::nn::ops::{relu_backward, relu_forward, softmax, softmax_backward};
use crate::nn::{Mode, NnError, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::NdArray;

pub struct SpConvAtt {
    pub spec: ModelSpec,
    /// Multi-user branch: transmitter axis as input channels, spatial
    /// extent [2N+1, K].
    conv_user: Conv,
    /// Multi-channel branch: channel axis as input channels, spatial
    /// extent [2N+1, 2N+1].
    conv_chan: Conv,
    fuse: Dense,
    gate: Dense,
    blocks: Vec<ResBlock>,
    head_c: Dense,
    head_p: Dense,
    user_flat: usize,
    chan_flat: usize,
}

pub struct Cache<F> {
    conv_user: ConvCache<F>,
    conv_chan: ConvCache<F>,
    user_pre_relu: NdArray<F>,
    chan_pre_relu: NdArray<F>,
    fuse: DenseCache<F>,
    gate: DenseCache<F>,
    trunk_in: NdArray<F>,
    gate_weights: NdArray<F>,
    blocks: Vec<ResBlockCache<F>>,
    head_c: DenseCache<F>,
    head_p: DenseCache<F>,
}

impl SpConvAtt {
    pub fn new(spec: ModelSpec) -> Self {
        let nodes = spec.n_nodes();
        let k = spec.n_channels;
        let o = spec.hp.conv_filters;
        // kernel 2, stride 1, no padding: spatial outputs are
        // (nodes-1) x (k-1) and (nodes-1) x (nodes-1)
        let user_flat = o * (nodes - 1) * (k - 1);
        let chan_flat = o * (nodes - 1) * (nodes - 1);
        let hp = &spec.hp;
        let blocks = (0..hp.r_blocks)
            .map(|i| ResBlock::new(&format!("block{i}"), hp.f_h, hp.dropout))
            .collect();
        SpConvAtt {
            conv_user: Conv::new("conv_user", nodes, o),
            conv_chan: Conv::new("conv_chan", k, o),
            fuse: Dense::new("fuse", user_flat + chan_flat, hp.f_h),
            gate: Dense::new("gate", hp.f_h, hp.f_h),
            blocks,
            head_c: Dense::new("head_c", hp.f_h, spec.n_pairs * spec.n_channels),
            head_p: Dense::new("head_p", hp.f_h, spec.n_users() * spec.n_levels),
            user_flat,
            chan_flat,
            spec,
        }
    }

    pub fn register<F: Scalar, R: Rng>(&self, store: &mut ParameterStore<F>, rng: &mut R) {
        self.conv_user.register(store, rng);
        self.conv_chan.register(store, rng);
        self.fuse.register(store, rng);
        self.gate.register(store, rng);
        for block in &self.blocks {
            block.register(store, rng);
        }
        self.head_c.register(store, rng);
        self.head_p.register(store, rng);
    }

    pub fn forward<F: Scalar, R: Rng>(
        &self,
        store: &ParameterStore<F>,
        x: &NdArray<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(ModelOutput<F>, Cache<F>), NnError> {
        let batch = x.shape()[0];
        // x is [B, K, 2N+1 rx, 2N+1 tx]; the multi-user branch views the
        // transmitter axis as channels over an [rx, K] spatial grid
        let xu = crate::nn::ops::permute4(x, [0, 3, 2, 1]);
        let (a_pre, conv_user_cache) = self.conv_user.forward(store, &xu, mode)?;
        let a = relu_forward(&a_pre);
        let a_flat = a.reshape(&[batch, self.user_flat]);

        let (b_pre, conv_chan_cache) = self.conv_chan.forward(store, x, mode)?;
        let b = relu_forward(&b_pre);
        let b_flat = b.reshape(&[batch, self.chan_flat]);

        let joined = concat_cols(&[&a_flat, &b_flat]);
        let (h, fuse_cache) = self.fuse.forward(store, &joined, mode)?;

        // dimension attention: softmax-gated features rescaled by the width
        // so the expected magnitude is preserved
        let (gate_logits, gate_cache) = self.gate.forward(store, &h, mode)?;
        let weights = softmax(&gate_logits);
        let scale = F::from_usize(self.spec.hp.f_h);
        let mut gated = NdArray::zeros(h.shape());
        for i in 0..h.len() {
            gated.data_mut()[i] = h.data()[i] * weights.data()[i] * scale;
        }

        let mut t = gated;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(store, &t, mode, rng)?;
            t = next;
            block_caches.push(cache);
        }
        let (logits_c, head_c_cache) = self.head_c.forward(store, &t, mode)?;
        let (logits_p, head_p_cache) = self.head_p.forward(store, &t, mode)?;

        let out = ModelOutput {
            channel_probs: head_probs(logits_c, batch, self.spec.n_pairs, self.spec.n_channels),
            power_probs: head_probs(logits_p, batch, self.spec.n_users(), self.spec.n_levels),
            user_channel_probs: None,
        };
        Ok((
            out,
            Cache {
                conv_user: conv_user_cache,
                conv_chan: conv_chan_cache,
                user_pre_relu: a_pre,
                chan_pre_relu: b_pre,
                fuse: fuse_cache,
                gate: gate_cache,
                trunk_in: h,
                gate_weights: weights,
                blocks: block_caches,
                head_c: head_c_cache,
                head_p: head_p_cache,
            },
        ))
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParameterStore<F>,
        cache: &Cache<F>,
        grads: &HeadGrads<F>,
    ) {
        let batch = grads.channel.shape()[0];
        let gc = grads
            .channel
            .clone()
            .reshape(&[batch, self.spec.n_pairs * self.spec.n_channels]);
        let gp = grads
            .power
            .clone()
            .reshape(&[batch, self.spec.n_users() * self.spec.n_levels]);
        let mut gt = self.head_c.backward(store, &cache.head_c, &gc);
        let gt_p = self.head_p.backward(store, &cache.head_p, &gp);
        for (a, &b) in gt.data_mut().iter_mut().zip(gt_p.data()) {
            *a += b;
        }
        for (block, bcache) in self.blocks.iter().zip(&cache.blocks).rev() {
            gt = block.backward(store, bcache, &gt);
        }

        // gate backward: y = scale * h .* s with s = softmax(gate(h))
        let scale = F::from_usize(self.spec.hp.f_h);
        let h = &cache.trunk_in;
        let s = &cache.gate_weights;
        let mut gh = NdArray::zeros(h.shape());
        let mut gs = NdArray::zeros(h.shape());
        for i in 0..h.len() {
            gh.data_mut()[i] = gt.data()[i] * s.data()[i] * scale;
            gs.data_mut()[i] = gt.data()[i] * h.data()[i] * scale;
        }
        let g_gate_logits = softmax_backward(s, &gs);
        let gh_gate = self.gate.backward(store, &cache.gate, &g_gate_logits);
        for (a, &b) in gh.data_mut().iter_mut().zip(gh_gate.data()) {
            *a += b;
        }

        let g_joined = self.fuse.backward(store, &cache.fuse, &gh);
        let parts = split_cols(&g_joined, &[self.user_flat, self.chan_flat]);

        let ga = parts[0].clone().reshape(cache.user_pre_relu.shape());
        let ga_pre = relu_backward(&cache.user_pre_relu, &ga);
        self.conv_user.backward(store, &cache.conv_user, &ga_pre);

        let gb = parts[1].clone().reshape(cache.chan_pre_relu.shape());
        let gb_pre = relu_backward(&cache.chan_pre_relu, &gb);
        self.conv_chan.backward(store, &cache.conv_chan, &gb_pre);
    }
}
