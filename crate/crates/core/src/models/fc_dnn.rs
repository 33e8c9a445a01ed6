//! Fully-connected baseline: every CSI value is an independent input
//! feature. Input dense to the trunk width, residual blocks, two heads.

use rand::Rng;

use super::blocks::{Dense, DenseCache, ResBlock, ResBlockCache};
use super::{head_probs, HeadGrads, ModelOutput, ModelSpec};
use crate::nn::{Mode, NnError, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::NdArray;

pub struct FcDnn {
    pub spec: ModelSpec,
    input: Dense,
    blocks: Vec<ResBlock>,
    head_c: Dense,
    head_p: Dense,
}

pub struct Cache<F> {
    input: DenseCache<F>,
    blocks: Vec<ResBlockCache<F>>,
    head_c: DenseCache<F>,
    head_p: DenseCache<F>,
}

impl FcDnn {
    pub fn new(spec: ModelSpec) -> Self {
        let nodes = spec.n_nodes();
        let in_dim = spec.n_channels * nodes * nodes;
        let hp = &spec.hp;
        let blocks = (0..hp.r_blocks)
            .map(|i| ResBlock::new(&format!("block{i}"), hp.f_h, hp.dropout))
            .collect();
        FcDnn {
            input: Dense::new("input", in_dim, hp.f_h),
            blocks,
            head_c: Dense::new("head_c", hp.f_h, spec.n_pairs * spec.n_channels),
            head_p: Dense::new("head_p", hp.f_h, spec.n_users() * spec.n_levels),
            spec,
        }
    }

    pub fn register<F: Scalar, R: Rng>(&self, store: &mut ParameterStore<F>, rng: &mut R) {
        self.input.register(store, rng);
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
        let flat = x.clone().reshape(&[batch, x.len() / batch]);
        let (mut h, input_cache) = self.input.forward(store, &flat, mode)?;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(store, &h, mode, rng)?;
            h = next;
            block_caches.push(cache);
        }
        let (logits_c, head_c_cache) = self.head_c.forward(store, &h, mode)?;
        let (logits_p, head_p_cache) = self.head_p.forward(store, &h, mode)?;
        let out = ModelOutput {
            channel_probs: head_probs(logits_c, batch, self.spec.n_pairs, self.spec.n_channels),
            power_probs: head_probs(logits_p, batch, self.spec.n_users(), self.spec.n_levels),
            user_channel_probs: None,
        };
        Ok((
            out,
            Cache {
                input: input_cache,
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
        let mut gh = self.head_c.backward(store, &cache.head_c, &gc);
        let gh_p = self.head_p.backward(store, &cache.head_p, &gp);
        for (a, &b) in gh.data_mut().iter_mut().zip(gh_p.data()) {
            *a += b;
        }
        for (block, bcache) in self.blocks.iter().zip(&cache.blocks).rev() {
            gh = block.backward(store, bcache, &gh);
        }
        self.input.backward(store, &cache.input, &gh);
    }
}
