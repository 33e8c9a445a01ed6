//! Distributed models. Every user encodes its local CSI view and sends a
//! small feature vector to the BS; the BS fuses them with attention and
//! returns per-DUE feature vectors; each DUE then decides its own channel
//! and power from its local view plus the returned features.
//!
//! One encoder network is shared by all 2N+1 users and one decision trunk by
//! all 2N D2D users (the deployed network is identical at every node), which
//! is also what keeps the parameter count below the centralized models.

use rand::Rng;

use super::blocks::{Attention, Conv, ConvCache, Dense, DenseCache, FuseCache, ResBlock, ResBlockCache};
use super::{assemble_pair_probs, concat_cols, head_probs, split_cols, HeadGrads, ModelOutput, ModelSpec};
use crate::nn::{Mode, NnError, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::NdArray;

pub struct DistModel {
    pub spec: ModelSpec,
    /// BS side compresses with attention only (false) or convolves the
    /// stacked user features as well (true).
    pub conv_bs: bool,
    encoder: super::blocks::Encoder,
    attention: Attention,
    bs_conv: Option<Conv>,
    bs_return: Dense,
    due_input: Dense,
    blocks: Vec<ResBlock>,
    head_c: Dense,
    head_p: Dense,
    view_len: usize,
}

pub struct Cache<F> {
    encoder: super::blocks::EncoderCache<F>,
    fuse: FuseCache<F>,
    bs_conv: Option<ConvCache<F>>,
    bs_return: DenseCache<F>,
    due_input: DenseCache<F>,
    blocks: Vec<ResBlockCache<F>>,
    head_c: DenseCache<F>,
    head_p: DenseCache<F>,
}

impl DistModel {
    pub fn new(spec: ModelSpec, conv_bs: bool) -> Self {
        let nodes = spec.n_nodes();
        let view_len = nodes * spec.n_channels;
        let hp = &spec.hp;
        let return_in = if conv_bs {
            // stacked [2N+2, F_B] sheet through a 2x2 conv: (2N+1) x (F_B-1)
            hp.conv_filters * (nodes + 1 - 1) * (hp.f_b - 1)
        } else {
            hp.f_b
        };
        let blocks = (0..hp.r_blocks)
            .map(|i| ResBlock::new(&format!("due.block{i}"), hp.f_h, hp.dropout))
            .collect();
        DistModel {
            encoder: super::blocks::Encoder::new("user.enc", view_len, hp.f_h, hp.f_b, hp.dropout),
            attention: Attention::new("bs.att", nodes, hp.f_b),
            bs_conv: conv_bs.then(|| Conv::new("bs.conv", 1, hp.conv_filters)),
            bs_return: Dense::new("bs.return", return_in, spec.n_users() * hp.f_d),
            due_input: Dense::new("due.input", view_len + hp.f_d, hp.f_h),
            blocks,
            head_c: Dense::new("due.head_c", hp.f_h, spec.n_channels),
            head_p: Dense::new("due.head_p", hp.f_h, spec.n_levels),
            view_len,
            conv_bs,
            spec,
        }
    }

    pub fn register<F: Scalar, R: Rng>(&self, store: &mut ParameterStore<F>, rng: &mut R) {
        self.encoder.register(store, rng);
        self.attention.register(store, rng);
        if let Some(conv) = &self.bs_conv {
            conv.register(store, rng);
        }
        self.bs_return.register(store, rng);
        self.due_input.register(store, rng);
        for block in &self.blocks {
            block.register(store, rng);
        }
        self.head_c.register(store, rng);
        self.head_p.register(store, rng);
    }

    /// Local view of receiver `user`, flattened transmitter-major, matching
    /// the per-user dataset view.
    fn user_view_rows<F: Scalar>(&self, x: &NdArray<F>, users: &[usize]) -> NdArray<F> {
        let batch = x.shape()[0];
        let (k_count, nodes) = (x.shape()[1], x.shape()[2]);
        let mut out = NdArray::zeros(&[users.len() * batch, self.view_len]);
        for (slot, &u) in users.iter().enumerate() {
            for b in 0..batch {
                let row = slot * batch + b;
                for t in 0..nodes {
                    for k in 0..k_count {
                        out.set2(row, t * k_count + k, x.at4(b, k, u, t));
                    }
                }
            }
        }
        out
    }

    /// Step 1 only: every user's encoded feature vector, [B, 2N+1, F_B].
    /// Exposed so locality of the user-side encoding is observable.
    pub fn user_features<F: Scalar, R: Rng>(
        &self,
        store: &ParameterStore<F>,
        x: &NdArray<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<NdArray<F>, NnError> {
        let nodes = self.spec.n_nodes();
        let all_users: Vec<usize> = (0..nodes).collect();
        let views = self.user_view_rows(x, &all_users);
        let (encoded, _) = self.encoder.forward(store, &views, mode, rng)?;
        Ok(regroup_user_major(&encoded, nodes, x.shape()[0]))
    }

    pub fn forward<F: Scalar, R: Rng>(
        &self,
        store: &ParameterStore<F>,
        x: &NdArray<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(ModelOutput<F>, Cache<F>), NnError> {
        let batch = x.shape()[0];
        let nodes = self.spec.n_nodes();
        let users = self.spec.n_users();
        let (f_b, f_d) = (self.spec.hp.f_b, self.spec.hp.f_d);

        // users side: shared encoder over all 2N+1 stacked views
        let all_users: Vec<usize> = (0..nodes).collect();
        let views = self.user_view_rows(x, &all_users);
        let (encoded, encoder_cache) = self.encoder.forward(store, &views, mode, rng)?;
        let u_b = regroup_user_major(&encoded, nodes, batch);

        // BS side: attention fusion, then the return-path network
        let (u_att, fuse_cache) = self.attention.forward(store, &u_b, mode)?;
        let (return_in, bs_conv_cache) = match &self.bs_conv {
            None => (u_att.clone(), None),
            Some(conv) => {
                // stack the user features and the fused vector into one
                // [2N+2, F_B] sheet per sample
                let mut sheet = NdArray::zeros(&[batch, 1, nodes + 1, f_b]);
                for b in 0..batch {
                    for u in 0..nodes {
                        for f in 0..f_b {
                            sheet.set4(b, 0, u, f, u_b.at3(b, u, f));
                        }
                    }
                    for f in 0..f_b {
                        sheet.set4(b, 0, nodes, f, u_att.at2(b, f));
                    }
                }
                let (conv_out, conv_cache) = conv.forward(store, &sheet, mode)?;
                let flat_len = conv_out.len() / batch;
                (conv_out.reshape(&[batch, flat_len]), Some(conv_cache))
            }
        };
        let (returns, bs_return_cache) = self.bs_return.forward(store, &return_in, mode)?;

        // DUEs side: shared trunk over all 2N stacked (view, return) rows
        let due_users: Vec<usize> = (0..users).collect();
        let due_views = self.user_view_rows(x, &due_users);
        let mut due_returns = NdArray::zeros(&[users * batch, f_d]);
        for u in 0..users {
            for b in 0..batch {
                let row = u * batch + b;
                for f in 0..f_d {
                    due_returns.set2(row, f, returns.at2(b, u * f_d + f));
                }
            }
        }
        let joined = concat_cols(&[&due_views, &due_returns]);
        let (mut h, due_input_cache) = self.due_input.forward(store, &joined, mode)?;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(store, &h, mode, rng)?;
            h = next;
            block_caches.push(cache);
        }
        let (logits_c, head_c_cache) = self.head_c.forward(store, &h, mode)?;
        let (logits_p, head_p_cache) = self.head_p.forward(store, &h, mode)?;

        // stacked rows are user-major; heads are reported batch-major
        let user_channel_probs = head_probs(
            regroup_batch_major(&logits_c, users, batch),
            batch,
            users,
            self.spec.n_channels,
        );
        let power_probs = head_probs(
            regroup_batch_major(&logits_p, users, batch),
            batch,
            users,
            self.spec.n_levels,
        );
        let out = ModelOutput {
            channel_probs: assemble_pair_probs(&user_channel_probs),
            power_probs,
            user_channel_probs: Some(user_channel_probs),
        };
        Ok((
            out,
            Cache {
                encoder: encoder_cache,
                fuse: fuse_cache,
                bs_conv: bs_conv_cache,
                bs_return: bs_return_cache,
                due_input: due_input_cache,
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
        let nodes = self.spec.n_nodes();
        let users = self.spec.n_users();
        let (f_b, f_d) = (self.spec.hp.f_b, self.spec.hp.f_d);

        // head grads arrive batch-major [B, 2N, C]; the trunk ran user-major
        let gc_flat = grads.channel.clone().reshape(&[batch * users, self.spec.n_channels]);
        let gc = regroup_to_user_major(&gc_flat, users, batch);
        let gp_flat = grads.power.clone().reshape(&[batch * users, self.spec.n_levels]);
        let gp = regroup_to_user_major(&gp_flat, users, batch);

        let mut gh = self.head_c.backward(store, &cache.head_c, &gc);
        let gh_p = self.head_p.backward(store, &cache.head_p, &gp);
        for (a, &b) in gh.data_mut().iter_mut().zip(gh_p.data()) {
            *a += b;
        }
        for (block, bcache) in self.blocks.iter().zip(&cache.blocks).rev() {
            gh = block.backward(store, bcache, &gh);
        }
        let g_joined = self.due_input.backward(store, &cache.due_input, &gh);
        let parts = split_cols(&g_joined, &[self.view_len, f_d]);
        // parts[0] is the gradient at the raw input view: discarded

        // gather per-DUE return gradients back to [B, 2N*F_D]
        let mut g_returns = NdArray::zeros(&[batch, users * f_d]);
        for u in 0..users {
            for b in 0..batch {
                let row = u * batch + b;
                for f in 0..f_d {
                    g_returns.set2(b, u * f_d + f, parts[1].at2(row, f));
                }
            }
        }
        let g_return_in = self.bs_return.backward(store, &cache.bs_return, &g_returns);

        let (mut g_u_b, g_u_att) = match (&self.bs_conv, &cache.bs_conv) {
            (None, None) => (NdArray::zeros(&[batch, nodes, f_b]), g_return_in),
            (Some(conv), Some(conv_cache)) => {
                let g_conv_out = g_return_in.reshape(&[
                    batch,
                    self.spec.hp.conv_filters,
                    nodes,
                    f_b - 1,
                ]);
                let g_sheet = conv.backward(store, conv_cache, &g_conv_out);
                let mut g_u_b = NdArray::zeros(&[batch, nodes, f_b]);
                let mut g_u_att = NdArray::zeros(&[batch, f_b]);
                for b in 0..batch {
                    for u in 0..nodes {
                        for f in 0..f_b {
                            g_u_b.set3(b, u, f, g_sheet.at4(b, 0, u, f));
                        }
                    }
                    for f in 0..f_b {
                        g_u_att.set2(b, f, g_sheet.at4(b, 0, nodes, f));
                    }
                }
                (g_u_b, g_u_att)
            }
            _ => unreachable!("conv cache presence matches the variant"),
        };

        let g_u_b_att = self.attention.backward(store, &cache.fuse, &g_u_att);
        for (a, &b) in g_u_b.data_mut().iter_mut().zip(g_u_b_att.data()) {
            *a += b;
        }

        // back to the stacked user-major layout the encoder ran in
        let mut g_encoded = NdArray::zeros(&[nodes * batch, f_b]);
        for u in 0..nodes {
            for b in 0..batch {
                for f in 0..f_b {
                    g_encoded.set2(u * batch + b, f, g_u_b.at3(b, u, f));
                }
            }
        }
        self.encoder.backward(store, &cache.encoder, &g_encoded);
    }
}

/// [U*B, F] stacked rows (user-major) -> [B, U, F].
fn regroup_user_major<F: Scalar>(stacked: &NdArray<F>, users: usize, batch: usize) -> NdArray<F> {
    let f = stacked.shape()[1];
    NdArray::from_fn(&[batch, users, f], |ix| stacked.at2(ix[1] * batch + ix[0], ix[2]))
}

/// [U*B, C] user-major rows -> [B*U, C] batch-major rows.
fn regroup_batch_major<F: Scalar>(stacked: &NdArray<F>, users: usize, batch: usize) -> NdArray<F> {
    let c = stacked.shape()[1];
    NdArray::from_fn(&[batch * users, c], |ix| {
        let (b, u) = (ix[0] / users, ix[0] % users);
        stacked.at2(u * batch + b, ix[1])
    })
}

/// [B*U, C] batch-major rows -> [U*B, C] user-major rows.
fn regroup_to_user_major<F: Scalar>(flat: &NdArray<F>, users: usize, batch: usize) -> NdArray<F> {
    let c = flat.shape()[1];
    NdArray::from_fn(&[users * batch, c], |ix| {
        let (u, b) = (ix[0] / batch, ix[0] % batch);
        flat.at2(b * users + u, ix[1])
    })
}
