//! Named building blocks shared by the four allocator models. Each block
//! registers its parameters under a dotted name prefix, runs forward with an
//! explicit cache, and folds gradients back into the store.

use rand::Rng;

use crate::nn::ops::{
    add_into, attention_fuse_backward, attention_fuse_forward, batch_norm_backward,
    batch_norm_forward, batch_norm_infer, batch_norm_infer_into, relu_inplace,
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, glorot_uniform, relu_backward, relu_forward, residual_add,
    update_running_stats, AttentionCache, BatchNormCache,
};
use crate::nn::{Mode, NnError, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::NdArray;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;
/// Every convolution kernel in the models is 2x2, stride 1, no padding.
pub const CONV_KERNEL: usize = 2;
pub const CONV_STRIDE: usize = 1;
pub const CONV_PAD: usize = 0;

// ---------------------------------------------------------------------------

pub struct Dense {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

pub struct DenseCache<F> {
    /// Input, kept only when a backward pass will follow.
    x: Option<NdArray<F>>,
}

impl Dense {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Dense {
            name: name.into(),
            fan_in,
            fan_out,
        }
    }

    fn w(&self) -> String {
        format!("{}.w", self.name)
    }

    fn b(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn register<F: Scalar, R: Rng>(&self, store: &mut ParameterStore<F>, rng: &mut R) {
        let w = glorot_uniform(&[self.fan_in, self.fan_out], self.fan_in, self.fan_out, rng);
        store.insert(&self.w(), w, true);
        store.insert(&self.b(), NdArray::zeros(&[self.fan_out]), true);
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParameterStore<F>,
        x: &NdArray<F>,
        mode: Mode,
    ) -> Result<(NdArray<F>, DenseCache<F>), NnError> {
        let y = dense_forward(x, store.value(&self.w()), store.value(&self.b()))?;
        let x = (mode == Mode::Train).then(|| x.clone());
        Ok((y, DenseCache { x }))
    }

    /// Accumulates dW/db and returns dx.
    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParameterStore<F>,
        cache: &DenseCache<F>,
        gy: &NdArray<F>,
    ) -> NdArray<F> {
        let x = cache.x.as_ref().expect("dense backward needs a train-mode cache");
        let (gx, gw, gb) = dense_backward(x, store.value(&self.w()), gy);
        store.accumulate_grad(&self.w(), &gw);
        store.accumulate_grad(&self.b(), &gb);
        gx
    }
}

// ---------------------------------------------------------------------------

pub struct BatchNorm {
    pub name: String,
    pub dim: usize,
}

pub struct BnCache<F> {
    inner: Option<BatchNormCache<F>>,
    batch_mean: Option<Vec<F>>,
    batch_var: Option<Vec<F>>,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        BatchNorm {
            name: name.into(),
            dim,
        }
    }

    fn gamma(&self) -> String {
        format!("{}.gamma", self.name)
    }

    fn beta(&self) -> String {
        format!("{}.beta", self.name)
    }

    fn run_mean(&self) -> String {
        format!("{}.run_mean", self.name)
    }

    fn run_var(&self) -> String {
        format!("{}.run_var", self.name)
    }

    pub fn register<F: Scalar>(&self, store: &mut ParameterStore<F>) {
        store.insert(&self.gamma(), NdArray::full(&[self.dim], F::one()), true);
        store.insert(&self.beta(), NdArray::zeros(&[self.dim]), true);
        store.insert(&self.run_mean(), NdArray::zeros(&[self.dim]), false);
        store.insert(&self.run_var(), NdArray::full(&[self.dim], F::one()), false);
    }

    /// Fused in-place inference normalization.
    pub fn infer_into<F: Scalar>(
        &self,
        store: &ParameterStore<F>,
        x: &mut NdArray<F>,
    ) -> Result<(), NnError> {
        batch_norm_infer_into(
            x,
            store.value(&self.gamma()),
            store.value(&self.beta()),
            store.value(&self.run_mean()),
            store.value(&self.run_var()),
            F::from_f64(BN_EPS),
        );
        Ok(())
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParameterStore<F>,
        x: &NdArray<F>,
        mode: Mode,
    ) -> Result<(NdArray<F>, BnCache<F>), NnError> {
        if mode == Mode::Infer {
            let y = batch_norm_infer(
                x,
                store.value(&self.gamma()),
                store.value(&self.beta()),
                store.value(&self.run_mean()),
                store.value(&self.run_var()),
                F::from_f64(BN_EPS),
            );
            return Ok((
                y,
                BnCache {
                    inner: None,
                    batch_mean: None,
                    batch_var: None,
                },
            ));
        }
        let out = batch_norm_forward(
            x,
            store.value(&self.gamma()),
            store.value(&self.beta()),
            store.value(&self.run_mean()),
            store.value(&self.run_var()),
            F::from_f64(BN_EPS),
            mode,
        )?;
        Ok((
            out.y,
            BnCache {
                inner: Some(out.cache),
                batch_mean: out.batch_mean,
                batch_var: out.batch_var,
            },
        ))
    }

    /// Accumulates dgamma/dbeta, folds the cached batch statistics into the
    /// running statistics, and returns dx.
    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParameterStore<F>,
        cache: &BnCache<F>,
        gy: &NdArray<F>,
    ) -> NdArray<F> {
        let gamma = store.value(&self.gamma()).clone();
        let inner = cache.inner.as_ref().expect("batch-norm backward needs a train-mode cache");
        let (dx, dgamma, dbeta) = batch_norm_backward(inner, &gamma, gy);
        store.accumulate_grad(&self.gamma(), &dgamma);
        store.accumulate_grad(&self.beta(), &dbeta);
        let momentum = F::from_f64(BN_MOMENTUM);
        if let Some(mean) = &cache.batch_mean {
            update_running_stats(&mut store.get_mut(&self.run_mean()).value, mean, momentum);
        }
        if let Some(var) = &cache.batch_var {
            update_running_stats(&mut store.get_mut(&self.run_var()).value, var, momentum);
        }
        dx
    }
}

// ---------------------------------------------------------------------------

/// Dense -> Norm -> ReLU -> Residual -> Dropout, all at one width.
pub struct ResBlock {
    pub dense: Dense,
    pub bn: BatchNorm,
    pub dropout: f64,
}

pub struct ResBlockCache<F> {
    dense: DenseCache<F>,
    bn: BnCache<F>,
    pre_relu: Option<NdArray<F>>,
    mask: Option<NdArray<F>>,
}

impl ResBlock {
    pub fn new(prefix: &str, width: usize, dropout: f64) -> Self {
        ResBlock {
            dense: Dense::new(format!("{prefix}.dense"), width, width),
            bn: BatchNorm::new(format!("{prefix}.bn"), width),
            dropout,
        }
    }

    pub fn register<F: Scalar, R: Rng>(&self, store: &mut ParameterStore<F>, rng: &mut R) {
        self.dense.register(store, rng);
        self.bn.register(store);
    }

    pub fn forward<F: Scalar, R: Rng>(
        &self,
        store: &ParameterStore<F>,
        x: &NdArray<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(NdArray<F>, ResBlockCache<F>), NnError> {
        let (mut h, dense_cache) = self.dense.forward(store, x, mode)?;
        if mode == Mode::Infer {
            // fused single-buffer path; backward never follows
            self.bn.infer_into(store, &mut h)?;
            relu_inplace(&mut h);
            add_into(&mut h, x);
            return Ok((
                h,
                ResBlockCache {
                    dense: dense_cache,
                    bn: BnCache {
                        inner: None,
                        batch_mean: None,
                        batch_var: None,
                    },
                    pre_relu: None,
                    mask: None,
                },
            ));
        }
        let (hn, bn_cache) = self.bn.forward(store, &h, mode)?;
        let a = relu_forward(&hn);
        let r = residual_add(x, &a)?;
        let (y, mask) = dropout_forward(&r, self.dropout, mode, rng);
        Ok((
            y,
            ResBlockCache {
                dense: dense_cache,
                bn: bn_cache,
                pre_relu: Some(hn),
                mask,
            },
        ))
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParameterStore<F>,
        cache: &ResBlockCache<F>,
        gy: &NdArray<F>,
    ) -> NdArray<F> {
        let g_r = dropout_backward(cache.mask.as_ref(), gy);
        let pre_relu = cache.pre_relu.as_ref().expect("res-block backward needs a train-mode cache");
        let g_act = relu_backward(pre_relu, &g_r);
        let g_hn = self.bn.backward(store, &cache.bn, &g_act);
        let g_dense = self.dense.backward(store, &cache.dense, &g_hn);
        // residual: identity branch adds g_r
        residual_add(&g_dense, &g_r).expect("residual shapes agree")
    }
}

// ---------------------------------------------------------------------------

/// Per-user feature extractor: Dense -> Norm -> ReLU -> Dropout -> Dense.
pub struct Encoder {
    pub dense1: Dense,
    pub bn: BatchNorm,
    pub dense2: Dense,
    pub dropout: f64,
}

pub struct EncoderCache<F> {
    d1: DenseCache<F>,
    bn: BnCache<F>,
    pre_relu: Option<NdArray<F>>,
    mask: Option<NdArray<F>>,
    d2: DenseCache<F>,
}

impl Encoder {
    pub fn new(prefix: &str, in_dim: usize, hidden: usize, out_dim: usize, dropout: f64) -> Self {
        Encoder {
            dense1: Dense::new(format!("{prefix}.dense1"), in_dim, hidden),
            bn: BatchNorm::new(format!("{prefix}.bn"), hidden),
            dense2: Dense::new(format!("{prefix}.dense2"), hidden, out_dim),
            dropout,
        }
    }

    pub fn register<F: Scalar, R: Rng>(&self, store: &mut ParameterStore<F>, rng: &mut R) {
        self.dense1.register(store, rng);
        self.bn.register(store);
        self.dense2.register(store, rng);
    }

    pub fn forward<F: Scalar, R: Rng>(
        &self,
        store: &ParameterStore<F>,
        x: &NdArray<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(NdArray<F>, EncoderCache<F>), NnError> {
        let (mut h, d1) = self.dense1.forward(store, x, mode)?;
        if mode == Mode::Infer {
            self.bn.infer_into(store, &mut h)?;
            relu_inplace(&mut h);
            let (y, d2) = self.dense2.forward(store, &h, mode)?;
            return Ok((
                y,
                EncoderCache {
                    d1,
                    bn: BnCache {
                        inner: None,
                        batch_mean: None,
                        batch_var: None,
                    },
                    pre_relu: None,
                    mask: None,
                    d2,
                },
            ));
        }
        let (hn, bn) = self.bn.forward(store, &h, mode)?;
        let a = relu_forward(&hn);
        let (d, mask) = dropout_forward(&a, self.dropout, mode, rng);
        let (y, d2) = self.dense2.forward(store, &d, mode)?;
        Ok((
            y,
            EncoderCache {
                d1,
                bn,
                pre_relu: Some(hn),
                mask,
                d2,
            },
        ))
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParameterStore<F>,
        cache: &EncoderCache<F>,
        gy: &NdArray<F>,
    ) -> NdArray<F> {
        let g_d = self.dense2.backward(store, &cache.d2, gy);
        let g_a = dropout_backward(cache.mask.as_ref(), &g_d);
        let pre_relu = cache.pre_relu.as_ref().expect("encoder backward needs a train-mode cache");
        let g_hn = relu_backward(pre_relu, &g_a);
        let g_h = self.bn.backward(store, &cache.bn, &g_hn);
        self.dense1.backward(store, &cache.d1, &g_h)
    }
}

// ---------------------------------------------------------------------------

/// 2-d convolution block (kernel 2x2, stride 1, no padding) with bias.
pub struct Conv {
    pub name: String,
    pub in_channels: usize,
    pub filters: usize,
}

pub struct ConvCache<F> {
    x: Option<NdArray<F>>,
}

impl Conv {
    pub fn new(name: impl Into<String>, in_channels: usize, filters: usize) -> Self {
        Conv {
            name: name.into(),
            in_channels,
            filters,
        }
    }

    fn k(&self) -> String {
        format!("{}.kernels", self.name)
    }

    fn b(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn register<F: Scalar, R: Rng>(&self, store: &mut ParameterStore<F>, rng: &mut R) {
        let patch = CONV_KERNEL * CONV_KERNEL;
        let kernels = glorot_uniform(
            &[self.filters, self.in_channels, CONV_KERNEL, CONV_KERNEL],
            self.in_channels * patch,
            self.filters * patch,
            rng,
        );
        store.insert(&self.k(), kernels, true);
        store.insert(&self.b(), NdArray::zeros(&[self.filters]), true);
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParameterStore<F>,
        x: &NdArray<F>,
        mode: Mode,
    ) -> Result<(NdArray<F>, ConvCache<F>), NnError> {
        let y = conv2d_forward(
            x,
            store.value(&self.k()),
            store.value(&self.b()),
            CONV_STRIDE,
            CONV_PAD,
        )?;
        let x = (mode == Mode::Train).then(|| x.clone());
        Ok((y, ConvCache { x }))
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParameterStore<F>,
        cache: &ConvCache<F>,
        gy: &NdArray<F>,
    ) -> NdArray<F> {
        let x = cache.x.as_ref().expect("conv backward needs a train-mode cache");
        let (gx, gk, gb) =
            conv2d_backward(x, store.value(&self.k()), gy, CONV_STRIDE, CONV_PAD);
        store.accumulate_grad(&self.k(), &gk);
        store.accumulate_grad(&self.b(), &gb);
        gx
    }
}

// ---------------------------------------------------------------------------

/// Attention fusion of per-user vectors with a learned scorer.
pub struct Attention {
    pub name: String,
    pub users: usize,
    pub feat: usize,
}

pub struct FuseCache<F> {
    u: Option<NdArray<F>>,
    inner: AttentionCache<F>,
}

impl Attention {
    pub fn new(name: impl Into<String>, users: usize, feat: usize) -> Self {
        Attention {
            name: name.into(),
            users,
            feat,
        }
    }

    fn w(&self) -> String {
        format!("{}.w", self.name)
    }

    fn b(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn register<F: Scalar, R: Rng>(&self, store: &mut ParameterStore<F>, rng: &mut R) {
        let fan_in = self.users * self.feat;
        let w = glorot_uniform(&[fan_in, self.users], fan_in, self.users, rng);
        store.insert(&self.w(), w, true);
        store.insert(&self.b(), NdArray::zeros(&[self.users]), true);
    }

    /// u is [B, users, feat]; returns the fused [B, feat] vector.
    pub fn forward<F: Scalar>(
        &self,
        store: &ParameterStore<F>,
        u: &NdArray<F>,
        mode: Mode,
    ) -> Result<(NdArray<F>, FuseCache<F>), NnError> {
        let (y, inner) =
            attention_fuse_forward(u, store.value(&self.w()), store.value(&self.b()))?;
        let u = (mode == Mode::Train).then(|| u.clone());
        Ok((y, FuseCache { u, inner }))
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParameterStore<F>,
        cache: &FuseCache<F>,
        gy: &NdArray<F>,
    ) -> NdArray<F> {
        let u = cache.u.as_ref().expect("attention backward needs a train-mode cache");
        let (du, dw, db) =
            attention_fuse_backward(u, store.value(&self.w()), &cache.inner, gy);
        store.accumulate_grad(&self.w(), &dw);
        store.accumulate_grad(&self.b(), &db);
        du
    }
}
