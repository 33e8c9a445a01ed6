//! Whole-model gradient verification against central finite differences.
//!
//! Walks every trainable parameter entry, perturbs each scalar, and compares
//! the loss slope with the gradient accumulated by the model's backward
//! pass. Verification only; training never calls this.

use rand::Rng;

use super::{loss_and_grads, AnyModel};
use crate::nn::gradcheck::max_rel_error;
use crate::nn::{Mode, ParameterStore};
use crate::scalar::Scalar;
use crate::scenario::stream_rng;
use crate::tensor::NdArray;

/// Largest relative error between analytic and finite-difference gradients
/// over every trainable parameter of the model. Run it on models built with
/// dropout 0 so the loss is deterministic.
pub fn model_grad_max_rel_error<F: Scalar>(
    model: &AnyModel,
    store: &mut ParameterStore<F>,
    x: &NdArray<F>,
    ch_labels: &[u8],
    pw_labels: &[u8],
    h: F,
) -> F {
    assert_eq!(
        model.spec().hp.dropout, 0.0,
        "gradient checks need a deterministic loss; build the model with dropout 0"
    );
    let loss_of = |store: &ParameterStore<F>| -> F {
        let mut rng = stream_rng(0, 0); // unused: dropout is off
        let (out, _) = model
            .forward(store, x, Mode::Train, &mut rng)
            .expect("forward in gradient check");
        loss_and_grads(&out, ch_labels, pw_labels).0
    };

    let mut rng = stream_rng(0, 0);
    let (out, cache) = model.forward(store, x, Mode::Train, &mut rng).unwrap();
    let (_, grads) = loss_and_grads(&out, ch_labels, pw_labels);
    store.zero_grads();
    model.backward(store, &cache, &grads);

    let names: Vec<String> = store.names().map(String::from).collect();
    let two_h = h + h;
    let floor = F::from_f64(crate::nn::gradcheck::REL_ERROR_FLOOR);
    let mut worst = F::zero();
    for name in names {
        if !store.get(&name).trainable {
            continue;
        }
        let analytic = store.get(&name).grad.data().to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = store.get(&name).value.data()[i];
            store.get_mut(&name).value.data_mut()[i] = orig + h;
            let up = loss_of(store);
            store.get_mut(&name).value.data_mut()[i] = orig - h;
            let down = loss_of(store);
            store.get_mut(&name).value.data_mut()[i] = orig;
            numeric.push((up - down) / two_h);
        }
        worst = worst.max(max_rel_error(&analytic, &numeric, floor));
    }
    worst
}

/// A random batch plus labels sized for `model`, for gradient checks.
pub fn random_check_batch<F: Scalar, R: Rng>(
    model: &AnyModel,
    batch: usize,
    rng: &mut R,
) -> (NdArray<F>, Vec<u8>, Vec<u8>) {
    let spec = model.spec();
    let nodes = spec.n_nodes();
    let n = batch * spec.n_channels * nodes * nodes;
    let x = NdArray::from_vec(
        &[batch, spec.n_channels, nodes, nodes],
        (0..n).map(|_| rng.gen_range(-F::one()..F::one())).collect(),
    );
    let ch = (0..batch * spec.n_pairs)
        .map(|_| rng.gen_range(0..spec.n_channels) as u8)
        .collect();
    let pw = (0..batch * spec.n_users())
        .map(|_| rng.gen_range(0..spec.n_levels) as u8)
        .collect();
    (x, ch, pw)
}
