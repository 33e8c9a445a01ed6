//! Reference allocators: the exhaustive optimum used as the training label,
//! the equally-reduced-power baseline, and a random feasible draw.

use rand::Rng;
use thiserror::Error;

use crate::rate::{evaluate_into, eta_linear, noise_power, Allocation, RateReport};
use crate::scalar::Scalar;
use crate::scenario::{ChannelState, ScenarioConfig, RETRY_CAP};

/// The sample admits no feasible allocation: even with every D2D user
/// silent some CUE stays below its SE threshold. Callers discard the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("even the all-off allocation violates the CUE constraint")]
pub struct InfeasibleSample;

/// Number of (channel, power) combinations the exhaustive search visits.
pub fn enumeration_count<F: Scalar>(config: &ScenarioConfig<F>) -> u128 {
    let k = config.n_channels as u128;
    let l = config.n_levels() as u128;
    k.pow(config.n_pairs as u32) * l.pow(config.n_users() as u32)
}

/// Advances a little-endian-in-reverse odometer: the LAST digit is fastest,
/// so successive states enumerate vectors in lexicographic order. Returns
/// false once all states have been visited.
fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Enumerates every channel assignment and power tuple, returning a feasible
/// allocation with maximum sum D2D SE. Ties keep the lexicographically
/// smallest (channel vector, power vector), which is the first one visited.
pub fn exhaustive_optimal<F: Scalar>(
    h: &ChannelState<F>,
    config: &ScenarioConfig<F>,
) -> Result<(Allocation, F), InfeasibleSample> {
    let noise = noise_power(config);
    let eta = eta_linear(config);
    let mut alloc = Allocation::all_off(config.n_pairs);
    let mut report = RateReport::empty(config);
    let mut best: Option<(Allocation, F)> = None;

    let mut channels_left = true;
    while channels_left {
        let mut powers_left = true;
        while powers_left {
            evaluate_into(h, &alloc, config, noise, eta, &mut report);
            if report.feasible {
                let better = match &best {
                    Some((_, b)) => report.sum_due_se > *b,
                    None => true,
                };
                if better {
                    best = Some((alloc.clone(), report.sum_due_se));
                }
            }
            powers_left = advance(&mut alloc.power_level, config.n_levels());
        }
        channels_left = advance(&mut alloc.channel, config.n_channels);
    }
    best.ok_or(InfeasibleSample)
}

/// Equally-reduced-power baseline: each pair picks the channel with the best
/// worst-direction mutual gain, all users start at the top power level, and
/// every level is decremented in lockstep until the CUE constraint holds.
pub fn erp<F: Scalar>(
    h: &ChannelState<F>,
    config: &ScenarioConfig<F>,
) -> Result<Allocation, InfeasibleSample> {
    let mut channel = Vec::with_capacity(config.n_pairs);
    for i in 0..config.n_pairs {
        let (mut best_k, mut best_gain) = (0usize, F::neg_infinity());
        for k in 0..config.n_channels {
            let ab = h.gain(k, 2 * i, 2 * i + 1);
            let ba = h.gain(k, 2 * i + 1, 2 * i);
            let worst = ab.min(ba);
            if worst > best_gain {
                best_gain = worst;
                best_k = k;
            }
        }
        channel.push(best_k);
    }

    let noise = noise_power(config);
    let eta = eta_linear(config);
    let mut report = RateReport::empty(config);
    let mut level = config.n_levels() - 1;
    loop {
        let alloc = Allocation {
            channel: channel.clone(),
            power_level: vec![level; config.n_users()],
        };
        evaluate_into(h, &alloc, config, noise, eta, &mut report);
        if report.feasible {
            return Ok(alloc);
        }
        if level == 0 {
            return Err(InfeasibleSample);
        }
        level -= 1;
    }
}

/// Uniform random channels and levels, redrawn until feasible. After the
/// retry cap the last channel draw is kept with every user silenced.
pub fn random_feasible<F: Scalar>(
    h: &ChannelState<F>,
    config: &ScenarioConfig<F>,
    rng: &mut impl Rng,
) -> Allocation {
    let noise = noise_power(config);
    let eta = eta_linear(config);
    let mut report = RateReport::empty(config);
    let mut alloc = Allocation::all_off(config.n_pairs);
    for _ in 0..RETRY_CAP {
        for k in alloc.channel.iter_mut() {
            *k = rng.gen_range(0..config.n_channels);
        }
        for l in alloc.power_level.iter_mut() {
            *l = rng.gen_range(0..config.n_levels());
        }
        evaluate_into(h, &alloc, config, noise, eta, &mut report);
        if report.feasible {
            return alloc;
        }
    }
    for l in alloc.power_level.iter_mut() {
        *l = 0;
    }
    alloc
}
