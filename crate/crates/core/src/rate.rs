//! Spectral-efficiency evaluation of candidate allocations.
//!
//! For a channel/power assignment this computes every D2D user's SE, every
//! cellular user's SE, and whether the cellular protection constraint holds.

use thiserror::Error;

use crate::scalar::{db_to_linear, dbm_to_watts, Scalar};
use crate::scenario::{ChannelState, ScenarioConfig};

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("allocation sized for {expected} {what}, got {got}")]
    WrongLength {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} index {got} out of range 0..{bound}")]
    IndexOutOfRange {
        what: &'static str,
        got: usize,
        bound: usize,
    },
}

/// One channel index per pair and one discrete power level per user,
/// both 0-based (level 0 is the 0 W entry of the power grid).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Allocation {
    pub channel: Vec<usize>,
    pub power_level: Vec<usize>,
}

impl Allocation {
    /// Every pair on channel 0, every user silent.
    pub fn all_off(n_pairs: usize) -> Self {
        Allocation {
            channel: vec![0; n_pairs],
            power_level: vec![0; 2 * n_pairs],
        }
    }

    pub fn validate<F: Scalar>(&self, config: &ScenarioConfig<F>) -> Result<(), AllocationError> {
        if self.channel.len() != config.n_pairs {
            return Err(AllocationError::WrongLength {
                what: "pairs",
                expected: config.n_pairs,
                got: self.channel.len(),
            });
        }
        if self.power_level.len() != config.n_users() {
            return Err(AllocationError::WrongLength {
                what: "users",
                expected: config.n_users(),
                got: self.power_level.len(),
            });
        }
        for &k in &self.channel {
            if k >= config.n_channels {
                return Err(AllocationError::IndexOutOfRange {
                    what: "channel",
                    got: k,
                    bound: config.n_channels,
                });
            }
        }
        for &l in &self.power_level {
            if l >= config.n_levels() {
                return Err(AllocationError::IndexOutOfRange {
                    what: "power level",
                    got: l,
                    bound: config.n_levels(),
                });
            }
        }
        Ok(())
    }
}

/// Per-user and per-CUE spectral efficiencies of one allocation, b/s/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport<F> {
    /// SE of D2D user `iu` (order 1a, 1b, ..., Na, Nb).
    pub se_due: Vec<F>,
    /// SE of the CUE on each channel.
    pub se_cue: Vec<F>,
    /// Sum of `se_due`.
    pub sum_due_se: F,
    /// True iff every CUE SE strictly exceeds the threshold.
    pub feasible: bool,
}

impl<F: Scalar> RateReport<F> {
    pub fn empty<C>(config: &ScenarioConfig<C>) -> Self
    where
        C: Scalar,
    {
        RateReport {
            se_due: vec![F::zero(); config.n_users()],
            se_cue: vec![F::zero(); config.n_channels],
            sum_due_se: F::zero(),
            feasible: false,
        }
    }
}

/// Thermal noise power over the configured bandwidth, watts.
pub fn noise_power<F: Scalar>(config: &ScenarioConfig<F>) -> F {
    dbm_to_watts(config.noise_density_dbm) * config.bandwidth_hz
}

/// Linear self-interference mitigation factor.
pub fn eta_linear<F: Scalar>(config: &ScenarioConfig<F>) -> F {
    db_to_linear(config.eta_db)
}

/// Interference at D2D user `iu = 2i + u` from every other pair sharing
/// pair `i`'s channel, watts. Terms accumulate in pair order, user a then b.
pub fn due_interference<F: Scalar>(
    h: &ChannelState<F>,
    alloc: &Allocation,
    config: &ScenarioConfig<F>,
    pair: usize,
    user: usize,
) -> F {
    let k = alloc.channel[pair];
    let rx = 2 * pair + user;
    let mut acc = F::zero();
    for j in 0..config.n_pairs {
        if j == pair || alloc.channel[j] != k {
            continue;
        }
        for ju in [2 * j, 2 * j + 1] {
            acc += h.gain(k, rx, ju) * config.power_levels_w[alloc.power_level[ju]];
        }
    }
    acc
}

/// Residual self-interference at user `iu`, watts: eta times own power.
pub fn self_interference<F: Scalar>(
    alloc: &Allocation,
    config: &ScenarioConfig<F>,
    pair: usize,
    user: usize,
) -> F {
    eta_linear(config) * config.power_levels_w[alloc.power_level[2 * pair + user]]
}

/// Spectral efficiency of D2D user `u` of `pair` on its assigned channel.
pub fn se_due<F: Scalar>(
    h: &ChannelState<F>,
    alloc: &Allocation,
    config: &ScenarioConfig<F>,
    pair: usize,
    user: usize,
) -> F {
    se_due_with(h, alloc, config, pair, user, noise_power(config), eta_linear(config))
}

fn se_due_with<F: Scalar>(
    h: &ChannelState<F>,
    alloc: &Allocation,
    config: &ScenarioConfig<F>,
    pair: usize,
    user: usize,
    noise: F,
    eta: F,
) -> F {
    let k = alloc.channel[pair];
    let rx = 2 * pair + user;
    let partner = 2 * pair + (1 - user);
    let cue_col = config.n_users();
    let signal = h.gain(k, rx, partner) * config.power_levels_w[alloc.power_level[partner]];
    let own_power = config.power_levels_w[alloc.power_level[rx]];
    let denom = noise
        + due_interference(h, alloc, config, pair, user)
        + h.gain(k, rx, cue_col) * config.cue_power_w
        + eta * own_power;
    (F::one() + signal / denom).log2()
}

/// Spectral efficiency of the CUE on channel `k`.
pub fn se_cue<F: Scalar>(
    h: &ChannelState<F>,
    alloc: &Allocation,
    config: &ScenarioConfig<F>,
    k: usize,
) -> F {
    se_cue_with(h, alloc, config, k, noise_power(config))
}

fn se_cue_with<F: Scalar>(
    h: &ChannelState<F>,
    alloc: &Allocation,
    config: &ScenarioConfig<F>,
    k: usize,
    noise: F,
) -> F {
    let bs = config.n_users();
    let mut interference = F::zero();
    for j in 0..config.n_pairs {
        if alloc.channel[j] != k {
            continue;
        }
        for ju in [2 * j, 2 * j + 1] {
            interference += h.gain(k, bs, ju) * config.power_levels_w[alloc.power_level[ju]];
        }
    }
    let signal = h.gain(k, bs, bs) * config.cue_power_w;
    (F::one() + signal / (noise + interference)).log2()
}

/// Full evaluation of an allocation.
pub fn evaluate<F: Scalar>(
    h: &ChannelState<F>,
    alloc: &Allocation,
    config: &ScenarioConfig<F>,
) -> RateReport<F> {
    let mut report = RateReport::empty(config);
    evaluate_into(h, alloc, config, noise_power(config), eta_linear(config), &mut report);
    report
}

/// Allocation evaluation into a caller-owned report; `noise` and `eta` come
/// from [`noise_power`] / [`eta_linear`] so repeated calls (enumeration
/// loops) skip the conversions while producing bit-identical numbers.
pub fn evaluate_into<F: Scalar>(
    h: &ChannelState<F>,
    alloc: &Allocation,
    config: &ScenarioConfig<F>,
    noise: F,
    eta: F,
    report: &mut RateReport<F>,
) {
    debug_assert_eq!(report.se_due.len(), config.n_users());
    debug_assert_eq!(report.se_cue.len(), config.n_channels);
    let mut sum = F::zero();
    for pair in 0..config.n_pairs {
        for user in 0..2 {
            let se = se_due_with(h, alloc, config, pair, user, noise, eta);
            report.se_due[2 * pair + user] = se;
            sum += se;
        }
    }
    let mut feasible = true;
    for k in 0..config.n_channels {
        let se = se_cue_with(h, alloc, config, k, noise);
        report.se_cue[k] = se;
        feasible &= se > config.cue_thr;
    }
    report.sum_due_se = sum;
    report.feasible = feasible;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_csi, place_users, stream_rng};
    use crate::tensor::NdArray;
    use approx::assert_relative_eq;
    use rand::Rng;

    type Cfg = ScenarioConfig<f64>;

    fn uniform_gains(cfg: &Cfg, g: f64) -> ChannelState<f64> {
        ChannelState::from_gains(
            cfg.n_pairs,
            NdArray::full(&[cfg.n_channels, cfg.n_nodes(), cfg.n_nodes()], g),
        )
    }

    #[test]
    fn noise_power_values() {
        let cfg = Cfg::default();
        // -173 dBm/Hz over 10 MHz = 10^-13.3 W
        assert_relative_eq!(noise_power(&cfg), 10f64.powf(-13.3), max_relative = 1e-12);
        assert_relative_eq!(noise_power(&cfg), 5.012e-14, max_relative = 1e-3);
        // 1 Hz bandwidth
        let mut narrow = Cfg::default();
        narrow.bandwidth_hz = 1.0;
        assert_relative_eq!(noise_power(&narrow), 5.012e-21, max_relative = 1e-3);
        // linear in bandwidth
        let mut wide = Cfg::default();
        wide.bandwidth_hz = 2e7;
        assert_relative_eq!(noise_power(&wide), 2.0 * noise_power(&cfg), max_relative = 1e-15);
    }

    #[test]
    fn due_interference_cases() {
        let mut cfg = Cfg::default();
        cfg.n_pairs = 1;
        let h = uniform_gains(&cfg, 1e-8);
        let alloc = Allocation { channel: vec![0], power_level: vec![7, 7] };
        assert_eq!(due_interference(&h, &alloc, &cfg, 0, 0), 0.0);

        let cfg = Cfg::default();
        let h = uniform_gains(&cfg, 1e-8);
        let separate = Allocation { channel: vec![0, 1], power_level: vec![7; 4] };
        assert_eq!(due_interference(&h, &separate, &cfg, 0, 0), 0.0);

        // same channel: hand-computed two-term sum
        let mut gains = NdArray::full(&[2, 5, 5], 1e-12);
        gains.set3(0, 0, 2, 3e-9); // from 2a into 1a
        gains.set3(0, 0, 3, 5e-9); // from 2b into 1a
        let h = ChannelState::from_gains(2, gains);
        let shared = Allocation { channel: vec![0, 0], power_level: vec![7, 7, 7, 3] };
        let p7 = cfg.power_levels_w[7];
        let p3 = cfg.power_levels_w[3];
        assert_relative_eq!(
            due_interference(&h, &shared, &cfg, 0, 0),
            3e-9 * p7 + 5e-9 * p3,
            max_relative = 1e-15
        );
    }

    #[test]
    fn self_interference_cases() {
        let cfg = Cfg::default();
        let full = Allocation { channel: vec![0, 1], power_level: vec![7; 4] };
        // -100 dB of 200 mW
        assert_relative_eq!(self_interference(&full, &cfg, 0, 0), 2e-11, max_relative = 1e-12);
        let off = Allocation { channel: vec![0, 1], power_level: vec![0; 4] };
        assert_eq!(self_interference(&off, &cfg, 0, 0), 0.0);
        // identity factor at 0 dB
        let mut unity = Cfg::default();
        unity.eta_db = 0.0;
        assert_eq!(self_interference(&full, &unity, 1, 1), unity.power_levels_w[7]);
    }

    #[test]
    fn se_due_zero_and_unit_cases() {
        let cfg = Cfg::default();
        let h = uniform_gains(&cfg, 1e-9);
        // partner silent: zero numerator
        let alloc = Allocation { channel: vec![0, 1], power_level: vec![7, 0, 7, 7] };
        assert_eq!(se_due(&h, &alloc, &cfg, 0, 0), 0.0);

        // signal equal to noise with everything else negligible: log2(2) = 1
        let mut quiet = Cfg::default();
        quiet.n_pairs = 1;
        quiet.n_channels = 1;
        quiet.eta_db = -4000.0; // underflows to an exact 0 linear factor
        let noise = noise_power(&quiet);
        let mut gains = NdArray::full(&[1, 3, 3], 1e-300);
        gains.set3(0, 0, 1, noise / quiet.power_levels_w[7]);
        let h = ChannelState::from_gains(1, gains);
        let alloc = Allocation { channel: vec![0], power_level: vec![0, 7] };
        assert_relative_eq!(se_due(&h, &alloc, &quiet, 0, 0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn se_cue_clean_channel_value() {
        // No pair on the channel, gain 1e-9, 0.2 W: log2(1 + 2e-10 / N0W)
        let mut cfg = Cfg::default();
        cfg.n_pairs = 1;
        let mut gains = NdArray::full(&[2, 3, 3], 1e-12);
        gains.set3(1, 2, 2, 1e-9);
        let h = ChannelState::from_gains(1, gains);
        let alloc = Allocation { channel: vec![0], power_level: vec![7, 7] };
        let noise = 10f64.powf((-173.0 - 30.0) / 10.0) * 1e7; // independent conversion
        let expect = (1.0 + 1e-9 * 0.2 / noise).log2();
        assert_relative_eq!(se_cue(&h, &alloc, &cfg, 1), expect, max_relative = 1e-12);
        assert_relative_eq!(se_cue(&h, &alloc, &cfg, 1), 11.96, max_relative = 1e-3);
    }

    #[test]
    fn se_cue_monotone_in_interferer_power() {
        let cfg = Cfg::default();
        let layout = place_users(&cfg, 42).unwrap();
        let h = build_csi(&layout, &cfg, 42);
        let mut prev = f64::INFINITY;
        for level in 0..cfg.n_levels() {
            let alloc = Allocation { channel: vec![0, 0], power_level: vec![level; 4] };
            let se = se_cue(&h, &alloc, &cfg, 0);
            assert!(se < prev || level == 0, "SE must strictly decrease");
            prev = se;
        }
    }

    #[test]
    fn evaluate_all_off_is_feasible() {
        let cfg = Cfg::default();
        let layout = place_users(&cfg, 5).unwrap();
        let h = build_csi(&layout, &cfg, 5);
        let report = evaluate(&h, &Allocation::all_off(2), &cfg);
        assert_eq!(report.sum_due_se, 0.0);
        assert!(report.se_due.iter().all(|&v| v == 0.0));
        assert!(report.feasible);
    }

    #[test]
    fn evaluate_sum_matches_entries() {
        let cfg = Cfg::default();
        let mut rng = stream_rng(17, 0);
        for seed in 0..50 {
            let layout = place_users(&cfg, seed).unwrap();
            let h = build_csi(&layout, &cfg, seed);
            let alloc = Allocation {
                channel: (0..2).map(|_| rng.gen_range(0..2)).collect(),
                power_level: (0..4).map(|_| rng.gen_range(0..8)).collect(),
            };
            let report = evaluate(&h, &alloc, &cfg);
            let sum: f64 = report.se_due.iter().sum();
            assert_eq!(report.sum_due_se, sum);
            assert!(report.se_due.iter().all(|&v| v >= 0.0 && v.is_finite()));
            assert!(report.se_cue.iter().all(|&v| v >= 0.0 && v.is_finite()));
            assert_eq!(report.feasible, report.se_cue.iter().all(|&v| v > cfg.cue_thr));
        }
    }

    #[test]
    fn raising_power_never_helps_other_receivers() {
        let cfg = Cfg::default();
        let mut rng = stream_rng(23, 0);
        for seed in 100..140 {
            let layout = place_users(&cfg, seed).unwrap();
            let h = build_csi(&layout, &cfg, seed);
            let alloc = Allocation {
                channel: (0..2).map(|_| rng.gen_range(0..2)).collect(),
                power_level: (0..4).map(|_| rng.gen_range(0..7)).collect(),
            };
            let base = evaluate(&h, &alloc, &cfg);
            for bump in 0..4 {
                let mut raised = alloc.clone();
                raised.power_level[bump] += 1;
                let after = evaluate(&h, &raised, &cfg);
                for iu in 0..4 {
                    if iu / 2 == bump / 2 {
                        // own pair: the partner receives this power as signal
                        continue;
                    }
                    assert!(
                        after.se_due[iu] <= base.se_due[iu] + 1e-15,
                        "raising user {bump} improved user {iu}"
                    );
                }
                for k in 0..2 {
                    assert!(after.se_cue[k] <= base.se_cue[k] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn swapping_pair_users_swaps_their_se() {
        let cfg = Cfg::default();
        let layout = place_users(&cfg, 77).unwrap();
        let h = build_csi(&layout, &cfg, 77);
        // swap users a/b of pair 0 in the tensor and in the power vector
        let swap = |i: usize| match i {
            0 => 1,
            1 => 0,
            other => other,
        };
        let nodes = cfg.n_nodes();
        let swapped = ChannelState::from_gains(
            cfg.n_pairs,
            NdArray::from_fn(&[cfg.n_channels, nodes, nodes], |ix| {
                h.gain(ix[0], swap(ix[1]), swap(ix[2]))
            }),
        );
        let alloc = Allocation { channel: vec![1, 0], power_level: vec![3, 6, 2, 5] };
        let mut alloc_swapped = alloc.clone();
        alloc_swapped.power_level.swap(0, 1);
        let r1 = evaluate(&h, &alloc, &cfg);
        let r2 = evaluate(&swapped, &alloc_swapped, &cfg);
        assert_eq!(r1.se_due[0], r2.se_due[1]);
        assert_eq!(r1.se_due[1], r2.se_due[0]);
        assert_eq!(r1.se_due[2], r2.se_due[2]);
        assert_eq!(r1.se_cue, r2.se_cue);
    }

    #[test]
    fn allocation_validation() {
        let cfg = Cfg::default();
        assert!(Allocation::all_off(2).validate(&cfg).is_ok());
        let bad_k = Allocation { channel: vec![0, 2], power_level: vec![0; 4] };
        assert!(bad_k.validate(&cfg).is_err());
        let bad_l = Allocation { channel: vec![0, 1], power_level: vec![0, 0, 0, 8] };
        assert!(bad_l.validate(&cfg).is_err());
        let bad_len = Allocation { channel: vec![0], power_level: vec![0; 4] };
        assert!(bad_len.validate(&cfg).is_err());
    }
}
