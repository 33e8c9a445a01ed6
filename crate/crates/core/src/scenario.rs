//! Scenario generation: user placement and the per-channel gain tensor.
//!
//! A scenario is `N` full-duplex D2D pairs reusing the uplink channels of `K`
//! cellular users in an `area_x * area_y` cell with the base station at the
//! center. Link gains combine a power-law path loss with Rayleigh fading and
//! are collected into one tensor indexed `[channel][receiver][transmitter]`.

use num_complex::Complex;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::NdArray;

/// Smallest gain ever stored; keeps the tensor strictly positive so the
/// dB-domain feature transform stays finite.
pub const GAIN_FLOOR: f64 = 1e-30;

/// Resampling budget for placement and labeling retry loops.
pub const RETRY_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("generation retry cap exceeded while {0}")]
    RetryCapExceeded(&'static str),
}

/// Physical and sizing constants of one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig<F> {
    /// Number of D2D pairs (N).
    pub n_pairs: usize,
    /// Number of cellular users / channels (K).
    pub n_channels: usize,
    /// Cell side lengths in meters.
    pub area_x: F,
    pub area_y: F,
    /// Maximum distance between the two users of a pair, meters.
    pub d2d_max_dist: F,
    /// Path loss model: gain = fading / (pl_coeff * d^pl_exp).
    pub pl_coeff: F,
    pub pl_exp: F,
    /// Noise power spectral density, dBm/Hz.
    pub noise_density_dbm: F,
    /// Channel bandwidth, Hz.
    pub bandwidth_hz: F,
    /// Self-interference mitigation factor, dB (negative).
    pub eta_db: F,
    /// Cellular transmit power, watts.
    pub cue_power_w: F,
    /// Discrete D2D transmit powers, watts, ascending; first entry must be 0.
    pub power_levels_w: Vec<F>,
    /// Minimum spectral efficiency every cellular user must keep, b/s/Hz.
    pub cue_thr: F,
    /// Distances are clamped below this, meters.
    pub min_link_dist: F,
}

impl<F: Scalar> Default for ScenarioConfig<F> {
    fn default() -> Self {
        let f = F::from_f64;
        // Eight levels spanning 0..200 mW inclusive.
        let power_levels_w = (0..8)
            .map(|l| f(l as f64 * 0.2 / 7.0))
            .collect();
        ScenarioConfig {
            n_pairs: 2,
            n_channels: 2,
            area_x: f(100.0),
            area_y: f(100.0),
            d2d_max_dist: f(30.0),
            pl_coeff: f(10f64.powf(3.453)),
            pl_exp: f(3.8),
            noise_density_dbm: f(-173.0),
            bandwidth_hz: f(1e7),
            eta_db: f(-100.0),
            cue_power_w: f(0.2),
            power_levels_w,
            cue_thr: f(0.5),
            min_link_dist: f(1.0),
        }
    }
}

impl<F: Scalar> ScenarioConfig<F> {
    /// Number of discrete power levels (L).
    pub fn n_levels(&self) -> usize {
        self.power_levels_w.len()
    }

    /// Number of D2D users (2N).
    pub fn n_users(&self) -> usize {
        2 * self.n_pairs
    }

    /// Receiver / transmitter axis length of the gain tensor (2N + 1).
    pub fn n_nodes(&self) -> usize {
        2 * self.n_pairs + 1
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: String| Err(ScenarioError::InvalidConfig(m));
        if self.n_pairs < 1 || self.n_channels < 1 {
            return err(format!(
                "need N >= 1 and K >= 1, got N={} K={}",
                self.n_pairs, self.n_channels
            ));
        }
        if self.n_levels() < 2 {
            return err(format!("need at least 2 power levels, got {}", self.n_levels()));
        }
        if !self.power_levels_w[0].is_zero() {
            return err("first power level must be 0 W (all-off must exist)".into());
        }
        for w in self.power_levels_w.windows(2) {
            if w[1] <= w[0] {
                return err("power levels must be strictly increasing".into());
            }
        }
        let positives: [(&str, F); 7] = [
            ("area_x", self.area_x),
            ("area_y", self.area_y),
            ("d2d_max_dist", self.d2d_max_dist),
            ("pl_coeff", self.pl_coeff),
            ("bandwidth_hz", self.bandwidth_hz),
            ("cue_power_w", self.cue_power_w),
            ("min_link_dist", self.min_link_dist),
        ];
        for (name, v) in positives {
            if v <= F::zero() || !v.is_finite() {
                return err(format!("{name} must be > 0"));
            }
        }
        if !self.noise_density_dbm.is_finite()
            || !self.eta_db.is_finite()
            || !self.pl_exp.is_finite()
            || !self.cue_thr.is_finite()
        {
            return err("non-finite parameter".into());
        }
        Ok(())
    }
}

/// Positions of everything in the cell, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLayout<F> {
    pub cue_pos: Vec<(F, F)>,
    /// `due_pos[i] = [a, b]` for pair `i`.
    pub due_pos: Vec<[(F, F); 2]>,
    pub bs_pos: (F, F),
}

impl<F: Scalar> UserLayout<F> {
    /// Position of receiver/transmitter node `idx` on channel `k`:
    /// indices `0..2N` are D2D users (pair idx/2, user idx%2), `2N` is the
    /// BS on the receiver axis and channel `k`'s CUE on the transmitter axis.
    fn due_or(&self, idx: usize, last: (F, F)) -> (F, F) {
        if idx < 2 * self.due_pos.len() {
            self.due_pos[idx / 2][idx % 2]
        } else {
            last
        }
    }
}

/// Linear power gains, `gains[k][rx][tx]`, all strictly positive.
///
/// Receiver order: 1a, 1b, ..., Na, Nb, BS. Transmitter order: 1a, ..., Nb,
/// CUE-of-channel-k. Diagonal D2D entries exist but are never read by the
/// rate engine; self-interference is modeled by the eta factor alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState<F> {
    n_pairs: usize,
    gains: NdArray<F>,
}

impl<F: Scalar> ChannelState<F> {
    pub fn from_gains(n_pairs: usize, gains: NdArray<F>) -> Self {
        let nodes = 2 * n_pairs + 1;
        assert_eq!(gains.shape().len(), 3, "gain tensor must be [K][2N+1][2N+1]");
        assert_eq!(gains.shape()[1], nodes);
        assert_eq!(gains.shape()[2], nodes);
        ChannelState { n_pairs, gains }
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn n_channels(&self) -> usize {
        self.gains.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        2 * self.n_pairs + 1
    }

    /// Linear gain from transmitter node `tx` to receiver node `rx` on
    /// channel `k` (node indexing as in the type docs).
    pub fn gain(&self, k: usize, rx: usize, tx: usize) -> F {
        self.gains.at3(k, rx, tx)
    }

    pub fn tensor(&self) -> &NdArray<F> {
        &self.gains
    }
}

/// Derives an isolated RNG for (seed, stream); streams never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn euclid<F: Scalar>(a: (F, F), b: (F, F)) -> F {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

/// Places K CUEs uniformly in the area and N pairs with user `a` uniform in
/// the area and user `b` uniform in a disk of radius `d2d_max_dist` around
/// `a`, resampled until it lands inside the area.
pub fn place_users<F: Scalar>(
    config: &ScenarioConfig<F>,
    seed: u64,
) -> Result<UserLayout<F>, ScenarioError> {
    let mut rng = stream_rng(seed, 0);
    place_users_rng(config, &mut rng)
}

/// Same as [`place_users`] but drawing from a caller-owned RNG.
pub fn place_users_rng<F: Scalar, R: Rng>(
    config: &ScenarioConfig<F>,
    rng: &mut R,
) -> Result<UserLayout<F>, ScenarioError> {
    config.validate()?;
    let two = F::from_f64(2.0);
    let in_area = |p: (F, F)| {
        p.0 >= F::zero() && p.0 <= config.area_x && p.1 >= F::zero() && p.1 <= config.area_y
    };
    let uniform_point = |rng: &mut R| -> (F, F) {
        (
            rng.gen_range(F::zero()..=config.area_x),
            rng.gen_range(F::zero()..=config.area_y),
        )
    };

    let cue_pos: Vec<(F, F)> = (0..config.n_channels).map(|_| uniform_point(rng)).collect();

    let mut due_pos = Vec::with_capacity(config.n_pairs);
    for _ in 0..config.n_pairs {
        let a = uniform_point(rng);
        let mut b = None;
        for _ in 0..RETRY_CAP {
            // Uniform in the disk: radius via sqrt of a uniform draw.
            let r = config.d2d_max_dist * rng.gen_range(F::zero()..=F::one()).sqrt();
            let theta = rng.gen_range(F::zero()..F::from_f64(std::f64::consts::TAU));
            let cand = (a.0 + r * theta.cos(), a.1 + r * theta.sin());
            if in_area(cand) {
                b = Some(cand);
                break;
            }
        }
        let b = b.ok_or(ScenarioError::RetryCapExceeded("placing a D2D partner"))?;
        due_pos.push([a, b]);
    }

    Ok(UserLayout {
        cue_pos,
        due_pos,
        bs_pos: (config.area_x / two, config.area_y / two),
    })
}

/// Path gain of one link: `fading_power / (pl_coeff * max(d, d_min)^pl_exp)`.
pub fn link_gain<F: Scalar>(distance: F, fading_power: F, config: &ScenarioConfig<F>) -> F {
    let d = distance.max(config.min_link_dist);
    fading_power / (config.pl_coeff * d.powf(config.pl_exp))
}

/// One circularly symmetric complex Gaussian fading draw with unit expected
/// squared magnitude: each part is Normal(0, 1/2).
pub fn draw_fading<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Complex<F> {
    let s = F::from_f64(0.5).sqrt();
    Complex::new(F::standard_normal(rng) * s, F::standard_normal(rng) * s)
}

/// Builds the full gain tensor for a layout with independent fading per
/// (channel, receiver, transmitter) entry.
pub fn build_csi<F: Scalar>(
    layout: &UserLayout<F>,
    config: &ScenarioConfig<F>,
    seed: u64,
) -> ChannelState<F> {
    let mut rng = stream_rng(seed, 1);
    build_csi_rng(layout, config, &mut rng)
}

/// RNG-threaded variant of [`build_csi`]; draws fading in fixed row-major
/// (k, rx, tx) order so a given stream yields a bit-identical tensor.
pub fn build_csi_rng<F: Scalar, R: Rng>(
    layout: &UserLayout<F>,
    config: &ScenarioConfig<F>,
    rng: &mut R,
) -> ChannelState<F> {
    build_csi_with(layout, config, |_, _, _, rng| {
        let h = draw_fading::<F, R>(rng);
        h.norm_sqr()
    }, rng)
}

/// Core tensor builder with injectable fading (tests pass a constant).
pub fn build_csi_with<F: Scalar, R, G>(
    layout: &UserLayout<F>,
    config: &ScenarioConfig<F>,
    mut fading_power: G,
    rng: &mut R,
) -> ChannelState<F>
where
    G: FnMut(usize, usize, usize, &mut R) -> F,
{
    let nodes = config.n_nodes();
    let floor = F::from_f64(GAIN_FLOOR);
    let mut gains = NdArray::zeros(&[config.n_channels, nodes, nodes]);
    for k in 0..config.n_channels {
        for rx in 0..nodes {
            let rx_pos = layout.due_or(rx, layout.bs_pos);
            for tx in 0..nodes {
                let tx_pos = layout.due_or(tx, layout.cue_pos[k]);
                let d = euclid(rx_pos, tx_pos);
                let g = link_gain(d, fading_power(k, rx, tx, rng), config);
                gains.set3(k, rx, tx, g.max(floor));
            }
        }
    }
    ChannelState::from_gains(config.n_pairs, gains)
}
