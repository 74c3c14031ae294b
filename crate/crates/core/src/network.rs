//! Radio links between clients and miners, P2P propagation between miners and
//! the proof-of-work fork probability.
//!
//! Powers are handled in dBm at the API boundary and converted to milliwatts
//! before any sum. The path-loss expression carries the transmit power inside
//! it, so the received power is `P_t + G − PL(d)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::BlockchainParams;

/// Smallest client distance used in the path-loss logarithm.
pub const MIN_DISTANCE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("invalid radio parameters: {0}")]
    InvalidParams(String),
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("SINR undefined: zero interference and zero noise")]
    ZeroDenominator,
    #[error("client at {distance} m has zero data rate")]
    Unreachable { distance: f64 },
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    /// Channel bandwidth `b` in Hz.
    pub bandwidth: f64,
    /// Transmit power `P_t` in dBm.
    pub tx_power: f64,
    /// Antenna gain `G` in dBi.
    pub antenna_gain: f64,
    /// Loss at the reference distance `PL0` in dB.
    pub ref_loss: f64,
    pub pathloss_exp: f64,
    /// Shadowing factor `σ` in dB.
    pub shadowing: f64,
    /// Obstacles factor `ζ` in dB per 10 m.
    pub obstacles: f64,
    /// Noise power `σ0` in dBm.
    pub noise: f64,
    /// Number of orthogonal FDMA channels `P`.
    pub channels: usize,
    /// Fixed inter-cell interference in dBm.
    pub interference: Option<f64>,
    pub carrier_hz: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            bandwidth: 180e3,
            tx_power: 20.0,
            antenna_gain: 0.0,
            ref_loss: 5.0,
            pathloss_exp: 4.4,
            shadowing: 9.5,
            obstacles: 30.0,
            noise: -95.0,
            channels: 10,
            interference: None,
            carrier_hz: 2e9,
            d_min: 0.0,
            d_max: 4.15,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(key, m)| NetworkError::InvalidParams(format!("{key}: {m}")))
    }

    /// Checks every field, returning the offending key and a message.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(("bandwidth", format!("must be positive, got {}", self.bandwidth)));
        }
        if !(self.pathloss_exp > 0.0) {
            return Err(("pathloss_exp", format!("must be positive, got {}", self.pathloss_exp)));
        }
        if self.channels == 0 {
            return Err(("channels", "at least one channel is required".into()));
        }
        if !(self.d_min >= 0.0) {
            return Err(("d_min", format!("must be non-negative, got {}", self.d_min)));
        }
        if !(self.d_max > 0.0 && self.d_max >= self.d_min && self.d_max.is_finite()) {
            return Err(("d_max", format!("must be positive and at least d_min, got {}", self.d_max)));
        }
        let finite = [
            ("tx_power", self.tx_power),
            ("antenna_gain", self.antenna_gain),
            ("ref_loss", self.ref_loss),
            ("shadowing", self.shadowing),
            ("obstacles", self.obstacles),
            ("noise", self.noise),
            ("interference", self.interference.unwrap_or(0.0)),
        ];
        for (key, v) in finite {
            if !v.is_finite() {
                return Err((key, "must be finite".into()));
            }
        }
        Ok(())
    }

    /// Received power in dBm at distance `d`.
    pub fn received_power(&self, d: f64) -> Result<f64> {
        Ok(self.tx_power + self.antenna_gain - path_loss(d, self)?)
    }

    /// Link budget of a client at distance `d` sharing its channel with
    /// `sharing − 1` other clients in round-robin.
    pub fn link_budget(&self, d: f64, sharing: usize) -> Result<LinkBudget> {
        let d = d.max(MIN_DISTANCE);
        let signal = dbm_to_mw(self.received_power(d)?);
        let interferers: Vec<f64> = self.interference.map(dbm_to_mw).into_iter().collect();
        let gamma = sinr(signal, &interferers, dbm_to_mw(self.noise))?;
        let rate = data_rate(self.bandwidth, gamma) / sharing.max(1) as f64;
        Ok(LinkBudget { distance: d, sinr: gamma, rate })
    }

    /// Uniform client placement in `[max(d_min, 0.1), d_max]`.
    pub fn sample_distance<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let lo = self.d_min.max(MIN_DISTANCE);
        let hi = self.d_max.max(lo);
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub distance: f64,
    /// Linear SINR.
    pub sinr: f64,
    /// Effective rate in bits per second after channel sharing.
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P2PParams {
    /// Link capacity in bits per second.
    pub capacity: f64,
    pub miners: usize,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    linear_to_db(mw)
}

/// `PL(d) = P_t − PL0 + 10·α·log10(d) + σ/2 + (d/10)·(ζ/2)` in dB.
pub fn path_loss(d: f64, rp: &RadioParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(NetworkError::NonPositiveDistance(d));
    }
    Ok(rp.tx_power - rp.ref_loss
        + 10.0 * rp.pathloss_exp * d.log10()
        + rp.shadowing / 2.0
        + d / 10.0 * rp.obstacles / 2.0)
}

/// Linear SINR from a signal power, interferer powers and noise, all in mW.
pub fn sinr(signal: f64, interferers: &[f64], noise: f64) -> Result<f64> {
    let denom = interferers.iter().sum::<f64>() + noise;
    if !(denom > 0.0) {
        return Err(NetworkError::ZeroDenominator);
    }
    Ok(signal.max(0.0) / denom)
}

/// Shannon rate `b·log2(1+γ)`.
pub fn data_rate(bandwidth: f64, sinr: f64) -> f64 {
    bandwidth * sinr.max(0.0).ln_1p() / std::f64::consts::LN_2
}

/// `1 − exp(−λ(M−1)δ_bp)`.
pub fn fork_probability(mining_rate: f64, miners: usize, propagation_delay: f64) -> f64 {
    let exponent = mining_rate * miners.saturating_sub(1) as f64 * propagation_delay;
    -(-exponent).exp_m1()
}

/// Single-hop broadcast of a block with `n_tx` transactions.
pub fn block_propagation_delay(n_tx: f64, bp: &BlockchainParams, p2p: &P2PParams) -> f64 {
    bp.block_bits(n_tx) / p2p.capacity
}

pub fn tx_upload_delay(size_bits: f64, link: &LinkBudget) -> Result<f64> {
    transfer(size_bits, link)
}

pub fn block_download_delay(n_tx: f64, bp: &BlockchainParams, link: &LinkBudget) -> Result<f64> {
    transfer(bp.block_bits(n_tx), link)
}

fn transfer(bits: f64, link: &LinkBudget) -> Result<f64> {
    if !(link.rate > 0.0) {
        return Err(NetworkError::Unreachable { distance: link.distance });
    }
    Ok(bits / link.rate)
}

/// Number of clients on each client's channel when `k` clients are assigned
/// round-robin to `channels` channels.
pub fn channel_sharing(k: usize, channels: usize) -> Vec<usize> {
    let p = channels.max(1);
    (0..k).map(|i| k / p + usize::from(i % p < k % p)).collect()
}
