//! Blockchain-level parameters shared by the queue, network and latency models.

use serde::{Deserialize, Serialize};

use crate::network::P2PParams;
use crate::queue::{QueueError, QueueParams};

/// Sizes, miner population and mining dynamics of the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockchainParams {
    /// Transaction size `S_tr` in bits.
    pub tx_size_bits: f64,
    /// Block header size `S_h` in bits.
    pub header_size_bits: f64,
    pub miners: usize,
    /// Block generation rate `λ` in blocks per second.
    #[serde(rename = "lambda")]
    pub mining_rate: f64,
    /// Maximum waiting time `τ` in seconds, infinite disables the timer.
    #[serde(rename = "tau")]
    pub timeout: f64,
    /// Queue length `S`.
    pub capacity: usize,
    /// Transactions per block `S_B`.
    #[serde(rename = "block_size")]
    pub batch_size: usize,
    /// P2P link capacity in bits per second.
    pub p2p_capacity: f64,
    /// Transaction arrival rate `ν` for stand-alone queue analyses.
    #[serde(rename = "nu")]
    pub arrival_rate: f64,
}

impl Default for BlockchainParams {
    fn default() -> Self {
        Self {
            tx_size_bits: 5e3,
            header_size_bits: 200e3,
            miners: 10,
            mining_rate: 0.2,
            timeout: 1000.0,
            capacity: 1000,
            batch_size: 50,
            p2p_capacity: 5e6,
            arrival_rate: 2.0,
        }
    }
}

impl BlockchainParams {
    pub fn p2p(&self) -> P2PParams {
        P2PParams { capacity: self.p2p_capacity, miners: self.miners }
    }

    pub fn queue(&self) -> Result<QueueParams, QueueError> {
        QueueParams::new(self.capacity, self.batch_size, self.mining_rate, self.arrival_rate, self.timeout)
    }

    /// Checks every field, returning the offending key and a message.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = |key: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((key, format!("must be positive and finite, got {v}")))
            }
        };
        let non_negative = |key: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((key, format!("must be non-negative and finite, got {v}")))
            }
        };
        non_negative("tx_size_bits", self.tx_size_bits)?;
        non_negative("header_size_bits", self.header_size_bits)?;
        positive("lambda", self.mining_rate)?;
        positive("p2p_capacity", self.p2p_capacity)?;
        positive("nu", self.arrival_rate)?;
        if self.miners == 0 {
            return Err(("miners", "must be at least 1".into()));
        }
        if !(self.timeout > 0.0) {
            return Err(("tau", format!("must be positive or inf, got {}", self.timeout)));
        }
        if self.batch_size == 0 {
            return Err(("block_size", "must be at least 1".into()));
        }
        if self.capacity < self.batch_size {
            return Err(("capacity", format!("{} is below block_size {}", self.capacity, self.batch_size)));
        }
        Ok(())
    }

    /// Size of a block carrying `n_tx` transactions.
    pub fn block_bits(&self, n_tx: f64) -> f64 {
        self.header_size_bits + n_tx * self.tx_size_bits
    }
}
