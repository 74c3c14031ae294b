//! Composition of the per-round FLchain delays: block filling, block
//! generation, propagation, aggregation and download, inflated by forks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::BlockchainParams;
use crate::network::{self, LinkBudget, NetworkError, RadioParams};
use crate::queue::{self, QueueError, QueueParams};

#[derive(Debug, Error, PartialEq)]
pub enum LatencyError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("invalid client {id}: {reason}")]
    InvalidClient { id: usize, reason: String },
    #[error("at least one client or update is required")]
    Empty,
    #[error("fork probability {0} leaves no valid block")]
    CertainFork(f64),
    #[error("arrival-rate denominator is not positive")]
    ZeroDenominator,
    #[error("{clients} clients but {links} link budgets")]
    LengthMismatch { clients: usize, links: usize },
}

pub type Result<T> = std::result::Result<T, LatencyError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: usize,
    /// Local dataset size `N_k`.
    pub dataset_size: usize,
    /// CPU cycles needed per training sample.
    pub cpu_per_sample: f64,
    /// Clock speed in cycles per second.
    pub clock: f64,
    /// Distance to the serving miner in meters.
    pub distance: f64,
}

impl ClientProfile {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Err(LatencyError::InvalidClient { id: self.id, reason: reason.into() });
        if self.dataset_size == 0 {
            return fail("empty dataset");
        }
        if !(self.cpu_per_sample > 0.0 && self.cpu_per_sample.is_finite()) {
            return fail("cycles per sample must be positive");
        }
        if !(self.clock > 0.0 && self.clock.is_finite()) {
            return fail("clock must be positive");
        }
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return fail("distance must be positive");
        }
        Ok(())
    }

    /// Seconds for one pass over the local dataset.
    pub fn epoch_seconds(&self) -> f64 {
        self.dataset_size as f64 * self.cpu_per_sample / self.clock
    }
}

/// Cost model of the server-side weighted average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationCost {
    pub model_params: usize,
    /// Cycles per parameter accumulate.
    pub cycles_per_param: f64,
    /// Aggregator clock in cycles per second.
    pub clock: f64,
}

impl Default for AggregationCost {
    fn default() -> Self {
        Self { model_params: 203_530, cycles_per_param: 1.0, clock: 1e9 }
    }
}

/// Delays of one FLchain iteration, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub block_fill: f64,
    pub block_generation: f64,
    pub propagation: f64,
    pub aggregation: f64,
    pub download: f64,
    pub fork_prob: f64,
    /// May be infinite when the fork inflation overflows; see `log10_iteration_time`.
    pub iteration_time: f64,
    pub log10_iteration_time: f64,
}

impl LatencyBreakdown {
    /// Builds a breakdown from the fork exponent `x = λ(M−1)δ_bp`, which keeps
    /// the iteration time representable in log space when `e^x` overflows.
    pub fn from_fork_exponent(
        block_fill: f64,
        block_generation: f64,
        propagation: f64,
        aggregation: f64,
        download: f64,
        fork_exponent: f64,
    ) -> Self {
        let head = block_fill + block_generation + propagation;
        let tail = aggregation + download;
        Self {
            block_fill,
            block_generation,
            propagation,
            aggregation,
            download,
            fork_prob: -(-fork_exponent).exp_m1(),
            iteration_time: head * fork_exponent.exp() + tail,
            log10_iteration_time: log10_inflated(head, fork_exponent, tail),
        }
    }

    pub fn component_sum(&self) -> f64 {
        self.block_fill + self.block_generation + self.propagation + self.aggregation + self.download
    }
}

/// `log10(head·e^x + tail)` without overflow.
fn log10_inflated(head: f64, x: f64, tail: f64) -> f64 {
    let direct = head * x.exp() + tail;
    if direct.is_finite() {
        return direct.log10();
    }
    let log_head = head.ln() + x;
    (log_head + (tail / log_head.exp()).ln_1p()) / std::f64::consts::LN_10
}

/// Expected iteration time `(δ_bf + δ_bg + δ_bp)/(1 − p) + δ_agg + δ_bd`.
pub fn iteration_time(
    block_fill: f64,
    block_generation: f64,
    propagation: f64,
    aggregation: f64,
    download: f64,
    fork_prob: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&fork_prob) {
        return Err(LatencyError::CertainFork(fork_prob));
    }
    Ok((block_fill + block_generation + propagation) / (1.0 - fork_prob) + aggregation + download)
}

/// Transaction arrival rate `sqrt(K / (E[δ_DL] + compute + E[δ_UL]))`.
pub fn arrival_rate(k: usize, expected_download: f64, compute: f64, expected_upload: f64) -> Result<f64> {
    if k == 0 {
        return Err(LatencyError::Empty);
    }
    let denom = expected_download + compute + expected_upload;
    if !(denom > 0.0) {
        return Err(LatencyError::ZeroDenominator);
    }
    Ok((k as f64 / denom).sqrt())
}

/// Arrival rate from client averages, the download carrying a block of `n_tx` transactions.
pub fn arrival_rate_for(
    clients: &[ClientProfile],
    links: &[LinkBudget],
    bp: &BlockchainParams,
    n_tx: f64,
) -> Result<f64> {
    check_pairs(clients, links)?;
    let k = clients.len() as f64;
    let mut dl = 0.0;
    let mut ul = 0.0;
    for link in links {
        dl += network::block_download_delay(n_tx, bp, link)?;
        ul += network::tx_upload_delay(bp.tx_size_bits, link)?;
    }
    let compute = clients.iter().map(ClientProfile::epoch_seconds).sum::<f64>() / k;
    arrival_rate(clients.len(), dl / k, compute, ul / k)
}

pub fn compute_local_delay(client: &ClientProfile, epochs: usize) -> f64 {
    epochs as f64 * client.epoch_seconds()
}

/// Slowest compute-plus-upload among the participants.
pub fn sync_block_fill_delay(
    clients: &[ClientProfile],
    links: &[LinkBudget],
    epochs: usize,
    tx_bits: f64,
) -> Result<f64> {
    check_pairs(clients, links)?;
    let mut worst: f64 = 0.0;
    for (c, link) in clients.iter().zip(links) {
        worst = worst.max(compute_local_delay(c, epochs) + network::tx_upload_delay(tx_bits, link)?);
    }
    Ok(worst)
}

pub fn aggregation_delay(n_updates: usize, cost: &AggregationCost) -> Result<f64> {
    if n_updates == 0 {
        return Err(LatencyError::Empty);
    }
    Ok(n_updates as f64 * cost.model_params as f64 * cost.cycles_per_param / cost.clock)
}

/// Link budgets for clients sharing `rp.channels` FDMA channels round-robin.
pub fn client_links(clients: &[ClientProfile], rp: &RadioParams) -> Result<Vec<LinkBudget>> {
    rp.validate()?;
    let sharing = network::channel_sharing(clients.len(), rp.channels);
    clients
        .iter()
        .zip(sharing)
        .map(|(c, s)| {
            c.validate()?;
            Ok(rp.link_budget(c.distance, s)?)
        })
        .collect()
}

/// Synchronous round: one block carries every participant's update and the
/// round closes once the slowest client has downloaded it.
pub fn sync_iteration(
    clients: &[ClientProfile],
    links: &[LinkBudget],
    bp: &BlockchainParams,
    epochs: usize,
    agg: &AggregationCost,
) -> Result<LatencyBreakdown> {
    let n = clients.len();
    let fill = sync_block_fill_delay(clients, links, epochs, bp.tx_size_bits)?;
    let prop = network::block_propagation_delay(n as f64, bp, &bp.p2p());
    let mut download: f64 = 0.0;
    for link in links {
        download = download.max(network::block_download_delay(n as f64, bp, link)?);
    }
    Ok(LatencyBreakdown::from_fork_exponent(
        fill,
        1.0 / bp.mining_rate,
        prop,
        aggregation_delay(n, agg)?,
        download,
        fork_exponent(bp, prop),
    ))
}

/// `λ(M−1)δ_bp`, the exponent of the fork probability.
pub fn fork_exponent(bp: &BlockchainParams, propagation: f64) -> f64 {
    bp.mining_rate * bp.miners.saturating_sub(1) as f64 * propagation
}

/// End-to-end confirmation latency of one transaction through the pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confirmation {
    pub latency: f64,
    pub queue_delay: f64,
    pub propagation: f64,
    pub fork_prob: f64,
    pub mean_batch: f64,
    pub full_prob: f64,
}

/// `T_BC = (δ_ul + δ_bf + 1/λ + δ_bp)/(1 − p_fork)` with the queue delay from
/// the batch-service model and propagation of the mean block content. The
/// mining rate, batch size and timer come from `q`; sizes and miners from `bp`.
pub fn transaction_confirmation_latency(
    q: &QueueParams,
    bp: &BlockchainParams,
    upload_delay: f64,
) -> Result<Confirmation> {
    let sol = queue::solve(q)?;
    let mean_batch = sol.mean_batch();
    let propagation = network::block_propagation_delay(mean_batch, bp, &bp.p2p());
    let fork_prob = network::fork_probability(q.service_rate, bp.miners, propagation);
    if fork_prob >= 1.0 {
        return Err(LatencyError::CertainFork(fork_prob));
    }
    let latency = (upload_delay + sol.mean_delay + 1.0 / q.service_rate + propagation) / (1.0 - fork_prob);
    Ok(Confirmation {
        latency,
        queue_delay: sol.mean_delay,
        propagation,
        fork_prob,
        mean_batch,
        full_prob: sol.full_prob(),
    })
}

fn check_pairs(clients: &[ClientProfile], links: &[LinkBudget]) -> Result<()> {
    if clients.is_empty() {
        return Err(LatencyError::Empty);
    }
    if clients.len() != links.len() {
        return Err(LatencyError::LengthMismatch { clients: clients.len(), links: links.len() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn client(id: usize, n: usize) -> ClientProfile {
        ClientProfile { id, dataset_size: n, cpu_per_sample: 1e4, clock: 1e9, distance: 1.0 }
    }

    fn instant(n: usize) -> Vec<LinkBudget> {
        vec![LinkBudget { distance: 1.0, sinr: 1e9, rate: f64::INFINITY }; n]
    }

    #[test]
    fn arrival_rate_examples() {
        assert_eq!(arrival_rate(1, 0.5, 0.25, 0.25).unwrap(), 1.0);
        assert!((arrival_rate(10, 1.0, 1.0, 1.0).unwrap() - 1.825_741_858).abs() < 1e-9);
        assert!(arrival_rate(20, 1.0, 1.0, 1.0).unwrap() > arrival_rate(10, 1.0, 1.0, 1.0).unwrap());
        assert_eq!(arrival_rate(0, 1.0, 1.0, 1.0), Err(LatencyError::Empty));
        assert_eq!(arrival_rate(3, 0.0, 0.0, 0.0), Err(LatencyError::ZeroDenominator));
    }

    #[test]
    fn compute_and_fill_examples() {
        let c = client(0, 100);
        assert!((compute_local_delay(&c, 1) - 1e-3).abs() < 1e-15);
        assert!((compute_local_delay(&c, 5) - 5e-3).abs() < 1e-15);
        assert_eq!(compute_local_delay(&c, 0), 0.0);
        assert_eq!(compute_local_delay(&client(0, 200), 1), 2.0 * compute_local_delay(&c, 1));

        let same = vec![client(0, 100), client(1, 100)];
        assert!((sync_block_fill_delay(&same, &instant(2), 1, 5e3).unwrap() - 1e-3).abs() < 1e-15);
        let straggler = vec![client(0, 100), client(1, 1000), client(2, 100)];
        assert!((sync_block_fill_delay(&straggler, &instant(3), 1, 5e3).unwrap() - 1e-2).abs() < 1e-15);
        assert!(sync_block_fill_delay(&same, &instant(1), 1, 5e3).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let cost = AggregationCost::default();
        assert!((aggregation_delay(10, &cost).unwrap() - 2.0353e-3).abs() < 1e-12);
        assert_eq!(aggregation_delay(0, &cost), Err(LatencyError::Empty));
        assert!((aggregation_delay(20, &cost).unwrap() - 2.0 * aggregation_delay(10, &cost).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn iteration_time_examples() {
        assert_eq!(iteration_time(1.0, 2.0, 3.0, 4.0, 5.0, 0.0).unwrap(), 15.0);
        assert!((iteration_time(1.0, 5.0, 0.05, 0.1, 0.2, 0.5).unwrap() - 12.4).abs() < 1e-12);
        assert!(iteration_time(1.0, 5.0, 0.05, 0.1, 0.2, 0.6).unwrap() > iteration_time(1.0, 5.0, 0.05, 0.1, 0.2, 0.5).unwrap());
        assert!(iteration_time(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn breakdown_sums_exactly_without_forks() {
        let b = LatencyBreakdown::from_fork_exponent(0.3, 5.0, 0.05, 0.002, 0.07, 0.0);
        assert_eq!(b.iteration_time, b.component_sum());
        assert_eq!(b.fork_prob, 0.0);
        let f = LatencyBreakdown::from_fork_exponent(0.3, 5.0, 0.05, 0.002, 0.07, 0.4);
        let direct = iteration_time(0.3, 5.0, 0.05, 0.002, 0.07, f.fork_prob).unwrap();
        assert!((f.iteration_time - direct).abs() < 1e-12 * direct);
        assert!(f.iteration_time >= f.component_sum());
        assert!((f.log10_iteration_time - direct.log10()).abs() < 1e-12);
    }

    #[test]
    fn log_domain_survives_overflow() {
        let b = LatencyBreakdown::from_fork_exponent(10.0, 5.0, 1.0, 1.0, 1.0, 2000.0);
        assert!(b.iteration_time.is_infinite());
        let expected = 16f64.log10() + 2000.0 / std::f64::consts::LN_10;
        assert!((b.log10_iteration_time - expected).abs() < 1e-9);
    }

    #[test]
    fn confirmation_reduces_without_forks_or_transfer() {
        let bp = BlockchainParams { header_size_bits: 0.0, tx_size_bits: 0.0, ..Default::default() };
        let q = QueueParams::new(100, 5, 0.5, 1.0, f64::INFINITY).unwrap();
        let c = transaction_confirmation_latency(&q, &bp, 0.0).unwrap();
        assert_eq!(c.fork_prob, 0.0);
        assert!((c.latency - (c.queue_delay + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn faster_p2p_lowers_confirmation() {
        let slow = BlockchainParams::default();
        let fast = BlockchainParams { p2p_capacity: 50e6, ..slow };
        for lambda in [0.05, 0.2, 1.0] {
            let q = QueueParams::new(1000, 100, lambda, 2.0, 1000.0).unwrap();
            let a = transaction_confirmation_latency(&q, &slow, 0.01).unwrap();
            let b = transaction_confirmation_latency(&q, &fast, 0.01).unwrap();
            assert!(b.latency < a.latency && b.fork_prob < a.fork_prob);
        }
    }

    #[test]
    fn sync_iteration_components() {
        let clients: Vec<_> = (0..20).map(|i| ClientProfile { distance: 0.5 + 0.1 * i as f64, ..client(i, 100) }).collect();
        let links = client_links(&clients, &RadioParams::default()).unwrap();
        let bp = BlockchainParams::default();
        let b = sync_iteration(&clients, &links, &bp, 5, &AggregationCost::default()).unwrap();
        assert_eq!(b.block_generation, 5.0);
        assert!((b.propagation - (200e3 + 20.0 * 5e3) / 5e6).abs() < 1e-15);
        assert!(b.iteration_time > b.component_sum());
        assert!((b.fork_prob - network::fork_probability(0.2, 10, b.propagation)).abs() < 1e-15);
    }
}
