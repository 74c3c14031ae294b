//! Finite-capacity batch-service queue model of the transaction pool.
//!
//! Transactions arrive as a Poisson stream of rate `arrival_rate` and wait in a
//! pool of `capacity` slots. A block is assembled once `batch_size`
//! transactions are waiting or once the fill timer expires, and it is mined
//! after an exponential time of rate `service_rate`. Transactions inside the
//! block being mined keep occupying their slots until the block departs.
//!
//! The analysis works on the post-departure embedded chain. Its one-step law is
//! the mining-epoch kernel of [`build_transition_matrix`] composed with the
//! fill phase that precedes each block ([`build_departure_chain`]). The
//! time-average distribution is recovered by counting level up-crossings at
//! departure epochs, which is where the timer-expiry terms enter.

mod matrix;
mod stationary;
mod timer;

pub use matrix::{build_departure_chain, build_transition_matrix, block_start_law, TransitionMatrix};
pub use stationary::{solve_departure_distribution, stationary_residual, DENSE_SOLVE_LIMIT};
pub use timer::{erlang_survival, expected_truncated_erlang, timer_expiry_prob, truncated_poisson};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("invalid queue parameters: {0}")]
    InvalidParams(String),
    #[error("transition matrix is malformed: {0}")]
    MalformedMatrix(String),
    #[error("stationary solve did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("steady-state mass below the full state sums to {0}, the model is inconsistent")]
    Inconsistent(f64),
    #[error("queue is saturated: effective throughput is zero")]
    Saturated,
}

/// Parameters of the transaction pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    /// Pool capacity `S` in transactions, including those in the block being mined.
    pub capacity: usize,
    /// Maximum transactions per block `S_B`.
    pub batch_size: usize,
    /// Block generation rate `λ` (blocks/s).
    pub service_rate: f64,
    /// Transaction arrival rate `ν` (transactions/s).
    pub arrival_rate: f64,
    /// Fill timer `τ` in seconds, `f64::INFINITY` disables it.
    pub timeout: f64,
}

impl QueueParams {
    pub fn new(
        capacity: usize,
        batch_size: usize,
        service_rate: f64,
        arrival_rate: f64,
        timeout: f64,
    ) -> Result<Self, QueueError> {
        let q = Self { capacity, batch_size, service_rate, arrival_rate, timeout };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), QueueError> {
        if self.batch_size == 0 {
            return Err(QueueError::InvalidParams("batch size must be at least 1".into()));
        }
        if self.batch_size > self.capacity {
            return Err(QueueError::InvalidParams(format!(
                "batch size {} exceeds capacity {}",
                self.batch_size, self.capacity
            )));
        }
        if !(self.service_rate > 0.0 && self.service_rate.is_finite()) {
            return Err(QueueError::InvalidParams(format!(
                "service rate must be positive and finite, got {}",
                self.service_rate
            )));
        }
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return Err(QueueError::InvalidParams(format!(
                "arrival rate must be positive and finite, got {}",
                self.arrival_rate
            )));
        }
        if !(self.timeout > 0.0) {
            return Err(QueueError::InvalidParams(format!(
                "timeout must be positive or infinite, got {}",
                self.timeout
            )));
        }
        Ok(())
    }

    /// Number of transactions a block assembled from `state` carries.
    pub fn batch_departure(&self, state: usize) -> usize {
        batch_departure(state, self.batch_size)
    }

    /// Number of embedded-chain states, `S + 1`.
    pub fn states(&self) -> usize {
        self.capacity + 1
    }
}

/// `d(i) = min(i, S_B)`.
pub fn batch_departure(state: usize, batch_size: usize) -> usize {
    state.min(batch_size)
}

/// Everything the analytical model reports for one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueSolution {
    /// Stationary distribution of the pool occupancy right after a departure.
    pub departure_dist: Vec<f64>,
    /// Time-average occupancy distribution.
    pub steady_dist: Vec<f64>,
    /// Mean time between consecutive block departures.
    pub expected_inter_departure: f64,
    /// Mean transaction sojourn time in the pool (Little's law).
    pub mean_delay: f64,
    /// Accepted transactions per second.
    pub effective_throughput: f64,
    /// Entries of the steady-state vector that had to be clamped into `[0, 1]`.
    pub clamped_entries: usize,
}

impl QueueSolution {
    pub fn mean_occupancy(&self) -> f64 {
        self.steady_dist.iter().enumerate().map(|(s, p)| s as f64 * p).sum()
    }

    /// Probability that the pool is full, which is also the blocking probability.
    pub fn full_prob(&self) -> f64 {
        *self.steady_dist.last().unwrap_or(&0.0)
    }

    /// Mean number of transactions per mined block.
    pub fn mean_batch(&self) -> f64 {
        self.effective_throughput * self.expected_inter_departure
    }
}

/// Steady-state distribution from departure-epoch quantities.
///
/// `ν·E[T]·π_s = Σ_{i≤s} π^d_i · P(occupancy before the next departure > s | i)`
/// for `s < S`, with the fill phase split into the timer-expired and filled
/// branches. `π_S` is the complement.
pub fn steady_state_distribution(
    departure_dist: &[f64],
    kernel: &TransitionMatrix,
    q: &QueueParams,
) -> Result<(Vec<f64>, usize), QueueError> {
    q.validate()?;
    let n = q.states();
    if departure_dist.len() != n || kernel.dim() != n {
        return Err(QueueError::MalformedMatrix(format!(
            "expected {n} states, got distribution of {} and kernel of {}",
            departure_dist.len(),
            kernel.dim()
        )));
    }
    let capacity = q.capacity;
    let cycle = expected_inter_departure_time(departure_dist, q);
    let scale = 1.0 / (q.arrival_rate * cycle);

    // tails[c][m] = Σ_{j ≥ m} p[c][j]
    let tails: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let row = kernel.row(c);
            let mut tail = vec![0.0; n + 1];
            for m in (0..n).rev() {
                tail[m] = tail[m + 1] + row[m];
            }
            tail
        })
        .collect();
    let laws: Vec<Vec<(usize, f64)>> = (0..n).map(|i| block_start_law(i, q)).collect();

    let mut steady = vec![0.0; n];
    let mut below_full = 0.0;
    for (s, slot) in steady.iter_mut().enumerate().take(capacity) {
        let mut acc = 0.0;
        for i in 0..=s {
            let weight = departure_dist[i];
            if weight == 0.0 {
                continue;
            }
            let mut crossing = 0.0;
            for &(c, pc) in &laws[i] {
                // the block carries d(c) transactions, so the pre-departure
                // occupancy exceeds s when the next residue j > s - d(c)
                let d = q.batch_departure(c);
                let from = (s + 1).saturating_sub(d);
                crossing += pc * tails[c][from];
            }
            acc += weight * crossing;
        }
        *slot = scale * acc;
        below_full += *slot;
    }
    if below_full > 1.0 + 1e-6 {
        return Err(QueueError::Inconsistent(below_full));
    }
    steady[capacity] = 1.0 - below_full;

    let mut clamped = 0;
    for p in steady.iter_mut() {
        if *p < 0.0 || *p > 1.0 {
            log::debug!("clamping steady-state entry {p}");
            *p = p.clamp(0.0, 1.0);
            clamped += 1;
        }
    }
    Ok((steady, clamped))
}

/// `E[T] = Σ_i π^d_i (E[fill | i] + 1/λ)`.
///
/// From residue `i < S_B` the pool fills for `min(Erlang(S_B - i, ν), τ)`. When
/// the timer finds the pool empty the block waits for the next arrival.
pub fn expected_inter_departure_time(departure_dist: &[f64], q: &QueueParams) -> f64 {
    let mining = 1.0 / q.service_rate;
    departure_dist
        .iter()
        .enumerate()
        .map(|(i, &p)| p * (expected_fill_time(i, q) + mining))
        .sum()
}

pub(crate) fn expected_fill_time(residue: usize, q: &QueueParams) -> f64 {
    if residue >= q.batch_size {
        return 0.0;
    }
    let missing = q.batch_size - residue;
    let mut fill = expected_truncated_erlang(missing, q.arrival_rate, q.timeout);
    if residue == 0 && q.timeout.is_finite() {
        // no arrival at all before the timer: wait for the first one
        fill += (-q.arrival_rate * q.timeout).exp() / q.arrival_rate;
    }
    fill
}

/// Little's law: `δ = Σ s π_s / (ν (1 - π_S))`. Returns `(delay, throughput)`.
pub fn expected_queue_delay(steady_dist: &[f64], q: &QueueParams) -> Result<(f64, f64), QueueError> {
    let full = *steady_dist.last().ok_or(QueueError::Saturated)?;
    let throughput = q.arrival_rate * (1.0 - full);
    if !(throughput > 0.0) {
        return Err(QueueError::Saturated);
    }
    let occupancy: f64 = steady_dist.iter().enumerate().map(|(s, p)| s as f64 * p).sum();
    Ok((occupancy / throughput, throughput))
}

/// Full analytical pipeline for one parameter point.
pub fn solve(q: &QueueParams) -> Result<QueueSolution, QueueError> {
    q.validate()?;
    let kernel = build_transition_matrix(q)?;
    let chain = build_departure_chain(q)?;
    let departure_dist = solve_departure_distribution(&chain)?;
    let (steady_dist, clamped_entries) = steady_state_distribution(&departure_dist, &kernel, q)?;
    let expected_inter_departure = expected_inter_departure_time(&departure_dist, q);
    let (mean_delay, effective_throughput) = expected_queue_delay(&steady_dist, q)?;
    Ok(QueueSolution {
        departure_dist,
        steady_dist,
        expected_inter_departure,
        mean_delay,
        effective_throughput,
        clamped_entries,
    })
}
