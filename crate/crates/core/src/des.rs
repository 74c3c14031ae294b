//! Discrete-event simulation of the transaction pool, fill timer, mining and
//! forks. It is the ground truth the analytical queue model is checked against.
//!
//! The event loop keeps three clocks: the next Poisson arrival, the fill timer
//! (armed at every mining completion) and the end of the current mining
//! epoch. Each random process draws from its own ChaCha stream so that changing
//! one rate does not perturb the samples of the others.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::queue::{QueueError, QueueParams};

#[derive(Debug, Error)]
pub enum DesError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no block departed during the measurement window")]
    NoDepartures,
    #[error("failed to write event trace: {0}")]
    Trace(#[from] std::io::Error),
}

/// When to stop the simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Number of generated arrivals, dropped ones included.
    Arrivals(u64),
    /// Number of valid block departures.
    Departures(u64),
    /// Simulated seconds.
    Seconds(f64),
}

/// Arrival horizon long enough for a queue whose analytic mean occupancy is
/// `mean_occupancy`; near-critical queues relax on a time scale growing with
/// the square of the occupancy.
pub fn suggested_horizon(mean_occupancy: f64, min_arrivals: u64, max_arrivals: u64) -> u64 {
    let scaled = 100.0 * mean_occupancy * mean_occupancy;
    (scaled.min(max_arrivals as f64) as u64).max(min_arrivals)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesConfig {
    pub queue: QueueParams,
    /// Probability that a mined block is discarded by a fork.
    pub fork_prob: f64,
    pub horizon: Horizon,
    pub seed: u64,
    /// Leading fraction of the horizon excluded from the statistics.
    pub warmup: f64,
}

impl DesConfig {
    pub fn new(queue: QueueParams, horizon: Horizon, seed: u64) -> Self {
        Self { queue, fork_prob: 0.0, horizon, seed, warmup: 0.05 }
    }

    pub fn with_fork_prob(mut self, fork_prob: f64) -> Self {
        self.fork_prob = fork_prob;
        self
    }

    pub fn validate(&self) -> Result<(), DesError> {
        self.queue.validate()?;
        if !(0.0..1.0).contains(&self.fork_prob) {
            return Err(DesError::InvalidConfig(format!("fork probability {} outside [0, 1)", self.fork_prob)));
        }
        let positive = match self.horizon {
            Horizon::Arrivals(n) | Horizon::Departures(n) => n > 0,
            Horizon::Seconds(t) => t > 0.0 && t.is_finite(),
        };
        if !positive {
            return Err(DesError::InvalidConfig("horizon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(DesError::InvalidConfig(format!("warmup fraction {} outside [0, 1)", self.warmup)));
        }
        Ok(())
    }
}

/// Statistics over the measurement window.
#[derive(Debug, Clone, PartialEq)]
pub struct DesStats {
    /// Mean sojourn of departed transactions, from first arrival to final departure.
    pub mean_delay: f64,
    /// Time-average number of transactions in the pool, the mined block included.
    pub mean_occupancy: f64,
    /// Empirical distribution of the occupancy right after each valid departure.
    pub departure_state_hist: Vec<f64>,
    pub inter_departure_mean: f64,
    /// Fraction of mined blocks discarded by forks.
    pub fork_rate: f64,
    /// Arrivals rejected by a full pool.
    pub drops: u64,
    /// Arrivals generated during the window, dropped ones included.
    pub arrivals: u64,
    /// Transactions that left in valid blocks.
    pub departed: u64,
    /// Length of the measurement window in seconds.
    pub window: f64,
}

impl DesStats {
    /// Accepted throughput measured from departures.
    pub fn throughput(&self) -> f64 {
        self.departed as f64 / self.window
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Arrival,
    Timer,
    Mined,
}

struct Streams {
    arrivals: ChaCha8Rng,
    mining: ChaCha8Rng,
    forks: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        Self { arrivals: stream(1), mining: stream(2), forks: stream(3) }
    }
}

fn exp(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

pub fn run(cfg: &DesConfig) -> Result<DesStats, DesError> {
    simulate(cfg, None)
}

/// Like [`run`], writing one `time,event_kind,queue_len` line per event.
pub fn run_traced(cfg: &DesConfig, sink: &mut dyn Write) -> Result<DesStats, DesError> {
    writeln!(sink, "time,event_kind,queue_len")?;
    simulate(cfg, Some(sink))
}

#[derive(Default)]
struct Window {
    active: bool,
    start: f64,
    occupancy_area: f64,
    sojourn_sum: f64,
    departed: u64,
    hist: Vec<u64>,
    departures: u64,
    first_departure: f64,
    last_departure: f64,
    mined: u64,
    forks: u64,
    drops: u64,
    arrivals: u64,
}

fn simulate(cfg: &DesConfig, mut trace: Option<&mut dyn Write>) -> Result<DesStats, DesError> {
    cfg.validate()?;
    let q = cfg.queue;
    let mut rng = Streams::new(cfg.seed);

    let warm = |n: u64| (n as f64 * cfg.warmup) as u64;
    let (arrival_cap, departure_cap, time_cap) = match cfg.horizon {
        Horizon::Arrivals(n) => (n, u64::MAX, f64::INFINITY),
        Horizon::Departures(n) => (u64::MAX, n, f64::INFINITY),
        Horizon::Seconds(t) => (u64::MAX, u64::MAX, t),
    };
    let (warm_arrivals, warm_departures, warm_time) = match cfg.horizon {
        Horizon::Arrivals(n) => (warm(n), u64::MAX, f64::INFINITY),
        Horizon::Departures(n) => (u64::MAX, warm(n), f64::INFINITY),
        Horizon::Seconds(t) => (u64::MAX, u64::MAX, t * cfg.warmup),
    };

    let mut now = 0.0;
    let mut next_arrival = exp(&mut rng.arrivals, q.arrival_rate);
    let mut mining_end: Option<f64> = None;
    let mut deadline = q.timeout;
    let mut timer_expired = false;
    let mut waiting: VecDeque<f64> = VecDeque::with_capacity(q.capacity);
    let mut block: Vec<f64> = Vec::with_capacity(q.batch_size);
    let mut generated: u64 = 0;
    let mut blocks_out: u64 = 0;

    let mut w = Window { hist: vec![0; q.states()], ..Default::default() };
    if warm_arrivals == 0 || warm_departures == 0 || warm_time == 0.0 {
        w.active = true;
    }

    macro_rules! emit {
        ($kind:expr) => {
            if let Some(sink) = trace.as_deref_mut() {
                writeln!(sink, "{},{},{}", now, $kind, waiting.len() + block.len())?;
            }
        };
    }

    loop {
        let timer_at = if mining_end.is_none() && !timer_expired { deadline } else { f64::INFINITY };
        let mined_at = mining_end.unwrap_or(f64::INFINITY);
        let (t, event) = if next_arrival <= timer_at && next_arrival <= mined_at {
            (next_arrival, Event::Arrival)
        } else if timer_at <= mined_at {
            (timer_at, Event::Timer)
        } else {
            (mined_at, Event::Mined)
        };

        let stop_at = t.min(time_cap);
        if !w.active && stop_at >= warm_time {
            w.active = true;
            w.start = warm_time;
            now = warm_time;
        }
        if w.active {
            w.occupancy_area += (waiting.len() + block.len()) as f64 * (stop_at - now);
        }
        if t > time_cap {
            now = time_cap;
            break;
        }
        now = t;

        match event {
            Event::Arrival => {
                generated += 1;
                if !w.active && generated > warm_arrivals {
                    w.active = true;
                    w.start = now;
                }
                if w.active {
                    w.arrivals += 1;
                }
                if waiting.len() + block.len() >= q.capacity {
                    if w.active {
                        w.drops += 1;
                    }
                    emit!("drop");
                } else {
                    waiting.push_back(now);
                    emit!("arrival");
                }
                next_arrival = now + exp(&mut rng.arrivals, q.arrival_rate);
                if mining_end.is_none() && !waiting.is_empty() && (waiting.len() >= q.batch_size || timer_expired) {
                    start_block(&mut waiting, &mut block, q.batch_size);
                    mining_end = Some(now + exp(&mut rng.mining, q.service_rate));
                    emit!("block_ready");
                }
                if generated >= arrival_cap {
                    break;
                }
            }
            Event::Timer => {
                emit!("timer");
                if waiting.is_empty() {
                    timer_expired = true;
                } else {
                    start_block(&mut waiting, &mut block, q.batch_size);
                    mining_end = Some(now + exp(&mut rng.mining, q.service_rate));
                    emit!("block_ready");
                }
            }
            Event::Mined => {
                mining_end = None;
                let forked = cfg.fork_prob > 0.0 && rng.forks.random::<f64>() < cfg.fork_prob;
                if w.active {
                    w.mined += 1;
                }
                if forked {
                    if w.active {
                        w.forks += 1;
                    }
                    for &arrived in block.iter().rev() {
                        waiting.push_front(arrived);
                    }
                    block.clear();
                    emit!("fork");
                } else {
                    blocks_out += 1;
                    if !w.active && blocks_out > warm_departures {
                        w.active = true;
                        w.start = now;
                    }
                    if w.active {
                        for &arrived in &block {
                            w.sojourn_sum += now - arrived;
                        }
                        w.departed += block.len() as u64;
                        w.hist[waiting.len()] += 1;
                        if w.departures == 0 {
                            w.first_departure = now;
                        }
                        w.last_departure = now;
                        w.departures += 1;
                    }
                    block.clear();
                    emit!("mined");
                    if blocks_out >= departure_cap {
                        break;
                    }
                }
                deadline = now + q.timeout;
                timer_expired = false;
                if waiting.len() >= q.batch_size {
                    start_block(&mut waiting, &mut block, q.batch_size);
                    mining_end = Some(now + exp(&mut rng.mining, q.service_rate));
                    emit!("block_ready");
                }
            }
        }
    }

    if let Some(sink) = trace {
        sink.flush()?;
    }
    if w.departures == 0 || w.departed == 0 {
        return Err(DesError::NoDepartures);
    }
    let window = now - w.start;
    let total = w.departures as f64;
    Ok(DesStats {
        mean_delay: w.sojourn_sum / w.departed as f64,
        mean_occupancy: w.occupancy_area / window,
        departure_state_hist: w.hist.iter().map(|&c| c as f64 / total).collect(),
        inter_departure_mean: if w.departures > 1 {
            (w.last_departure - w.first_departure) / (w.departures - 1) as f64
        } else {
            window
        },
        fork_rate: if w.mined > 0 { w.forks as f64 / w.mined as f64 } else { 0.0 },
        drops: w.drops,
        arrivals: w.arrivals,
        departed: w.departed,
        window,
    })
}

fn start_block(waiting: &mut VecDeque<f64>, block: &mut Vec<f64>, batch: usize) {
    let take = waiting.len().min(batch);
    block.extend(waiting.drain(..take));
}

/// Parallel proof-of-work race used to measure fork frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ForkConfig {
    /// Per-miner block rate `λ`.
    pub mining_rate: f64,
    pub miners: usize,
    /// Time for a mined block to reach the other miners.
    pub propagation_delay: f64,
    pub blocks: u64,
    pub seed: u64,
}

/// Fraction of blocks for which a second miner finishes within the
/// propagation delay of the first one.
pub fn empirical_fork_rate(cfg: &ForkConfig) -> Result<f64, DesError> {
    if !(cfg.mining_rate > 0.0) || cfg.miners == 0 || !(cfg.propagation_delay >= 0.0) || cfg.blocks == 0 {
        return Err(DesError::InvalidConfig(format!("invalid fork race {cfg:?}")));
    }
    if cfg.miners == 1 || cfg.propagation_delay == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(4);
    let mut forks = 0u64;
    for _ in 0..cfg.blocks {
        let (mut first, mut second) = (f64::INFINITY, f64::INFINITY);
        for _ in 0..cfg.miners {
            let t = exp(&mut rng, cfg.mining_rate);
            if t < first {
                second = first;
                first = t;
            } else if t < second {
                second = t;
            }
        }
        if second - first < cfg.propagation_delay {
            forks += 1;
        }
    }
    Ok(forks as f64 / cfg.blocks as f64)
}
