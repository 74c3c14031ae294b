//! Round loops for synchronous and asynchronous FLchain.
//!
//! The asynchronous variant runs on a virtual clock. Each client computes an
//! update from the latest global model it has downloaded, uploads it into the
//! miners' pool and blocks until a block containing it is mined. A block forms
//! when the pool reaches the block size or the timer expires with a non-empty
//! pool; mining then lasts the fork-inflated expectation
//! `(1/λ + δ_bp(n))·e^{λ(M−1)δ_bp(n)}`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{global_aggregate, local_update, GlobalModel, SoftmaxRegression};
use super::task::{Dataset, SyntheticTask};
use super::{FLConfig, FLRoundRecord, FlError};
use crate::chain::BlockchainParams;
use crate::latency::{self, AggregationCost, ClientProfile};
use crate::network::{self, LinkBudget, RadioParams};

/// Clients, links and chain parameters shared by both schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct FlEnvironment {
    pub blockchain: BlockchainParams,
    pub aggregation: AggregationCost,
    pub clients: Vec<ClientProfile>,
    pub links: Vec<LinkBudget>,
}

impl FlEnvironment {
    /// Places `cfg.clients` clients uniformly in the radio cell.
    pub fn new(
        cfg: &FLConfig,
        blockchain: BlockchainParams,
        radio: &RadioParams,
        aggregation: AggregationCost,
        seed: u64,
    ) -> Result<Self, FlError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(21);
        let clients: Vec<ClientProfile> = (0..cfg.clients)
            .map(|id| ClientProfile {
                id,
                dataset_size: cfg.samples_per_client,
                cpu_per_sample: cfg.cpu_per_sample,
                clock: cfg.clock,
                distance: radio.sample_distance(&mut rng),
            })
            .collect();
        let links = latency::client_links(&clients, radio)?;
        Ok(Self { blockchain, aggregation, clients, links })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<FLRoundRecord>,
    pub model: GlobalModel,
}

/// Transactions per block, `ceil(Υ·K)`.
pub fn block_size(cfg: &FLConfig) -> usize {
    ((cfg.block_fraction * cfg.clients as f64 - 1e-9).ceil() as usize).clamp(1, cfg.clients)
}

fn local_rng(seed: u64, client: usize, base_round: usize) -> ChaCha8Rng {
    let mixed = seed
        ^ (client as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (base_round as u64).wrapping_add(1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    ChaCha8Rng::seed_from_u64(mixed)
}

struct Trainer<'a> {
    cfg: &'a FLConfig,
    task: &'a SyntheticTask,
    seed: u64,
    pooled: Dataset,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a FLConfig, task: &'a SyntheticTask, seed: u64) -> Result<Self, FlError> {
        cfg.validate()?;
        if task.clients.len() != cfg.clients {
            return Err(FlError::InvalidConfig(format!(
                "task has {} clients, config expects {}",
                task.clients.len(),
                cfg.clients
            )));
        }
        Ok(Self { cfg, task, seed, pooled: task.pooled_train() })
    }

    fn params(&self) -> usize {
        SoftmaxRegression::param_count(self.task.dim, self.task.n_classes)
    }

    fn update(&self, w: &[f64], client: usize, base_round: usize) -> Result<Vec<f64>, FlError> {
        let obj = SoftmaxRegression::new(&self.task.clients[client], self.task.n_classes);
        let mut rng = local_rng(self.seed, client, base_round);
        local_update(w, &obj, self.cfg.epochs, self.cfg.batch_size, self.cfg.local_lr, &mut rng, client)
    }

    fn aggregate(&self, updates: &[(usize, Vec<f64>)], current: &GlobalModel) -> Result<GlobalModel, FlError> {
        let refs: Vec<(&[f64], usize)> =
            updates.iter().map(|(k, w)| (w.as_slice(), self.task.clients[*k].len())).collect();
        global_aggregate(&refs, current, self.cfg.global_lr)
    }

    fn train_loss(&self, w: &[f64]) -> f64 {
        SoftmaxRegression::new(&self.pooled, self.task.n_classes).evaluate(w).0
    }

    fn record(&self, model: &GlobalModel, participants: Vec<usize>, wall_clock: f64) -> FLRoundRecord {
        let (eval_loss, eval_accuracy) = SoftmaxRegression::new(&self.task.test, self.task.n_classes).evaluate(&model.weights);
        FLRoundRecord { round: model.round, participants, wall_clock, eval_accuracy, eval_loss }
    }
}

fn finite(t: f64, what: &str) -> Result<f64, FlError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(FlError::Overflow(what.to_string()))
    }
}

pub fn run_s_flchain(cfg: &FLConfig, task: &SyntheticTask, env: &FlEnvironment, seed: u64) -> Result<Trajectory, FlError> {
    run_s_flchain_with(cfg, task, env, seed, &mut |_| {})
}

/// Synchronous FLchain; `observe` sees every aggregated global model.
pub fn run_s_flchain_with(
    cfg: &FLConfig,
    task: &SyntheticTask,
    env: &FlEnvironment,
    seed: u64,
    observe: &mut dyn FnMut(&GlobalModel),
) -> Result<Trajectory, FlError> {
    let tr = Trainer::new(cfg, task, seed)?;
    let mut sampler = ChaCha8Rng::seed_from_u64(seed);
    sampler.set_stream(31);
    let k = cfg.clients;
    let per_round = ((cfg.sample_fraction * k as f64 - 1e-9).ceil() as usize).clamp(1, k);

    let mut model = GlobalModel::zeros(tr.params());
    let mut prev_loss = tr.train_loss(&model.weights);
    let mut clock = 0.0;
    let mut records = Vec::new();
    for t in 0..cfg.max_rounds {
        let mut participants: Vec<usize> =
            if per_round == k { (0..k).collect() } else { index::sample(&mut sampler, k, per_round).into_vec() };
        participants.sort_unstable();

        let updates = participants
            .par_iter()
            .map(|&c| tr.update(&model.weights, c, t).map(|w| (c, w)))
            .collect::<Result<Vec<_>, _>>()?;
        model = tr.aggregate(&updates, &model)?;

        let clients: Vec<ClientProfile> = participants.iter().map(|&c| env.clients[c]).collect();
        let links: Vec<LinkBudget> = participants.iter().map(|&c| env.links[c]).collect();
        let b = latency::sync_iteration(&clients, &links, &env.blockchain, cfg.epochs, &env.aggregation)?;
        clock += finite(b.iteration_time, "synchronous round")?;
        observe(&model);
        records.push(tr.record(&model, participants, clock));

        let loss = tr.train_loss(&model.weights);
        if (loss - prev_loss).abs() <= cfg.tolerance {
            break;
        }
        prev_loss = loss;
    }
    Ok(Trajectory { records, model })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Submission {
    time: f64,
    client: usize,
}

impl Eq for Submission {}

impl Ord for Submission {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.client.cmp(&self.client))
    }
}

impl PartialOrd for Submission {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn run_a_flchain(cfg: &FLConfig, task: &SyntheticTask, env: &FlEnvironment, seed: u64) -> Result<Trajectory, FlError> {
    run_a_flchain_with(cfg, task, env, seed, &mut |_| {})
}

/// Asynchronous FLchain; one record per mined block.
pub fn run_a_flchain_with(
    cfg: &FLConfig,
    task: &SyntheticTask,
    env: &FlEnvironment,
    seed: u64,
    observe: &mut dyn FnMut(&GlobalModel),
) -> Result<Trajectory, FlError> {
    let tr = Trainer::new(cfg, task, seed)?;
    let bp = &env.blockchain;
    let batch = block_size(cfg);
    let k = cfg.clients;

    let mut work = Vec::with_capacity(k);
    let mut upload = Vec::with_capacity(k);
    for (c, link) in env.clients.iter().zip(&env.links) {
        work.push(latency::compute_local_delay(c, cfg.epochs));
        upload.push(network::tx_upload_delay(bp.tx_size_bits, link).map_err(latency::LatencyError::from)?);
    }
    let download = |c: usize, n: usize| -> Result<f64, FlError> {
        Ok(network::block_download_delay(n as f64, bp, &env.links[c]).map_err(latency::LatencyError::from)?)
    };
    let mining_time = |n: usize| -> Result<f64, FlError> {
        let prop = network::block_propagation_delay(n as f64, bp, &bp.p2p());
        finite((1.0 / bp.mining_rate + prop) * latency::fork_exponent(bp, prop).exp(), "block mining")
    };

    // The current global model and the one before it; updates are at most one block stale.
    let mut model = GlobalModel::zeros(tr.params());
    let mut previous = model.clone();
    let mut base = vec![0usize; k];
    let mut heap: BinaryHeap<Submission> =
        (0..k).map(|c| Submission { time: work[c] + upload[c], client: c }).collect();
    let mut pool: VecDeque<usize> = VecDeque::new();
    let mut mining: Option<(f64, Vec<usize>)> = None;
    let mut deadline = bp.timeout;
    let mut expired = false;
    let mut prev_loss = tr.train_loss(&model.weights);
    let mut records = Vec::new();
    let mut last_block = 0usize;

    let start_block = |pool: &mut VecDeque<usize>, now: f64| -> Result<(f64, Vec<usize>), FlError> {
        let take = pool.len().min(batch);
        let block: Vec<usize> = pool.drain(..take).collect();
        Ok((now + mining_time(block.len())?, block))
    };

    while records.len() < cfg.max_rounds {
        let next_sub = heap.peek().map_or(f64::INFINITY, |s| s.time);
        let timer_at = if mining.is_none() && !expired { deadline } else { f64::INFINITY };
        let mined_at = mining.as_ref().map_or(f64::INFINITY, |m| m.0);

        if next_sub <= timer_at && next_sub <= mined_at && next_sub.is_finite() {
            let s = heap.pop().expect("peeked");
            if base[s.client] + 1 < model.round {
                base[s.client] = model.round;
                let retry = s.time + download(s.client, last_block)? + work[s.client] + upload[s.client];
                heap.push(Submission { time: retry, client: s.client });
                continue;
            }
            pool.push_back(s.client);
            if mining.is_none() && (pool.len() >= batch || expired) {
                mining = Some(start_block(&mut pool, s.time)?);
            }
        } else if timer_at <= mined_at && timer_at.is_finite() {
            if pool.is_empty() {
                expired = true;
            } else {
                mining = Some(start_block(&mut pool, timer_at)?);
            }
        } else if mined_at.is_finite() {
            let (now, mut block) = mining.take().expect("mining");
            block.sort_unstable();
            let updates = block
                .iter()
                .map(|&c| {
                    let from = if base[c] == model.round { &model } else { &previous };
                    tr.update(&from.weights, c, base[c]).map(|w| (c, w))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let next = tr.aggregate(&updates, &model)?;
            previous = std::mem::replace(&mut model, next);

            let n = block.len();
            last_block = n;
            let done = now + latency::aggregation_delay(n, &env.aggregation)?;
            let mut restart = block.clone();
            pool.retain(|&c| {
                let keep = base[c] + 1 >= model.round;
                if !keep {
                    restart.push(c);
                }
                keep
            });
            for &c in &restart {
                base[c] = model.round;
                heap.push(Submission { time: done + download(c, n)? + work[c] + upload[c], client: c });
            }

            observe(&model);
            records.push(tr.record(&model, block, done));
            deadline = now + bp.timeout;
            expired = false;
            if pool.len() >= batch {
                mining = Some(start_block(&mut pool, now)?);
            }

            let loss = tr.train_loss(&model.weights);
            if (loss - prev_loss).abs() <= cfg.tolerance {
                break;
            }
            prev_loss = loss;
        } else {
            return Err(FlError::Stalled(records.last().map_or(0.0, |r| r.wall_clock)));
        }
    }
    Ok(Trajectory { records, model })
}

/// SGD on the pooled training data with the FL hyper-parameters, one local
/// update per round. Returns the final test `(loss, accuracy)`.
pub fn centralized_sgd(cfg: &FLConfig, task: &SyntheticTask, seed: u64) -> Result<(f64, f64), FlError> {
    let tr = Trainer::new(cfg, task, seed)?;
    let obj = SoftmaxRegression::new(&tr.pooled, task.n_classes);
    let mut w = vec![0.0; tr.params()];
    for t in 0..cfg.max_rounds {
        let mut rng = local_rng(seed, usize::MAX, t);
        w = local_update(&w, &obj, cfg.epochs, cfg.batch_size, cfg.local_lr, &mut rng, usize::MAX)?;
    }
    Ok(SoftmaxRegression::new(&task.test, task.n_classes).evaluate(&w))
}
