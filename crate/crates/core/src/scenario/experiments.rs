//! Parameter sweeps over scenarios, emitted as CSV tables in grid order.

use std::io::Write;

use rayon::prelude::*;

use super::{ModelPreset, Scenario, ScenarioError, SweepAxis};
use crate::des::{self, DesConfig, Horizon};
use crate::fl::{self, FLRoundRecord, FlEnvironment};
use crate::latency;
use crate::network;

pub const QUEUE_HEADER: [&str; 9] =
    ["lambda", "nu", "S_B", "mean_delay", "occupancy", "p_fork", "des_mean_delay", "rel_err", "saturated"];
pub const CONFIRMATION_HEADER: [&str; 4] = ["lambda", "C_P2P", "T_BC", "p_fork"];
pub const MODEL_HEADER: [&str; 5] = ["model", "params", "K", "t_iter_s", "log10_t_iter_s"];

/// A header plus string cells; floats use the shortest round-trip form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn with_axes(axes: &[String], header: &[&str]) -> Self {
        Self { header: axes.iter().cloned().chain(header.iter().map(|h| h.to_string())).collect(), rows: Vec::new() }
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| ScenarioError::Output(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|e| ScenarioError::Output(e.to_string()))
    }

    pub fn to_csv_string(&self) -> Result<String, ScenarioError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        String::from_utf8(buf).map_err(|e| ScenarioError::Output(e.to_string()))
    }

    /// Values of a named column parsed as floats; empty cells become NaN.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx].parse().unwrap_or(f64::NAN)).collect())
    }
}

fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-6..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

/// Swept paths that are not already key columns of a table, in sweep order.
fn extra_axes(s: &Scenario, keys: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for axis in &s.sweep {
        if !keys.contains(&axis.path.as_str()) && !out.contains(&axis.path) {
            out.push(axis.path.clone());
        }
    }
    out
}

fn axis_cells(c: &Scenario, axes: &[String]) -> Result<Vec<String>, ScenarioError> {
    axes.iter().map(|p| c.value(p).map(num)).collect()
}

fn cell_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn default_queue_axes() -> Vec<SweepAxis> {
    vec![
        SweepAxis::new("blockchain.lambda", &[0.05, 0.2, 1.0]),
        SweepAxis::new("blockchain.nu", &[0.2, 2.0, 20.0]),
        SweepAxis::new("blockchain.block_size", &[1.0, 2.0, 5.0, 10.0, 20.0, 50.0]),
    ]
}

/// Analytical queue delay per grid point, side by side with the simulator
/// when `simulate` is set. Saturated points (full-queue probability above
/// one half, or no stationary throughput) are flagged rather than dropped.
pub fn run_queue_sweep(s: &Scenario, seed: u64, simulate: bool) -> Result<CsvTable, ScenarioError> {
    let cells = s.grid(&default_queue_axes())?;
    let axes = extra_axes(s, &["blockchain.lambda", "blockchain.nu", "blockchain.block_size"]);
    let rows = cells
        .par_iter()
        .enumerate()
        .map(|(i, c)| Ok([axis_cells(c, &axes)?, queue_row(c, cell_seed(seed, i), simulate)?].concat()))
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    let mut table = CsvTable::with_axes(&axes, &QUEUE_HEADER);
    table.rows = rows;
    Ok(table)
}

fn queue_row(s: &Scenario, seed: u64, simulate: bool) -> Result<Vec<String>, ScenarioError> {
    let q = s.queue_params()?;
    let bp = s.effective_blockchain();
    let sol = crate::queue::solve(&q);
    let (delay, occupancy, batch, saturated) = match &sol {
        Ok(sol) => (sol.mean_delay, sol.mean_occupancy(), sol.mean_batch(), sol.full_prob() > 0.5),
        Err(crate::queue::QueueError::Saturated) => (f64::INFINITY, q.capacity as f64, q.batch_size as f64, true),
        Err(e) => return Err(e.clone().into()),
    };
    let p_fork = network::fork_probability(q.service_rate, bp.miners, network::block_propagation_delay(batch, &bp, &bp.p2p()));
    let (des_delay, rel_err) = if simulate {
        let arrivals = if s.des.adaptive && !saturated {
            des::suggested_horizon(occupancy, s.des.arrivals, s.des.max_arrivals)
        } else {
            s.des.arrivals
        };
        let cfg = DesConfig {
            fork_prob: if s.des.forks { p_fork } else { 0.0 },
            warmup: s.des.warmup,
            ..DesConfig::new(q, Horizon::Arrivals(arrivals), seed)
        };
        let stats = des::run(&cfg)?;
        (num(stats.mean_delay), num((delay - stats.mean_delay).abs() / stats.mean_delay))
    } else {
        (String::new(), String::new())
    };
    Ok(vec![
        num(q.service_rate),
        num(q.arrival_rate),
        q.batch_size.to_string(),
        num(delay),
        num(occupancy),
        num(p_fork),
        des_delay,
        rel_err,
        saturated.to_string(),
    ])
}

fn default_confirmation_axes() -> Vec<SweepAxis> {
    let lambdas: Vec<f64> = (1..=20).map(|i| i as f64 / 20.0).collect();
    vec![SweepAxis::new("blockchain.p2p_capacity", &[5e6, 20e6, 50e6]), SweepAxis::new("blockchain.lambda", &lambdas)]
}

/// Mean client upload time of one transaction over the sampled cell geometry.
fn mean_upload_delay(s: &Scenario, seed: u64) -> Result<f64, ScenarioError> {
    let env = FlEnvironment::new(&s.fl, s.effective_blockchain(), &s.communication, s.aggregation_cost(&s.fl), seed)?;
    let mut total = 0.0;
    for link in &env.links {
        total += network::tx_upload_delay(env.blockchain.tx_size_bits, link).map_err(latency::LatencyError::from)?;
    }
    Ok(total / env.links.len() as f64)
}

/// Transaction confirmation latency over the grid; uncomputable cells are left empty.
pub fn run_confirmation_sweep(s: &Scenario, seed: u64) -> Result<CsvTable, ScenarioError> {
    let cells = s.grid(&default_confirmation_axes())?;
    let axes = extra_axes(s, &["blockchain.lambda", "blockchain.p2p_capacity"]);
    let rows = cells
        .par_iter()
        .map(|c| -> Result<Vec<String>, ScenarioError> {
            let bp = c.effective_blockchain();
            let up = mean_upload_delay(c, seed)?;
            let q = c.queue_params()?;
            let (t_bc, p) = match latency::transaction_confirmation_latency(&q, &bp, up) {
                Ok(conf) => (num(conf.latency), num(conf.fork_prob)),
                Err(latency::LatencyError::Queue(crate::queue::QueueError::Saturated)) => (String::new(), String::new()),
                Err(e) => return Err(e.into()),
            };
            Ok([axis_cells(c, &axes)?, vec![num(q.service_rate), num(bp.p2p_capacity), t_bc, p]].concat())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = CsvTable::with_axes(&axes, &CONFIRMATION_HEADER);
    table.rows = rows;
    Ok(table)
}

/// Outcome of the synchronous versus asynchronous grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlComparison {
    /// Clients per row and block fraction per column, averaged over seeds.
    /// Leading columns hold the values of `extra_axes`.
    pub efficiency: CsvTable,
    /// Swept paths other than `fl.clients` and `fl.block_fraction`.
    pub extra_axes: Vec<String>,
    /// Distinct value combinations on `extra_axes`, in grid order.
    pub groups: Vec<Vec<String>>,
    pub clients: Vec<usize>,
    pub fractions: Vec<f64>,
    /// `efficiency_matrix[g][i][j]` for `groups[g]`, `clients[i]`, `fractions[j]`.
    pub efficiency_matrix: Vec<Vec<Vec<f64>>>,
    /// `(file stem, records)` per cell and seed, in grid order.
    pub trajectories: Vec<(String, Vec<FLRoundRecord>)>,
    pub failures: Vec<String>,
}

fn default_flchain_axes() -> Vec<SweepAxis> {
    vec![
        SweepAxis::new("fl.clients", &[10.0, 50.0, 100.0, 200.0]),
        SweepAxis::new("fl.block_fraction", &[0.1, 0.25, 0.5, 0.75, 1.0]),
    ]
}

/// Runs every grid cell over the scenario seeds; `Υ = 1` cells use the
/// synchronous schedule, the rest the asynchronous one.
pub fn run_flchain_comparison(s: &Scenario) -> Result<FlComparison, ScenarioError> {
    let cells = s.grid(&default_flchain_axes())?;
    let axes = extra_axes(s, &["fl.clients", "fl.block_fraction"]);
    let labels: Vec<Vec<String>> = cells.iter().map(|c| axis_cells(c, &axes)).collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, &Scenario, u64)> =
        cells.iter().enumerate().flat_map(|(i, c)| s.run.seeds.iter().map(move |&seed| (i, c, seed))).collect();
    let outcomes: Vec<Result<Vec<FLRoundRecord>, ScenarioError>> = jobs
        .par_iter()
        .map(|&(_, c, seed)| {
            let cfg = c.fl;
            let task = fl::generate_synthetic_task(&cfg.task_spec(), cfg.clients, seed)?;
            let env = FlEnvironment::new(&cfg, c.effective_blockchain(), &c.communication, c.aggregation_cost(&cfg), seed)?;
            let run = if cfg.block_fraction >= 1.0 {
                fl::run_s_flchain(&cfg, &task, &env, seed)?
            } else {
                fl::run_a_flchain(&cfg, &task, &env, seed)?
            };
            Ok(run.records)
        })
        .collect();

    let mut groups: Vec<Vec<String>> = Vec::new();
    let mut clients: Vec<usize> = Vec::new();
    let mut fractions: Vec<f64> = Vec::new();
    for (c, label) in cells.iter().zip(&labels) {
        if !groups.contains(label) {
            groups.push(label.clone());
        }
        if !clients.contains(&c.fl.clients) {
            clients.push(c.fl.clients);
        }
        if !fractions.contains(&c.fl.block_fraction) {
            fractions.push(c.fl.block_fraction);
        }
    }
    let mut sums = vec![vec![vec![(0.0, 0usize); fractions.len()]; clients.len()]; groups.len()];
    let mut trajectories = Vec::new();
    let mut failures = Vec::new();
    for ((i, c, seed), outcome) in jobs.iter().zip(outcomes) {
        let mut name = format!("trajectory_K{}_U{}_seed{}", c.fl.clients, c.fl.block_fraction, seed);
        for (path, v) in axes.iter().zip(&labels[*i]) {
            name.push_str(&format!("_{}{v}", path.replace('.', "-")));
        }
        match outcome {
            Ok(records) => {
                let g = groups.iter().position(|l| l == &labels[*i]).expect("listed");
                let r = clients.iter().position(|&k| k == c.fl.clients).expect("listed");
                let f = fractions.iter().position(|&u| u == c.fl.block_fraction).expect("listed");
                if let Some(e) = fl::efficiency(&records) {
                    sums[g][r][f].0 += e;
                    sums[g][r][f].1 += 1;
                }
                trajectories.push((name, records));
            }
            Err(e) => failures.push(format!("cell {i} ({name}): {e}")),
        }
    }
    let matrix: Vec<Vec<Vec<f64>>> = sums
        .iter()
        .map(|m| m.iter().map(|row| row.iter().map(|&(t, n)| if n > 0 { t / n as f64 } else { f64::NAN }).collect()).collect())
        .collect();

    let mut header = axes.clone();
    header.push("K".to_string());
    header.extend(fractions.iter().map(|u| format!("upsilon_{u}")));
    let mut rows = Vec::new();
    for (label, m) in groups.iter().zip(&matrix) {
        for (k, row) in clients.iter().zip(m) {
            rows.push(label.iter().cloned().chain(std::iter::once(k.to_string())).chain(row.iter().map(|&e| num(e))).collect());
        }
    }
    Ok(FlComparison {
        efficiency: CsvTable { header, rows },
        extra_axes: axes,
        groups,
        clients,
        fractions,
        efficiency_matrix: matrix,
        trajectories,
        failures,
    })
}

/// Synchronous iteration delay for each model preset and client count.
pub fn model_size_delay_report(s: &Scenario, seed: u64, presets: &[(&str, usize)]) -> Result<CsvTable, ScenarioError> {
    let cells = s.grid(&[SweepAxis::new("fl.clients", &[10.0, 50.0, 100.0, 200.0])])?;
    let axes = extra_axes(s, &["fl.clients", "model.params"]);
    let jobs: Vec<(&str, usize, &Scenario)> =
        presets.iter().flat_map(|&(name, p)| cells.iter().map(move |c| (name, p, c))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(name, params, c)| -> Result<Vec<String>, ScenarioError> {
            let mut c = c.clone();
            c.model.params = Some(params);
            let cfg = c.fl;
            let env = FlEnvironment::new(&cfg, c.effective_blockchain(), &c.communication, c.aggregation_cost(&cfg), seed)?;
            let b = latency::sync_iteration(&env.clients, &env.links, &env.blockchain, cfg.epochs, &env.aggregation)?;
            let mut row = axis_cells(&c, &axes)?;
            row.extend([
                name.to_string(),
                params.to_string(),
                cfg.clients.to_string(),
                num(b.iteration_time),
                num(b.log10_iteration_time),
            ]);
            Ok(row)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = CsvTable::with_axes(&axes, &MODEL_HEADER);
    table.rows = rows;
    Ok(table)
}

/// The four standard presets as `(name, parameter count)`.
pub fn standard_presets() -> Vec<(&'static str, usize)> {
    ModelPreset::ALL.iter().map(|p| (p.name(), p.params())).collect()
}
