//! Scenario files: TOML sections for the blockchain, radio, FL and simulation
//! parameters, environment overrides and parameter sweeps.
//!
//! ```toml
//! [blockchain]
//! lambda = 0.2
//! block_size = 50
//!
//! [[sweep]]
//! path = "blockchain.nu"
//! values = [0.2, 2.0, 20.0]
//! ```
//!
//! Every key is optional. Any value can be overridden with an environment
//! variable `FLCHAIN_<SECTION>_<KEY>`, e.g. `FLCHAIN_BLOCKCHAIN_LAMBDA=0.5`.

mod experiments;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::BlockchainParams;
use crate::des::DesError;
use crate::fl::{FLConfig, FlError, SoftmaxRegression};
use crate::latency::{AggregationCost, LatencyError};
use crate::network::RadioParams;
use crate::queue::{QueueError, QueueParams};

pub use experiments::{
    model_size_delay_report, run_confirmation_sweep, run_flchain_comparison, run_queue_sweep, standard_presets, CsvTable,
    FlComparison, CONFIRMATION_HEADER, MODEL_HEADER, QUEUE_HEADER,
};

pub const ENV_PREFIX: &str = "FLCHAIN_";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}{message}", at_line(*.line))]
    Parse { line: Option<usize>, message: String },
    #[error("{}invalid `{key}`: {message}", at_line(*.line))]
    Invalid { key: String, line: Option<usize>, message: String },
    #[error("environment override {var}: {message}")]
    Env { var: String, message: String },
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Des(#[from] DesError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error("output failed: {0}")]
    Output(String),
}

impl ScenarioError {
    /// True for problems with the scenario itself rather than the run.
    pub fn is_validation(&self) -> bool {
        matches!(self, Self::Io { .. } | Self::Parse { .. } | Self::Invalid { .. } | Self::Env { .. })
    }
}

fn at_line(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

/// Parameter-count presets of common image classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    Fnn,
    Cnn,
    Resnet50,
    Vgg19,
}

impl ModelPreset {
    pub const ALL: [ModelPreset; 4] = [Self::Fnn, Self::Cnn, Self::Resnet50, Self::Vgg19];

    pub fn params(self) -> usize {
        match self {
            Self::Fnn => 203_530,
            Self::Cnn => 2_374_506,
            Self::Resnet50 => 23_792_612,
            Self::Vgg19 => 39_316_644,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Fnn => "fnn",
            Self::Cnn => "cnn",
            Self::Resnet50 => "resnet50",
            Self::Vgg19 => "vgg19",
        }
    }
}

/// Size of the exchanged model, which sets transaction size and aggregation cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<ModelPreset>,
    /// Explicit parameter count, taking precedence over `preset`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<usize>,
    pub bytes_per_param: f64,
    pub cycles_per_param: f64,
    pub agg_clock: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { preset: None, params: None, bytes_per_param: 2.0, cycles_per_param: 1.0, agg_clock: 1e9 }
    }
}

impl ModelSection {
    pub fn declared_params(&self) -> Option<usize> {
        self.params.or(self.preset.map(ModelPreset::params))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesSection {
    /// Minimum number of arrivals per simulated cell.
    pub arrivals: u64,
    /// Lengthen near-critical cells up to `max_arrivals`.
    pub adaptive: bool,
    pub max_arrivals: u64,
    pub warmup: f64,
    /// Invalidate blocks with the analytical fork probability.
    pub forks: bool,
}

impl Default for DesSection {
    fn default() -> Self {
        Self { arrivals: 1_000_000, adaptive: true, max_arrivals: 50_000_000, warmup: 0.05, forks: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seeds: vec![1], output_dir: PathBuf::from("results") }
    }
}

/// One axis of a Cartesian parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// `section.key` of a numeric parameter.
    pub path: String,
    pub values: Vec<f64>,
}

impl SweepAxis {
    pub fn new(path: &str, values: &[f64]) -> Self {
        Self { path: path.to_string(), values: values.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub blockchain: BlockchainParams,
    pub communication: RadioParams,
    pub fl: FLConfig,
    pub model: ModelSection,
    pub des: DesSection,
    pub run: RunSection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepAxis>,
}

impl Scenario {
    pub fn queue_params(&self) -> Result<QueueParams, QueueError> {
        self.blockchain.queue()
    }

    /// Blockchain parameters with the transaction size derived from the
    /// declared model size, when there is one.
    pub fn effective_blockchain(&self) -> BlockchainParams {
        let mut bp = self.blockchain;
        if let Some(p) = self.model.declared_params() {
            bp.tx_size_bits = p as f64 * self.model.bytes_per_param * 8.0;
        }
        bp
    }

    pub fn aggregation_cost(&self, fl: &FLConfig) -> AggregationCost {
        AggregationCost {
            model_params: self
                .model
                .declared_params()
                .unwrap_or_else(|| SoftmaxRegression::param_count(fl.dim, fl.n_classes)),
            cycles_per_param: self.model.cycles_per_param,
            clock: self.model.agg_clock,
        }
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Output(e.to_string()))
    }

    /// Copy with the numeric parameter at `section.key` set to `value`.
    pub fn with_value(&self, path: &str, value: f64) -> Result<Scenario, ScenarioError> {
        let invalid = |message: String| ScenarioError::Invalid { key: path.to_string(), line: None, message };
        let (section, key) = path.split_once('.').ok_or_else(|| invalid("expected `section.key`".into()))?;
        let mut table = toml::Table::try_from(self).map_err(|e| ScenarioError::Output(e.to_string()))?;
        let sec = table
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| invalid(format!("unknown section `{section}`")))?;
        let v = match sec.get(key) {
            Some(toml::Value::Integer(_)) => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(invalid(format!("expects a non-negative integer, got {value}")));
                }
                toml::Value::Integer(value as i64)
            }
            Some(toml::Value::Float(_)) | None => toml::Value::Float(value),
            Some(other) => return Err(invalid(format!("is a {} and cannot be swept", other.type_str()))),
        };
        sec.insert(key.to_string(), v);
        let out: Scenario = table.try_into().map_err(|e: toml::de::Error| invalid(e.message().to_string()))?;
        out.validate_fields().map_err(|(_, message)| invalid(message))?;
        Ok(out)
    }

    /// Numeric parameter at `section.key`.
    pub fn value(&self, path: &str) -> Result<f64, ScenarioError> {
        let invalid = |message: String| ScenarioError::Invalid { key: path.to_string(), line: None, message };
        let (section, key) = path.split_once('.').ok_or_else(|| invalid("expected `section.key`".into()))?;
        let table = toml::Table::try_from(self).map_err(|e| ScenarioError::Output(e.to_string()))?;
        match table.get(section).and_then(|sec| sec.get(key)) {
            Some(toml::Value::Integer(i)) => Ok(*i as f64),
            Some(toml::Value::Float(f)) => Ok(*f),
            Some(other) => Err(invalid(format!("is a {}, not a number", other.type_str()))),
            None => Err(invalid("is not set".into())),
        }
    }

    /// Grid points of the scenario's sweep, or of `defaults` when it declares none,
    /// with the last axis varying fastest.
    pub fn grid(&self, defaults: &[SweepAxis]) -> Result<Vec<Scenario>, ScenarioError> {
        let axes = if self.sweep.is_empty() { defaults } else { &self.sweep };
        let mut cells = vec![self.clone()];
        for axis in axes {
            let mut next = Vec::with_capacity(cells.len() * axis.values.len());
            for base in &cells {
                for &v in &axis.values {
                    next.push(base.with_value(&axis.path, v)?);
                }
            }
            cells = next;
        }
        Ok(cells)
    }

    fn validate_fields(&self) -> Result<(), (String, String)> {
        let key = |s: &str, k: &str| format!("{s}.{k}");
        self.blockchain.validate().map_err(|(k, m)| (key("blockchain", k), m))?;
        self.communication.check().map_err(|(k, m)| (key("communication", k), m))?;
        self.fl.check().map_err(|(k, m)| (key("fl", k), m))?;
        let m = &self.model;
        if m.params == Some(0) {
            return Err((key("model", "params"), "must be positive".into()));
        }
        for (k, v) in [("bytes_per_param", m.bytes_per_param), ("cycles_per_param", m.cycles_per_param), ("agg_clock", m.agg_clock)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err((key("model", k), format!("must be positive, got {v}")));
            }
        }
        let d = &self.des;
        if d.arrivals == 0 {
            return Err((key("des", "arrivals"), "must be positive".into()));
        }
        if d.max_arrivals < d.arrivals {
            return Err((key("des", "max_arrivals"), "must be at least `arrivals`".into()));
        }
        if !(0.0..1.0).contains(&d.warmup) {
            return Err((key("des", "warmup"), format!("{} outside [0, 1)", d.warmup)));
        }
        if self.run.seeds.is_empty() {
            return Err((key("run", "seeds"), "at least one seed is required".into()));
        }
        Ok(())
    }

    /// Field invariants plus resolvable, non-empty sweep axes.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.validate_with(None)
    }

    fn validate_with(&self, doc: Option<&str>) -> Result<(), ScenarioError> {
        self.validate_fields().map_err(|(key, message)| {
            let line = doc.and_then(|d| key_line(d, &key));
            ScenarioError::Invalid { key, line, message }
        })?;
        for (i, axis) in self.sweep.iter().enumerate() {
            let line = doc.and_then(|d| sweep_line(d, i));
            if axis.values.is_empty() {
                return Err(ScenarioError::Invalid { key: axis.path.clone(), line, message: "empty sweep grid".into() });
            }
            for &v in &axis.values {
                self.with_value(&axis.path, v).map_err(|e| match e {
                    ScenarioError::Invalid { key, message, .. } => ScenarioError::Invalid { key, line, message },
                    other => other,
                })?;
            }
        }
        Ok(())
    }
}

/// 1-based line declaring `section.key` in a TOML document.
fn key_line(doc: &str, path: &str) -> Option<usize> {
    let (section, key) = path.split_once('.')?;
    let mut current = "";
    for (i, raw) in doc.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim_matches(|c| c == '[' || c == ']').trim();
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        let k = k.trim();
        if (current == section && k == key) || (current.is_empty() && k == path) {
            return Some(i + 1);
        }
    }
    None
}

fn sweep_line(doc: &str, index: usize) -> Option<usize> {
    doc.lines().enumerate().filter(|(_, l)| l.trim() == "[[sweep]]").nth(index).map(|(i, _)| i + 1)
}

fn line_of(doc: &str, offset: usize) -> usize {
    doc[..offset.min(doc.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    load_scenario_str(&text, std::env::vars())
}

/// Parses a scenario document, then applies `FLCHAIN_*` pairs from `env`.
pub fn load_scenario_str(
    text: &str,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<Scenario, ScenarioError> {
    let parsed: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    parsed.validate_with(Some(text))?;

    let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    if overrides.is_empty() {
        return Ok(parsed);
    }
    overrides.sort();
    let mut table = toml::Table::try_from(&parsed).map_err(|e| ScenarioError::Output(e.to_string()))?;
    let names: Vec<String> = overrides.iter().map(|(k, _)| k.clone()).collect();
    for (var, raw) in &overrides {
        let env_err = |message: String| ScenarioError::Env { var: var.clone(), message };
        let rest = var[ENV_PREFIX.len()..].to_ascii_lowercase();
        let (section, key) =
            rest.split_once('_').ok_or_else(|| env_err("expected FLCHAIN_<SECTION>_<KEY>".into()))?;
        let sec = table
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| env_err(format!("unknown section `{section}`")))?;
        sec.insert(key.to_string(), parse_env_value(raw));
    }
    let merged: Scenario = table.try_into().map_err(|e: toml::de::Error| ScenarioError::Env {
        var: names.join(", "),
        message: e.message().to_string(),
    })?;
    merged.validate().map_err(|e| match e {
        ScenarioError::Invalid { key, message, .. } => ScenarioError::Env { var: names.join(", "), message: format!("`{key}` {message}") },
        other => other,
    })?;
    Ok(merged)
}

fn parse_env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn empty_document_gives_defaults() {
        let s = load_scenario_str("", none()).unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.blockchain.tx_size_bits, 5e3);
        assert_eq!(s.blockchain.miners, 10);
        assert_eq!(s.blockchain.timeout, 1000.0);
        assert_eq!(s.blockchain.capacity, 1000);
        assert_eq!(s.communication.noise, -95.0);
    }

    #[test]
    fn negative_lambda_names_key_and_line() {
        let err = load_scenario_str("[blockchain]\nminers = 4\nlambda = -1\n", none()).unwrap_err();
        match &err {
            ScenarioError::Invalid { key, line, .. } => {
                assert_eq!(key, "blockchain.lambda");
                assert_eq!(*line, Some(3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.is_validation());
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn unknown_key_and_type_mismatch_carry_lines() {
        let err = load_scenario_str("[fl]\nclients = 5\nbogus = 1\n", none()).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: Some(3), .. }), "{err}");
        assert!(err.to_string().contains("bogus"));
        let err = load_scenario_str("\n[blockchain]\nminers = \"ten\"\n", none()).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: Some(3), .. }), "{err}");
        assert!(load_scenario_str("[nope]\nx = 1\n", none()).is_err());
    }

    #[test]
    fn round_trip() {
        let text = "[blockchain]\ntau = inf\nlambda = 0.35\n[model]\npreset = \"cnn\"\n[communication]\ninterference = -80.0\n[[sweep]]\npath = \"blockchain.nu\"\nvalues = [0.2, 2.0]\n";
        let s = load_scenario_str(text, none()).unwrap();
        assert!(s.blockchain.timeout.is_infinite());
        let again = load_scenario_str(&s.to_toml().unwrap(), none()).unwrap();
        assert_eq!(s, again);
        let defaults = Scenario::default();
        assert_eq!(load_scenario_str(&defaults.to_toml().unwrap(), none()).unwrap(), defaults);
    }

    #[test]
    fn environment_overrides() {
        let env = vec![
            ("FLCHAIN_BLOCKCHAIN_LAMBDA".to_string(), "0.5".to_string()),
            ("FLCHAIN_BLOCKCHAIN_P2P_CAPACITY".to_string(), "2e7".to_string()),
            ("FLCHAIN_FL_IID".to_string(), "false".to_string()),
            ("FLCHAIN_RUN_OUTPUT_DIR".to_string(), "elsewhere".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let s = load_scenario_str("[blockchain]\nlambda = 0.1\n", env).unwrap();
        assert_eq!(s.blockchain.mining_rate, 0.5);
        assert_eq!(s.blockchain.p2p_capacity, 2e7);
        assert!(!s.fl.iid);
        assert_eq!(s.run.output_dir, PathBuf::from("elsewhere"));

        let bad = vec![("FLCHAIN_BLOCKCHAIN_LAMBDA".to_string(), "-2".to_string())];
        assert!(matches!(load_scenario_str("", bad), Err(ScenarioError::Env { .. })));
        let unknown = vec![("FLCHAIN_NOPE_X".to_string(), "1".to_string())];
        assert!(matches!(load_scenario_str("", unknown), Err(ScenarioError::Env { .. })));
    }

    #[test]
    fn sweeps_resolve_paths() {
        let s = Scenario::default();
        let cells = s
            .grid(&[SweepAxis::new("blockchain.lambda", &[0.1, 0.2]), SweepAxis::new("blockchain.block_size", &[2.0, 5.0, 7.0])])
            .unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!((cells[1].blockchain.mining_rate, cells[1].blockchain.batch_size), (0.1, 5));
        assert_eq!((cells[5].blockchain.mining_rate, cells[5].blockchain.batch_size), (0.2, 7));
        assert!(s.with_value("blockchain.block_size", 2.5).is_err());
        assert!(s.with_value("blockchain.nope", 1.0).is_err());
        assert!(s.with_value("run.seeds", 1.0).is_err());
        assert!(s.with_value("communication.interference", -70.0).unwrap().communication.interference == Some(-70.0));

        let err = load_scenario_str("[[sweep]]\npath = \"fl.nope\"\nvalues = [1.0]\n", none()).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { line: Some(1), .. }), "{err}");
        let err = load_scenario_str("[[sweep]]\npath = \"fl.clients\"\nvalues = []\n", none()).unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn model_preset_sets_transaction_size() {
        let s = load_scenario_str("[model]\npreset = \"fnn\"\n", none()).unwrap();
        assert_eq!(s.effective_blockchain().tx_size_bits, 203_530.0 * 16.0);
        assert_eq!(s.aggregation_cost(&s.fl).model_params, 203_530);
        let plain = Scenario::default();
        assert_eq!(plain.effective_blockchain().tx_size_bits, 5e3);
        assert_eq!(plain.aggregation_cost(&plain.fl).model_params, 330);
    }
}
