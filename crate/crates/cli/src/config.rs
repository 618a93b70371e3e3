//! Experiment configuration: a flat `key = value` text format (a
//! TOML-compatible subset — scalars, quoted strings, one-level arrays,
//! `#` comments) resolved into one struct with CLI-flag overrides.

use crate::errors::CliError;
use sica_core::ndgrad::{NetConfig, OptimizerKind, TrainConfig};
use sica_core::sica::{FlowKind, IndexMode, KlMonitor, SicaConfig};
use sica_core::signals::MixActivation;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::Int(_) => "integer",
            Value::Float(_) => "float",
            Value::Str(_) => "string",
            Value::List(_) => "list",
        }
    }
}

fn parse_scalar(raw: &str, path: &str, line_no: usize) -> Result<Value, CliError> {
    let raw = raw.trim();
    if raw == "true" {
        return Ok(Value::Bool(true));
    }
    if raw == "false" {
        return Ok(Value::Bool(false));
    }
    if let Some(stripped) = raw.strip_prefix('"') {
        let Some(inner) = stripped.strip_suffix('"') else {
            return Err(CliError::usage(format!(
                "{path}:{line_no}: unterminated string {raw}"
            )));
        };
        return Ok(Value::Str(inner.to_string()));
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Ok(Value::Int(i));
    }
    if let Ok(f) = raw.parse::<f64>() {
        return Ok(Value::Float(f));
    }
    Err(CliError::usage(format!(
        "{path}:{line_no}: cannot parse value `{raw}`"
    )))
}

/// Parse the flat key/value format into an ordered map.
pub fn parse_config_text(text: &str, path: &str) -> Result<BTreeMap<String, Value>, CliError> {
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match line.find('#') {
            Some(pos) if !line[..pos].contains('"') => &line[..pos],
            _ => line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::usage(format!(
                "{path}:{line_no}: expected `key = value`, found `{line}`"
            )));
        };
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(CliError::usage(format!(
                "{path}:{line_no}: invalid key `{key}`"
            )));
        }
        let value = value.trim();
        let parsed = if let Some(inner) = value.strip_prefix('[') {
            let Some(inner) = inner.strip_suffix(']') else {
                return Err(CliError::usage(format!(
                    "{path}:{line_no}: unterminated list"
                )));
            };
            let mut items = Vec::new();
            for item in inner.split(',') {
                let item = item.trim();
                if item.is_empty() {
                    continue;
                }
                items.push(parse_scalar(item, path, line_no)?);
            }
            Value::List(items)
        } else {
            parse_scalar(value, path, line_no)?
        };
        map.insert(key.to_string(), parsed);
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    Ar7,
    Heart,
    Mnist,
}

/// Everything one experiment needs, with defaults chosen for desk-scale
/// runs. Every field can be set from the config file; a few have CLI-flag
/// overrides on top.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub d: usize,
    pub t_len: usize,
    pub noise_std: f64,
    pub burn_in: usize,
    pub ar_beta: Vec<f64>,
    pub mnist_images: Option<String>,
    pub mnist_labels: Option<String>,
    pub image_side: usize,

    pub mix_steps: usize,
    pub mix_activation: MixActivation,
    pub mix_diag: f64,
    pub mix_offdiag: f64,

    pub flow: FlowKind,
    pub iterations: usize,
    pub eta: f64,
    pub wgf_substeps: usize,
    pub euler_steps: usize,
    pub product_draws: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub conv_layers: usize,
    pub standardize: bool,
    pub whiten: bool,
    pub kl_monitor: KlMonitor,
    pub warm_start: bool,
    pub dre_optimizer: OptimizerKind,
    pub dre_lr: f64,
    pub dre_epochs: usize,
    pub dre_batch: usize,
    pub dre_batches_per_epoch: Option<usize>,
    pub rf_optimizer: OptimizerKind,
    pub rf_lr: f64,
    pub rf_epochs: usize,
    pub rf_batch: usize,
    pub rf_batches_per_epoch: Option<usize>,

    pub fastica_max_iter: usize,
    pub fastica_tol: f64,

    pub sweep: Vec<usize>,
    pub runs: usize,
    pub methods: Vec<String>,

    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: Dataset::Ar7,
            d: 2,
            t_len: 1024,
            noise_std: 0.1,
            burn_in: 0,
            ar_beta: vec![0.4, 0.3, 0.2, 0.1, -0.05, 0.03, -0.02],
            mnist_images: None,
            mnist_labels: None,
            image_side: 32,
            mix_steps: 5,
            mix_activation: MixActivation::Identity,
            mix_diag: 1.0,
            mix_offdiag: 0.7,
            flow: FlowKind::Rf,
            iterations: 8,
            eta: 0.3,
            wgf_substeps: 1,
            euler_steps: 10,
            product_draws: 1,
            hidden_channels: 16,
            kernel_size: 3,
            conv_layers: 3,
            standardize: true,
            whiten: true,
            kl_monitor: KlMonitor::Auto,
            warm_start: false,
            dre_optimizer: OptimizerKind::Adam,
            dre_lr: 1e-3,
            dre_epochs: 3,
            dre_batch: 128,
            dre_batches_per_epoch: None,
            rf_optimizer: OptimizerKind::Adam,
            rf_lr: 1e-3,
            rf_epochs: 6,
            rf_batch: 128,
            rf_batches_per_epoch: None,
            fastica_max_iter: 20_000,
            fastica_tol: 1e-6,
            sweep: vec![5, 10, 15],
            runs: 5,
            methods: vec![
                "baseline".into(),
                "fastica".into(),
                "sica-wgf".into(),
                "sica-rf".into(),
            ],
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Paper-faithful training settings (slow): Adam 1e-5 for the ratio,
    /// Adagrad 1e-5 for the flow, batch 100, 10/100 epochs, J=10/30,
    /// 100 Euler steps.
    pub fn paper_profile(mut self) -> Self {
        self.eta = 0.1;
        self.euler_steps = 100;
        self.whiten = false;
        self.dre_optimizer = OptimizerKind::Adam;
        self.dre_lr = 1e-5;
        self.dre_epochs = 10;
        self.dre_batch = 100;
        self.rf_optimizer = OptimizerKind::Adagrad;
        self.rf_lr = 1e-5;
        self.rf_epochs = 100;
        self.rf_batch = 100;
        self.iterations = match self.flow {
            FlowKind::Wgf => 10,
            FlowKind::Rf => 30,
        };
        self
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::data(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut map = parse_config_text(&text, &path.display().to_string())?;
        let mut cfg = ExperimentConfig::default();
        // the profile key rewrites defaults, so it applies before the rest
        if let Some(profile) = map.remove("profile") {
            match &profile {
                Value::Str(s) if s == "paper" => cfg = cfg.paper_profile(),
                Value::Str(s) if s == "desk" => {}
                other => {
                    return Err(CliError::usage(format!(
                        "profile must be \"paper\" or \"desk\", found {other:?}"
                    )))
                }
            }
        }
        cfg.apply_map(&map)?;
        Ok(cfg)
    }

    pub fn apply_map(&mut self, map: &BTreeMap<String, Value>) -> Result<(), CliError> {
        for (key, value) in map {
            self.apply(key, value)?;
        }
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &Value) -> Result<(), CliError> {
        let bad = |expected: &str| {
            Err(CliError::usage(format!(
                "config key `{key}`: expected {expected}, found {}",
                value.type_name()
            )))
        };
        let as_usize = |v: &Value| -> Result<usize, CliError> {
            match v {
                Value::Int(i) if *i >= 0 => Ok(*i as usize),
                _ => Err(CliError::usage(format!(
                    "config key `{key}`: expected non-negative integer"
                ))),
            }
        };
        let as_f64 = |v: &Value| -> Result<f64, CliError> {
            match v {
                Value::Int(i) => Ok(*i as f64),
                Value::Float(f) => Ok(*f),
                _ => Err(CliError::usage(format!(
                    "config key `{key}`: expected number"
                ))),
            }
        };
        match key {
            "dataset" => match value {
                Value::Str(s) => {
                    self.dataset = match s.as_str() {
                        "ar7" => Dataset::Ar7,
                        "heart" => Dataset::Heart,
                        "mnist" => Dataset::Mnist,
                        other => {
                            return Err(CliError::usage(format!("unknown dataset `{other}`")))
                        }
                    }
                }
                _ => return bad("string"),
            },
            "d" => self.d = as_usize(value)?,
            "t" => self.t_len = as_usize(value)?,
            "noise_std" => self.noise_std = as_f64(value)?,
            "burn_in" => self.burn_in = as_usize(value)?,
            "ar_beta" => match value {
                Value::List(items) => {
                    self.ar_beta = items
                        .iter()
                        .map(as_f64)
                        .collect::<Result<Vec<_>, _>>()?;
                }
                _ => return bad("list of numbers"),
            },
            "mnist_images" => match value {
                Value::Str(s) => self.mnist_images = Some(s.clone()),
                _ => return bad("string"),
            },
            "mnist_labels" => match value {
                Value::Str(s) => self.mnist_labels = Some(s.clone()),
                _ => return bad("string"),
            },
            "image_side" => self.image_side = as_usize(value)?,
            "mix_steps" => self.mix_steps = as_usize(value)?,
            "mix_activation" => match value {
                Value::Str(s) => {
                    self.mix_activation = match s.as_str() {
                        "identity" => MixActivation::Identity,
                        "gelu" => MixActivation::Gelu,
                        other => {
                            return Err(CliError::usage(format!(
                                "unknown mix activation `{other}`"
                            )))
                        }
                    }
                }
                _ => return bad("string"),
            },
            "mix_diag" => self.mix_diag = as_f64(value)?,
            "mix_offdiag" => self.mix_offdiag = as_f64(value)?,
            "flow" => match value {
                Value::Str(s) => {
                    self.flow = match s.as_str() {
                        "wgf" => FlowKind::Wgf,
                        "rf" => FlowKind::Rf,
                        other => return Err(CliError::usage(format!("unknown flow `{other}`"))),
                    }
                }
                _ => return bad("string"),
            },
            "iterations" => self.iterations = as_usize(value)?,
            "eta" => self.eta = as_f64(value)?,
            "wgf_substeps" => self.wgf_substeps = as_usize(value)?,
            "euler_steps" => self.euler_steps = as_usize(value)?,
            "product_draws" => self.product_draws = as_usize(value)?.max(1),
            "hidden_channels" => self.hidden_channels = as_usize(value)?,
            "kernel_size" => self.kernel_size = as_usize(value)?,
            "conv_layers" => self.conv_layers = as_usize(value)?,
            "standardize" => match value {
                Value::Bool(b) => self.standardize = *b,
                _ => return bad("bool"),
            },
            "whiten" => match value {
                Value::Bool(b) => self.whiten = *b,
                _ => return bad("bool"),
            },
            "kl_monitor" => match value {
                Value::Str(s) => {
                    self.kl_monitor = match s.as_str() {
                        "auto" => KlMonitor::Auto,
                        "on" => KlMonitor::On,
                        "off" => KlMonitor::Off,
                        other => {
                            return Err(CliError::usage(format!(
                                "unknown kl_monitor `{other}`"
                            )))
                        }
                    }
                }
                _ => return bad("string"),
            },
            "warm_start" => match value {
                Value::Bool(b) => self.warm_start = *b,
                _ => return bad("bool"),
            },
            "dre_optimizer" => self.dre_optimizer = parse_optimizer(key, value)?,
            "dre_lr" => self.dre_lr = as_f64(value)?,
            "dre_epochs" => self.dre_epochs = as_usize(value)?,
            "dre_batch" => self.dre_batch = as_usize(value)?,
            "dre_batches_per_epoch" => {
                let n = as_usize(value)?;
                self.dre_batches_per_epoch = (n > 0).then_some(n);
            }
            "rf_optimizer" => self.rf_optimizer = parse_optimizer(key, value)?,
            "rf_lr" => self.rf_lr = as_f64(value)?,
            "rf_epochs" => self.rf_epochs = as_usize(value)?,
            "rf_batch" => self.rf_batch = as_usize(value)?,
            "rf_batches_per_epoch" => {
                let n = as_usize(value)?;
                self.rf_batches_per_epoch = (n > 0).then_some(n);
            }
            "fastica_max_iter" => self.fastica_max_iter = as_usize(value)?,
            "fastica_tol" => self.fastica_tol = as_f64(value)?,
            "sweep" => match value {
                Value::List(items) => {
                    self.sweep = items
                        .iter()
                        .map(as_usize)
                        .collect::<Result<Vec<_>, _>>()?;
                }
                _ => return bad("list of integers"),
            },
            "runs" => self.runs = as_usize(value)?,
            "methods" => match value {
                Value::List(items) => {
                    let mut methods = Vec::new();
                    for item in items {
                        match item {
                            Value::Str(s) => methods.push(s.clone()),
                            _ => return bad("list of strings"),
                        }
                    }
                    self.methods = methods;
                }
                _ => return bad("list of strings"),
            },
            "seed" => match value {
                Value::Int(i) if *i >= 0 => self.seed = *i as u64,
                _ => return bad("non-negative integer"),
            },
            other => {
                return Err(CliError::usage(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.d < 1 {
            return Err(CliError::usage("d must be >= 1"));
        }
        if self.runs < 1 {
            return Err(CliError::usage("runs must be >= 1"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(CliError::usage("kernel_size must be odd"));
        }
        for m in &self.methods {
            if !matches!(m.as_str(), "baseline" | "fastica" | "sica-wgf" | "sica-rf") {
                return Err(CliError::usage(format!("unknown method `{m}`")));
            }
        }
        if self.dataset == Dataset::Mnist && self.mnist_images.is_some() != self.mnist_labels.is_some()
        {
            return Err(CliError::usage(
                "mnist_images and mnist_labels must be given together",
            ));
        }
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            hidden_channels: self.hidden_channels,
            kernel_size: self.kernel_size,
            conv_layers: self.conv_layers,
        }
    }

    pub fn sica_config(&self) -> SicaConfig {
        let mut dre_train =
            TrainConfig::new(self.dre_optimizer, self.dre_lr, self.dre_epochs, self.dre_batch);
        dre_train.batches_per_epoch = self.dre_batches_per_epoch;
        let mut rf_train =
            TrainConfig::new(self.rf_optimizer, self.rf_lr, self.rf_epochs, self.rf_batch);
        rf_train.batches_per_epoch = self.rf_batches_per_epoch;
        SicaConfig {
            flow: self.flow,
            iterations: self.iterations,
            eta: self.eta,
            wgf_substeps: self.wgf_substeps,
            euler_steps: self.euler_steps,
            product_draws: self.product_draws,
            index_mode: if self.dataset == Dataset::Mnist {
                IndexMode::Grid {
                    height: self.image_side,
                    width: self.image_side,
                }
            } else {
                IndexMode::Sequence
            },
            net: self.net_config(),
            dre_train,
            rf_train,
            standardize_input: self.standardize,
            whiten_input: self.whiten,
            kl_monitor: self.kl_monitor,
            warm_start: self.warm_start,
            snapshots: Some(false),
            seed: self.seed,
        }
    }

    /// One `key=value` line per field, used as the provenance echo in every
    /// artifact this run writes.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "dataset={} d={} t={} noise_std={} burn_in={} mix_steps={} mix_activation={} \
             mix_diag={} mix_offdiag={} flow={} iterations={} eta={} wgf_substeps={} \
             euler_steps={} hidden_channels={} kernel_size={} conv_layers={} standardize={} \
             whiten={} warm_start={} dre={}@{}x{}b{} rf={}@{}x{}b{} seed={}",
            match self.dataset {
                Dataset::Ar7 => "ar7",
                Dataset::Heart => "heart",
                Dataset::Mnist => "mnist",
            },
            self.d,
            self.t_len,
            self.noise_std,
            self.burn_in,
            self.mix_steps,
            match self.mix_activation {
                MixActivation::Identity => "identity",
                MixActivation::Gelu => "gelu",
            },
            self.mix_diag,
            self.mix_offdiag,
            match self.flow {
                FlowKind::Wgf => "wgf",
                FlowKind::Rf => "rf",
            },
            self.iterations,
            self.eta,
            self.wgf_substeps,
            self.euler_steps,
            self.hidden_channels,
            self.kernel_size,
            self.conv_layers,
            self.standardize,
            self.whiten,
            self.warm_start,
            optimizer_name(self.dre_optimizer),
            self.dre_lr,
            self.dre_epochs,
            self.dre_batch,
            optimizer_name(self.rf_optimizer),
            self.rf_lr,
            self.rf_epochs,
            self.rf_batch,
            self.seed,
        );
        s
    }
}

fn optimizer_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Adam => "adam",
        OptimizerKind::Adagrad => "adagrad",
    }
}

fn parse_optimizer(key: &str, value: &Value) -> Result<OptimizerKind, CliError> {
    match value {
        Value::Str(s) => match s.as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            other => Err(CliError::usage(format!(
                "config key `{key}`: unknown optimizer `{other}`"
            ))),
        },
        _ => Err(CliError::usage(format!(
            "config key `{key}`: expected string"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_toml_subset() {
        let text = r#"
# comment
dataset = "ar7"
t = 256
noise_std = 0.25
whiten = false
sweep = [5, 10, 15]
methods = ["baseline", "fastica"]
"#;
        let map = parse_config_text(text, "test").unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.apply_map(&map).unwrap();
        assert_eq!(cfg.t_len, 256);
        assert_eq!(cfg.noise_std, 0.25);
        assert!(!cfg.whiten);
        assert_eq!(cfg.sweep, vec![5, 10, 15]);
        assert_eq!(cfg.methods, vec!["baseline", "fastica"]);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let map = parse_config_text("typo_key = 3\n", "test").unwrap();
        let mut cfg = ExperimentConfig::default();
        let err = cfg.apply_map(&map).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE_CODE);
    }

    const EXIT_USAGE_CODE: u8 = 2;

    #[test]
    fn malformed_lines_are_reported_with_position() {
        let err = parse_config_text("flow wgf\n", "cfg.toml").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("cfg.toml:1"), "{msg}");
    }

    #[test]
    fn type_mismatches_are_rejected() {
        let map = parse_config_text("iterations = \"ten\"\n", "test").unwrap();
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_map(&map).is_err());
    }
}
