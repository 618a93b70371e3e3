//! The outer iterative KL-minimization loop: build the masked/permuted
//! datasets, fit the chosen flow, apply the refinement synchronously,
//! monitor the estimated KL, and keep the ordered refinements as the
//! composed de-mixing map.
//!
//! Stationarity across positions is used explicitly: every iteration pools
//! all T masked positions into one training set; there are no per-position
//! models anywhere.

use crate::dre::{
    estimate_kl, euler_step, fit_ratio, fit_ratio_warm, wgf_velocity, DreError, RatioDataset,
    RatioModel, WgfField,
};
use crate::eval::{mcc, EvalError};
use crate::ndgrad::{
    load_checkpoint, save_checkpoint, CheckpointError, ConvMode, NetConfig, OptimizerKind,
    Tensor, TrainConfig, VectorFieldNet,
};
use crate::rectflow::{
    refine_all, rf_channels, train_rf, train_rf_warm, RfDataset, RfError, RfModel,
};
use crate::rng::{labels, SeedSplitter};
use crate::scalar::Scalar;
use crate::signals::{
    encoded_channels, whiten_rows, PermutedProduct, RowAffine, SignalError, SignalMatrix,
    WhitenMap,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SicaError {
    #[error("iteration {iteration}: {source}")]
    FlowTraining {
        iteration: usize,
        #[source]
        source: FlowError,
    },
    #[error("non-finite recovered signals after iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("demixer shape mismatch: expected {expected}, found {found} ({what})")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("bad demixer manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Dre(#[from] DreError),
    #[error(transparent)]
    Rf(#[from] RfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Wgf,
    Rf,
}

/// Whether the index axis is a plain sequence or a flattened image grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexMode {
    Sequence,
    Grid { height: usize, width: usize },
}

impl IndexMode {
    fn conv_mode(&self, t_len: usize) -> Result<ConvMode, SicaError> {
        match *self {
            IndexMode::Sequence => Ok(ConvMode::OneD { t_len }),
            IndexMode::Grid { height, width } => {
                if height * width != t_len {
                    return Err(SicaError::InvalidConfig(format!(
                        "grid {height}x{width} does not flatten to T={t_len}"
                    )));
                }
                Ok(ConvMode::TwoD { height, width })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlMonitor {
    /// Monitor when cheap (d <= 3 and T <= 1024).
    Auto,
    On,
    Off,
}

fn default_product_draws() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SicaConfig {
    pub flow: FlowKind,
    /// Outer iterations J.
    pub iterations: usize,
    /// WGF step size.
    pub eta: f64,
    /// WGF Euler substeps per iteration against a frozen context.
    pub wgf_substeps: usize,
    /// RF sampling steps for the inner ODE solve.
    pub euler_steps: usize,
    /// Product permutation draws per iteration; more draws give the flow
    /// objective more Monte Carlo coverage at the same expectation.
    #[serde(default = "default_product_draws")]
    pub product_draws: usize,
    pub index_mode: IndexMode,
    pub net: NetConfig,
    pub dre_train: TrainConfig,
    pub rf_train: TrainConfig,
    pub standardize_input: bool,
    /// Jointly PCA-whiten the observations before the loop (implies row
    /// standardization). Off by default; deep mixings leave the useful
    /// signal directions orders of magnitude below the dominant one, and
    /// whitening restores a workable conditioning for the flows.
    #[serde(default)]
    pub whiten_input: bool,
    pub kl_monitor: KlMonitor,
    /// Retrain each iteration's flow from scratch (default) or continue
    /// from the previous iteration's parameters.
    pub warm_start: bool,
    /// Force snapshots on/off; `None` keeps them while d*T*(J+1) <= 1e7.
    pub snapshots: Option<bool>,
    pub seed: u64,
}

impl SicaConfig {
    /// WGF flavour: J = 10, DRE trained with Adam at 1e-5, batch 100,
    /// 10 epochs.
    pub fn wgf_defaults() -> Self {
        SicaConfig {
            flow: FlowKind::Wgf,
            iterations: 10,
            eta: 0.1,
            wgf_substeps: 1,
            euler_steps: 100,
            product_draws: 1,
            index_mode: IndexMode::Sequence,
            net: NetConfig::default(),
            dre_train: TrainConfig::new(OptimizerKind::Adam, 1e-5, 10, 100),
            rf_train: TrainConfig::new(OptimizerKind::Adagrad, 1e-5, 100, 100),
            standardize_input: true,
            whiten_input: false,
            kl_monitor: KlMonitor::Auto,
            warm_start: false,
            snapshots: None,
            seed: 0,
        }
    }

    /// RF flavour for sequences: J = 30, Adagrad at 1e-5, batch 100,
    /// 100 epochs, 100 Euler steps.
    pub fn rf_sequence_defaults() -> Self {
        SicaConfig {
            flow: FlowKind::Rf,
            iterations: 30,
            ..Self::wgf_defaults()
        }
    }

    /// RF flavour for flattened images: J = 20.
    pub fn rf_image_defaults(height: usize, width: usize) -> Self {
        SicaConfig {
            flow: FlowKind::Rf,
            iterations: 20,
            index_mode: IndexMode::Grid { height, width },
            ..Self::wgf_defaults()
        }
    }

    fn validate(&self) -> Result<(), SicaError> {
        if self.iterations == 0 {
            return Err(SicaError::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.eta < 0.0 {
            return Err(SicaError::InvalidConfig("eta must be >= 0".into()));
        }
        if self.euler_steps == 0 {
            return Err(SicaError::InvalidConfig("euler_steps must be >= 1".into()));
        }
        Ok(())
    }

    fn monitor_enabled(&self, d: usize, t_len: usize) -> bool {
        match self.kl_monitor {
            KlMonitor::On => true,
            KlMonitor::Off => false,
            KlMonitor::Auto => d <= 3 && t_len <= 1024,
        }
    }
}

/// Per-iteration record. Entry `j` describes `Z^{(j)}`; its KL estimate is
/// produced by the ratio model fit on that same matrix (reused from the
/// next iteration's fit in WGF mode, a dedicated fit otherwise).
#[derive(Debug, Clone)]
pub struct TraceEntry<F> {
    pub iteration: usize,
    pub kl_estimate: Option<f64>,
    pub mcc: Option<f64>,
    pub seconds: f64,
    pub wgf_lipschitz_proxy: Option<f64>,
    pub snapshot: Option<SignalMatrix<F>>,
}

#[derive(Debug, Clone, Default)]
pub struct DemixTrace<F> {
    pub entries: Vec<TraceEntry<F>>,
}

impl<F: Scalar> DemixTrace<F> {
    /// `(j, KL estimate)` pairs for the iterations that have one.
    pub fn kl_curve(&self) -> Vec<(usize, f64)> {
        self.entries
            .iter()
            .filter_map(|e| e.kl_estimate.map(|kl| (e.iteration, kl)))
            .collect()
    }

    /// Trace CSV: `j,kl_estimate,mcc,seconds` with empty cells for absent
    /// diagnostics.
    pub fn to_csv_string(&self, extra_comments: &[String]) -> String {
        let mut s = String::new();
        for c in extra_comments {
            s.push_str(&format!("# {c}\n"));
        }
        s.push_str("j,kl_estimate,mcc,seconds\n");
        for e in &self.entries {
            let kl = e.kl_estimate.map(|v| v.to_string()).unwrap_or_default();
            let m = e.mcc.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", e.iteration, kl, m, e.seconds));
        }
        s
    }
}

/// Trailing-window average used to smooth noisy KL estimates before
/// monotonicity checks.
pub fn trailing_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    values
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &values[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// One stored refinement step of the composed de-mixing map.
#[derive(Debug, Clone)]
pub enum Refinement<F> {
    Wgf(RatioModel<F>),
    Rf(RfModel<F>),
}

/// The stored input preprocessing, part of the composed map.
#[derive(Debug, Clone)]
pub enum Preprocess<F> {
    Rows(RowAffine<F>),
    Whiten(WhitenMap<F>),
}

impl<F: Scalar> Preprocess<F> {
    fn forward(&self, x: &SignalMatrix<F>) -> SignalMatrix<F> {
        match self {
            Preprocess::Rows(aff) => aff.forward(x),
            Preprocess::Whiten(map) => map.forward(x),
        }
    }

    fn backward(&self, z: &SignalMatrix<F>) -> SignalMatrix<F> {
        match self {
            Preprocess::Rows(aff) => aff.inverse(z),
            Preprocess::Whiten(map) => map.backward(z),
        }
    }
}

/// The learned de-mixing map: optional input standardization followed by
/// the ordered refinements.
#[derive(Debug, Clone)]
pub struct Demixer<F> {
    pub flow: FlowKind,
    pub preprocess: Option<Preprocess<F>>,
    pub models: Vec<Refinement<F>>,
    pub eta: f64,
    pub wgf_substeps: usize,
    pub euler_steps: usize,
    pub d: usize,
    pub t_len: usize,
}

impl<F: Scalar> Demixer<F> {
    /// A de-mixer with no refinements: the identity map.
    pub fn identity(flow: FlowKind, d: usize, t_len: usize) -> Self {
        Demixer {
            flow,
            preprocess: None,
            models: Vec::new(),
            eta: 0.0,
            wgf_substeps: 1,
            euler_steps: 1,
            d,
            t_len,
        }
    }

    /// Replay the stored refinements on new observations with the same
    /// shape as training. Output stays in the internal (standardized)
    /// frame, matching what `demix` returns.
    pub fn apply(&self, x: &SignalMatrix<F>) -> Result<SignalMatrix<F>, SicaError> {
        if x.d() != self.d {
            return Err(SicaError::ShapeMismatch {
                what: "signal count",
                expected: self.d,
                found: x.d(),
            });
        }
        if x.t_len() != self.t_len {
            return Err(SicaError::ShapeMismatch {
                what: "sequence length",
                expected: self.t_len,
                found: x.t_len(),
            });
        }
        let mut z = match &self.preprocess {
            Some(pre) => pre.forward(x),
            None => x.clone(),
        };
        for (j, model) in self.models.iter().enumerate() {
            z = match model {
                Refinement::Wgf(ratio) => {
                    let field = WgfField {
                        model: ratio.clone(),
                        eta: self.eta,
                        substeps: self.wgf_substeps,
                    };
                    euler_step(&field, &z).map_err(|e| SicaError::FlowTraining {
                        iteration: j + 1,
                        source: e.into(),
                    })?
                }
                Refinement::Rf(rf) => refine_all(rf, &z, self.euler_steps).map_err(|e| {
                    SicaError::FlowTraining {
                        iteration: j + 1,
                        source: e.into(),
                    }
                })?,
            };
        }
        Ok(z)
    }

    /// Map internal-frame signals back to the input scale.
    pub fn to_input_scale(&self, z: &SignalMatrix<F>) -> SignalMatrix<F> {
        match &self.preprocess {
            Some(pre) => pre.backward(z),
            None => z.clone(),
        }
    }
}

pub struct DemixOutput<F> {
    /// Recovered signals in the internal (standardized) frame.
    pub z: SignalMatrix<F>,
    pub trace: DemixTrace<F>,
    pub demixer: Demixer<F>,
}

const SNAPSHOT_VALUE_BUDGET: usize = 10_000_000;

/// Stream slots within one outer iteration.
const SLOT_PERMS: u64 = 0;
const SLOT_TRAIN: u64 = 1;
const SLOT_MONITOR_PERMS: u64 = 2;
const SLOT_MONITOR_TRAIN: u64 = 3;
const SLOTS_PER_ITERATION: u64 = 4;

fn iteration_label(j: usize, slot: u64) -> u64 {
    labels::ITERATION_BASE + j as u64 * SLOTS_PER_ITERATION + slot
}

/// Fit a fresh ratio model on `z` purely for KL monitoring.
fn monitor_kl<F: Scalar>(
    z: &SignalMatrix<F>,
    mode: ConvMode,
    cfg: &SicaConfig,
    splitter: &SeedSplitter,
    j: usize,
) -> Result<f64, DreError> {
    let mut perm_rng = splitter.stream(iteration_label(j, SLOT_MONITOR_PERMS));
    let product = PermutedProduct::draw(z.d(), z.t_len(), &mut perm_rng).samples(z);
    let ds = RatioDataset::from_signal(z, product);
    let mut train_rng = splitter.stream(iteration_label(j, SLOT_MONITOR_TRAIN));
    let model = fit_ratio(&ds, mode, &cfg.net, &cfg.dre_train, &mut train_rng)?;
    estimate_kl(&model, z, &ds.joint)
}

/// Finite-difference proxy for the velocity-field Lipschitz constant: the
/// largest Jacobian row sum over a few probe columns. Used only as the
/// invertibility diagnostic `eta * L < 1` for single-step WGF refinements.
fn wgf_lipschitz_proxy<F: Scalar>(
    model: &RatioModel<F>,
    z: &SignalMatrix<F>,
) -> Result<f64, DreError> {
    let d = z.d();
    let t_len = z.t_len();
    let probes: Vec<usize> = (0..t_len.min(8)).map(|k| k * t_len / t_len.min(8)).collect();
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for &t in &probes {
        let cols = vec![t; d];
        let y = z.column(t);
        let mut row_sums = vec![0.0f64; d];
        for jdx in 0..d {
            let mut hi = y.clone();
            let mut lo = y.clone();
            hi[jdx] += F::cast(eps);
            lo[jdx] -= F::cast(eps);
            let v_hi = wgf_velocity(model, z, &cols, &hi)?;
            let v_lo = wgf_velocity(model, z, &cols, &lo)?;
            for i in 0..d {
                let deriv = (v_hi[i].as_f64() - v_lo[i].as_f64()) / (2.0 * eps);
                row_sums[i] += deriv.abs();
            }
        }
        for rs in row_sums {
            worst = worst.max(rs);
        }
    }
    Ok(worst)
}

/// Run the iterative KL-minimization loop on observations `x`.
///
/// `ground_truth`, when supplied, adds an MCC column to the trace; it never
/// influences the de-mixing itself. The returned signals live in the
/// internal (standardized) frame; use [`Demixer::to_input_scale`] to map
/// them back.
pub fn demix<F: Scalar>(
    x: &SignalMatrix<F>,
    cfg: &SicaConfig,
    ground_truth: Option<&SignalMatrix<F>>,
) -> Result<DemixOutput<F>, SicaError> {
    cfg.validate()?;
    if !x.is_finite() {
        return Err(SicaError::InvalidConfig(
            "observations contain non-finite values".into(),
        ));
    }
    let d = x.d();
    let t_len = x.t_len();
    let mode = cfg.index_mode.conv_mode(t_len)?;
    let monitor = cfg.monitor_enabled(d, t_len);
    let keep_snapshots = cfg
        .snapshots
        .unwrap_or(d * t_len * (cfg.iterations + 1) <= SNAPSHOT_VALUE_BUDGET);
    let splitter = SeedSplitter::new(cfg.seed);

    let (mut z, preprocess) = if cfg.whiten_input {
        let (z, map) = whiten_rows(x)?;
        (z, Some(Preprocess::Whiten(map)))
    } else if cfg.standardize_input {
        let (z, aff) = x.standardize_rows();
        (z, Some(Preprocess::Rows(aff)))
    } else {
        (x.clone(), None)
    };

    let score = |z: &SignalMatrix<F>| -> Result<Option<f64>, SicaError> {
        match ground_truth {
            Some(s) => Ok(Some(mcc(z, s)?.mcc)),
            None => Ok(None),
        }
    };

    let mut trace = DemixTrace {
        entries: vec![TraceEntry {
            iteration: 0,
            kl_estimate: None,
            mcc: score(&z)?,
            seconds: 0.0,
            wgf_lipschitz_proxy: None,
            snapshot: keep_snapshots.then(|| z.clone()),
        }],
    };
    let mut models: Vec<Refinement<F>> = Vec::with_capacity(cfg.iterations);

    for j in 1..=cfg.iterations {
        let started = Instant::now();
        let flow_err = |source: FlowError| SicaError::FlowTraining {
            iteration: j,
            source,
        };
        let mut perm_rng = splitter.stream(iteration_label(j, SLOT_PERMS));
        let draws = cfg.product_draws.max(1);
        let mut product = Vec::with_capacity(draws * t_len);
        for _ in 0..draws {
            product.extend(PermutedProduct::draw(d, t_len, &mut perm_rng).samples(&z));
        }
        let mut train_rng = splitter.stream(iteration_label(j, SLOT_TRAIN));

        let mut lipschitz = None;
        match cfg.flow {
            FlowKind::Wgf => {
                let ds = RatioDataset::from_signal(&z, product);
                let warm_model = if cfg.warm_start {
                    models.last().and_then(|m| match m {
                        Refinement::Wgf(prev) => Some(prev.clone()),
                        Refinement::Rf(_) => None,
                    })
                } else {
                    None
                };
                let ratio = match warm_model {
                    Some(prev) => fit_ratio_warm(prev, &ds, &cfg.dre_train, &mut train_rng),
                    None => fit_ratio(&ds, mode, &cfg.net, &cfg.dre_train, &mut train_rng),
                }
                .map_err(|e| flow_err(e.into()))?;
                if monitor {
                    // This model was fit on Z^{(j-1)}: its mean joint logit
                    // is the KL estimate for the previous entry.
                    let kl = estimate_kl(&ratio, &z, &ds.joint).map_err(|e| flow_err(e.into()))?;
                    trace.entries[j - 1].kl_estimate = Some(kl);
                }
                lipschitz = Some(
                    wgf_lipschitz_proxy(&ratio, &z).map_err(|e| flow_err(e.into()))?,
                );
                let field = WgfField {
                    model: ratio,
                    eta: cfg.eta,
                    substeps: cfg.wgf_substeps,
                };
                z = euler_step(&field, &z).map_err(|e| flow_err(e.into()))?;
                models.push(Refinement::Wgf(field.model));
            }
            FlowKind::Rf => {
                if monitor {
                    let kl = monitor_kl(&z, mode, cfg, &splitter, j)
                        .map_err(|e| flow_err(e.into()))?;
                    trace.entries[j - 1].kl_estimate = Some(kl);
                }
                let ds = RfDataset::from_signal(&z, product);
                let warm_model = if cfg.warm_start {
                    models.last().and_then(|m| match m {
                        Refinement::Rf(prev) => Some(prev.clone()),
                        Refinement::Wgf(_) => None,
                    })
                } else {
                    None
                };
                let rf = match warm_model {
                    Some(prev) => train_rf_warm(prev, &ds, &cfg.rf_train, &mut train_rng),
                    None => train_rf(&ds, mode, &cfg.net, &cfg.rf_train, &mut train_rng),
                }
                .map_err(|e| flow_err(e.into()))?;
                z = refine_all(&rf, &z, cfg.euler_steps).map_err(|e| flow_err(e.into()))?;
                models.push(Refinement::Rf(rf));
            }
        }
        if !z.is_finite() {
            return Err(SicaError::NonFinite { iteration: j });
        }
        trace.entries.push(TraceEntry {
            iteration: j,
            kl_estimate: None,
            mcc: score(&z)?,
            seconds: started.elapsed().as_secs_f64(),
            wgf_lipschitz_proxy: lipschitz,
            snapshot: keep_snapshots.then(|| z.clone()),
        });
    }

    if monitor {
        let kl = monitor_kl(&z, mode, cfg, &splitter, cfg.iterations + 1)
            .map_err(|e| SicaError::FlowTraining {
                iteration: cfg.iterations,
                source: e.into(),
            })?;
        trace.entries[cfg.iterations].kl_estimate = Some(kl);
    }

    let demixer = Demixer {
        flow: cfg.flow,
        preprocess,
        models,
        eta: cfg.eta,
        wgf_substeps: cfg.wgf_substeps,
        euler_steps: cfg.euler_steps,
        d,
        t_len,
    };
    Ok(DemixOutput {
        z,
        trace,
        demixer,
    })
}

/// Replay stored refinements on new observations (see [`Demixer::apply`]).
pub fn apply_demixer<F: Scalar>(
    demixer: &Demixer<F>,
    x: &SignalMatrix<F>,
) -> Result<SignalMatrix<F>, SicaError> {
    demixer.apply(x)
}

// ── persistence ─────────────────────────────────────────────────────
// A de-mixer directory holds one checkpoint per refinement plus the affine
// parameters, tied together by a JSON manifest with the config echo.

#[derive(Debug, Serialize, Deserialize)]
struct DemixerManifest {
    flow: FlowKind,
    iterations: usize,
    eta: f64,
    wgf_substeps: usize,
    euler_steps: usize,
    d: usize,
    t_len: usize,
    standardized: bool,
    model_files: Vec<String>,
    preprocess_file: Option<String>,
    config_echo: serde_json::Value,
}

fn net_meta<F: Scalar>(net: &VectorFieldNet<F>) -> Vec<(String, Tensor<F>)> {
    let (mode_tag, height, width) = match net.mode {
        ConvMode::OneD { t_len } => (0.0, t_len as f64, 1.0),
        ConvMode::TwoD { height, width } => (1.0, height as f64, width as f64),
    };
    [
        ("meta.mode", mode_tag),
        ("meta.height", height),
        ("meta.width", width),
        ("meta.in_channels", net.in_channels as f64),
        ("meta.out_dim", net.out_dim as f64),
        ("meta.hidden_channels", net.hidden_channels as f64),
        ("meta.kernel_size", net.kernel_size as f64),
        ("meta.conv_layers", net.convs.len() as f64),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), Tensor::scalar(F::cast(v))))
    .collect()
}

fn save_net<F: Scalar>(path: &Path, net: &VectorFieldNet<F>) -> Result<(), SicaError> {
    let meta = net_meta(net);
    let names = net.parameter_names();
    let params = net.parameters();
    let mut entries: Vec<(String, &Tensor<F>)> =
        meta.iter().map(|(k, v)| (k.clone(), v)).collect();
    for (name, p) in names.iter().zip(params) {
        entries.push((name.clone(), p));
    }
    save_checkpoint(path, &entries)?;
    Ok(())
}

fn load_net<F: Scalar>(path: &Path) -> Result<VectorFieldNet<F>, SicaError> {
    let entries = load_checkpoint::<F, _>(path)?;
    let get = |key: &str| -> Result<f64, SicaError> {
        entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, t)| t.data()[0].as_f64())
            .ok_or_else(|| SicaError::Manifest(format!("checkpoint missing {key}")))
    };
    let mode = if get("meta.mode")? == 0.0 {
        ConvMode::OneD {
            t_len: get("meta.height")? as usize,
        }
    } else {
        ConvMode::TwoD {
            height: get("meta.height")? as usize,
            width: get("meta.width")? as usize,
        }
    };
    let in_channels = get("meta.in_channels")? as usize;
    let out_dim = get("meta.out_dim")? as usize;
    let hidden = get("meta.hidden_channels")? as usize;
    let kernel = get("meta.kernel_size")? as usize;
    let layers = get("meta.conv_layers")? as usize;
    let find = |key: &str| -> Result<Tensor<F>, SicaError> {
        entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| SicaError::Manifest(format!("checkpoint missing {key}")))
    };
    let mut convs = Vec::with_capacity(layers);
    for i in 0..layers {
        convs.push(crate::ndgrad::ConvBlock {
            weight: find(&format!("conv{i}.weight"))?,
            bias: find(&format!("conv{i}.bias"))?,
        });
    }
    let net = VectorFieldNet::from_parts(
        mode,
        in_channels,
        out_dim,
        hidden,
        kernel,
        convs,
        find("head.weight")?,
        find("head.bias")?,
    )
    .map_err(SicaError::Manifest)?;
    Ok(net)
}

/// Write the de-mixer as a directory of checkpoints plus `manifest.json`.
pub fn save_demixer<F: Scalar>(
    dir: &Path,
    demixer: &Demixer<F>,
    config_echo: serde_json::Value,
) -> Result<(), SicaError> {
    std::fs::create_dir_all(dir).map_err(SignalError::from)?;
    let mut model_files = Vec::with_capacity(demixer.models.len());
    for (j, model) in demixer.models.iter().enumerate() {
        let file = format!("refinement_{:03}.ngrd", j + 1);
        let net = match model {
            Refinement::Wgf(m) => &m.net,
            Refinement::Rf(m) => &m.net,
        };
        save_net(&dir.join(&file), net)?;
        model_files.push(file);
    }
    let preprocess_file = match &demixer.preprocess {
        Some(pre) => {
            let file = "preprocess.ngrd".to_string();
            let d = demixer.d;
            let mk = |data: &[F], shape: Vec<usize>| {
                Tensor::new(shape, data.to_vec()).map_err(|e| SicaError::Manifest(e.to_string()))
            };
            match pre {
                Preprocess::Rows(aff) => {
                    let means = mk(&aff.means, vec![d])?;
                    let stds = mk(&aff.stds, vec![d])?;
                    save_checkpoint(
                        &dir.join(&file),
                        &[("means".to_string(), &means), ("stds".to_string(), &stds)],
                    )?;
                }
                Preprocess::Whiten(map) => {
                    let means = mk(&map.means, vec![d])?;
                    let matrix = mk(&map.matrix, vec![d, d])?;
                    let inverse = mk(&map.inverse, vec![d, d])?;
                    save_checkpoint(
                        &dir.join(&file),
                        &[
                            ("means".to_string(), &means),
                            ("matrix".to_string(), &matrix),
                            ("inverse".to_string(), &inverse),
                        ],
                    )?;
                }
            }
            Some(file)
        }
        None => None,
    };
    let manifest = DemixerManifest {
        flow: demixer.flow,
        iterations: demixer.models.len(),
        eta: demixer.eta,
        wgf_substeps: demixer.wgf_substeps,
        euler_steps: demixer.euler_steps,
        d: demixer.d,
        t_len: demixer.t_len,
        standardized: demixer.preprocess.is_some(),
        model_files,
        preprocess_file,
        config_echo,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SicaError::Manifest(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json).map_err(SignalError::from)?;
    Ok(())
}

/// Load a de-mixer saved by [`save_demixer`].
pub fn load_demixer<F: Scalar>(dir: &Path) -> Result<Demixer<F>, SicaError> {
    let text =
        std::fs::read_to_string(dir.join("manifest.json")).map_err(SignalError::from)?;
    let manifest: DemixerManifest =
        serde_json::from_str(&text).map_err(|e| SicaError::Manifest(e.to_string()))?;
    let mut models = Vec::with_capacity(manifest.model_files.len());
    for file in &manifest.model_files {
        let net = load_net::<F>(&dir.join(file))?;
        let expected_ratio = encoded_channels(manifest.d);
        let expected_rf = rf_channels(manifest.d);
        let model = match manifest.flow {
            FlowKind::Wgf => {
                if net.in_channels != expected_ratio {
                    return Err(SicaError::Manifest(format!(
                        "{file}: expected {expected_ratio} input channels, found {}",
                        net.in_channels
                    )));
                }
                Refinement::Wgf(RatioModel { net })
            }
            FlowKind::Rf => {
                if net.in_channels != expected_rf {
                    return Err(SicaError::Manifest(format!(
                        "{file}: expected {expected_rf} input channels, found {}",
                        net.in_channels
                    )));
                }
                Refinement::Rf(RfModel { net })
            }
        };
        models.push(model);
    }
    let preprocess = match &manifest.preprocess_file {
        Some(file) => {
            let entries = load_checkpoint::<F, _>(&dir.join(file))?;
            let find = |key: &str| {
                entries
                    .iter()
                    .find(|(k, _)| k == key)
                    .map(|(_, t)| t.data().to_vec())
            };
            let means = find("means")
                .ok_or_else(|| SicaError::Manifest("preprocess missing means".into()))?;
            match (find("matrix"), find("inverse")) {
                (Some(matrix), Some(inverse)) => Some(Preprocess::Whiten(WhitenMap {
                    means,
                    matrix,
                    inverse,
                })),
                _ => {
                    let stds = find("stds")
                        .ok_or_else(|| SicaError::Manifest("preprocess missing stds".into()))?;
                    Some(Preprocess::Rows(RowAffine { means, stds }))
                }
            }
        }
        None => None,
    };
    Ok(Demixer {
        flow: manifest.flow,
        preprocess,
        models,
        eta: manifest.eta,
        wgf_substeps: manifest.wgf_substeps,
        euler_steps: manifest.euler_steps,
        d: manifest.d,
        t_len: manifest.t_len,
    })
}
