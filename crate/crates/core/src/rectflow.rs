//! Conditional rectified flow: a time-dependent vector field trained to
//! transport each joint sample toward its product-side partner along the
//! linear interpolation, then integrated as an ODE to refine the signals.
//!
//! The network input stacks two masked encodings - the joint context and
//! the product context - plus one constant time channel (6d + 1 channels
//! total). Only the repeated-value blocks move with the interpolation:
//! conditioning channels are frozen across the path, so at inference time
//! the observed context can be substituted into both slots.

use crate::ndgrad::{
    ConvMode, GradBatch, NdGradError, NetConfig, Optimizer, Tape, Tensor, TrainConfig,
    VectorFieldNet,
};
use crate::scalar::Scalar;
use crate::signals::{encode_rows_into, ProductSample, SignalMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RfError {
    #[error("rectified-flow training diverged (non-finite loss) at epoch {epoch}")]
    DivergentLoss { epoch: usize },
    #[error("non-finite state during integration at step {step}")]
    NonFiniteState { step: usize },
    #[error("empty training pair set")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Grad(#[from] NdGradError),
}

/// A coupled training pair at one position: the joint sample and its
/// permuted product partner.
#[derive(Debug, Clone)]
pub struct RfPair<F> {
    /// Joint value vector `z_t`.
    pub source_values: Vec<F>,
    /// Masked column per row on the joint side (all equal to `t`).
    pub source_cols: Vec<usize>,
    /// Product value vector assembled from permuted rows.
    pub target_values: Vec<F>,
    /// Per-row masked columns on the product side.
    pub target_cols: Vec<usize>,
}

#[derive(Debug)]
pub struct RfDataset<'a, F> {
    pub base: &'a SignalMatrix<F>,
    pub pairs: Vec<RfPair<F>>,
}

impl<'a, F: Scalar> RfDataset<'a, F> {
    /// Pair every joint column with the product sample at the same index;
    /// extra permutation draws (product length a multiple of T) cycle
    /// through the joint columns again.
    pub fn from_signal(base: &'a SignalMatrix<F>, product: Vec<ProductSample<F>>) -> Self {
        let d = base.d();
        let t_len = base.t_len();
        let pairs = product
            .into_iter()
            .enumerate()
            .map(|(idx, p)| {
                let t = idx % t_len;
                RfPair {
                    source_values: base.column(t),
                    source_cols: vec![t; d],
                    target_values: p.values,
                    target_cols: p.masked_cols,
                }
            })
            .collect();
        RfDataset { base, pairs }
    }
}

/// Trained conditional rectified-flow field.
#[derive(Debug, Clone)]
pub struct RfModel<F> {
    pub net: VectorFieldNet<F>,
}

/// Channels of the flow-field input for d signals.
pub fn rf_channels(d: usize) -> usize {
    6 * d + 1
}

/// Assemble the `(6d+1) x T` field input: two masked encodings sharing the
/// moving value vector, plus the broadcast time channel.
#[allow(clippy::too_many_arguments)]
fn rf_input<F: Scalar>(
    base: &SignalMatrix<F>,
    cols_joint: &[usize],
    cols_product: &[usize],
    values: &[F],
    tau: f64,
    mode: ConvMode,
) -> Tensor<F> {
    let d = base.d();
    let t_len = base.t_len();
    let block = 3 * d * t_len;
    let mut buf = vec![F::zero(); (6 * d + 1) * t_len];
    encode_rows_into(&mut buf[0..block], base, cols_joint, values);
    encode_rows_into(&mut buf[block..2 * block], base, cols_product, values);
    buf[2 * block..].fill(F::cast(tau));
    let shape = match mode {
        ConvMode::OneD { .. } => vec![6 * d + 1, t_len],
        ConvMode::TwoD { height, width } => vec![6 * d + 1, height, width],
    };
    Tensor::new(shape, buf).unwrap()
}

impl<F: Scalar> RfModel<F> {
    pub fn d(&self) -> usize {
        self.net.out_dim
    }

    /// Field evaluation `v(y, ctx_joint, ctx_product, tau)`.
    pub fn velocity(
        &self,
        base: &SignalMatrix<F>,
        cols_joint: &[usize],
        cols_product: &[usize],
        values: &[F],
        tau: f64,
    ) -> Result<Vec<F>, RfError> {
        let input = rf_input(base, cols_joint, cols_product, values, tau, self.net.mode);
        let out = self.net.forward_value(input)?;
        Ok(out.into_data())
    }
}

/// Train the conditional rectified flow on coupled pairs.
///
/// For each pair and a fresh `tau ~ U(0,1)` per epoch, the field input is
/// built at the interpolated value `(1-tau) z_t + tau z'_t` and regressed
/// onto the displacement `z'_t - z_t` with squared error.
pub fn train_rf<F: Scalar>(
    ds: &RfDataset<'_, F>,
    mode: ConvMode,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RfModel<F>, RfError> {
    if ds.pairs.is_empty() {
        return Err(RfError::EmptyDataset);
    }
    let d = ds.base.d();
    let net = VectorFieldNet::new(mode, rf_channels(d), d, net_cfg, rng);
    train_rf_from(net, ds, cfg, rng)
}

/// Continue training an existing field (warm start).
pub fn train_rf_warm<F: Scalar>(
    model: RfModel<F>,
    ds: &RfDataset<'_, F>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RfModel<F>, RfError> {
    if ds.pairs.is_empty() {
        return Err(RfError::EmptyDataset);
    }
    train_rf_from(model.net, ds, cfg, rng)
}

fn train_rf_from<F: Scalar>(
    mut net: VectorFieldNet<F>,
    ds: &RfDataset<'_, F>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RfModel<F>, RfError> {
    let sizes = net.parameter_sizes();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &sizes);
    let n = ds.pairs.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut batches = order.chunks(cfg.batch_size.max(1));
        let max_batches = cfg.batches_per_epoch.unwrap_or(usize::MAX);
        let mut taken = 0;
        while taken < max_batches {
            let Some(batch) = batches.next() else { break };
            taken += 1;
            // Interpolation times are drawn before the parallel section so
            // scheduling cannot perturb which tau a pair receives.
            let taus: Vec<f64> = batch.iter().map(|_| rng.random_range(0.0..1.0)).collect();
            let jobs: Vec<(usize, f64)> =
                batch.iter().copied().zip(taus.iter().copied()).collect();
            let chunk_results: Result<Vec<GradBatch<F>>, RfError> = jobs
                .par_chunks(crate::dre::PAR_CHUNK)
                .map(|chunk| {
                    let mut acc = GradBatch::zeros(&sizes);
                    for &(idx, tau) in chunk {
                        pair_backward(&net, ds.base, &ds.pairs[idx], tau, &mut acc)?;
                    }
                    Ok(acc)
                })
                .collect();
            let mut total = GradBatch::zeros(&sizes);
            for acc in chunk_results? {
                total.merge(acc);
            }
            if !total.mean_loss().is_finite() {
                return Err(RfError::DivergentLoss { epoch });
            }
            total.apply_to(&mut net);
            opt.step(&mut net.parameters_mut());
        }
    }
    Ok(RfModel { net })
}

fn pair_backward<F: Scalar>(
    net: &VectorFieldNet<F>,
    base: &SignalMatrix<F>,
    pair: &RfPair<F>,
    tau: f64,
    acc: &mut GradBatch<F>,
) -> Result<(), RfError> {
    let d = base.d();
    let tau_f = F::cast(tau);
    let mut interp = Vec::with_capacity(d);
    let mut displacement = Vec::with_capacity(d);
    for i in 0..d {
        let z0 = pair.source_values[i];
        let z1 = pair.target_values[i];
        interp.push((F::one() - tau_f) * z0 + tau_f * z1);
        displacement.push(z1 - z0);
    }
    let input = rf_input(
        base,
        &pair.source_cols,
        &pair.target_cols,
        &interp,
        tau,
        net.mode,
    );
    let mut tape = Tape::new();
    let x = tape.leaf(input, false);
    let vars = net.forward_on(&mut tape, x, true)?;
    let target = tape.leaf(Tensor::new(vec![d], displacement).unwrap(), false);
    let loss = tape.mse(vars.output, target)?;
    let loss_val = tape.value(loss).data()[0].as_f64();
    let grads = tape.backward(loss)?;
    acc.absorb(&grads, &vars, loss_val);
    Ok(())
}

/// Integrate the field from `tau = 0` to `1` with forward Euler, feeding
/// the observed context into both conditioning slots.
pub fn sample_rf<F: Scalar>(
    model: &RfModel<F>,
    base: &SignalMatrix<F>,
    t: usize,
    values: &[F],
    steps: usize,
) -> Result<Vec<F>, RfError> {
    let d = base.d();
    if values.len() != d {
        return Err(RfError::DimMismatch {
            expected: d,
            found: values.len(),
        });
    }
    assert!(steps >= 1, "need at least one Euler step");
    let cols = vec![t; d];
    let dt = F::cast(1.0 / steps as f64);
    let mut y = values.to_vec();
    for step in 0..steps {
        let tau = step as f64 / steps as f64;
        let v = model.velocity(base, &cols, &cols, &y, tau)?;
        for (yi, vi) in y.iter_mut().zip(v) {
            *yi += dt * vi;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(RfError::NonFiniteState { step });
        }
    }
    Ok(y)
}

/// Apply [`sample_rf`] at every position against the pre-update matrix.
pub fn refine_all<F: Scalar>(
    model: &RfModel<F>,
    z: &SignalMatrix<F>,
    steps: usize,
) -> Result<SignalMatrix<F>, RfError> {
    let columns: Result<Vec<Vec<F>>, RfError> = (0..z.t_len())
        .into_par_iter()
        .map(|t| sample_rf(model, z, t, &z.column(t), steps))
        .collect();
    let columns = columns?;
    let mut out = z.clone();
    for (t, col) in columns.iter().enumerate() {
        out.set_column(t, col);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::OptimizerKind;
    use crate::rng::{normal_f64, SeedSplitter};

    fn toy_pairs<'a>(
        base: &'a SignalMatrix<f64>,
        src: &[f64],
        tgt: &[f64],
    ) -> RfDataset<'a, f64> {
        let pairs = src
            .iter()
            .zip(tgt)
            .map(|(&a, &b)| RfPair {
                source_values: vec![a],
                source_cols: vec![0],
                target_values: vec![b],
                target_cols: vec![0],
            })
            .collect();
        RfDataset { base, pairs }
    }

    #[test]
    fn zero_displacement_trains_to_near_zero_field() {
        let sp = SeedSplitter::new(1);
        let mut rng = sp.stream(0);
        let vals: Vec<f64> = (0..1500).map(|_| normal_f64(&mut rng)).collect();
        let base = SignalMatrix::zeros(1, 1);
        let ds = toy_pairs(&base, &vals, &vals);
        let cfg = TrainConfig::new(OptimizerKind::Adam, 2e-3, 15, 100);
        let model = train_rf(
            &ds,
            ConvMode::OneD { t_len: 1 },
            &NetConfig::default(),
            &cfg,
            &mut sp.stream(1),
        )
        .unwrap();
        let mut worst: f64 = 0.0;
        for &v in vals.iter().take(200) {
            for tau in [0.1, 0.5, 0.9] {
                let f = model.velocity(&base, &[0], &[0], &[v], tau).unwrap();
                worst = worst.max(f[0].abs());
            }
        }
        assert!(worst < 0.05, "max |v| = {worst}");
    }

    #[test]
    fn zero_field_integration_is_identity() {
        let sp = SeedSplitter::new(2);
        let mut net: VectorFieldNet<f64> = VectorFieldNet::new(
            ConvMode::OneD { t_len: 1 },
            rf_channels(1),
            1,
            &NetConfig::default(),
            &mut sp.stream(0),
        );
        net.head_weight = Tensor::zeros(vec![1, 16]);
        net.head_bias = Tensor::zeros(vec![1]);
        let model = RfModel { net };
        let base = SignalMatrix::zeros(1, 1);
        for steps in [1, 7, 100] {
            let y = sample_rf(&model, &base, 0, &[1.25], steps).unwrap();
            assert_eq!(y, vec![1.25]);
        }
    }

    #[test]
    fn constant_field_integrates_exactly() {
        // Euler is exact for constant fields: output = input + c.
        let sp = SeedSplitter::new(3);
        let mut net: VectorFieldNet<f64> = VectorFieldNet::new(
            ConvMode::OneD { t_len: 1 },
            rf_channels(1),
            1,
            &NetConfig::default(),
            &mut sp.stream(0),
        );
        net.head_weight = Tensor::zeros(vec![1, 16]);
        net.head_bias = Tensor::new(vec![1], vec![0.75]).unwrap();
        let model = RfModel { net };
        let base = SignalMatrix::zeros(1, 1);
        for steps in [1, 10, 100] {
            let y = sample_rf(&model, &base, 0, &[0.5], steps).unwrap();
            assert!((y[0] - 1.25).abs() < 1e-12, "steps={steps}: {}", y[0]);
        }
    }

    #[test]
    fn gaussian_shift_transport_moves_the_mean() {
        // source N(0,1), independent target N(2,1); the trained flow should
        // carry fresh source samples close to the target law.
        let sp = SeedSplitter::new(4);
        let mut rng = sp.stream(0);
        let n = 8000;
        let src: Vec<f64> = (0..n).map(|_| normal_f64(&mut rng)).collect();
        let tgt: Vec<f64> = (0..n).map(|_| 2.0 + normal_f64(&mut rng)).collect();
        let base = SignalMatrix::zeros(1, 1);
        let ds = toy_pairs(&base, &src, &tgt);
        let cfg = TrainConfig::new(OptimizerKind::Adam, 4e-3, 150, 128);
        let net_cfg = NetConfig {
            hidden_channels: 32,
            ..NetConfig::default()
        };
        let model = train_rf(
            &ds,
            ConvMode::OneD { t_len: 1 },
            &net_cfg,
            &cfg,
            &mut sp.stream(1),
        )
        .unwrap();
        let mut rng2 = sp.stream(2);
        let m = 2000;
        let mut out = Vec::with_capacity(m);
        for _ in 0..m {
            let y0 = normal_f64(&mut rng2);
            let y = sample_rf(&model, &base, 0, &[y0], 100).unwrap();
            out.push(y[0]);
        }
        let mean = out.iter().sum::<f64>() / m as f64;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        assert!((mean - 2.0).abs() < 0.15, "terminal mean = {mean}");
        assert!((var - 1.0).abs() < 0.25, "terminal var = {var}");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let sp = SeedSplitter::new(5);
        let mut rng = sp.stream(0);
        let src: Vec<f64> = (0..300).map(|_| normal_f64(&mut rng)).collect();
        let tgt: Vec<f64> = (0..300).map(|_| 1.0 + normal_f64(&mut rng)).collect();
        let base = SignalMatrix::zeros(1, 1);
        let ds = toy_pairs(&base, &src, &tgt);
        let cfg = TrainConfig::new(OptimizerKind::Adagrad, 1e-3, 3, 50);
        let a = train_rf(
            &ds,
            ConvMode::OneD { t_len: 1 },
            &NetConfig::default(),
            &cfg,
            &mut sp.stream(7),
        )
        .unwrap();
        let b = train_rf(
            &ds,
            ConvMode::OneD { t_len: 1 },
            &NetConfig::default(),
            &cfg,
            &mut sp.stream(7),
        )
        .unwrap();
        for (p, q) in a.net.parameters().iter().zip(b.net.parameters()) {
            assert_eq!(p.data(), q.data());
        }
    }

    #[test]
    fn refine_all_matches_per_column_sampling() {
        let sp = SeedSplitter::new(6);
        let base = SignalMatrix::from_rows(vec![
            vec![0.1f64, -0.4, 0.9, 0.3],
            vec![1.0, 0.2, -0.6, 0.5],
        ])
        .unwrap();
        let net: VectorFieldNet<f64> = VectorFieldNet::new(
            ConvMode::OneD { t_len: 4 },
            rf_channels(2),
            2,
            &NetConfig::default(),
            &mut sp.stream(0),
        );
        let model = RfModel { net };
        let out = refine_all(&model, &base, 5).unwrap();
        for t in 0..4 {
            let direct = sample_rf(&model, &base, t, &base.column(t), 5).unwrap();
            assert_eq!(out.column(t), direct);
        }
    }
}
