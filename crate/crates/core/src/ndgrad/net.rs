//! The convolutional vector-field network: a stack of length-preserving
//! conv layers with ReLU between them, flattened into a dense head. The
//! same parameter layout serves as ratio logit (scalar head) and as flow
//! field (d-dimensional head); a 2-D mode swaps conv1d for conv2d when the
//! sequence index is an image grid.

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use super::NdGradError;
use crate::rng::uniform_f64;
use crate::scalar::Scalar;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How the sequence axis is laid out for convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvMode {
    OneD { t_len: usize },
    TwoD { height: usize, width: usize },
}

impl ConvMode {
    pub fn seq_len(&self) -> usize {
        match *self {
            ConvMode::OneD { t_len } => t_len,
            ConvMode::TwoD { height, width } => height * width,
        }
    }

    fn input_shape(&self, channels: usize) -> Vec<usize> {
        match *self {
            ConvMode::OneD { t_len } => vec![channels, t_len],
            ConvMode::TwoD { height, width } => vec![channels, height, width],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub conv_layers: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden_channels: 16,
            kernel_size: 3,
            conv_layers: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct VectorFieldNet<F> {
    pub mode: ConvMode,
    pub in_channels: usize,
    pub out_dim: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub convs: Vec<ConvBlock<F>>,
    pub head_weight: Tensor<F>,
    pub head_bias: Tensor<F>,
}

/// Tape handles for one bound forward pass, in `parameters()` order.
pub struct NetVars {
    pub params: Vec<Var>,
    pub output: Var,
}

/// Running sum of per-sample parameter gradients plus the loss statistics,
/// reduced across workers in a fixed order before the optimizer step.
pub struct GradBatch<F> {
    grads: Vec<Vec<F>>,
    pub loss_sum: f64,
    pub count: usize,
}

impl<F: Scalar> GradBatch<F> {
    pub fn zeros(sizes: &[usize]) -> Self {
        GradBatch {
            grads: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            loss_sum: 0.0,
            count: 0,
        }
    }

    /// Add one sample's gradients (taken from a finished tape) and loss.
    pub fn absorb(&mut self, grads: &Gradients<F>, vars: &NetVars, loss: f64) {
        for (buf, var) in self.grads.iter_mut().zip(&vars.params) {
            if let Some(g) = grads.get(*var) {
                for (b, &gv) in buf.iter_mut().zip(g) {
                    *b += gv;
                }
            }
        }
        self.loss_sum += loss;
        self.count += 1;
    }

    pub fn merge(&mut self, other: GradBatch<F>) {
        for (mine, theirs) in self.grads.iter_mut().zip(other.grads) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += t;
            }
        }
        self.loss_sum += other.loss_sum;
        self.count += other.count;
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.count.max(1) as f64
    }

    /// Write batch-averaged gradients onto the network parameters.
    pub fn apply_to(&self, net: &mut VectorFieldNet<F>) {
        let scale = F::cast(1.0 / self.count.max(1) as f64);
        net.zero_grads();
        let mut params = net.parameters_mut();
        for (p, g) in params.iter_mut().zip(&self.grads) {
            p.accumulate_grad(g);
            p.scale_grad(scale);
        }
    }
}

fn init_uniform<F: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n)
        .map(|_| F::cast(uniform_f64(rng, -bound, bound)))
        .collect();
    Tensor::new(shape, data).unwrap()
}

impl<F: Scalar> VectorFieldNet<F> {
    /// Fresh network with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.
    pub fn new(
        mode: ConvMode,
        in_channels: usize,
        out_dim: usize,
        cfg: &NetConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(cfg.conv_layers >= 1);
        assert!(cfg.kernel_size % 2 == 1, "kernel size must be odd");
        let k = cfg.kernel_size;
        let hidden = cfg.hidden_channels;
        let mut convs = Vec::with_capacity(cfg.conv_layers);
        for layer in 0..cfg.conv_layers {
            let c_in = if layer == 0 { in_channels } else { hidden };
            let (w_shape, fan_in) = match mode {
                ConvMode::OneD { .. } => (vec![hidden, c_in, k], c_in * k),
                ConvMode::TwoD { .. } => (vec![hidden, c_in, k, k], c_in * k * k),
            };
            convs.push(ConvBlock {
                weight: init_uniform(w_shape, fan_in, rng),
                bias: init_uniform(vec![hidden], fan_in, rng),
            });
        }
        let head_in = hidden * mode.seq_len();
        let head_weight = init_uniform(vec![out_dim, head_in], head_in, rng);
        let head_bias = init_uniform(vec![out_dim], head_in, rng);
        VectorFieldNet {
            mode,
            in_channels,
            out_dim,
            hidden_channels: hidden,
            kernel_size: k,
            convs,
            head_weight,
            head_bias,
        }
    }

    /// Rebuild a network from stored tensors, validating that the layer
    /// channel counts chain correctly and extents match the declared dims.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        mode: ConvMode,
        in_channels: usize,
        out_dim: usize,
        hidden_channels: usize,
        kernel_size: usize,
        convs: Vec<ConvBlock<F>>,
        head_weight: Tensor<F>,
        head_bias: Tensor<F>,
    ) -> Result<Self, String> {
        if convs.is_empty() {
            return Err("network needs at least one conv layer".into());
        }
        for (i, block) in convs.iter().enumerate() {
            let expect_in = if i == 0 { in_channels } else { hidden_channels };
            let ws = block.weight.shape();
            let expected_shape: Vec<usize> = match mode {
                ConvMode::OneD { .. } => vec![hidden_channels, expect_in, kernel_size],
                ConvMode::TwoD { .. } => {
                    vec![hidden_channels, expect_in, kernel_size, kernel_size]
                }
            };
            if ws != expected_shape.as_slice() {
                return Err(format!(
                    "conv{i}.weight shape {ws:?} does not chain ({expected_shape:?} expected)"
                ));
            }
            if block.bias.shape() != [hidden_channels] {
                return Err(format!("conv{i}.bias has {} channels", block.bias.numel()));
            }
        }
        let head_in = hidden_channels * mode.seq_len();
        if head_weight.shape() != [out_dim, head_in] {
            return Err(format!(
                "head.weight shape {:?}, expected [{out_dim}, {head_in}]",
                head_weight.shape()
            ));
        }
        if head_bias.shape() != [out_dim] {
            return Err(format!("head.bias has {} outputs", head_bias.numel()));
        }
        Ok(VectorFieldNet {
            mode,
            in_channels,
            out_dim,
            hidden_channels,
            kernel_size,
            convs,
            head_weight,
            head_bias,
        })
    }

    pub fn padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.mode.input_shape(self.in_channels)
    }

    pub fn parameters(&self) -> Vec<&Tensor<F>> {
        let mut out = Vec::with_capacity(2 * self.convs.len() + 2);
        for block in &self.convs {
            out.push(&block.weight);
            out.push(&block.bias);
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::with_capacity(2 * self.convs.len() + 2);
        for block in &mut self.convs {
            out.push(&mut block.weight);
            out.push(&mut block.bias);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Stable names for checkpointing, aligned with `parameters()`.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(2 * self.convs.len() + 2);
        for i in 0..self.convs.len() {
            out.push(format!("conv{i}.weight"));
            out.push(format!("conv{i}.bias"));
        }
        out.push("head.weight".to_string());
        out.push("head.bias".to_string());
        out
    }

    pub fn parameter_sizes(&self) -> Vec<usize> {
        self.parameters().iter().map(|t| t.numel()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    /// Bind parameters and run the forward pass on `tape`.
    ///
    /// `input` must already be a tape node shaped `input_shape()`. Parameter
    /// leaves are registered by reference, with `train` deciding whether
    /// weight gradients flow (velocity evaluation needs only the input
    /// gradient).
    pub fn forward_on<'n>(
        &'n self,
        tape: &mut Tape<'n, F>,
        input: Var,
        train: bool,
    ) -> Result<NetVars, NdGradError> {
        let padding = self.padding();
        let mut params = Vec::with_capacity(2 * self.convs.len() + 2);
        let mut h = input;
        let last = self.convs.len() - 1;
        for (i, block) in self.convs.iter().enumerate() {
            let w = tape.leaf_ref(&block.weight, train);
            let b = tape.leaf_ref(&block.bias, train);
            params.push(w);
            params.push(b);
            h = match self.mode {
                ConvMode::OneD { .. } => tape.conv1d(h, w, b, padding)?,
                ConvMode::TwoD { .. } => tape.conv2d(h, w, b, padding)?,
            };
            if i != last {
                h = tape.relu(h);
            }
        }
        let flat = tape.flatten(h);
        let hw = tape.leaf_ref(&self.head_weight, train);
        let hb = tape.leaf_ref(&self.head_bias, train);
        params.push(hw);
        params.push(hb);
        let output = tape.linear(flat, hw, hb)?;
        Ok(NetVars { params, output })
    }

    /// Plain inference: forward pass on a scratch tape, returning the output.
    pub fn forward_value(&self, input: Tensor<F>) -> Result<Tensor<F>, NdGradError> {
        let mut tape = Tape::new();
        let x = tape.leaf(input, false);
        let vars = self.forward_on(&mut tape, x, false)?;
        Ok(tape.value(vars.output).clone())
    }

    /// Accumulate this pass's parameter gradients onto the network tensors.
    pub fn accumulate_grads(&mut self, grads: &Gradients<F>, vars: &NetVars) {
        let mut params = self.parameters_mut();
        for (p, var) in params.iter_mut().zip(&vars.params) {
            if let Some(g) = grads.get(*var) {
                p.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    pub fn scale_grads(&mut self, s: F) {
        for p in self.parameters_mut() {
            p.scale_grad(s);
        }
    }

    /// Merge a worker copy's accumulated gradients into this network.
    pub fn merge_grads_from(&mut self, other: &VectorFieldNet<F>) {
        let mut mine = self.parameters_mut();
        let theirs = other.parameters();
        for (p, q) in mine.iter_mut().zip(theirs) {
            if let Some(g) = q.grad() {
                p.accumulate_grad(g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSplitter;

    #[test]
    fn parameter_count_is_reproducible_from_dims() {
        let sp = SeedSplitter::new(1);
        let cfg = NetConfig::default();
        let net: VectorFieldNet<f64> = VectorFieldNet::new(
            ConvMode::OneD { t_len: 8 },
            6,
            2,
            &cfg,
            &mut sp.stream(0),
        );
        // conv0: 16*6*3 + 16; conv1/2: 16*16*3 + 16; head: 2*(16*8) + 2
        let expected = (16 * 6 * 3 + 16) + 2 * (16 * 16 * 3 + 16) + (2 * 16 * 8 + 2);
        assert_eq!(net.parameter_count(), expected);
        assert_eq!(net.parameters().len(), 8);
    }

    #[test]
    fn same_seed_same_parameters() {
        let sp = SeedSplitter::new(42);
        let cfg = NetConfig::default();
        let a: VectorFieldNet<f64> =
            VectorFieldNet::new(ConvMode::OneD { t_len: 4 }, 3, 1, &cfg, &mut sp.stream(5));
        let b: VectorFieldNet<f64> =
            VectorFieldNet::new(ConvMode::OneD { t_len: 4 }, 3, 1, &cfg, &mut sp.stream(5));
        for (p, q) in a.parameters().iter().zip(b.parameters()) {
            assert_eq!(p.data(), q.data());
        }
    }

    #[test]
    fn forward_output_dim_matches_head() {
        let sp = SeedSplitter::new(9);
        let cfg = NetConfig::default();
        let net: VectorFieldNet<f64> =
            VectorFieldNet::new(ConvMode::OneD { t_len: 5 }, 4, 3, &cfg, &mut sp.stream(0));
        let x = Tensor::zeros(vec![4, 5]);
        let y = net.forward_value(x).unwrap();
        assert_eq!(y.shape(), &[3]);
        assert!(y.is_finite());
    }

    #[test]
    fn forward_2d_mode() {
        let sp = SeedSplitter::new(9);
        let cfg = NetConfig {
            hidden_channels: 4,
            ..NetConfig::default()
        };
        let net: VectorFieldNet<f64> = VectorFieldNet::new(
            ConvMode::TwoD {
                height: 4,
                width: 4,
            },
            6,
            2,
            &cfg,
            &mut sp.stream(0),
        );
        let x = Tensor::zeros(vec![6, 4, 4]);
        let y = net.forward_value(x).unwrap();
        assert_eq!(y.shape(), &[2]);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let sp = SeedSplitter::new(3);
        let cfg = NetConfig::default();
        let net: VectorFieldNet<f64> =
            VectorFieldNet::new(ConvMode::OneD { t_len: 64 }, 6, 1, &cfg, &mut sp.stream(0));
        let bound0 = 1.0 / ((6.0 * 3.0) as f64).sqrt();
        for &v in net.convs[0].weight.data() {
            assert!(v.abs() <= bound0);
        }
        let head_bound = 1.0 / ((16.0 * 64.0) as f64).sqrt();
        for &v in net.head_weight.data() {
            assert!(v.abs() <= head_bound);
        }
    }
}
