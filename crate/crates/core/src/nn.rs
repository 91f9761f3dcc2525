//! Dense feed-forward Q-networks with manual reverse-mode gradients.
//!
//! A network is a chain of affine layers; every hidden layer is followed by a
//! penalized tanh and the output layer is linear. Parameters are stored flat,
//! layer by layer, weights row-major (`rows = fan_out`, `cols = fan_in`)
//! followed by biases. Gradients, Adam moments and target copies share that
//! layout, which keeps the optimizer and Polyak averaging plain slice loops.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Negative half-line slope of the penalized tanh.
pub const PTANH_SLOPE: f64 = 0.25;

pub fn penalized_tanh(x: f64) -> f64 {
    let t = libm::tanh(x);
    if x > 0.0 {
        t
    } else {
        PTANH_SLOPE * t
    }
}

/// Derivative of [`penalized_tanh`]; at exactly 0 the negative branch is used.
pub fn penalized_tanh_derivative(x: f64) -> f64 {
    let t = libm::tanh(x);
    let d = 1.0 - t * t;
    if x > 0.0 {
        d
    } else {
        PTANH_SLOPE * d
    }
}

/// How the raw network outputs are read as action values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// One Q estimate per action.
    Deterministic,
    /// Per action a mean and a log standard deviation: all means first, then
    /// all log standard deviations.
    Gaussian,
}

impl HeadKind {
    pub fn output_dim(self, n_actions: usize) -> usize {
        match self {
            HeadKind::Deterministic => n_actions,
            HeadKind::Gaussian => 2 * n_actions,
        }
    }
}

/// Splits a Gaussian head output into `(mu, log_sigma)`.
pub fn split_gaussian(output: &[f64]) -> (&[f64], &[f64]) {
    output.split_at(output.len() / 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSample {
    pub q: Vec<f64>,
    pub noise: Vec<f64>,
}

/// `mu + exp(log_sigma) * noise`, elementwise.
pub fn reparameterize(mu: &[f64], log_sigma: &[f64], noise: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_sigma)
        .zip(noise)
        .map(|((m, ls), z)| m + libm::exp(*ls) * z)
        .collect()
}

/// Draws one reparameterized sample per action and keeps the standard normal
/// noise so the same draw can be differentiated later.
pub fn sample_gaussian_head<R: Rng + ?Sized>(
    mu: &[f64],
    log_sigma: &[f64],
    rng: &mut R,
) -> GaussianSample {
    debug_assert_eq!(mu.len(), log_sigma.len());
    let noise: Vec<f64> = (0..mu.len()).map(|_| rng.sample(StandardNormal)).collect();
    let q = reparameterize(mu, log_sigma, &noise);
    GaussianSample { q, noise }
}

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Log density of `N(mu, exp(log_sigma)^2)` at `q`.
pub fn gaussian_log_density(q: f64, mu: f64, log_sigma: f64) -> f64 {
    let z = (q - mu) * libm::exp(-log_sigma);
    -log_sigma - HALF_LN_TWO_PI - 0.5 * z * z
}

/// Partial derivatives of [`gaussian_log_density`] with respect to
/// `(q, mu, log_sigma)`.
pub fn gaussian_log_density_partials(q: f64, mu: f64, log_sigma: f64) -> (f64, f64, f64) {
    let inv_sigma = libm::exp(-log_sigma);
    let z = (q - mu) * inv_sigma;
    let d_q = -z * inv_sigma;
    (d_q, -d_q, z * z - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    widths: Vec<usize>,
    values: Vec<f64>,
}

/// Borrowed view of one layer.
#[derive(Debug, Clone, Copy)]
pub struct Layer<'a> {
    pub rows: usize,
    pub cols: usize,
    pub weights: &'a [f64],
    pub biases: &'a [f64],
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl NetworkParams {
    /// All-zero network with the given layer widths, input first.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "network needs at least two nonzero widths".into(),
            ));
        }
        Ok(Self {
            widths: widths.to_vec(),
            values: vec![0.0; param_count(widths)],
        })
    }

    /// Weights uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init_uniform<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut offset = 0;
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            for v in &mut net.values[offset..offset + fan_in * fan_out] {
                *v = rng.random_range(-bound..=bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            widths: self.widths.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn layer_range(&self, k: usize) -> (usize, usize, usize) {
        let offset = param_count(&self.widths[..=k]);
        (offset, self.widths[k + 1], self.widths[k])
    }

    pub fn layer(&self, k: usize) -> Layer<'_> {
        let (offset, rows, cols) = self.layer_range(k);
        let (weights, rest) = self.values[offset..].split_at(rows * cols);
        Layer {
            rows,
            cols,
            weights,
            biases: &rest[..rows],
        }
    }

    /// Mutable `(weights, biases)` of layer `k`.
    pub fn layer_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let (offset, rows, cols) = self.layer_range(k);
        let (weights, rest) = self.values[offset..].split_at_mut(rows * cols);
        (weights, &mut rest[..rows])
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.widths != other.widths {
            return Err(Error::ShapeMismatch {
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardPass> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.n_layers();
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre_activations = Vec::with_capacity(n_layers);
        activations.push(input.to_vec());
        for k in 0..n_layers {
            let layer = self.layer(k);
            let x = &activations[k];
            let z: Vec<f64> = layer
                .weights
                .chunks_exact(layer.cols)
                .zip(layer.biases)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
                .collect();
            let a = if k + 1 < n_layers {
                z.iter().map(|&v| penalized_tanh(v)).collect()
            } else {
                z.clone()
            };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardPass {
            activations,
            pre_activations,
        })
    }

    /// Writes `d(loss)/d(param)` for every parameter into `grads`, given the
    /// gradient of the loss with respect to each network output.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        upstream: &[f64],
        grads: &mut NetworkParams,
    ) -> Result<()> {
        self.check_same_shape(grads)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for k in (0..self.n_layers()).rev() {
            let layer = self.layer(k);
            let input = &pass.activations[k];
            {
                let (gw, gb) = grads.layer_mut(k);
                gb.copy_from_slice(&delta);
                for (row, d) in gw.chunks_exact_mut(layer.cols).zip(&delta) {
                    for (g, x) in row.iter_mut().zip(input) {
                        *g = d * x;
                    }
                }
            }
            if k > 0 {
                let mut back = vec![0.0; layer.cols];
                for (row, d) in layer.weights.chunks_exact(layer.cols).zip(&delta) {
                    if *d == 0.0 {
                        continue;
                    }
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += w * d;
                    }
                }
                for (b, z) in back.iter_mut().zip(&pass.pre_activations[k - 1]) {
                    *b *= penalized_tanh_derivative(*z);
                }
                delta = back;
            }
        }
        Ok(())
    }

    /// Allocating variant of [`NetworkParams::backward`].
    pub fn gradient(&self, pass: &ForwardPass, upstream: &[f64]) -> Result<NetworkParams> {
        let mut grads = self.zeros_like();
        self.backward(pass, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Snapshot encoding: `u64` layer count, then `u64` rows and cols per
    /// layer, then every parameter as an `f64`, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_layers = self.n_layers();
        let mut out = Vec::with_capacity(8 * (1 + 2 * n_layers + self.values.len()));
        out.extend_from_slice(&(n_layers as u64).to_le_bytes());
        for w in self.widths.windows(2) {
            out.extend_from_slice(&(w[1] as u64).to_le_bytes());
            out.extend_from_slice(&(w[0] as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes [`NetworkParams::to_bytes`] output. Trailing bytes are rejected.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut words = bytes.chunks_exact(8);
        if !words.remainder().is_empty() {
            return Err(Error::Snapshot("length is not a multiple of 8"));
        }
        let mut next_u64 = || -> Result<u64> {
            let w = words.next().ok_or(Error::Snapshot("truncated header"))?;
            Ok(u64::from_le_bytes(w.try_into().expect("chunk of 8")))
        };
        let n_layers = next_u64()? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Snapshot("implausible layer count"));
        }
        let mut widths = Vec::with_capacity(n_layers + 1);
        for k in 0..n_layers {
            let rows = next_u64()? as usize;
            let cols = next_u64()? as usize;
            if k == 0 {
                widths.push(cols);
            } else if widths[k] != cols {
                return Err(Error::Snapshot("layer shapes do not chain"));
            }
            widths.push(rows);
        }
        let mut net = Self::zeros(&widths).map_err(|_| Error::Snapshot("zero layer width"))?;
        let body = &bytes[8 * (1 + 2 * n_layers)..];
        if body.len() != 8 * net.values.len() {
            return Err(Error::Snapshot("parameter count does not match header"));
        }
        for (v, w) in net.values.iter_mut().zip(body.chunks_exact(8)) {
            *v = f64::from_le_bytes(w.try_into().expect("chunk of 8"));
        }
        Ok(net)
    }
}

/// Cached intermediate values of one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }

    /// Pre-activation values of every layer, input side first.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre_activations
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    beta1_power: f64,
    beta2_power: f64,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            beta1_power: 1.0,
            beta2_power: 1.0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn apply(&mut self, params: &mut NetworkParams, grads: &NetworkParams) -> Result<()> {
        params.check_same_shape(grads)?;
        if params.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch {
                expected: self.first_moment.len(),
                got: params.len(),
            });
        }
        self.step_count += 1;
        self.beta1_power *= self.beta1;
        self.beta2_power *= self.beta2;
        let (b1, b2) = (self.beta1, self.beta2);
        let m_scale = 1.0 / (1.0 - self.beta1_power);
        let v_scale = 1.0 / (1.0 - self.beta2_power);
        let moments = self
            .first_moment
            .iter_mut()
            .zip(self.second_moment.iter_mut());
        for ((p, g), (m, v)) in params.values.iter_mut().zip(&grads.values).zip(moments) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m * m_scale;
            let v_hat = *v * v_scale;
            *p -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
        Ok(())
    }
}

/// Online network plus its slowly tracking target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPair {
    pub online: NetworkParams,
    pub target: NetworkParams,
    pub tau: f64,
}

impl TargetPair {
    pub fn new(online: NetworkParams, tau: f64) -> Self {
        let target = online.clone();
        Self {
            online,
            target,
            tau,
        }
    }

    /// `target <- (1 - tau) * target + tau * online`.
    pub fn polyak_update(&mut self) {
        let keep = 1.0 - self.tau;
        for (t, o) in self.target.values.iter_mut().zip(&self.online.values) {
            *t = keep * *t + self.tau * o;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn penalized_tanh_shape() {
        assert_eq!(penalized_tanh(0.0), 0.0);
        assert!((penalized_tanh(50.0) - 1.0).abs() < 1e-12);
        assert!((penalized_tanh(-50.0) + 0.25).abs() < 1e-12);
        assert_eq!(penalized_tanh_derivative(1e-300), 1.0);
        assert_eq!(penalized_tanh_derivative(-1e-300), 0.25);
        assert!((penalized_tanh(-1.0) - 0.25 * libm::tanh(-1.0)).abs() < 1e-16);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = NetworkParams::zeros(&[5, 128, 128, 6]).unwrap();
        let pass = net.forward(&[0.3, 1.0, 0.0, 0.5, 0.2]).unwrap();
        assert_eq!(pass.output(), &[0.0; 6]);
    }

    #[test]
    fn hand_evaluated_one_unit_chain() {
        // 1 -> 1 -> 1 with unit weights: output = tanh(0.5).
        let mut net = NetworkParams::zeros(&[1, 1, 1]).unwrap();
        net.values_mut().copy_from_slice(&[1.0, 0.0, 1.0, 0.0]);
        let pass = net.forward(&[0.5]).unwrap();
        assert!((pass.output()[0] - 0.462_117_157_260_009_8).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = NetworkParams::zeros(&[3, 2, 1]).unwrap();
        assert_eq!(
            net.forward(&[1.0, 2.0]).unwrap_err(),
            Error::ShapeMismatch {
                expected: 3,
                got: 2
            }
        );
    }

    #[test]
    fn head_widths() {
        assert_eq!(HeadKind::Deterministic.output_dim(3), 3);
        assert_eq!(HeadKind::Gaussian.output_dim(3), 6);
    }

    #[test]
    fn init_respects_bounds_and_zero_biases() {
        let net = NetworkParams::init_uniform(&[5, 128, 128, 3], &mut stream(3, "init")).unwrap();
        assert_eq!(net.len(), 5 * 128 + 128 + 128 * 128 + 128 + 128 * 3 + 3);
        for k in 0..net.n_layers() {
            let layer = net.layer(k);
            let bound = 1.0 / (layer.cols as f64).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= bound));
            assert!(layer.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn linear_net_square_loss_gradient() {
        // Single affine layer y = w x + b, loss y^2: dL/dw = 2 y x.
        let mut net = NetworkParams::zeros(&[1, 1]).unwrap();
        net.values_mut().copy_from_slice(&[1.5, 0.25]);
        let x = 2.0;
        let pass = net.forward(&[x]).unwrap();
        let y = pass.output()[0];
        let g = net.gradient(&pass, &[2.0 * y]).unwrap();
        assert_eq!(g.values(), &[2.0 * y * x, 2.0 * y]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = NetworkParams::init_uniform(&[4, 3, 2], &mut stream(1, "i")).unwrap();
        let pass = net.forward(&[0.1, -0.2, 0.3, 0.9]).unwrap();
        let g = net.gradient(&pass, &[0.0, 0.0]).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_sample_degenerate_and_fixed_noise() {
        let mut rng = stream(5, "noise");
        let s = sample_gaussian_head(&[1.0, -2.0], &[-30.0, -30.0], &mut rng);
        assert!((s.q[0] - 1.0).abs() < 1e-9 && (s.q[1] + 2.0).abs() < 1e-9);
        assert_eq!(reparameterize(&[0.0], &[0.0], &[1.0]), [1.0]);
    }

    #[test]
    fn log_density_closed_forms() {
        let mode = gaussian_log_density(0.3, 0.3, 0.0);
        assert!((mode + 0.918_938_533_204_672_7).abs() < 1e-12);
        let ls = 0.7;
        let one_sigma = gaussian_log_density(0.3 + libm::exp(ls), 0.3, ls);
        assert!((one_sigma - (gaussian_log_density(0.3, 0.3, ls) - 0.5)).abs() < 1e-12);
        assert!(gaussian_log_density(0.0, 0.0, 800.0) < -700.0);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut net = NetworkParams::init_uniform(&[2, 2], &mut stream(1, "i")).unwrap();
        let before = net.clone();
        let mut adam = Adam::new(net.len(), 1e-3);
        adam.apply(&mut net, &before.zeros_like()).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_learning_rate_against_gradient() {
        let mut net = NetworkParams::zeros(&[1, 1]).unwrap();
        let mut g = net.zeros_like();
        g.values_mut().copy_from_slice(&[3.0, -0.5]);
        let mut adam = Adam::new(2, 1e-4);
        adam.apply(&mut net, &g).unwrap();
        // m_hat / sqrt(v_hat) = sign(g); epsilon shaves a relative 1e-8/|g|.
        assert!((net.values()[0] + 1e-4).abs() < 1e-11);
        assert!((net.values()[1] - 1e-4).abs() < 1e-11);
    }

    #[test]
    fn adam_two_step_hand_trace() {
        // g = 1 twice, lr = 0.1:
        // step 1: m = 0.1, v = 0.001, m_hat = 1, v_hat = 1 -> -0.1/(1 + 1e-8)
        // step 2: m = 0.19, v = 0.001999, m_hat = 0.19/0.19 = 1,
        //         v_hat = 0.001999/0.001999 = 1 -> another -0.1/(1 + 1e-8)
        let mut net = NetworkParams::zeros(&[1, 1]).unwrap();
        let mut g = net.zeros_like();
        g.values_mut().copy_from_slice(&[1.0, 1.0]);
        let mut adam = Adam::new(2, 0.1);
        adam.apply(&mut net, &g).unwrap();
        let expected_one = -0.1 / (1.0 + 1e-8);
        assert!((net.values()[0] - expected_one).abs() < 1e-15);
        adam.apply(&mut net, &g).unwrap();
        assert!((net.values()[0] - 2.0 * expected_one).abs() < 1e-14);
    }

    #[test]
    fn polyak_extremes_and_one_step() {
        let online = NetworkParams::init_uniform(&[2, 3, 1], &mut stream(2, "i")).unwrap();
        let mut pair = TargetPair::new(online.zeros_like(), 1.0);
        pair.online = online.clone();
        pair.polyak_update();
        assert_eq!(pair.target, online);

        let mut pair = TargetPair::new(online.zeros_like(), 0.0);
        pair.online = online;
        pair.polyak_update();
        assert!(pair.target.values().iter().all(|&v| v == 0.0));

        let mut ones = NetworkParams::zeros(&[1, 1]).unwrap();
        ones.values_mut().fill(1.0);
        let mut pair = TargetPair::new(ones.zeros_like(), 1e-4);
        pair.online = ones;
        pair.polyak_update();
        assert!(pair
            .target
            .values()
            .iter()
            .all(|&v| (v - 1e-4).abs() < 1e-18));
    }

    #[test]
    fn snapshot_rejects_garbage() {
        let net = NetworkParams::init_uniform(&[3, 4, 2], &mut stream(9, "i")).unwrap();
        let bytes = net.to_bytes();
        assert_eq!(NetworkParams::from_bytes(&bytes).unwrap(), net);
        assert!(NetworkParams::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(NetworkParams::from_bytes(&bytes[..7]).is_err());
        let mut broken = bytes.clone();
        broken[8 * 3..8 * 4].copy_from_slice(&5u64.to_le_bytes());
        assert!(NetworkParams::from_bytes(&broken).is_err());
    }
}
