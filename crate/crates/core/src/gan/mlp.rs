//! Fully connected nets with manual backprop.
//!
//! On-disk form reuses the weight-record layout:
//!
//! ```text
//! "PXW1"
//! role          u8   (0 generator, 1 discriminator)
//! layer count   u32
//! activations   u8 x layer count (0 relu, 1 sigmoid, 2 tanh)
//! records       as in `weights`, one per layer; weights are out x in, row-major
//! ```

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::weights::{read_records, write_records, LayerWeights, WEIGHT_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Sigmoid),
            2 => Ok(Activation::Tanh),
            _ => Err(Error::parse(0, format!("unknown activation code {c}"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetRole {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn xavier(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = 0.0;
                for (w, v) in row.iter().zip(x) {
                    acc += w * v;
                }
                acc + self.bias[o]
            })
            .collect()
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[l]` is the input to layer `l`; the last entry is the net output.
    pub activations: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds at least the input")
    }

    /// Pre-activation of the final layer.
    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("net has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerWeights>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerWeights {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Flattened in the same order as [`MlpNet::param`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    role: NetRole,
    layers: Vec<DenseLayer>,
}

impl MlpNet {
    /// `widths` lists every layer width from input to output; `activations`
    /// has one entry per affine layer.
    pub fn new(role: NetRole, widths: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::Range(format!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len().saturating_sub(1),
                activations.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Range("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| DenseLayer::xavier(w[0], w[1], a, &mut rng))
            .collect();
        Ok(Self { role, layers })
    }

    pub fn from_layers(role: NetRole, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Range("net needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::shape(&[l.out_dim, l.in_dim], &[l.weights.len()]).at_layer(i));
            }
            if i > 0 && layers[i - 1].out_dim != l.in_dim {
                return Err(Error::shape(&[layers[i - 1].out_dim], &[l.in_dim]).at_layer(i));
            }
        }
        Ok(Self { role, layers })
    }

    pub fn role(&self) -> NetRole {
        self.role
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, bool, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if i < l.weights.len() {
                return (li, false, i);
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return (li, true, i);
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter access: per layer, weights then biases.
    pub fn param(&self, i: usize) -> f64 {
        let (l, is_bias, j) = self.locate(i);
        if is_bias {
            self.layers[l].bias[j]
        } else {
            self.layers[l].weights[j]
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let (l, is_bias, j) = self.locate(i);
        if is_bias {
            self.layers[l].bias[j] = v;
        } else {
            self.layers[l].weights[j] = v;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in &self.layers {
            cur = l.pre_activation(&cur).into_iter().map(|z| l.activation.apply(z)).collect();
        }
        cur
    }

    pub fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        let mut activations = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let z = l.pre_activation(activations.last().unwrap());
            activations.push(z.iter().map(|&v| l.activation.apply(v)).collect());
            pre.push(z);
        }
        ForwardTrace { activations, pre }
    }

    /// Backprop from a gradient at the final pre-activation. Adds parameter
    /// gradients into `grads` (when given) and returns the input gradient.
    #[allow(clippy::needless_range_loop)]
    pub fn backward_from_logits(
        &self,
        trace: &ForwardTrace,
        grad_logits: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Vec<f64> {
        let mut delta = grad_logits.to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let input = &trace.activations[li];
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[li];
                for o in 0..l.out_dim {
                    let d = delta[o];
                    gl.bias[o] += d;
                    let row = &mut gl.weights[o * l.in_dim..(o + 1) * l.in_dim];
                    for (gw, x) in row.iter_mut().zip(input) {
                        *gw += d * x;
                    }
                }
            }
            let mut back = vec![0.0; l.in_dim];
            for o in 0..l.out_dim {
                let d = delta[o];
                let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                for (b, w) in back.iter_mut().zip(row) {
                    *b += d * w;
                }
            }
            if li > 0 {
                let prev = &self.layers[li - 1];
                for (j, b) in back.iter_mut().enumerate() {
                    *b *= prev
                        .activation
                        .derivative(trace.pre[li - 1][j], trace.activations[li][j]);
                }
            }
            delta = back;
        }
        delta
    }

    /// Backprop from a gradient at the net output.
    pub fn backward(&self, trace: &ForwardTrace, grad_out: &[f64], grads: Option<&mut Gradients>) -> Vec<f64> {
        let last = self.layers.last().unwrap();
        let z = trace.logits();
        let a = trace.output();
        let g: Vec<f64> = (0..last.out_dim)
            .map(|i| grad_out[i] * last.activation.derivative(z[i], a[i]))
            .collect();
        self.backward_from_logits(trace, &g, grads)
    }

    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                *w -= lr * d;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * d;
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(WEIGHT_MAGIC)?;
        w.write_all(&[match self.role {
            NetRole::Generator => 0,
            NetRole::Discriminator => 1,
        }])?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        let codes: Vec<u8> = self.layers.iter().map(|l| l.activation.code()).collect();
        w.write_all(&codes)?;
        let records: Vec<LayerWeights> = self
            .layers
            .iter()
            .map(|l| LayerWeights {
                weights: l.weights.clone(),
                bias: l.bias.clone(),
            })
            .collect();
        write_records(&mut w, records.iter().enumerate())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != WEIGHT_MAGIC {
            return Err(Error::parse(0, "missing PXW1 magic"));
        }
        let mut role = [0u8; 1];
        r.read_exact(&mut role)?;
        let role = match role[0] {
            0 => NetRole::Generator,
            1 => NetRole::Discriminator,
            c => return Err(Error::parse(0, format!("unknown role byte {c}"))),
        };
        let mut n = [0u8; 4];
        r.read_exact(&mut n)?;
        let n = u32::from_le_bytes(n) as usize;
        let mut codes = vec![0u8; n];
        r.read_exact(&mut codes)?;
        let records = read_records(&mut r)?;
        if records.len() != n {
            return Err(Error::parse(0, format!("expected {n} layer records, found {}", records.len())));
        }
        let mut layers = Vec::with_capacity(n);
        for ((idx, lw), code) in records.into_iter().zip(codes) {
            let out_dim = lw.bias.len();
            if idx != layers.len() || out_dim == 0 || lw.weights.len() % out_dim != 0 {
                return Err(Error::parse(0, format!("malformed record for layer {idx}")));
            }
            layers.push(DenseLayer {
                in_dim: lw.weights.len() / out_dim,
                out_dim,
                weights: lw.weights,
                bias: lw.bias,
                activation: Activation::from_code(code)?,
            });
        }
        Self::from_layers(role, layers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    /// Hex SHA-256 of the serialized net.
    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MlpNet {
        MlpNet::new(
            NetRole::Discriminator,
            &[4, 5, 3, 1],
            &[Activation::Relu, Activation::Tanh, Activation::Sigmoid],
            9,
        )
        .unwrap()
    }

    #[test]
    fn shapes_and_count() {
        let n = small();
        assert_eq!(n.input_dim(), 4);
        assert_eq!(n.output_dim(), 1);
        assert_eq!(n.param_count(), 4 * 5 + 5 + 5 * 3 + 3 + 3 + 1);
        assert!(MlpNet::new(NetRole::Generator, &[3], &[], 0).is_err());
        assert!(MlpNet::new(NetRole::Generator, &[3, 0], &[Activation::Relu], 0).is_err());
    }

    #[test]
    fn xavier_bounds() {
        let n = MlpNet::new(NetRole::Generator, &[30, 20], &[Activation::Tanh], 4).unwrap();
        let b = (6.0f64 / 50.0).sqrt();
        assert!(n.layers()[0].weights.iter().all(|w| w.abs() <= b));
        assert!(n.layers()[0].bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_indexing_matches_flatten() {
        let n = small();
        let mut g = Gradients::zeros_like(&n);
        for (li, l) in n.layers().iter().enumerate() {
            g.layers[li].weights.clone_from(&l.weights);
            g.layers[li].bias.clone_from(&l.bias);
        }
        let flat = g.flatten();
        for (i, v) in flat.iter().enumerate() {
            assert_eq!(n.param(i).to_bits(), v.to_bits());
        }
    }

    #[test]
    fn trace_matches_forward() {
        let n = small();
        let x = [0.3, -0.2, 0.9, 0.0];
        assert_eq!(n.forward_trace(&x).output(), n.forward(&x).as_slice());
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let n = small();
        let x = vec![0.3, -0.2, 0.9, 0.1];
        let trace = n.forward_trace(&x);
        let g = n.backward(&trace, &[1.0], None);
        let h = 1e-5;
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            let num = (n.forward(&p)[0] - n.forward(&m)[0]) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-8, "{i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn file_round_trip() {
        let n = small();
        let bytes = n.to_bytes();
        assert_eq!(&bytes[..4], b"PXW1");
        assert_eq!(bytes[4], 1);
        let back = MlpNet::from_bytes(&bytes).unwrap();
        assert_eq!(back, n);
        assert_eq!(back.checksum(), n.checksum());
        assert_eq!(n.checksum().len(), 64);
    }
}
