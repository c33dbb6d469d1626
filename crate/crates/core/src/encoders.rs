//! Toy dual encoders with hand-written backpropagation.
//!
//! Each modality uses a one-hidden-layer tanh feature extractor followed by
//! a nonlinear projection (linear, tanh, linear):
//!
//! ```text
//! h = tanh(W1 x + b1)        extractor output, used for downstream probing
//! g = tanh(W2 h + b2)
//! f = W3 g + b3              projected feature fed to the contrastive loss
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, Matf, Vecf};

/// A fully connected layer `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matf,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matf::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = Matf::from_fn(output, input, |_, _| rng.random_range(-bound..=bound));
        let bias = (0..output).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (yi, bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        y
    }

    /// Accumulates `dW += dy ⊗ x`, `db += dy` into `grad` and returns `Wᵀ dy`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        for (i, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            axpy(d, x, grad.weight.row_mut(i));
            grad.bias[i] += d;
        }
        self.weight.matvec_t(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
}

/// Parameters of one modality's encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub extractor: Dense,
    pub proj_hidden: Dense,
    pub proj_out: Dense,
}

/// Activations recorded by [`forward`] and consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    input: Vec<f64>,
    hidden: Vec<f64>,
    proj_hidden: Vec<f64>,
    dims: EncoderDims,
}

impl Tape {
    /// Extractor output `h`.
    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(dims: EncoderDims, rng: &mut R) -> Self {
        Self {
            extractor: Dense::init(dims.input_dim, dims.hidden_dim, rng),
            proj_hidden: Dense::init(dims.hidden_dim, dims.hidden_dim, rng),
            proj_out: Dense::init(dims.hidden_dim, dims.proj_dim, rng),
        }
    }

    pub fn zeros(dims: EncoderDims) -> Self {
        Self {
            extractor: Dense::zeros(dims.input_dim, dims.hidden_dim),
            proj_hidden: Dense::zeros(dims.hidden_dim, dims.hidden_dim),
            proj_out: Dense::zeros(dims.hidden_dim, dims.proj_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            input_dim: self.extractor.input_dim(),
            hidden_dim: self.extractor.output_dim(),
            proj_dim: self.proj_out.output_dim(),
        }
    }

    /// Parameter tensors in a fixed order, each flagged `true` when it is a bias.
    pub fn tensors(&self) -> [(&[f64], bool); 6] {
        [
            (self.extractor.weight.values(), false),
            (&self.extractor.bias, true),
            (self.proj_hidden.weight.values(), false),
            (&self.proj_hidden.bias, true),
            (self.proj_out.weight.values(), false),
            (&self.proj_out.bias, true),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&mut [f64], bool); 6] {
        [
            (self.extractor.weight.values_mut(), false),
            (&mut self.extractor.bias, true),
            (self.proj_hidden.weight.values_mut(), false),
            (&mut self.proj_hidden.bias, true),
            (self.proj_out.weight.values_mut(), false),
            (&mut self.proj_out.bias, true),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }

    pub fn param(&self, mut idx: usize) -> f64 {
        for (t, _) in self.tensors() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, v: f64) {
        for (t, _) in self.tensors_mut() {
            if idx < t.len() {
                t[idx] = v;
                return;
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(t, _)| t.iter().copied()).collect()
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &EncoderParams) {
        for ((dst, _), (src, _)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(alpha, src, dst);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().map(|(t, _)| dot(t, t)).sum()
    }

    pub fn same_shape(&self, other: &EncoderParams) -> bool {
        self.dims() == other.dims()
    }

    /// Extractor output only, for downstream evaluation.
    pub fn extract(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.extractor.forward(x);
        h.iter_mut().for_each(|v| *v = v.tanh());
        h
    }
}

/// Runs the encoder on one input and records the activations.
pub fn forward(p: &EncoderParams, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
    let dims = p.dims();
    if x.len() != dims.input_dim {
        return Err(Error::DimMismatch {
            expected: dims.input_dim,
            got: x.len(),
        });
    }
    let hidden = p.extract(x);
    let mut g = p.proj_hidden.forward(&hidden);
    g.iter_mut().for_each(|v| *v = v.tanh());
    let f = p.proj_out.forward(&g);
    Ok((
        f,
        Tape {
            input: x.to_vec(),
            hidden,
            proj_hidden: g,
            dims,
        },
    ))
}

/// Encodes every row of `xs`.
pub fn forward_batch(p: &EncoderParams, xs: &Matf) -> Result<(Matf, Vec<Tape>)> {
    let mut rows = Vec::with_capacity(xs.rows());
    let mut tapes = Vec::with_capacity(xs.rows());
    for i in 0..xs.rows() {
        let (f, t) = forward(p, xs.row(i))?;
        rows.push(f);
        tapes.push(t);
    }
    Ok((Matf::from_rows(&rows, p.dims().proj_dim)?, tapes))
}

/// Accumulates `∂(grad_feature · f)/∂p` into `grad`.
pub fn backward_into(
    p: &EncoderParams,
    tape: &Tape,
    grad_feature: &[f64],
    grad: &mut EncoderParams,
) -> Result<()> {
    let dims = p.dims();
    if tape.dims != dims {
        return Err(Error::TapeMismatch(format!(
            "tape recorded for {:?}, encoder is {:?}",
            tape.dims, dims
        )));
    }
    if !grad.same_shape(p) {
        return Err(Error::ShapeMismatch("gradient buffer".into()));
    }
    if grad_feature.len() != dims.proj_dim {
        return Err(Error::DimMismatch {
            expected: dims.proj_dim,
            got: grad_feature.len(),
        });
    }
    let dg = p
        .proj_out
        .backward(&tape.proj_hidden, grad_feature, &mut grad.proj_out);
    let dpre2: Vec<f64> = dg
        .iter()
        .zip(&tape.proj_hidden)
        .map(|(d, g)| d * (1.0 - g * g))
        .collect();
    let dh = p
        .proj_hidden
        .backward(&tape.hidden, &dpre2, &mut grad.proj_hidden);
    let dpre1: Vec<f64> = dh
        .iter()
        .zip(&tape.hidden)
        .map(|(d, h)| d * (1.0 - h * h))
        .collect();
    p.extractor.backward(&tape.input, &dpre1, &mut grad.extractor);
    Ok(())
}

/// Gradient of `grad_feature · f(x)` with respect to every parameter.
pub fn backward(p: &EncoderParams, tape: &Tape, grad_feature: &Vecf) -> Result<EncoderParams> {
    let mut grad = p.zeros_like();
    backward_into(p, tape, grad_feature.as_slice(), &mut grad)?;
    Ok(grad)
}

/// Online image (θ) and text (φ) encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderPair {
    pub image: EncoderParams,
    pub text: EncoderParams,
}

impl EncoderPair {
    pub fn init<R: Rng + ?Sized>(image: EncoderDims, text: EncoderDims, rng: &mut R) -> Result<Self> {
        if image.proj_dim != text.proj_dim {
            return Err(Error::ShapeMismatch(format!(
                "projection dims differ: {} vs {}",
                image.proj_dim, text.proj_dim
            )));
        }
        Ok(Self {
            image: EncoderParams::init(image, rng),
            text: EncoderParams::init(text, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            image: self.image.zeros_like(),
            text: self.text.zeros_like(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.image.num_params() + self.text.num_params()
    }
}

/// Momentum copies θ', φ' with coefficient `m` and step counter `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumPair {
    pub image: EncoderParams,
    pub text: EncoderParams,
    pub m: f64,
    pub t: u64,
}

impl MomentumPair {
    /// At `t = 0` the momentum parameters equal the online ones.
    pub fn from_online(online: &EncoderPair, m: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&m) {
            return Err(Error::Config(format!("momentum {m} outside [0, 1)")));
        }
        Ok(Self {
            image: online.image.clone(),
            text: online.text.clone(),
            m,
            t: 0,
        })
    }
}

fn blend(m: f64, target: &mut EncoderParams, online: &EncoderParams) {
    for ((dst, _), (src, _)) in target.tensors_mut().into_iter().zip(online.tensors()) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = m * *d + (1.0 - m) * s;
        }
    }
}

/// `p' ← m p' + (1 − m) p` for each modality separately; increments `t`.
pub fn momentum_update_in_place(online: &EncoderPair, mom: &mut MomentumPair) -> Result<()> {
    if !online.image.same_shape(&mom.image) || !online.text.same_shape(&mom.text) {
        return Err(Error::ShapeMismatch("momentum encoder".into()));
    }
    blend(mom.m, &mut mom.image, &online.image);
    blend(mom.m, &mut mom.text, &online.text);
    mom.t += 1;
    Ok(())
}

pub fn momentum_update(online: &EncoderPair, mom: &MomentumPair) -> Result<MomentumPair> {
    let mut next = mom.clone();
    momentum_update_in_place(online, &mut next)?;
    Ok(next)
}

/// Hashed character n-gram counts, L2-normalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextFeaturizer {
    pub hash_dim: usize,
    pub orders: Vec<usize>,
}

impl Default for TextFeaturizer {
    fn default() -> Self {
        Self {
            hash_dim: 256,
            orders: vec![1, 2],
        }
    }
}

// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl TextFeaturizer {
    pub fn featurize(&self, text: &str) -> Vecf {
        let mut counts = vec![0.0; self.hash_dim];
        if self.hash_dim == 0 {
            return Vecf::zeros(0);
        }
        let chars: Vec<char> = text.chars().collect();
        let mut buf = [0u8; 4];
        for &n in &self.orders {
            if n == 0 || n > chars.len() {
                continue;
            }
            for win in chars.windows(n) {
                let mut bytes = vec![n as u8, 0xff];
                for c in win {
                    bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                }
                let bucket = (fnv1a(bytes) % self.hash_dim as u64) as usize;
                counts[bucket] += 1.0;
            }
        }
        crate::numerics::l2_normalize_in_place(&mut counts, crate::numerics::NORM_EPS);
        Vecf::new(counts).expect("finite counts")
    }
}

pub fn featurize_text(text: &str, f: &TextFeaturizer) -> Vecf {
    f.featurize(text)
}
