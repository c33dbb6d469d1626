//! Weighted similarity coupling loss.
//!
//! For the image-to-text direction and batch size `N`,
//!
//! ```text
//! L = -(1/N) Σ_i log[ σ_ii / (σ_ii + Σ_{j≠i} (1 − s_ij) σ_ij) ],   σ_ij = exp(z_ij / τ)
//! ```
//!
//! Text-to-image uses `σ_ji` in the inner sum. Negatives whose labels match
//! the anchor exactly (`s = 1`) drop out; `s ≡ 0` recovers InfoNCE. The
//! queue variant replaces the in-batch negatives by memory-queue entries and
//! takes the positive from the momentum-encoded counterpart.
//!
//! Internally each row is evaluated as `ln(1 + Σ_j w_ij exp((z_ij − z_ii)/τ))`,
//! which is the same quantity without forming `σ_ii` explicitly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{exp_scaled, Matf};

pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 1.0;
pub const TAU_INIT: f64 = 0.07;

/// Learnable temperature stored as `log(1/τ)`, clamped so `τ ∈ [0.01, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    log_inv_tau: f64,
}

impl Default for Temperature {
    fn default() -> Self {
        Self::from_tau(TAU_INIT)
    }
}

impl Temperature {
    pub fn from_tau(tau: f64) -> Self {
        let mut t = Self { log_inv_tau: 0.0 };
        t.set_log_inv_tau(-tau.ln());
        t
    }

    pub fn tau(&self) -> f64 {
        (-self.log_inv_tau).exp()
    }

    pub fn log_inv_tau(&self) -> f64 {
        self.log_inv_tau
    }

    /// Sets the raw parameter, clamping into the admissible range.
    pub fn set_log_inv_tau(&mut self, v: f64) {
        let lo = (1.0 / TAU_MAX).ln();
        let hi = (1.0 / TAU_MIN).ln();
        self.log_inv_tau = if v.is_finite() { v.clamp(lo, hi) } else { hi };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ImageToText,
    TextToImage,
}

/// In-batch feature similarities `z`, label similarities `s` and `σ = exp(z/τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBundle {
    z: Matf,
    s: Matf,
    sigma: Matf,
    tau: f64,
}

fn check_range(m: &Matf, lo: f64, hi: f64, what: &str) -> Result<()> {
    if m.values().iter().any(|&v| !(lo..=hi).contains(&v)) {
        return Err(Error::ShapeMismatch(format!("{what} entries outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl SimilarityBundle {
    pub fn new(z: Matf, s: Matf, tau: f64) -> Result<Self> {
        if !z.is_square() || z.rows() != s.rows() || z.cols() != s.cols() {
            return Err(Error::ShapeMismatch(format!(
                "bundle needs square z and s of equal size, got {}x{} and {}x{}",
                z.rows(),
                z.cols(),
                s.rows(),
                s.cols()
            )));
        }
        if z.rows() == 0 {
            return Err(Error::ShapeMismatch("empty bundle".into()));
        }
        check_range(&z, -1.0, 1.0, "z")?;
        check_range(&s, 0.0, 1.0, "s")?;
        let sigma = exp_scaled(&z, tau)?;
        Ok(Self { z, s, sigma, tau })
    }

    pub fn z(&self) -> &Matf {
        &self.z
    }

    pub fn s(&self) -> &Matf {
        &self.s
    }

    pub fn sigma(&self) -> &Matf {
        &self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }

    /// `z` entry that plays the role of `(i, j)` for anchor `i` in `dir`.
    #[inline]
    fn z_dir(&self, dir: Direction, i: usize, j: usize) -> f64 {
        match dir {
            Direction::ImageToText => self.z.get(i, j),
            Direction::TextToImage => self.z.get(j, i),
        }
    }

    /// Per-anchor `r_i = Σ_{j≠i} (1 − s_ij) exp((z_ij − z_ii)/τ)` and the
    /// individual weighted terms.
    fn ratios(&self, dir: Direction) -> (Vec<f64>, Matf) {
        let n = self.len();
        let mut terms = Matf::zeros(n, n);
        let mut r = vec![0.0; n];
        for i in 0..n {
            let zii = self.z.get(i, i);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let w = 1.0 - self.s.get(i, j);
                let t = w * ((self.z_dir(dir, i, j) - zii) / self.tau).exp();
                terms.set(i, j, t);
                r[i] += t;
            }
        }
        (r, terms)
    }
}

/// Per-anchor losses `ln(1 + r_i)`.
pub fn wsc_losses_per_sample(bundle: &SimilarityBundle, dir: Direction) -> Vec<f64> {
    bundle.ratios(dir).0.iter().map(|r| r.ln_1p()).collect()
}

pub fn wsc_loss(bundle: &SimilarityBundle, dir: Direction) -> f64 {
    let per = wsc_losses_per_sample(bundle, dir);
    per.iter().sum::<f64>() / per.len() as f64
}

/// The loss written directly in terms of `σ`, for checking [`wsc_grad_sigma`]
/// against perturbations of individual `σ` entries.
pub fn wsc_loss_from_sigma(sigma: &Matf, s: &Matf, dir: Direction) -> f64 {
    let n = sigma.rows();
    let mut total = 0.0;
    for i in 0..n {
        let sii = sigma.get(i, i);
        let mut denom = sii;
        for j in (0..n).filter(|&j| j != i) {
            let sij = match dir {
                Direction::ImageToText => sigma.get(i, j),
                Direction::TextToImage => sigma.get(j, i),
            };
            denom += (1.0 - s.get(i, j)) * sij;
        }
        total -= (sii / denom).ln();
    }
    total / n as f64
}

/// `∂L/∂σ`, indexed like `σ` itself.
///
/// The diagonal is `−(1/N)·Σ_{j≠i}(1−s_ij)σ_ij / (σ_ii·D_i)` (never positive)
/// and off-diagonal entries are `(1/N)(1−s_ij)/D_i`, whose magnitude shrinks
/// as `s_ij` grows.
pub fn wsc_grad_sigma(bundle: &SimilarityBundle, dir: Direction) -> Matf {
    let n = bundle.len();
    let inv_n = 1.0 / n as f64;
    let (r, _) = bundle.ratios(dir);
    let mut g = Matf::zeros(n, n);
    for i in 0..n {
        let sii = bundle.sigma.get(i, i);
        // D_i = σ_ii (1 + r_i)
        let denom = sii * (1.0 + r[i]);
        g.set(i, i, -inv_n * r[i] / denom);
        for j in (0..n).filter(|&j| j != i) {
            let w = 1.0 - bundle.s.get(i, j);
            let v = inv_n * w / denom;
            match dir {
                Direction::ImageToText => g.set(i, j, v),
                Direction::TextToImage => g.set(j, i, v),
            }
        }
    }
    g
}

/// `∂L/∂z`, indexed like `z`.
pub fn wsc_grad_z(bundle: &SimilarityBundle, dir: Direction) -> Matf {
    let n = bundle.len();
    let scale = 1.0 / (n as f64 * bundle.tau);
    let (r, terms) = bundle.ratios(dir);
    let mut g = Matf::zeros(n, n);
    for i in 0..n {
        let inv = 1.0 / (1.0 + r[i]);
        g.set(i, i, -scale * r[i] * inv);
        for j in (0..n).filter(|&j| j != i) {
            let v = scale * terms.get(i, j) * inv;
            match dir {
                Direction::ImageToText => g.set(i, j, v),
                Direction::TextToImage => g.set(j, i, v),
            }
        }
    }
    g
}

/// `∂L/∂log(1/τ)`. Since `σ = exp(z·e^{log(1/τ)})`, this is `Σ (∂L/∂z) ⊙ z`.
pub fn wsc_grad_log_inv_tau(bundle: &SimilarityBundle, dir: Direction) -> f64 {
    let g = wsc_grad_z(bundle, dir);
    g.values()
        .iter()
        .zip(bundle.z.values())
        .map(|(a, b)| a * b)
        .sum()
}

/// Similarities of `B` anchors against their momentum-encoded positives and
/// the `N_q` current queue entries.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueSimilarityBundle {
    z_pos: Vec<f64>,
    z_queue: Matf,
    s_queue: Matf,
    tau: f64,
}

impl QueueSimilarityBundle {
    pub fn new(z_pos: Vec<f64>, z_queue: Matf, s_queue: Matf, tau: f64) -> Result<Self> {
        if z_queue.rows() != z_pos.len()
            || s_queue.rows() != z_pos.len()
            || s_queue.cols() != z_queue.cols()
        {
            return Err(Error::ShapeMismatch(format!(
                "queue bundle: {} positives, z_queue {}x{}, s_queue {}x{}",
                z_pos.len(),
                z_queue.rows(),
                z_queue.cols(),
                s_queue.rows(),
                s_queue.cols()
            )));
        }
        if z_pos.is_empty() {
            return Err(Error::ShapeMismatch("empty queue bundle".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidTemperature(tau));
        }
        if z_pos.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::ShapeMismatch("z_pos entries outside [-1, 1]".into()));
        }
        check_range(&z_queue, -1.0, 1.0, "z_queue")?;
        check_range(&s_queue, 0.0, 1.0, "s_queue")?;
        Ok(Self {
            z_pos,
            z_queue,
            s_queue,
            tau,
        })
    }

    pub fn batch_len(&self) -> usize {
        self.z_pos.len()
    }

    pub fn queue_len(&self) -> usize {
        self.z_queue.cols()
    }

    pub fn z_pos(&self) -> &[f64] {
        &self.z_pos
    }

    pub fn z_queue(&self) -> &Matf {
        &self.z_queue
    }

    pub fn s_queue(&self) -> &Matf {
        &self.s_queue
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn ratios(&self) -> (Vec<f64>, Matf) {
        let (b, q) = (self.batch_len(), self.queue_len());
        let mut terms = Matf::zeros(b, q);
        let mut r = vec![0.0; b];
        for i in 0..b {
            for j in 0..q {
                let w = 1.0 - self.s_queue.get(i, j);
                let t = w * ((self.z_queue.get(i, j) - self.z_pos[i]) / self.tau).exp();
                terms.set(i, j, t);
                r[i] += t;
            }
        }
        (r, terms)
    }
}

/// Queue-expanded loss. `None` while the queue is still empty (warm-up).
pub fn momentum_wsc_loss(q: &QueueSimilarityBundle) -> Option<f64> {
    if q.queue_len() == 0 {
        return None;
    }
    let (r, _) = q.ratios();
    Some(r.iter().map(|x| x.ln_1p()).sum::<f64>() / q.batch_len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueGrads {
    pub z_pos: Vec<f64>,
    pub z_queue: Matf,
    pub log_inv_tau: f64,
}

/// Gradients of [`momentum_wsc_loss`]; all zero during warm-up.
pub fn momentum_wsc_grads(q: &QueueSimilarityBundle) -> QueueGrads {
    let (b, n_q) = (q.batch_len(), q.queue_len());
    let mut z_pos = vec![0.0; b];
    let mut z_queue = Matf::zeros(b, n_q);
    if n_q == 0 {
        return QueueGrads {
            z_pos,
            z_queue,
            log_inv_tau: 0.0,
        };
    }
    let scale = 1.0 / (b as f64 * q.tau);
    let (r, terms) = q.ratios();
    let mut dl = 0.0;
    for i in 0..b {
        let inv = 1.0 / (1.0 + r[i]);
        z_pos[i] = -scale * r[i] * inv;
        dl += z_pos[i] * q.z_pos[i];
        for j in 0..n_q {
            let v = scale * terms.get(i, j) * inv;
            z_queue.set(i, j, v);
            dl += v * q.z_queue.get(i, j);
        }
    }
    QueueGrads {
        z_pos,
        z_queue,
        log_inv_tau: dl,
    }
}

/// Sum of the two in-batch and the two queue terms.
pub fn total_loss(in_batch_i2t: f64, in_batch_t2i: f64, mom_i2t: f64, mom_t2i: f64) -> f64 {
    in_batch_i2t + in_batch_t2i + mom_i2t + mom_t2i
}
