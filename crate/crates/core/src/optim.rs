//! Adaptive-moment optimizer with decoupled weight decay.
//!
//! Per scalar parameter, with bias-corrected moments:
//!
//! ```text
//! m ← β1 m + (1 − β1) g
//! v ← β2 v + (1 − β2) g²
//! p ← p − lr·λ·p − lr · m̂ / (√v̂ + ε)
//! ```
//!
//! Decay is skipped for biases, and for the temperature unless enabled.

use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderPair, EncoderParams};
use crate::error::{Error, Result};
use crate::wscloss::Temperature;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_temperature: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.001,
            decay_temperature: false,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: EncoderPair,
    v: EncoderPair,
    m_tau: f64,
    v_tau: f64,
}

struct Hyper {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
}

impl Hyper {
    #[inline]
    fn update(&self, p: &mut f64, g: f64, m: &mut f64, v: &mut f64, decay: f64) {
        *m = self.b1 * *m + (1.0 - self.b1) * g;
        *v = self.b2 * *v + (1.0 - self.b2) * g * g;
        let m_hat = *m / self.bc1;
        let v_hat = *v / self.bc2;
        *p -= self.lr * decay * *p + self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}

fn update_encoder(h: &Hyper, wd: f64, p: &mut EncoderParams, g: &EncoderParams, m: &mut EncoderParams, v: &mut EncoderParams) {
    let tensors = p
        .tensors_mut()
        .into_iter()
        .zip(g.tensors())
        .zip(m.tensors_mut())
        .zip(v.tensors_mut());
    for ((((pt, is_bias), (gt, _)), (mt, _)), (vt, _)) in tensors {
        let decay = if is_bias { 0.0 } else { wd };
        for k in 0..pt.len() {
            h.update(&mut pt[k], gt[k], &mut mt[k], &mut vt[k], decay);
        }
    }
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &EncoderPair) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            m_tau: 0.0,
            v_tau: 0.0,
        })
    }

    /// One update of both encoders and the temperature. The temperature is
    /// re-clamped into its admissible range afterwards.
    pub fn step(
        &mut self,
        params: &mut EncoderPair,
        temperature: &mut Temperature,
        grads: &EncoderPair,
        grad_log_inv_tau: f64,
    ) -> Result<()> {
        for (a, b) in [(&params.image, &grads.image), (&params.text, &grads.text), (&params.image, &self.m.image), (&params.text, &self.m.text)] {
            if !a.same_shape(b) {
                return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let h = Hyper {
            lr: c.lr,
            b1: c.beta1,
            b2: c.beta2,
            eps: c.eps,
            bc1: 1.0 - c.beta1.powi(t),
            bc2: 1.0 - c.beta2.powi(t),
        };
        update_encoder(&h, c.weight_decay, &mut params.image, &grads.image, &mut self.m.image, &mut self.v.image);
        update_encoder(&h, c.weight_decay, &mut params.text, &grads.text, &mut self.m.text, &mut self.v.text);
        let mut l = temperature.log_inv_tau();
        let decay = if c.decay_temperature { c.weight_decay } else { 0.0 };
        h.update(&mut l, grad_log_inv_tau, &mut self.m_tau, &mut self.v_tau, decay);
        temperature.set_log_inv_tau(l);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(seed: u64) -> EncoderPair {
        let d = EncoderDims {
            input_dim: 3,
            hidden_dim: 4,
            proj_dim: 2,
        };
        EncoderPair::init(d, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = pair(1);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.image.set_param(0, 0.3);
        g.text.set_param(1, -2.0);
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p).unwrap();
        let mut tau = Temperature::default();
        opt.step(&mut p, &mut tau, &g, 0.0).unwrap();
        // bias-corrected first step is g/(|g| + ε)
        let want = before.image.param(0) - 0.01 * 0.3 / (0.3 + 1e-6);
        assert!((p.image.param(0) - want).abs() < 1e-15);
        let want = before.text.param(1) + 0.01 * 2.0 / (2.0 + 1e-6);
        assert!((p.text.param(1) - want).abs() < 1e-15);
        assert_eq!(p.image.param(5), before.image.param(5));
        assert_eq!(tau, Temperature::default());
    }

    #[test]
    fn zero_gradient_shrinks_weights_not_biases() {
        let mut p = pair(2);
        let before = p.clone();
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p).unwrap();
        let mut tau = Temperature::default();
        let g = p.zeros_like();
        for _ in 0..3 {
            opt.step(&mut p, &mut tau, &g, 0.0).unwrap();
        }
        let f = (1.0f64 - 0.1 * 0.01).powi(3);
        for ((a, bias), (b, _)) in p.image.tensors().into_iter().zip(before.image.tensors()) {
            for (x, y) in a.iter().zip(b) {
                if bias {
                    assert_eq!(x, y);
                } else {
                    assert!((x - y * f).abs() < 1e-15);
                }
            }
        }
        assert_eq!(tau, Temperature::default());
    }

    #[test]
    fn decay_off_is_pure_adaptive_step() {
        let p0 = pair(3);
        let mut g = p0.zeros_like();
        for k in 0..g.image.num_params() {
            g.image.set_param(k, (k as f64 * 0.37).sin());
        }
        let run = |wd: f64| {
            let mut p = p0.clone();
            let cfg = AdamWConfig {
                lr: 0.05,
                weight_decay: wd,
                ..Default::default()
            };
            let mut opt = AdamW::new(cfg, &p).unwrap();
            opt.step(&mut p, &mut Temperature::default(), &g, 0.0).unwrap();
            p
        };
        let p = run(0.0);
        for k in 0..g.image.num_params() {
            let gk = g.image.param(k);
            let want = p0.image.param(k) - 0.05 * gk / (gk.abs() + 1e-6);
            assert!((p.image.param(k) - want).abs() < 1e-15);
        }
        assert_ne!(run(0.5), p);
    }

    #[test]
    fn temperature_clamped_and_decay_flag() {
        let mut p = pair(4);
        let g = p.zeros_like();
        let cfg = AdamWConfig {
            lr: 10.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p).unwrap();
        let mut tau = Temperature::default();
        opt.step(&mut p, &mut tau, &g, -1.0).unwrap();
        assert!((tau.tau() - 0.01).abs() < 1e-15);

        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            decay_temperature: true,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p).unwrap();
        let mut tau = Temperature::from_tau(0.1);
        let l0 = tau.log_inv_tau();
        opt.step(&mut p, &mut tau, &g, 0.0).unwrap();
        assert!((tau.log_inv_tau() - l0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let p = pair(5);
        assert!(AdamW::new(AdamWConfig { beta1: 1.0, ..Default::default() }, &p).is_err());
        let mut opt = AdamW::new(AdamWConfig::default(), &p).unwrap();
        let d = EncoderDims {
            input_dim: 2,
            hidden_dim: 4,
            proj_dim: 2,
        };
        let other = EncoderPair::init(d, d, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut q = p.clone();
        assert!(opt.step(&mut q, &mut Temperature::default(), &other, 0.0).is_err());
        assert_eq!(opt.step, 0);
    }
}
