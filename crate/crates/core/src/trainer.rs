//! Training state, the full training step, gradient checking and checkpoints.
//!
//! One step:
//! 1. encode the batch with the online encoders,
//! 2. encode it with the momentum encoders,
//! 3. build the in-batch and queue similarity bundles (queue as it was before this step),
//! 4. sum the four loss terms,
//! 5. backpropagate into both online encoders and the temperature,
//! 6. apply the optimizer,
//! 7. blend the momentum encoders,
//! 8. enqueue the momentum features with their labels,
//! 9. advance the step counter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{augment, derived_rng, epoch_order, generate_dataset, DataConfig, Dataset, STREAM_INIT};
use crate::reportconv::RuleSet;
use crate::encoders::{backward_into, forward, momentum_update_in_place, EncoderPair, EncoderParams, MomentumPair, Tape};
use crate::error::{Error, Result};
use crate::labelkit::{pairwise_label_similarity, LabelVocabulary, MultiHotLabel};
use crate::memqueue::{MemoryQueue, QueueSnapshot};
use crate::numerics::{dot, norm, Matf, NORM_EPS};
use crate::optim::AdamW;
use crate::wscloss::{
    momentum_wsc_grads, momentum_wsc_loss, total_loss, wsc_grad_log_inv_tau, wsc_grad_z, wsc_loss, Direction,
    QueueSimilarityBundle, SimilarityBundle, Temperature,
};

pub const CHECKPOINT_FORMAT: &str = "wsc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Paired inputs: image vectors, featurized texts and labels, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Matf,
    pub texts: Matf,
    pub labels: Vec<MultiHotLabel>,
}

impl Batch {
    pub fn new(images: Matf, texts: Matf, labels: Vec<MultiHotLabel>) -> Result<Self> {
        if images.rows() != texts.rows() || images.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                left: images.rows(),
                right: labels.len(),
            });
        }
        Ok(Self { images, texts, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Loss switches taken from the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSettings {
    pub label_weighting: bool,
    pub queue: bool,
    pub learn_temperature: bool,
}

impl From<&Config> for StepSettings {
    fn from(c: &Config) -> Self {
        Self {
            label_weighting: c.loss.label_weighting,
            queue: c.queue.enabled,
            learn_temperature: c.loss.learn_temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub online: EncoderPair,
    pub momentum: MomentumPair,
    pub temperature: Temperature,
    pub queue: MemoryQueue,
    pub optimizer: AdamW,
    pub seed: u64,
    pub step: u64,
}

impl TrainState {
    pub fn init(cfg: &Config, image_input_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = derived_rng(seed, &[STREAM_INIT]);
        let online = EncoderPair::init(cfg.model.image_dims(image_input_dim), cfg.model.text_dims(), &mut rng)?;
        let momentum = MomentumPair::from_online(&online, cfg.queue.momentum)?;
        Ok(Self {
            optimizer: AdamW::new(cfg.optimizer, &online)?,
            queue: MemoryQueue::new(cfg.queue.capacity, cfg.model.proj_dim)?,
            temperature: Temperature::from_tau(cfg.model.init_tau),
            momentum,
            online,
            seed,
            step: 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = serde_json::json!({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "state": self,
        });
        std::fs::write(path, serde_json::to_vec(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            format: String,
            version: u32,
            state: TrainState,
        }
        let doc: Doc = serde_json::from_slice(&std::fs::read(path)?)?;
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc.state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub i2t: f64,
    pub t2i: f64,
    pub mom_i2t: f64,
    pub mom_t2i: f64,
    /// The queue terms were skipped because the queue was still empty.
    pub warmup: bool,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        total_loss(self.i2t, self.t2i, self.mom_i2t, self.mom_t2i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_i2t: f64,
    pub loss_t2i: f64,
    pub loss_mom_i2t: f64,
    pub loss_mom_t2i: f64,
    pub total: f64,
    pub tau: f64,
    pub queue_len: usize,
    pub warmup: bool,
    pub grad_norm_image: f64,
    pub grad_norm_text: f64,
    pub grad_log_inv_tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoders: EncoderPair,
    pub log_inv_tau: f64,
}

/// Raw projections, their norms and the unit-length rows.
struct Encoded {
    unit: Matf,
    norms: Vec<f64>,
    tapes: Vec<Tape>,
}

fn encode(p: &EncoderParams, xs: &Matf) -> Result<Encoded> {
    let d = p.dims().proj_dim;
    let mut unit = Matf::zeros(xs.rows(), d);
    let mut norms = Vec::with_capacity(xs.rows());
    let mut tapes = Vec::with_capacity(xs.rows());
    for i in 0..xs.rows() {
        let (f, tape) = forward(p, xs.row(i))?;
        let n = norm(&f).max(NORM_EPS);
        for (u, v) in unit.row_mut(i).iter_mut().zip(&f) {
            *u = v / n;
        }
        norms.push(n);
        tapes.push(tape);
    }
    Ok(Encoded { unit, norms, tapes })
}

fn encode_unit(p: &EncoderParams, xs: &Matf) -> Result<Matf> {
    Ok(encode(p, xs)?.unit)
}

/// `A Bᵀ` for row-unit matrices, clamped into `[-1, 1]`.
fn cosines(a: &Matf, b: &Matf) -> Matf {
    Matf::from_fn(a.rows(), b.rows(), |i, j| dot(a.row(i), b.row(j)).clamp(-1.0, 1.0))
}

fn rowwise_cos(a: &Matf, b: &Matf) -> Vec<f64> {
    (0..a.rows()).map(|i| dot(a.row(i), b.row(i)).clamp(-1.0, 1.0)).collect()
}

/// Fixed inputs of one loss evaluation besides the online parameters.
struct LossInputs<'a> {
    batch: &'a Batch,
    vocab: &'a LabelVocabulary,
    settings: StepSettings,
    /// Momentum features of the batch (image, text), unit rows.
    momentum: Option<(Matf, Matf)>,
    queue: Option<&'a QueueSnapshot>,
    /// Reported in diagnostics.
    step: u64,
}

struct Evaluation {
    terms: LossTerms,
    grads: Option<Gradients>,
    bundle: SimilarityBundle,
}

fn evaluate(online: &EncoderPair, log_inv_tau: f64, inp: &LossInputs, want_grads: bool) -> Result<Evaluation> {
    let b = inp.batch.len();
    let tau = (-log_inv_tau).exp();
    let u = encode(&online.image, &inp.batch.images)?;
    let v = encode(&online.text, &inp.batch.texts)?;
    let z = cosines(&u.unit, &v.unit);
    let s = if inp.settings.label_weighting {
        pairwise_label_similarity(inp.vocab, &inp.batch.labels, &inp.batch.labels)?
    } else {
        Matf::zeros(b, b)
    };
    if z.values().iter().any(|x| !x.is_finite()) || !tau.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: inp.step,
            dump: serde_json::json!({ "tau": tau, "z": z, "s": s }).to_string(),
        });
    }
    let bundle = SimilarityBundle::new(z, s, tau)?;
    let mut terms = LossTerms {
        i2t: wsc_loss(&bundle, Direction::ImageToText),
        t2i: wsc_loss(&bundle, Direction::TextToImage),
        ..Default::default()
    };

    // queue bundles: (i2t, t2i)
    let mut queue_bundles = None;
    if let (Some((um, vm)), Some(snap)) = (&inp.momentum, inp.queue) {
        let s_q = if inp.settings.label_weighting {
            pairwise_label_similarity(inp.vocab, &inp.batch.labels, &snap.labels)?
        } else {
            Matf::zeros(b, snap.len())
        };
        let qi = QueueSimilarityBundle::new(rowwise_cos(&u.unit, vm), cosines(&u.unit, &snap.text), s_q.clone(), tau)?;
        let qt = QueueSimilarityBundle::new(rowwise_cos(&v.unit, um), cosines(&v.unit, &snap.image), s_q, tau)?;
        match (momentum_wsc_loss(&qi), momentum_wsc_loss(&qt)) {
            (Some(a), Some(c)) => {
                terms.mom_i2t = a;
                terms.mom_t2i = c;
            }
            _ => terms.warmup = true,
        }
        queue_bundles = Some((qi, qt));
    }

    if !want_grads {
        return Ok(Evaluation { terms, grads: None, bundle });
    }

    let mut gz = wsc_grad_z(&bundle, Direction::ImageToText);
    let g2 = wsc_grad_z(&bundle, Direction::TextToImage);
    for (a, c) in gz.values_mut().iter_mut().zip(g2.values()) {
        *a += c;
    }
    let mut dl = wsc_grad_log_inv_tau(&bundle, Direction::ImageToText) + wsc_grad_log_inv_tau(&bundle, Direction::TextToImage);

    let d = u.unit.cols();
    // gradients with respect to the unit features
    let mut gu = Matf::zeros(b, d);
    let mut gv = Matf::zeros(b, d);
    for i in 0..b {
        for j in 0..b {
            let g = gz.get(i, j);
            if g != 0.0 {
                crate::numerics::axpy(g, v.unit.row(j), gu.row_mut(i));
                crate::numerics::axpy(g, u.unit.row(i), gv.row_mut(j));
            }
        }
    }
    if let (Some((qi, qt)), Some((um, vm)), Some(snap)) = (&queue_bundles, &inp.momentum, inp.queue) {
        let gi = momentum_wsc_grads(qi);
        let gt = momentum_wsc_grads(qt);
        dl += gi.log_inv_tau + gt.log_inv_tau;
        for i in 0..b {
            crate::numerics::axpy(gi.z_pos[i], vm.row(i), gu.row_mut(i));
            crate::numerics::axpy(gt.z_pos[i], um.row(i), gv.row_mut(i));
            for q in 0..snap.len() {
                crate::numerics::axpy(gi.z_queue.get(i, q), snap.text.row(q), gu.row_mut(i));
                crate::numerics::axpy(gt.z_queue.get(i, q), snap.image.row(q), gv.row_mut(i));
            }
        }
    }

    let mut grads = online.zeros_like();
    for (enc, g, params, out) in [
        (&u, &gu, &online.image, &mut grads.image),
        (&v, &gv, &online.text, &mut grads.text),
    ] {
        for i in 0..b {
            // through f / ‖f‖
            let unit = enc.unit.row(i);
            let gi = g.row(i);
            let proj = dot(gi, unit);
            let graw: Vec<f64> = gi.iter().zip(unit).map(|(a, c)| (a - proj * c) / enc.norms[i]).collect();
            backward_into(params, &enc.tapes[i], &graw, out)?;
        }
    }
    Ok(Evaluation {
        terms,
        grads: Some(Gradients {
            encoders: grads,
            log_inv_tau: if inp.settings.learn_temperature { dl } else { 0.0 },
        }),
        bundle,
    })
}

fn momentum_features(state: &TrainState, batch: &Batch) -> Result<(Matf, Matf)> {
    Ok((
        encode_unit(&state.momentum.image, &batch.images)?,
        encode_unit(&state.momentum.text, &batch.texts)?,
    ))
}

fn dump(bundle: &SimilarityBundle, terms: &LossTerms) -> String {
    serde_json::json!({
        "tau": bundle.tau(),
        "terms": terms,
        "z": bundle.z(),
        "s": bundle.s(),
    })
    .to_string()
}

/// Loss terms and gradients at the current state, without changing it.
pub fn loss_and_grads(
    state: &TrainState,
    batch: &Batch,
    vocab: &LabelVocabulary,
    settings: StepSettings,
) -> Result<(LossTerms, Gradients)> {
    let snap = state.queue.snapshot();
    let momentum = if settings.queue { Some(momentum_features(state, batch)?) } else { None };
    let inp = LossInputs {
        batch,
        vocab,
        settings,
        momentum,
        queue: settings.queue.then_some(&snap),
        step: state.step,
    };
    let e = evaluate(&state.online, state.temperature.log_inv_tau(), &inp, true)?;
    Ok((e.terms, e.grads.expect("requested")))
}

/// One optimization step; see the module docs for the order of operations.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    vocab: &LabelVocabulary,
    settings: StepSettings,
) -> Result<StepMetrics> {
    if batch.len() < 2 {
        return Err(Error::ShapeMismatch(format!("batch of {} pairs; need at least 2", batch.len())));
    }
    let snap = state.queue.snapshot();
    let momentum = if settings.queue { Some(momentum_features(state, batch)?) } else { None };
    let inp = LossInputs {
        batch,
        vocab,
        settings,
        momentum,
        queue: settings.queue.then_some(&snap),
        step: state.step,
    };
    let e = evaluate(&state.online, state.temperature.log_inv_tau(), &inp, true)?;
    let total = e.terms.total();
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            dump: dump(&e.bundle, &e.terms),
        });
    }
    let grads = e.grads.expect("requested");
    state
        .optimizer
        .step(&mut state.online, &mut state.temperature, &grads.encoders, grads.log_inv_tau)?;
    if let Some((um, vm)) = &inp.momentum {
        momentum_update_in_place(&state.online, &mut state.momentum)?;
        state.queue.push_batch(um, vm, &batch.labels)?;
    }
    state.step += 1;
    Ok(StepMetrics {
        step: state.step,
        loss_i2t: e.terms.i2t,
        loss_t2i: e.terms.t2i,
        loss_mom_i2t: e.terms.mom_i2t,
        loss_mom_t2i: e.terms.mom_t2i,
        total,
        tau: state.temperature.tau(),
        queue_len: state.queue.len(),
        warmup: e.terms.warmup,
        grad_norm_image: grads.encoders.image.sq_norm().sqrt(),
        grad_norm_text: grads.encoders.text.sq_norm().sqrt(),
        grad_log_inv_tau: grads.log_inv_tau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub num_params: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-4)`; the floor keeps vanishing gradients from
/// turning round-off into huge relative errors.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Compares the analytic total-loss gradient for every online parameter and
/// `log(1/τ)` with central differences of step `epsilon`. Momentum features
/// and the queue are held fixed, as they carry no gradient.
pub fn grad_check(
    state: &TrainState,
    batch: &Batch,
    epsilon: f64,
    vocab: &LabelVocabulary,
    settings: StepSettings,
) -> Result<GradCheckReport> {
    let snap = state.queue.snapshot();
    let momentum = if settings.queue { Some(momentum_features(state, batch)?) } else { None };
    let inp = LossInputs {
        batch,
        vocab,
        settings: StepSettings {
            learn_temperature: true,
            ..settings
        },
        momentum,
        queue: settings.queue.then_some(&snap),
        step: state.step,
    };
    let l0 = state.temperature.log_inv_tau();
    let e = evaluate(&state.online, l0, &inp, true)?;
    let g = e.grads.expect("requested");
    let f = |p: &EncoderPair, l: f64| -> Result<f64> { Ok(evaluate(p, l, &inp, false)?.terms.total()) };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        num_params: state.online.num_params() + 1,
    };
    let mut record = |name: String, a: f64, n: f64| {
        let r = relative_error(a, n);
        if r > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = r;
            report.worst_param = name;
            report.analytic = a;
            report.numeric = n;
        }
    };
    fn enc(p: &mut EncoderPair, tower: usize) -> &mut EncoderParams {
        if tower == 0 {
            &mut p.image
        } else {
            &mut p.text
        }
    }
    let mut p = state.online.clone();
    for tower in 0..2 {
        let n = if tower == 0 { p.image.num_params() } else { p.text.num_params() };
        for k in 0..n {
            let x = enc(&mut p, tower).param(k);
            enc(&mut p, tower).set_param(k, x + epsilon);
            let up = f(&p, l0)?;
            enc(&mut p, tower).set_param(k, x - epsilon);
            let down = f(&p, l0)?;
            enc(&mut p, tower).set_param(k, x);
            let analytic = if tower == 0 { g.encoders.image.param(k) } else { g.encoders.text.param(k) };
            let name = format!("{}[{k}]", if tower == 0 { "image" } else { "text" });
            record(name, analytic, (up - down) / (2.0 * epsilon));
        }
    }
    let numeric = (f(&p, l0 + epsilon)? - f(&p, l0 - epsilon)?) / (2.0 * epsilon);
    record("log_inv_tau".into(), g.log_inv_tau, numeric);
    Ok(report)
}

/// Generates `cfg.data` with `seed`, takes `warm_steps` training steps so the
/// queue holds entries, then checks the gradient on the next batch.
pub fn grad_check_run(
    cfg: &Config,
    seed: u64,
    warm_steps: u64,
    epsilon: f64,
    vocab: &LabelVocabulary,
    rules: &RuleSet,
) -> Result<GradCheckReport> {
    let data = DataConfig {
        seed,
        ..cfg.data.clone()
    };
    let ds = generate_dataset(&data, vocab, rules)?;
    let mut st = TrainState::init(cfg, cfg.data.input_dim, seed)?;
    let src = BatchSource::new(&ds, cfg, seed)?;
    let s = StepSettings::from(cfg);
    for t in 0..warm_steps {
        train_step(&mut st, &src.batch_at(t), vocab, s)?;
    }
    grad_check(&st, &src.batch_at(warm_steps), epsilon, vocab, s)
}

/// Iterates a training split in shuffled epochs of `⌊n/B⌋` full batches. The
/// batch for global step `t` depends only on the seed and `t`, so resuming from
/// a checkpoint replays the same sequence.
pub struct BatchSource {
    images: Matf,
    texts: Matf,
    labels: Vec<MultiHotLabel>,
    batch_size: usize,
    augment_noise: f64,
    seed: u64,
}

impl BatchSource {
    pub fn new(data: &Dataset, cfg: &Config, seed: u64) -> Result<Self> {
        let n = data.len();
        let b = cfg.experiment.batch_size;
        if n < b {
            return Err(Error::Config(format!("{n} training records cannot fill a batch of {b}")));
        }
        let d = data.records[0].image.dim();
        let images = Matf::from_rows(&data.records.iter().map(|r| r.image.as_slice()).collect::<Vec<_>>(), d)?;
        let texts: Vec<Vec<f64>> = data.records.iter().map(|r| cfg.model.text.featurize(&r.text).into_inner()).collect();
        Ok(Self {
            images,
            texts: Matf::from_rows(&texts, cfg.model.text.hash_dim)?,
            labels: data.labels(),
            batch_size: b,
            augment_noise: cfg.data.augment_noise,
            seed,
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        (self.labels.len() / self.batch_size) as u64
    }

    pub fn batch_at(&self, step: u64) -> Batch {
        let spe = self.steps_per_epoch();
        let (epoch, k) = (step / spe, (step % spe) as usize);
        let order = epoch_order(self.labels.len(), self.seed, epoch);
        let idx = &order[k * self.batch_size..(k + 1) * self.batch_size];
        let mut images = Matf::zeros(idx.len(), self.images.cols());
        for (r, &i) in idx.iter().enumerate() {
            let x = augment(self.images.row(i), self.seed, epoch, i as u64, self.augment_noise);
            images.row_mut(r).copy_from_slice(&x);
        }
        Batch {
            images,
            texts: self.texts.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DataConfig};
    use crate::reportconv::RuleSet;

    fn small_config() -> Config {
        Config::grad_check_toy()
    }

    fn setup(c: &Config, seed: u64) -> (LabelVocabulary, TrainState, BatchSource) {
        let v = LabelVocabulary::default_33();
        let r = RuleSet::bundled(&v).unwrap();
        let ds = generate_dataset(&DataConfig { seed, ..c.data.clone() }, &v, &r).unwrap();
        let st = TrainState::init(c, c.data.input_dim, seed).unwrap();
        let src = BatchSource::new(&ds, c, seed).unwrap();
        (v, st, src)
    }

    #[test]
    fn identical_pairs_collapse_in_batch_terms() {
        let c = small_config();
        let (v, mut st, src) = setup(&c, 1);
        let b0 = src.batch_at(0);
        let same = Batch {
            images: Matf::from_fn(4, 6, |_, j| b0.images.get(0, j)),
            texts: Matf::from_fn(4, 12, |_, j| b0.texts.get(0, j)),
            labels: vec![v.label_from_indices(&[2]).unwrap(); 4],
        };
        // fill the queue with something else first
        train_step(&mut st, &src.batch_at(1), &v, StepSettings::from(&c)).unwrap();
        let before = st.online.clone();
        let m = train_step(&mut st, &same, &v, StepSettings::from(&c)).unwrap();
        assert_eq!((m.loss_i2t, m.loss_t2i), (0.0, 0.0));
        assert!(!m.warmup);
        assert_ne!(st.online, before);

        // without the queue nothing can move the encoders
        let mut c2 = c.clone();
        c2.queue.enabled = false;
        let before = st.online.clone();
        let m = train_step(&mut st, &same, &v, StepSettings::from(&c2)).unwrap();
        assert_eq!(m.total, 0.0);
        assert_eq!(m.grad_norm_image, 0.0);
        // only the decoupled decay acts
        assert_ne!(st.online, before);
    }

    #[test]
    fn warmup_then_queue() {
        let c = small_config();
        let (v, mut st, src) = setup(&c, 2);
        let m = train_step(&mut st, &src.batch_at(0), &v, StepSettings::from(&c)).unwrap();
        assert!(m.warmup);
        assert_eq!((m.loss_mom_i2t, m.queue_len), (0.0, 6));
        let m = train_step(&mut st, &src.batch_at(1), &v, StepSettings::from(&c)).unwrap();
        assert!(!m.warmup && m.loss_mom_i2t > 0.0);
        assert_eq!(m.queue_len, 9);
        assert_eq!(st.momentum.t, 2);
        assert!(train_step(&mut st, &Batch::new(Matf::zeros(1, 6), Matf::zeros(1, 12), vec![v.empty_label()]).unwrap(), &v, StepSettings::from(&c)).is_err());
    }

    #[test]
    fn deterministic_steps() {
        let c = small_config();
        let run = || {
            let (v, mut st, src) = setup(&c, 3);
            (0..4).map(|t| train_step(&mut st, &src.batch_at(t), &v, StepSettings::from(&c)).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sanity_descent() {
        let mut c = small_config();
        c.optimizer.lr = 1e-2;
        c.queue.enabled = false;
        let (v, mut st, src) = setup(&c, 4);
        let b = src.batch_at(0);
        let b = Batch::new(b.images.select_rows(&[0, 1, 2, 3]), b.texts.select_rows(&[0, 1, 2, 3]), b.labels[..4].to_vec()).unwrap();
        let s = StepSettings::from(&c);
        let before = loss_and_grads(&st, &b, &v, s).unwrap().0.total();
        train_step(&mut st, &b, &v, s).unwrap();
        let after = loss_and_grads(&st, &b, &v, s).unwrap().0.total();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let c = small_config();
        let (v, mut st, src) = setup(&c, 5);
        let b = src.batch_at(0);
        st.online.image.set_param(0, f64::NAN);
        match train_step(&mut st, &b, &v, StepSettings::from(&c)) {
            Err(Error::NonFiniteLoss { step: 0, dump }) => assert!(dump.contains("tau")),
            other => panic!("expected a non-finite loss report, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_resume_is_bit_exact() {
        let c = small_config();
        let (v, mut a, src) = setup(&c, 6);
        let s = StepSettings::from(&c);
        for t in 0..3 {
            train_step(&mut a, &src.batch_at(t), &v, s).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        a.save(&path).unwrap();
        let mut b = TrainState::load(&path).unwrap();
        assert_eq!(a, b);
        for t in 3..8 {
            let ma = train_step(&mut a, &src.batch_at(t), &v, s).unwrap();
            let mb = train_step(&mut b, &src.batch_at(t), &v, s).unwrap();
            assert_eq!(ma, mb);
        }
        assert_eq!(a, b);
        std::fs::write(&path, "{\"format\":\"other\",\"version\":1,\"state\":null}").unwrap();
        assert!(TrainState::load(&path).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = small_config();
        let v = LabelVocabulary::default_33();
        let r = RuleSet::bundled(&v).unwrap();
        for seed in 0..3 {
            let rep = grad_check_run(&c, 10 + seed, 2, 1e-5, &v, &r).unwrap();
            assert!(rep.max_rel_error <= 1e-6, "{rep:?}");
        }
    }

    #[test]
    fn batches_cover_epoch_without_replacement() {
        let c = small_config();
        let (_, _, src) = setup(&c, 7);
        let spe = src.steps_per_epoch();
        assert_eq!(spe, 40 / 6);
        assert_eq!(src.batch_at(0), src.batch_at(0));
        assert_ne!(src.batch_at(0), src.batch_at(spe));
    }
}
