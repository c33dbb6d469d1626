//! Training runs, evaluation and the label-entropy sweep.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::config::{Config, Variant};
use crate::data::{generate_dataset, Dataset};
use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::evalkit::{
    auc, class_recall_at_1, linear_probe, map_score, relevance_recall_at_1, retrieval_metrics, zero_shot_scores,
    ProbeReport,
};
use crate::labelkit::{mean_label_entropy, LabelVocabulary, MarginalStats};
use crate::numerics::{pairwise_cosine, Matf};
use crate::reportconv::RuleSet;
use crate::trainer::{train_step, BatchSource, StepSettings, TrainState};

/// Metrics for one evaluated epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub train_loss_in_batch: f64,
    pub train_loss_queue: f64,
    pub warmup_steps: usize,
    pub tau: f64,
    pub i2t_recall_at_1: f64,
    pub i2t_recall_at_5: f64,
    pub i2t_mean_rank: f64,
    pub t2i_recall_at_1: f64,
    pub t2i_recall_at_5: f64,
    pub t2i_mean_rank: f64,
    /// Mean of the two directions.
    pub recall_at_1: f64,
    /// Recall@1 (mean of directions) on galleries whose pairs all carry distinct labels.
    pub distinct_recall_at_1: f64,
    pub distinct_i2t_recall_at_1: f64,
    pub distinct_t2i_recall_at_1: f64,
    /// In-batch recall@1 (mean of directions) counting any same-label candidate as a hit.
    pub label_recall_at_1: f64,
    /// Prompt-to-image recall@1 averaged over categories.
    pub prompt_recall_at_1: f64,
    pub zero_shot_auc: f64,
    pub zero_shot_map: f64,
    pub probe: Option<ProbeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub variant: Option<Variant>,
    pub seed: u64,
    pub mle_target: Option<f64>,
    /// Mean label entropy of the generated training labels.
    pub mle_achieved: f64,
    pub history: Vec<EpochMetrics>,
}

impl RunOutcome {
    pub fn last(&self) -> &EpochMetrics {
        self.history.last().expect("at least one evaluation")
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    code_version: &'a str,
    seed: u64,
    variant: Option<Variant>,
    mle_target: Option<f64>,
    deterministic: bool,
    files: [&'a str; 4],
}

/// Projection outputs, one row per input.
fn project(p: &EncoderParams, xs: &Matf) -> Result<Matf> {
    let d = p.dims().proj_dim;
    let mut out = Matf::zeros(xs.rows(), d);
    for i in 0..xs.rows() {
        let (f, _) = crate::encoders::forward(p, xs.row(i))?;
        out.row_mut(i).copy_from_slice(&f);
    }
    Ok(out)
}

fn extract(p: &EncoderParams, xs: &Matf) -> Matf {
    let h = p.dims().hidden_dim;
    let mut out = Matf::zeros(xs.rows(), h);
    for i in 0..xs.rows() {
        out.row_mut(i).copy_from_slice(&p.extract(xs.row(i)));
    }
    out
}

fn image_matrix(ds: &Dataset) -> Result<Matf> {
    let d = ds.records[0].image.dim();
    Matf::from_rows(&ds.records.iter().map(|r| r.image.as_slice()).collect::<Vec<_>>(), d)
}

fn text_matrix(ds: &Dataset, cfg: &Config) -> Result<Matf> {
    let rows: Vec<Vec<f64>> = ds.records.iter().map(|r| cfg.model.text.featurize(&r.text).into_inner()).collect();
    Matf::from_rows(&rows, cfg.model.text.hash_dim)
}

fn gold(ds: &Dataset) -> Vec<Vec<bool>> {
    ds.records.iter().map(|r| r.label.bits().to_vec()).collect()
}

/// Fixed evaluation inputs, computed once per run.
pub struct EvalSet {
    galleries: Vec<Vec<usize>>,
    images: Matf,
    texts: Matf,
    gold: Vec<Vec<bool>>,
    labels: Vec<crate::labelkit::MultiHotLabel>,
    prompts: Matf,
    probe_train: Option<(Matf, Vec<Vec<bool>>)>,
}

impl EvalSet {
    pub fn new(cfg: &Config, train: &Dataset, test: &Dataset, rules: &RuleSet, vocab: &LabelVocabulary) -> Result<Self> {
        let prompts: Vec<Vec<f64>> = (0..vocab.len())
            .map(|c| {
                let text = rules.phrases_for(c).into_iter().next().unwrap_or_default();
                cfg.model.text.featurize(&text).into_inner()
            })
            .collect();
        let probe_train = if cfg.experiment.linear_probe {
            let n = train.len().min(cfg.experiment.probe_train_limit);
            let sub = Dataset {
                records: train.records[..n].to_vec(),
                ..train.clone()
            };
            Some((image_matrix(&sub)?, gold(&sub)))
        } else {
            None
        };
        Ok(Self {
            galleries: distinct_label_galleries(test, cfg.experiment.batch_size),
            images: image_matrix(test)?,
            texts: text_matrix(test, cfg)?,
            gold: gold(test),
            labels: test.labels(),
            prompts: Matf::from_rows(&prompts, cfg.model.text.hash_dim)?,
            probe_train,
        })
    }
}

/// Splits record indices into galleries of at most `cap` pairs with pairwise
/// distinct labels: gallery `k` holds the `k`-th occurrence of every label
/// (in record order). Galleries with fewer than two pairs are dropped.
pub fn distinct_label_galleries(ds: &Dataset, cap: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<(&crate::labelkit::MultiHotLabel, Vec<usize>)> = Vec::new();
    for (i, r) in ds.records.iter().enumerate() {
        match groups.iter_mut().find(|(l, _)| **l == r.label) {
            Some((_, g)) => g.push(i),
            None => groups.push((&r.label, vec![i])),
        }
    }
    let depth = groups.iter().map(|(_, g)| g.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for k in 0..depth {
        let layer: Vec<usize> = groups.iter().filter_map(|(_, g)| g.get(k).copied()).collect();
        for chunk in layer.chunks(cap.max(2)) {
            if chunk.len() >= 2 {
                out.push(chunk.to_vec());
            }
        }
    }
    out
}

/// Held-out retrieval in chunks of the batch size, prompt-based zero-shot
/// classification and (optionally) a linear probe on extractor features.
pub fn evaluate_state(state: &TrainState, cfg: &Config, eval: &EvalSet, with_probe: bool) -> Result<EpochMetrics> {
    let u = project(&state.online.image, &eval.images)?;
    let v = project(&state.online.text, &eval.texts)?;
    let b = cfg.experiment.batch_size;
    let n = u.rows();
    let mut acc = [0.0f64; 7];
    let mut chunks = 0usize;
    let mut start = 0;
    while start + 2 <= n {
        let end = (start + b).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let z = pairwise_cosine(&u.select_rows(&idx), &v.select_rows(&idx))?;
        let r = retrieval_metrics(&z)?;
        let (li, lt) = relevance_recall_at_1(&z, |a, c| eval.labels[idx[a]] == eval.labels[idx[c]])?;
        let w = idx.len() as f64;
        for (a, x) in acc.iter_mut().zip([
            r.i2t.recall_at_1,
            r.i2t.recall_at_5,
            r.i2t.mean_rank,
            r.t2i.recall_at_1,
            r.t2i.recall_at_5,
            r.t2i.mean_rank,
            0.5 * (li + lt),
        ]) {
            *a += w * x;
        }
        chunks += idx.len();
        start = end;
    }
    if chunks == 0 {
        return Err(Error::DegenerateSplit("test split smaller than 2 records".into()));
    }
    let acc: Vec<f64> = acc.iter().map(|a| a / chunks as f64).collect();

    let (mut di, mut dt, mut dn) = (0.0, 0.0, 0usize);
    for g in &eval.galleries {
        let r = retrieval_metrics(&pairwise_cosine(&u.select_rows(g), &v.select_rows(g))?)?;
        di += g.len() as f64 * r.i2t.recall_at_1;
        dt += g.len() as f64 * r.t2i.recall_at_1;
        dn += g.len();
    }
    let (di, dt) = if dn > 0 { (di / dn as f64, dt / dn as f64) } else { (f64::NAN, f64::NAN) };

    let prompts = project(&state.online.text, &eval.prompts)?;
    let table = zero_shot_scores(&u, &prompts, eval.gold.clone())?;
    let zs_auc = auc(&table)?.mean;
    let zs_map = map_score(&table)?.mean;
    let prompt_r1 = class_recall_at_1(&table)?.mean;

    let probe = match (&eval.probe_train, with_probe) {
        (Some((x, y)), true) => {
            let tr = extract(&state.online.image, x);
            let te = extract(&state.online.image, &eval.images);
            Some(linear_probe((&tr, y), (&te, &eval.gold), &cfg.experiment.probe)?)
        }
        _ => None,
    };
    Ok(EpochMetrics {
        epoch: 0,
        step: state.step,
        train_loss: 0.0,
        train_loss_in_batch: 0.0,
        train_loss_queue: 0.0,
        warmup_steps: 0,
        tau: state.temperature.tau(),
        i2t_recall_at_1: acc[0],
        i2t_recall_at_5: acc[1],
        i2t_mean_rank: acc[2],
        t2i_recall_at_1: acc[3],
        t2i_recall_at_5: acc[4],
        t2i_mean_rank: acc[5],
        recall_at_1: 0.5 * (acc[0] + acc[3]),
        distinct_recall_at_1: 0.5 * (di + dt),
        distinct_i2t_recall_at_1: di,
        distinct_t2i_recall_at_1: dt,
        label_recall_at_1: acc[6],
        prompt_recall_at_1: prompt_r1,
        zero_shot_auc: zs_auc,
        zero_shot_map: zs_map,
        probe,
    })
}

/// Trains one model on `train`, evaluating on `test`. When `out` is given the
/// run directory receives the effective config, the manifest, per-epoch
/// metrics (JSONL), a summary CSV and checkpoints.
pub fn train_run(
    cfg: &Config,
    train: &Dataset,
    test: &Dataset,
    vocab: &LabelVocabulary,
    rules: &RuleSet,
    out: Option<&Path>,
) -> Result<(TrainState, Vec<EpochMetrics>)> {
    let seed = cfg.experiment.seed;
    let src = BatchSource::new(train, cfg, seed)?;
    let eval = EvalSet::new(cfg, train, test, rules, vocab)?;
    let mut state = TrainState::init(cfg, train.records[0].image.dim(), seed)?;
    let settings = StepSettings::from(cfg);
    let mut metrics_file = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.json"), cfg.to_json()?)?;
            Some(fs::File::create(dir.join("metrics.jsonl"))?)
        }
        None => None,
    };
    let spe = src.steps_per_epoch();
    let epochs = cfg.experiment.epochs;
    let mut history = Vec::new();
    for epoch in 1..=epochs {
        let (mut total, mut in_batch, mut queue, mut warm) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..spe {
            let batch = src.batch_at(state.step);
            let m = train_step(&mut state, &batch, vocab, settings)?;
            total += m.total;
            in_batch += m.loss_i2t + m.loss_t2i;
            queue += m.loss_mom_i2t + m.loss_mom_t2i;
            warm += m.warmup as usize;
        }
        let last = epoch == epochs;
        if epoch % cfg.experiment.eval_every == 0 || last {
            let mut em = evaluate_state(&state, cfg, &eval, last)?;
            em.epoch = epoch;
            em.train_loss = total / spe as f64;
            em.train_loss_in_batch = in_batch / spe as f64;
            em.train_loss_queue = queue / spe as f64;
            em.warmup_steps = warm;
            debug!("epoch {epoch}: loss {:.4} r@1 {:.4} zs-auc {:.4}", em.train_loss, em.recall_at_1, em.zero_shot_auc);
            if let Some(f) = metrics_file.as_mut() {
                serde_json::to_writer(&mut *f, &em)?;
                f.write_all(b"\n")?;
            }
            history.push(em);
        }
        if let Some(dir) = out {
            let every = cfg.experiment.checkpoint_every;
            if every > 0 && epoch % every == 0 {
                state.save(&dir.join(format!("checkpoint-epoch{epoch:03}.json")))?;
            }
        }
    }
    if let Some(dir) = out {
        state.save(&dir.join("checkpoint.json"))?;
        write_summary(&dir.join("summary.csv"), &history)?;
    }
    Ok((state, history))
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    epoch: usize,
    step: u64,
    train_loss: f64,
    tau: f64,
    recall_at_1: f64,
    distinct_recall_at_1: f64,
    label_recall_at_1: f64,
    prompt_recall_at_1: f64,
    i2t_recall_at_1: f64,
    t2i_recall_at_1: f64,
    i2t_recall_at_5: f64,
    t2i_recall_at_5: f64,
    zero_shot_auc: f64,
    zero_shot_map: f64,
    probe_auc: Option<f64>,
    probe_map: Option<f64>,
}

fn write_summary(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for m in history {
        w.serialize(SummaryRow {
            epoch: m.epoch,
            step: m.step,
            train_loss: m.train_loss,
            tau: m.tau,
            recall_at_1: m.recall_at_1,
            distinct_recall_at_1: m.distinct_recall_at_1,
            label_recall_at_1: m.label_recall_at_1,
            prompt_recall_at_1: m.prompt_recall_at_1,
            i2t_recall_at_1: m.i2t_recall_at_1,
            t2i_recall_at_1: m.t2i_recall_at_1,
            i2t_recall_at_5: m.i2t_recall_at_5,
            t2i_recall_at_5: m.t2i_recall_at_5,
            zero_shot_auc: m.zero_shot_auc,
            zero_shot_map: m.zero_shot_map,
            probe_auc: m.probe.as_ref().map(|p| p.test_auc),
            probe_map: m.probe.as_ref().map(|p| p.test_map),
        })?;
    }
    w.flush()?;
    Ok(())
}

fn write_manifest(dir: &Path, cfg: &Config, variant: Option<Variant>) -> Result<()> {
    let m = Manifest {
        code_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.experiment.seed,
        variant,
        mle_target: cfg.data.mle_target,
        deterministic: true,
        files: ["config.json", "metrics.jsonl", "summary.csv", "checkpoint.json"],
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn achieved_mle(ds: &Dataset, vocab: &LabelVocabulary) -> Result<f64> {
    mean_label_entropy(&MarginalStats::from_labels(&ds.labels())?, vocab)
}

/// Generates data from `cfg.data` (with its seed) and trains one model.
pub fn run_experiment(
    cfg: &Config,
    vocab: &LabelVocabulary,
    rules: &RuleSet,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    let ds = generate_dataset(&cfg.data, vocab, rules)?;
    let (train, test) = ds.split(cfg.data.test_fraction)?;
    let (_, history) = train_run(cfg, &train, &test, vocab, rules, out)?;
    if let Some(dir) = out {
        write_manifest(dir, cfg, None)?;
    }
    Ok(RunOutcome {
        variant: None,
        seed: cfg.experiment.seed,
        mle_target: cfg.data.mle_target,
        mle_achieved: achieved_mle(&train, vocab)?,
        history,
    })
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mle_target: f64,
    pub mle_achieved: f64,
    pub seed: u64,
    pub variant: Variant,
    pub recall_at_1: f64,
    pub i2t_recall_at_1: f64,
    pub t2i_recall_at_1: f64,
    pub distinct_recall_at_1: f64,
    pub label_recall_at_1: f64,
    pub prompt_recall_at_1: f64,
    pub zero_shot_auc: f64,
    pub zero_shot_map: f64,
    pub probe_auc: Option<f64>,
    pub probe_map: Option<f64>,
}

pub fn sweep_dir_name(target: f64) -> String {
    format!("mle_{target:.3}")
}

/// Trains every configured variant for every (mLE target, seed) pair. Within
/// a pair all variants share the same data and initialization. With `out`,
/// each target gets its own directory of runs plus a sweep-level `sweep.csv`.
pub fn run_sweep(cfg: &Config, vocab: &LabelVocabulary, rules: &RuleSet, out: Option<&Path>) -> Result<Vec<SweepRow>> {
    let e = &cfg.experiment;
    if e.mle_targets.is_empty() || e.seeds.is_empty() || e.variants.is_empty() {
        return Err(Error::Config("sweep needs targets, seeds and variants".into()));
    }
    let mut rows = Vec::new();
    for &target in &e.mle_targets {
        for &seed in &e.seeds {
            let mut c = cfg.clone();
            c.data.mle_target = Some(target);
            c.data.seed = seed;
            c.experiment.seed = seed;
            let ds = generate_dataset(&c.data, vocab, rules)?;
            let (train, test) = ds.split(c.data.test_fraction)?;
            let mle = achieved_mle(&train, vocab)?;
            for &variant in &e.variants {
                let vc = variant.apply(&c);
                let dir: Option<PathBuf> =
                    out.map(|o| o.join(sweep_dir_name(target)).join(format!("seed{seed}_{}", variant.name())));
                let (_, history) = train_run(&vc, &train, &test, vocab, rules, dir.as_deref())?;
                if let Some(d) = &dir {
                    write_manifest(d, &vc, Some(variant))?;
                }
                let last = history.last().expect("evaluated");
                info!(
                    "mle {target:.3} seed {seed} {:>8}: r@1 {:.4} zs-auc {:.4}",
                    variant.name(),
                    last.recall_at_1,
                    last.zero_shot_auc
                );
                rows.push(SweepRow {
                    mle_target: target,
                    mle_achieved: mle,
                    seed,
                    variant,
                    recall_at_1: last.recall_at_1,
                    i2t_recall_at_1: last.i2t_recall_at_1,
                    t2i_recall_at_1: last.t2i_recall_at_1,
                    distinct_recall_at_1: last.distinct_recall_at_1,
                    label_recall_at_1: last.label_recall_at_1,
                    prompt_recall_at_1: last.prompt_recall_at_1,
                    zero_shot_auc: last.zero_shot_auc,
                    zero_shot_map: last.zero_shot_map,
                    probe_auc: last.probe.as_ref().map(|p| p.test_auc),
                    probe_map: last.probe.as_ref().map(|p| p.test_map),
                });
            }
        }
    }
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        fs::write(o.join("config.json"), cfg.to_json()?)?;
        let mut w = csv::Writer::from_path(o.join("sweep.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(rows)
}

/// Number of seeds at `target` where variant `a` scores at least as well as `b`.
pub fn wins(rows: &[SweepRow], target: f64, a: Variant, b: Variant, metric: impl Fn(&SweepRow) -> f64) -> (usize, usize) {
    let pick = |v: Variant, seed: u64| {
        rows.iter()
            .find(|r| r.mle_target == target && r.variant == v && r.seed == seed)
            .map(&metric)
    };
    let mut seeds: Vec<u64> = rows.iter().filter(|r| r.mle_target == target).map(|r| r.seed).collect();
    seeds.sort();
    seeds.dedup();
    let mut won = 0;
    let mut total = 0;
    for s in seeds {
        if let (Some(x), Some(y)) = (pick(a, s), pick(b, s)) {
            total += 1;
            won += (x >= y) as usize;
        }
    }
    (won, total)
}
