//! Retrieval and multi-label ranking metrics, linear probing and prompt-based
//! zero-shot scoring. Every metric depends on scores only through their order;
//! ties are resolved deterministically (lower index first for ranks, one half
//! per tied pair for AUC).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pairwise_cosine, Matf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub mean_rank: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub i2t: RetrievalMetrics,
    pub t2i: RetrievalMetrics,
}

/// 1-based rank of `target` among `scores`; earlier indices win ties.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < target))
        .count()
}

fn summarize(ranks: &[usize]) -> RetrievalMetrics {
    let n = ranks.len() as f64;
    RetrievalMetrics {
        recall_at_1: ranks.iter().filter(|&&r| r <= 1).count() as f64 / n,
        recall_at_5: ranks.iter().filter(|&&r| r <= 5).count() as f64 / n,
        mean_rank: ranks.iter().sum::<usize>() as f64 / n,
    }
}

/// Rank statistics of the diagonal. Rows of `z` are image queries (i2t);
/// columns are text queries (t2i).
pub fn retrieval_metrics(z: &Matf) -> Result<RetrievalReport> {
    if !z.is_square() || z.rows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "retrieval needs a non-empty square matrix, got {}x{}",
            z.rows(),
            z.cols()
        )));
    }
    let n = z.rows();
    let zt = z.transpose();
    let i2t: Vec<usize> = (0..n).map(|i| rank_of(z.row(i), i)).collect();
    let t2i: Vec<usize> = (0..n).map(|i| rank_of(zt.row(i), i)).collect();
    Ok(RetrievalReport {
        i2t: summarize(&i2t),
        t2i: summarize(&t2i),
    })
}

fn top1(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = j;
        }
    }
    best
}

/// Recall@1 when any candidate with `relevant(query, candidate)` counts as a
/// hit, not only the diagonal. Returns `(i2t, t2i)`; ties go to the lower index.
pub fn relevance_recall_at_1(z: &Matf, relevant: impl Fn(usize, usize) -> bool) -> Result<(f64, f64)> {
    if !z.is_square() || z.rows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "retrieval needs a non-empty square matrix, got {}x{}",
            z.rows(),
            z.cols()
        )));
    }
    let n = z.rows();
    let zt = z.transpose();
    let i2t = (0..n).filter(|&i| relevant(i, top1(z.row(i)))).count();
    let t2i = (0..n).filter(|&j| relevant(top1(zt.row(j)), j)).count();
    Ok((i2t as f64 / n as f64, t2i as f64 / n as f64))
}

/// Item-by-class scores with binary ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    scores: Matf,
    gold: Vec<Vec<bool>>,
}

impl ScoreTable {
    pub fn new(scores: Matf, gold: Vec<Vec<bool>>) -> Result<Self> {
        if gold.len() != scores.rows() || gold.iter().any(|g| g.len() != scores.cols()) {
            return Err(Error::ShapeMismatch(format!(
                "scores {}x{} vs gold with {} rows",
                scores.rows(),
                scores.cols(),
                gold.len()
            )));
        }
        Ok(Self { scores, gold })
    }

    pub fn scores(&self) -> &Matf {
        &self.scores
    }

    pub fn gold(&self) -> &[Vec<bool>] {
        &self.gold
    }

    pub fn classes(&self) -> usize {
        self.scores.cols()
    }

    fn column(&self, c: usize) -> (Vec<f64>, Vec<bool>) {
        let n = self.scores.rows();
        ((0..n).map(|i| self.scores.get(i, c)).collect(), (0..n).map(|i| self.gold[i][c]).collect())
    }
}

/// Per-class values (`None` for classes lacking a positive or a negative)
/// and their mean over evaluated classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
    pub skipped: Vec<usize>,
}

fn per_class(table: &ScoreTable, f: impl Fn(&[f64], &[bool]) -> f64) -> Result<ClassReport> {
    let mut per = Vec::with_capacity(table.classes());
    let mut skipped = Vec::new();
    for c in 0..table.classes() {
        let (s, g) = table.column(c);
        let pos = g.iter().filter(|&&b| b).count();
        if pos == 0 || pos == g.len() {
            skipped.push(c);
            per.push(None);
        } else {
            per.push(Some(f(&s, &g)));
        }
    }
    let vals: Vec<f64> = per.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(Error::DegenerateSplit("no class has both positives and negatives".into()));
    }
    Ok(ClassReport {
        mean: vals.iter().sum::<f64>() / vals.len() as f64,
        per_class: per,
        skipped,
    })
}

/// Mann-Whitney AUC from mid-ranks.
pub fn binary_auc(scores: &[f64], gold: &[bool]) -> f64 {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = mid;
        }
        i = j + 1;
    }
    let n_pos = gold.iter().filter(|&&g| g).count() as f64;
    let n_neg = n as f64 - n_pos;
    let r_pos: f64 = (0..n).filter(|&k| gold[k]).map(|k| ranks[k]).sum();
    (r_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Precision averaged over the ranks of the positives (descending score,
/// lower index first on ties).
pub fn average_precision(scores: &[f64], gold: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        if gold[i] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / hits as f64
}

pub fn auc(table: &ScoreTable) -> Result<ClassReport> {
    per_class(table, binary_auc)
}

pub fn map_score(table: &ScoreTable) -> Result<ClassReport> {
    per_class(table, average_precision)
}

/// Class-to-item retrieval: per class, 1 when the top-scoring item is a positive.
pub fn class_recall_at_1(table: &ScoreTable) -> Result<ClassReport> {
    per_class(table, |s, g| if g[top1(s)] { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub train_auc: f64,
    pub test_auc: f64,
    pub test_map: f64,
    pub iterations: usize,
}

/// Independent logistic regressions (one per class) on frozen features,
/// trained by full-batch gradient descent until the mean log-loss changes by
/// less than `tol` or `max_iter` is reached.
pub struct LinearProbe {
    pub weights: Matf,
    pub bias: Vec<f64>,
    pub iterations: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_loss(logit: f64, y: bool) -> f64 {
    // ln(1 + e^{-|x|}) + max(x, 0) - x·y
    let base = (-logit.abs()).exp().ln_1p() + logit.max(0.0);
    if y {
        base - logit
    } else {
        base
    }
}

impl LinearProbe {
    pub fn fit(feats: &Matf, gold: &[Vec<bool>], cfg: &ProbeConfig) -> Result<Self> {
        let (n, d) = (feats.rows(), feats.cols());
        if gold.len() != n || n == 0 {
            return Err(Error::LengthMismatch { left: n, right: gold.len() });
        }
        let c = gold[0].len();
        let any_mixed = (0..c).any(|k| {
            let p = gold.iter().filter(|g| g[k]).count();
            p > 0 && p < n
        });
        if !any_mixed {
            return Err(Error::DegenerateSplit("training split has a single class everywhere".into()));
        }
        let mut w = Matf::zeros(c, d);
        let mut b = vec![0.0; c];
        let mut prev = f64::INFINITY;
        let mut iterations = 0;
        for it in 0..cfg.max_iter {
            iterations = it + 1;
            let mut gw = Matf::zeros(c, d);
            let mut gb = vec![0.0; c];
            let mut loss = 0.0;
            for i in 0..n {
                let x = feats.row(i);
                let logits = w.matvec(x);
                for k in 0..c {
                    let logit = logits[k] + b[k];
                    loss += log_loss(logit, gold[i][k]);
                    let r = sigmoid(logit) - if gold[i][k] { 1.0 } else { 0.0 };
                    gb[k] += r;
                    for (g, xv) in gw.row_mut(k).iter_mut().zip(x) {
                        *g += r * xv;
                    }
                }
            }
            let scale = 1.0 / (n * c) as f64;
            loss *= scale;
            for (wv, g) in w.values_mut().iter_mut().zip(gw.values()) {
                *wv -= cfg.lr * g * scale;
            }
            for (bv, g) in b.iter_mut().zip(&gb) {
                *bv -= cfg.lr * g * scale;
            }
            if (prev - loss).abs() < cfg.tol {
                break;
            }
            prev = loss;
        }
        Ok(Self { weights: w, bias: b, iterations })
    }

    pub fn scores(&self, feats: &Matf) -> Matf {
        let c = self.bias.len();
        let mut out = Matf::zeros(feats.rows(), c);
        for i in 0..feats.rows() {
            let logits = self.weights.matvec(feats.row(i));
            for k in 0..c {
                out.set(i, k, logits[k] + self.bias[k]);
            }
        }
        out
    }
}

/// Fits on the training split and reports AUC/mAP on the test split.
pub fn linear_probe(
    train: (&Matf, &[Vec<bool>]),
    test: (&Matf, &[Vec<bool>]),
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let probe = LinearProbe::fit(train.0, train.1, cfg)?;
    let tr = ScoreTable::new(probe.scores(train.0), train.1.to_vec())?;
    let te = ScoreTable::new(probe.scores(test.0), test.1.to_vec())?;
    Ok(ProbeReport {
        train_auc: auc(&tr)?.mean,
        test_auc: auc(&te)?.mean,
        test_map: map_score(&te)?.mean,
        iterations: probe.iterations,
    })
}

/// Cosine scores of each image feature against each class prompt feature.
pub fn zero_shot_scores(image_feats: &Matf, prompt_feats: &Matf, gold: Vec<Vec<bool>>) -> Result<ScoreTable> {
    ScoreTable::new(pairwise_cosine(image_feats, prompt_feats)?, gold)
}
