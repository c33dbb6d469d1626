//! Synthetic paired data with controllable label entropy.
//!
//! `K` latent classes each draw one multi-hot label from per-category
//! Bernoulli marginals. A record picks a class uniformly; its "image" is the
//! sum of the label's category prototypes plus a class offset and Gaussian
//! noise, and its report joins one randomly chosen trigger phrase per active
//! category, so the bundled converter recovers the label from the text.
//!
//! Each record also carries one label-free acquisition detail (eye side,
//! exposure, framing) that shows up in both modalities: a prototype added to
//! the image and a phrase in the report that no rule matches.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelkit::{mean_entropy_of_proportions, LabelVocabulary, MarginalStats, MultiHotLabel};
use crate::numerics::Vecf;
use crate::reportconv::{convert, Report, RuleSet};

/// Bisection stops once the achieved mean label entropy is this close to the target.
pub const CALIBRATION_TOL: f64 = 1e-3;

/// Deterministic generator keyed by a seed and a path of counters
/// (purpose, epoch, index, ...). Independent streams never share state.
pub fn derived_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    // fold the path into the remaining 24 bytes with a splitmix-style mixer
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for (k, &p) in path.iter().enumerate() {
        h = splitmix(h ^ p.wrapping_add(k as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    key[8..16].copy_from_slice(&h.to_le_bytes());
    key[16..24].copy_from_slice(&splitmix(h).to_le_bytes());
    key[24..32].copy_from_slice(&(path.len() as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_CLASSES: u64 = 1;
const STREAM_RECORDS: u64 = 2;
pub(crate) const STREAM_AUGMENT: u64 = 3;
pub(crate) const STREAM_SHUFFLE: u64 = 4;
pub(crate) const STREAM_INIT: u64 = 5;
const STREAM_DETAILS: u64 = 6;

/// Report phrases for the acquisition details; none of them trigger a rule.
pub const DETAIL_PHRASES: [&str; 8] = [
    "左眼",
    "右眼",
    "曝光偏暗",
    "曝光偏亮",
    "视盘居中",
    "拍摄角度偏上",
    "拍摄角度偏下",
    "周边成像欠清",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Labels are produced by running the converter on each report.
    Consistent,
    /// Labels are copied from the generator.
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub size: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    /// Std of per-record Gaussian image noise.
    pub noise: f64,
    /// Std of the per-class prototype offset.
    pub class_spread: f64,
    /// Std of the per-epoch augmentation noise added during training.
    pub augment_noise: f64,
    /// Number of distinct acquisition details, at most `DETAIL_PHRASES.len()`; 0 disables them.
    pub detail_levels: usize,
    /// Norm scale of the image prototype of each detail.
    pub detail_scale: f64,
    /// Calibrate marginals to this mean label entropy. Takes precedence over `marginals`.
    pub mle_target: Option<f64>,
    /// Explicit per-category probabilities; the reference corpus proportions when absent.
    pub marginals: Option<Vec<f64>>,
    /// Fixed category sets, one per class, bypassing the marginals entirely.
    pub class_labels: Option<Vec<Vec<usize>>>,
    pub mode: LabelMode,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            size: 5000,
            num_classes: 64,
            input_dim: 32,
            noise: 0.5,
            class_spread: 0.5,
            augment_noise: 0.1,
            detail_levels: 8,
            detail_scale: 1.0,
            mle_target: None,
            marginals: None,
            class_labels: None,
            mode: LabelMode::Consistent,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub class: usize,
    pub image: Vecf,
    pub text: String,
    pub label: MultiHotLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub mode: LabelMode,
    pub marginals: Vec<f64>,
    pub class_labels: Vec<MultiHotLabel>,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<MultiHotLabel> {
        self.records.iter().map(|r| r.label.clone()).collect()
    }

    /// First `n - ⌈n·test_fraction⌉` records train, the rest test.
    pub fn split(&self, test_fraction: f64) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        let n_test = (n as f64 * test_fraction).ceil() as usize;
        if !(0.0..1.0).contains(&test_fraction) || n_test == 0 || n_test >= n {
            return Err(Error::DegenerateSplit(format!(
                "{n} records with test fraction {test_fraction}"
            )));
        }
        let part = |r: &[Record]| Dataset {
            mode: self.mode,
            marginals: self.marginals.clone(),
            class_labels: self.class_labels.clone(),
            records: r.to_vec(),
        };
        Ok((part(&self.records[..n - n_test]), part(&self.records[n - n_test..])))
    }

    /// One JSON object per record.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Marginals for concentration `alpha ∈ [0, 1]`: the normal category has
/// probability `1 − α/2`, every other category `α/2`. `α = 0` is fully
/// concentrated (entropy 0); `α = 1` is balanced (entropy ln 2).
pub fn concentration_marginals(alpha: f64, vocab: &LabelVocabulary) -> Vec<f64> {
    (0..vocab.len())
        .map(|c| {
            if c == vocab.normal_index() {
                1.0 - alpha / 2.0
            } else {
                alpha / 2.0
            }
        })
        .collect()
}

/// Bisection on the concentration parameter until the mean label entropy of
/// the marginals is within [`CALIBRATION_TOL`] of `target`.
pub fn calibrate_mle(target: f64, vocab: &LabelVocabulary) -> Result<Vec<f64>> {
    let hi_val = std::f64::consts::LN_2;
    if !(target > 0.0 && target <= hi_val) {
        return Err(Error::UnreachableTarget {
            target,
            lo: 0.0,
            hi: hi_val,
        });
    }
    let f = |a: f64| mean_entropy_of_proportions(&concentration_marginals(a, vocab));
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if (v - target).abs() <= CALIBRATION_TOL {
            return Ok(concentration_marginals(mid, vocab));
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (f(hi) - target).abs() <= CALIBRATION_TOL {
        return Ok(concentration_marginals(hi, vocab));
    }
    Err(Error::UnreachableTarget {
        target,
        lo: 0.0,
        hi: hi_val,
    })
}

fn resolve_marginals(cfg: &DataConfig, vocab: &LabelVocabulary) -> Result<Vec<f64>> {
    let m = match (&cfg.mle_target, &cfg.marginals) {
        (Some(t), _) => calibrate_mle(*t, vocab)?,
        (None, Some(m)) => m.clone(),
        (None, None) => MarginalStats::reference().proportions(),
    };
    if m.len() != vocab.len() {
        return Err(Error::Infeasible(format!(
            "{} marginals for {} categories",
            m.len(),
            vocab.len()
        )));
    }
    if m.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Infeasible("marginal outside [0, 1]".into()));
    }
    Ok(m)
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Report text for `label`: one phrase per active category, shuffled, joined by "，".
pub fn compose_report<R: Rng>(label: &MultiHotLabel, rules: &RuleSet, rng: &mut R) -> Result<String> {
    let mut parts = Vec::new();
    for c in label.set_indices() {
        let phrases = rules.phrases_for(c);
        let p = phrases
            .choose(rng)
            .ok_or_else(|| Error::Infeasible(format!("no trigger phrase for category {c}")))?;
        parts.push(p.clone());
    }
    parts.shuffle(rng);
    Ok(parts.join("，"))
}

pub fn generate_dataset(cfg: &DataConfig, vocab: &LabelVocabulary, rules: &RuleSet) -> Result<Dataset> {
    if cfg.num_classes < 2 || cfg.size == 0 || cfg.input_dim == 0 {
        return Err(Error::Config(format!(
            "need num_classes >= 2, size >= 1 and input_dim >= 1, got {}, {}, {}",
            cfg.num_classes, cfg.size, cfg.input_dim
        )));
    }
    if rules.vocab_len() != vocab.len() {
        return Err(Error::VocabMismatch(rules.vocab_len(), vocab.len()));
    }
    if cfg.detail_levels > DETAIL_PHRASES.len() {
        return Err(Error::Config(format!(
            "detail_levels {} exceeds {}",
            cfg.detail_levels,
            DETAIL_PHRASES.len()
        )));
    }
    let marginals = resolve_marginals(cfg, vocab)?;
    let d = cfg.input_dim;
    let scale = 1.0 / (d as f64).sqrt();

    let mut rng = derived_rng(cfg.seed, &[STREAM_CLASSES]);
    let prototypes: Vec<Vec<f64>> = (0..vocab.len()).map(|_| gaussian_vec(&mut rng, d, 1.0)).collect();
    let mut class_labels = Vec::with_capacity(cfg.num_classes);
    let mut class_protos = Vec::with_capacity(cfg.num_classes);
    if let Some(fixed) = &cfg.class_labels {
        if fixed.len() != cfg.num_classes {
            return Err(Error::Infeasible(format!(
                "{} fixed labels for {} classes",
                fixed.len(),
                cfg.num_classes
            )));
        }
    }
    for k in 0..cfg.num_classes {
        let bits: Vec<bool> = marginals.iter().map(|&p| rng.random::<f64>() < p).collect();
        let mut label = match &cfg.class_labels {
            Some(fixed) => vocab.label_from_indices(&fixed[k])?,
            None => MultiHotLabel::from_bits(bits),
        };
        if label.count() == 0 {
            label.set(vocab.others_index(), true);
        }
        let mut proto = gaussian_vec(&mut rng, d, cfg.class_spread);
        for c in label.set_indices() {
            for (p, q) in proto.iter_mut().zip(&prototypes[c]) {
                *p += q;
            }
        }
        class_labels.push(label);
        class_protos.push(proto);
    }

    let mut rng = derived_rng(cfg.seed, &[STREAM_DETAILS]);
    let details: Vec<Vec<f64>> = (0..cfg.detail_levels)
        .map(|_| gaussian_vec(&mut rng, d, cfg.detail_scale))
        .collect();

    let mut rng = derived_rng(cfg.seed, &[STREAM_RECORDS]);
    let mut records = Vec::with_capacity(cfg.size);
    for n in 0..cfg.size {
        let k = rng.random_range(0..cfg.num_classes);
        let noise = gaussian_vec(&mut rng, d, cfg.noise);
        let mut image: Vec<f64> = class_protos[k].iter().zip(&noise).map(|(p, e)| p + e).collect();
        let mut text = compose_report(&class_labels[k], rules, &mut rng)?;
        if cfg.detail_levels > 0 {
            let t = rng.random_range(0..cfg.detail_levels);
            for (x, q) in image.iter_mut().zip(&details[t]) {
                *x += q;
            }
            text = if rng.random::<bool>() {
                format!("{}，{text}", DETAIL_PHRASES[t])
            } else {
                format!("{text}，{}", DETAIL_PHRASES[t])
            };
        }
        image.iter_mut().for_each(|x| *x *= scale);
        let id = format!("r{n:06}");
        let label = match cfg.mode {
            LabelMode::Fast => class_labels[k].clone(),
            LabelMode::Consistent => {
                let report = Report::new(id.clone(), text.clone(), usize::MAX)?;
                convert(&report, rules, vocab)?
            }
        };
        records.push(Record {
            id,
            class: k,
            image: Vecf::new(image)?,
            text,
            label,
        });
    }
    Ok(Dataset {
        mode: cfg.mode,
        marginals,
        class_labels,
        records,
    })
}

/// Gaussian feature jitter for one record in one epoch; a pure function of its keys.
pub fn augment(image: &[f64], seed: u64, epoch: u64, index: u64, scale: f64) -> Vec<f64> {
    if scale == 0.0 {
        return image.to_vec();
    }
    let mut rng = derived_rng(seed, &[STREAM_AUGMENT, epoch, index]);
    let s = scale / (image.len() as f64).sqrt();
    image
        .iter()
        .map(|x| x + s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Sample order for one epoch, reseeded from the master seed.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derived_rng(seed, &[STREAM_SHUFFLE, epoch]));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelkit::{label_similarity, mean_label_entropy};
    use proptest::prelude::*;

    fn setup() -> (LabelVocabulary, RuleSet) {
        let v = LabelVocabulary::default_33();
        let r = RuleSet::bundled(&v).unwrap();
        (v, r)
    }

    #[test]
    fn calibration_endpoints_and_targets() {
        let (v, _) = setup();
        let m = calibrate_mle(std::f64::consts::LN_2, &v).unwrap();
        assert!(m.iter().all(|p| (p - 0.5).abs() < 0.05));
        assert!((mean_entropy_of_proportions(&m) - std::f64::consts::LN_2).abs() <= 1e-3);
        for t in [0.05, 0.075, 0.1, 0.125, 0.15] {
            let m = calibrate_mle(t, &v).unwrap();
            assert!((mean_entropy_of_proportions(&m) - t).abs() <= 1e-3);
        }
        assert!(calibrate_mle(0.0, &v).is_err());
        assert!(calibrate_mle(0.7, &v).is_err());
    }

    #[test]
    fn two_orthogonal_classes() {
        let (v, r) = setup();
        let cfg = DataConfig {
            size: 40,
            num_classes: 2,
            noise: 0.0,
            detail_levels: 0,
            class_labels: Some(vec![vec![3], vec![12]]),
            ..Default::default()
        };
        let ds = generate_dataset(&cfg, &v, &r).unwrap();
        for a in &ds.records {
            for b in &ds.records {
                let s = label_similarity(&v, &a.label, &b.label).unwrap();
                assert_eq!(s, if a.class == b.class { 1.0 } else { 0.0 });
                if a.class == b.class {
                    assert_eq!(a.image, b.image);
                }
            }
        }
        let bad = DataConfig { class_labels: Some(vec![vec![3]]), ..cfg };
        assert!(generate_dataset(&bad, &v, &r).is_err());
    }

    #[test]
    fn deterministic_bytes() {
        let (v, r) = setup();
        let cfg = DataConfig {
            mle_target: Some(0.1),
            ..Default::default()
        };
        let a = generate_dataset(&cfg, &v, &r).unwrap().to_jsonl().unwrap();
        let b = generate_dataset(&cfg, &v, &r).unwrap().to_jsonl().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 5000);
        let c = generate_dataset(&DataConfig { seed: 1, ..cfg }, &v, &r).unwrap().to_jsonl().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn low_entropy_yields_duplicate_labels() {
        let (v, r) = setup();
        let cfg = DataConfig {
            size: 64,
            mle_target: Some(0.05),
            mode: LabelMode::Fast,
            ..Default::default()
        };
        let ds = generate_dataset(&cfg, &v, &r).unwrap();
        let labels = ds.labels();
        let dup = (0..labels.len()).any(|i| (0..i).any(|j| labels[i] == labels[j]));
        assert!(dup);
        let low = mean_label_entropy(&MarginalStats::from_labels(&labels).unwrap(), &v).unwrap();
        let cfg = DataConfig { mle_target: Some(0.15), ..cfg };
        let high = generate_dataset(&cfg, &v, &r).unwrap().labels();
        let high = mean_label_entropy(&MarginalStats::from_labels(&high).unwrap(), &v).unwrap();
        assert!(low < high);
    }

    #[test]
    fn errors() {
        let (v, r) = setup();
        assert!(generate_dataset(&DataConfig { num_classes: 1, ..Default::default() }, &v, &r).is_err());
        assert!(generate_dataset(&DataConfig { size: 0, ..Default::default() }, &v, &r).is_err());
        assert!(generate_dataset(&DataConfig { detail_levels: 9, ..Default::default() }, &v, &r).is_err());
        let bad = DataConfig { marginals: Some(vec![1.5; 33]), ..Default::default() };
        assert!(matches!(generate_dataset(&bad, &v, &r), Err(Error::Infeasible(_))));
        let bad = DataConfig { marginals: Some(vec![0.5; 3]), ..Default::default() };
        assert!(matches!(generate_dataset(&bad, &v, &r), Err(Error::Infeasible(_))));
    }

    #[test]
    fn split_and_order() {
        let (v, r) = setup();
        let ds = generate_dataset(&DataConfig { size: 10, ..Default::default() }, &v, &r).unwrap();
        let (tr, te) = ds.split(0.2).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert!(ds.split(0.0).is_err());
        let o = epoch_order(10, 3, 0);
        let mut s = o.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(o, epoch_order(10, 3, 0));
        assert_ne!(o, epoch_order(10, 3, 1));
        let x = vec![1.0; 4];
        assert_eq!(augment(&x, 1, 2, 3, 0.0), x);
        assert_eq!(augment(&x, 1, 2, 3, 0.5), augment(&x, 1, 2, 3, 0.5));
        assert_ne!(augment(&x, 1, 2, 3, 0.5), augment(&x, 1, 2, 4, 0.5));
    }

    #[test]
    fn details_appear_in_both_modalities() {
        let (v, r) = setup();
        let cfg = DataConfig {
            size: 30,
            noise: 0.0,
            num_classes: 2,
            class_labels: Some(vec![vec![3], vec![12]]),
            ..Default::default()
        };
        let ds = generate_dataset(&cfg, &v, &r).unwrap();
        let detail = |text: &str| DETAIL_PHRASES.iter().position(|p| text.split('，').any(|q| q == *p)).unwrap();
        for a in &ds.records {
            assert_eq!(a.label, ds.class_labels[a.class]);
            for b in ds.records.iter().filter(|b| b.class == a.class) {
                // without noise the image is fixed by (class, detail)
                assert_eq!(a.image == b.image, detail(&a.text) == detail(&b.text));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn converter_reproduces_generator_labels(seed in any::<u64>(), target in 0.05f64..0.69) {
            let (v, r) = setup();
            let cfg = DataConfig { size: 60, seed, mle_target: Some(target), mode: LabelMode::Consistent, ..Default::default() };
            let ds = generate_dataset(&cfg, &v, &r).unwrap();
            for rec in &ds.records {
                prop_assert_eq!(&rec.label, &ds.class_labels[rec.class], "{}", rec.text);
            }
        }
    }
}
