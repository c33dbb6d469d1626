//! Category vocabulary, multi-hot labels, label similarity and mean label
//! entropy.
//!
//! Label similarity is the cosine between two binary label vectors after
//! dropping the "others" coordinate, and is defined as 0 when either reduced
//! vector is empty. Samples that only carry "others" therefore act as
//! negatives against every other sample.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matf;

/// English names of the default 33 categories, in bit order.
pub const DEFAULT_CATEGORIES: [&str; 33] = [
    "normal",
    // diseases
    "cataract",
    "arteriosclerosis",
    "diabetic retinopathy",
    "floaters",
    "myopia",
    "presbyopia",
    "glaucoma",
    // lesions
    "chorioretinopathy",
    "hemorrhages",
    "arteriovenous nicking",
    "tessellated retina",
    "thin arteries",
    "posterior vitreous detachment",
    "vessel occlusion",
    "hard exudation",
    "macular degeneration",
    "large optic cup",
    "drusen",
    "parapapillary atrophy",
    "neovascularization",
    "microaneurysm",
    "nerve fiber layer defect",
    "retinal detachment",
    "laser spots",
    "pigment epithelial detachment",
    "choroidal atrophy",
    "blurred",
    "macular pigmentary disturbance",
    "cotton wool spots",
    "macular folds",
    "epiretinal membrane",
    "others",
];

/// Positive counts per default category of the 451,956-record reference
/// corpus, aligned with [`DEFAULT_CATEGORIES`].
pub const REFERENCE_COUNTS: [u64; 33] = [
    173_310, // normal
    62_369, 59_060, 31_197, 1_106, 8_367, 10_566, 12_752, // diseases
    1_748, 37_409, 30_459, 19_039, 1_682, 2_391, 4_707, 22_339, 11_020, 11_602, 14_709, 12_953,
    1_086, 13_403, 6_185, 826, 3_226, 149, 2_588, 56_703, 11_736, 5_716, 756, 7_039, // lesions
    38_220, // others
];

pub const REFERENCE_TOTAL: u64 = 451_956;

/// Ordered category names plus the indices of the two special categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    categories: Vec<String>,
    normal_index: usize,
    others_index: usize,
}

impl LabelVocabulary {
    pub fn new(categories: Vec<String>, normal_index: usize, others_index: usize) -> Result<Self> {
        let n = categories.len();
        if normal_index >= n || others_index >= n {
            return Err(Error::Vocab(format!(
                "special index out of range for {n} categories"
            )));
        }
        if normal_index == others_index {
            return Err(Error::Vocab("normal and others must differ".into()));
        }
        let mut seen = HashSet::new();
        for c in &categories {
            if c.trim().is_empty() {
                return Err(Error::Vocab("empty category name".into()));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::Vocab(format!("duplicate category {c:?}")));
            }
        }
        Ok(Self {
            categories,
            normal_index,
            others_index,
        })
    }

    /// The 33-category vocabulary: 1 normal, 7 diseases, 24 lesions, 1 others.
    pub fn default_33() -> Self {
        Self::new(
            DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            0,
            DEFAULT_CATEGORIES.len() - 1,
        )
        .expect("default vocabulary is valid")
    }

    /// Parses the vocabulary text format.
    ///
    /// One category per line, bit order equals line order. `#normal NAME`
    /// and `#others NAME` bind the special categories. Other lines starting
    /// with `#` and blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut categories = Vec::new();
        let mut normal = None;
        let mut others = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#normal") {
                normal = Some((lineno + 1, rest.trim().to_string()));
            } else if let Some(rest) = line.strip_prefix("#others") {
                others = Some((lineno + 1, rest.trim().to_string()));
            } else if line.starts_with('#') {
                continue;
            } else {
                categories.push(line.to_string());
            }
        }
        let resolve = |binding: Option<(usize, String)>, what: &str| -> Result<usize> {
            let (lineno, name) =
                binding.ok_or_else(|| Error::Vocab(format!("missing #{what} directive")))?;
            categories
                .iter()
                .position(|c| *c == name)
                .ok_or_else(|| Error::Vocab(format!("line {lineno}: unknown {what} category {name:?}")))
        };
        let normal_index = resolve(normal, "normal")?;
        let others_index = resolve(others, "others")?;
        Self::new(categories, normal_index, others_index)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("#normal {}\n", self.categories[self.normal_index]));
        out.push_str(&format!("#others {}\n", self.categories[self.others_index]));
        for c in &self.categories {
            out.push_str(c);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn normal_index(&self) -> usize {
        self.normal_index
    }

    pub fn others_index(&self) -> usize {
        self.others_index
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn empty_label(&self) -> MultiHotLabel {
        MultiHotLabel {
            bits: vec![false; self.len()],
        }
    }

    pub fn label_from_indices(&self, idx: &[usize]) -> Result<MultiHotLabel> {
        let mut l = self.empty_label();
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Vocab(format!("category index {i} out of range")));
            }
            l.bits[i] = true;
        }
        Ok(l)
    }

    pub fn label_from_names<S: AsRef<str>>(&self, names: &[S]) -> Result<MultiHotLabel> {
        let idx = names
            .iter()
            .map(|n| {
                self.index_of(n.as_ref())
                    .ok_or_else(|| Error::Vocab(format!("unknown category {:?}", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        self.label_from_indices(&idx)
    }

    pub fn names_of(&self, label: &MultiHotLabel) -> Vec<&str> {
        label
            .set_indices()
            .map(|i| self.categories[i].as_str())
            .collect()
    }

    fn check(&self, y: &MultiHotLabel) -> Result<()> {
        if y.len() != self.len() {
            return Err(Error::VocabMismatch(y.len(), self.len()));
        }
        Ok(())
    }
}

/// Binary category vector over a [`LabelVocabulary`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiHotLabel {
    #[serde(with = "bits_as_u8")]
    bits: Vec<bool>,
}

mod bits_as_u8 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> Result<S::Ok, S::Error> {
        bits.iter().map(|&b| b as u8).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!("label bit {other} not 0/1"))),
            })
            .collect()
    }
}

impl MultiHotLabel {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.bits[i] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn as_u8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b as u8).collect()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn set_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn union_with(&mut self, other: &MultiHotLabel) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }
}

/// Label similarity with the "others" coordinate excluded.
pub fn label_similarity(
    vocab: &LabelVocabulary,
    yi: &MultiHotLabel,
    yj: &MultiHotLabel,
) -> Result<f64> {
    vocab.check(yi)?;
    vocab.check(yj)?;
    Ok(similarity_unchecked(vocab.others_index, yi, yj))
}

fn similarity_unchecked(others: usize, yi: &MultiHotLabel, yj: &MultiHotLabel) -> f64 {
    let mut both = 0usize;
    let mut ni = 0usize;
    let mut nj = 0usize;
    for (k, (&a, &b)) in yi.bits.iter().zip(&yj.bits).enumerate() {
        if k == others {
            continue;
        }
        ni += a as usize;
        nj += b as usize;
        both += (a && b) as usize;
    }
    if ni == 0 || nj == 0 {
        return 0.0;
    }
    (both as f64 / ((ni * nj) as f64).sqrt()).min(1.0)
}

/// Entry `(i, j)` is `label_similarity(ys[i], ys2[j])`.
pub fn pairwise_label_similarity(
    vocab: &LabelVocabulary,
    ys: &[MultiHotLabel],
    ys2: &[MultiHotLabel],
) -> Result<Matf> {
    for y in ys.iter().chain(ys2) {
        vocab.check(y)?;
    }
    let others = vocab.others_index;
    Ok(Matf::from_fn(ys.len(), ys2.len(), |i, j| {
        similarity_unchecked(others, &ys[i], &ys2[j])
    }))
}

/// Per-category positive counts over a corpus of `total` records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginalStats {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl MarginalStats {
    pub fn new(counts: Vec<u64>, total: u64) -> Result<Self> {
        if total == 0 {
            return Err(Error::Vocab("marginal stats need at least one record".into()));
        }
        if let Some((category, &count)) = counts.iter().enumerate().find(|(_, &c)| c > total) {
            return Err(Error::CountExceedsTotal {
                category,
                count,
                total,
            });
        }
        Ok(Self { counts, total })
    }

    /// Counts of the 451,956-record reference corpus over the default vocabulary.
    pub fn reference() -> Self {
        Self::new(REFERENCE_COUNTS.to_vec(), REFERENCE_TOTAL).expect("reference counts are valid")
    }

    pub fn from_labels(labels: &[MultiHotLabel]) -> Result<Self> {
        let c = labels.first().map_or(0, |l| l.len());
        let mut counts = vec![0u64; c];
        for l in labels {
            if l.len() != c {
                return Err(Error::VocabMismatch(l.len(), c));
            }
            for i in l.set_indices() {
                counts[i] += 1;
            }
        }
        Self::new(counts, labels.len() as u64)
    }

    pub fn proportions(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.total as f64)
            .collect()
    }
}

/// Binary entropy in nats with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { x * x.ln() };
    -(term(p) + term(1.0 - p))
}

/// Mean of per-category binary entropies (natural log).
pub fn mean_entropy_of_proportions(p: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    p.iter().map(|&x| binary_entropy(x)).sum::<f64>() / p.len() as f64
}

/// Mean label entropy over every category of `vocab`, "others" included.
pub fn mean_label_entropy(stats: &MarginalStats, vocab: &LabelVocabulary) -> Result<f64> {
    if stats.counts.len() != vocab.len() {
        return Err(Error::VocabMismatch(stats.counts.len(), vocab.len()));
    }
    let stats = MarginalStats::new(stats.counts.clone(), stats.total)?;
    Ok(mean_entropy_of_proportions(&stats.proportions()))
}
