//! Bounded FIFO of momentum-encoded (image feature, text feature, label)
//! triples. The image and text columns act as the two queues; they share one
//! label column because entries are always pushed pairwise.
//!
//! Features are stored as given; the trainer pushes L2-normalized projections.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelkit::MultiHotLabel;
use crate::numerics::Matf;

pub const DEFAULT_CAPACITY: usize = 768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub image: Vec<f64>,
    pub text: Vec<f64>,
    pub label: MultiHotLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<QueueEntry>,
}

/// Immutable copy of the queue contents, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueSnapshot {
    pub image: Matf,
    pub text: Matf,
    pub labels: Vec<MultiHotLabel>,
}

impl QueueSnapshot {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl MemoryQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("queue capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    /// Appends rows in batch order, evicting the oldest entries beyond capacity.
    /// All inputs are validated before anything is mutated.
    pub fn push_batch(&mut self, image: &Matf, text: &Matf, labels: &[MultiHotLabel]) -> Result<()> {
        if image.rows() != labels.len() || text.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                left: image.rows().max(text.rows()),
                right: labels.len(),
            });
        }
        for m in [image, text] {
            if m.cols() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    got: m.cols(),
                });
            }
        }
        let skip = labels.len().saturating_sub(self.capacity);
        for i in skip..labels.len() {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(QueueEntry {
                image: image.row(i).to_vec(),
                text: text.row(i).to_vec(),
                label: labels[i].clone(),
            });
        }
        Ok(())
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        let n = self.entries.len();
        let mut image = Matf::zeros(n, self.dim);
        let mut text = Matf::zeros(n, self.dim);
        let mut labels = Vec::with_capacity(n);
        for (i, e) in self.entries.iter().enumerate() {
            image.row_mut(i).copy_from_slice(&e.image);
            text.row_mut(i).copy_from_slice(&e.text);
            labels.push(e.label.clone());
        }
        QueueSnapshot { image, text, labels }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Row `k` carries the id `k` in every feature slot and in the label bits.
    fn tagged(ids: std::ops::Range<usize>, dim: usize) -> (Matf, Matf, Vec<MultiHotLabel>) {
        let ids: Vec<usize> = ids.collect();
        let img = Matf::from_fn(ids.len(), dim, |i, _| ids[i] as f64);
        let txt = Matf::from_fn(ids.len(), dim, |i, _| -(ids[i] as f64));
        let labels = ids
            .iter()
            .map(|&k| MultiHotLabel::from_bits((0..12).map(|b| (k >> b) & 1 == 1).collect()))
            .collect();
        (img, txt, labels)
    }

    fn ids_of(q: &MemoryQueue) -> Vec<usize> {
        q.entries().map(|e| e.image[0] as usize).collect()
    }

    #[test]
    fn push_into_empty() {
        let mut q = MemoryQueue::new(768, 4).unwrap();
        let (i, t, l) = tagged(0..256, 4);
        q.push_batch(&i, &t, &l).unwrap();
        assert_eq!(q.len(), 256);
    }

    #[test]
    fn full_queue_evicts_oldest() {
        let mut q = MemoryQueue::new(8, 2).unwrap();
        let (i, t, l) = tagged(0..8, 2);
        q.push_batch(&i, &t, &l).unwrap();
        let (i, t, l) = tagged(8..9, 2);
        q.push_batch(&i, &t, &l).unwrap();
        assert_eq!(q.len(), 8);
        assert_eq!(ids_of(&q), (1..9).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_batch_keeps_newest() {
        let mut q = MemoryQueue::new(6, 2).unwrap();
        let (i, t, l) = tagged(100..102, 2);
        q.push_batch(&i, &t, &l).unwrap();
        let (i, t, l) = tagged(0..11, 2);
        q.push_batch(&i, &t, &l).unwrap();
        assert_eq!(ids_of(&q), (5..11).collect::<Vec<_>>());
    }

    #[test]
    fn errors_leave_queue_untouched() {
        let mut q = MemoryQueue::new(4, 3).unwrap();
        let (i, t, l) = tagged(0..2, 3);
        assert!(q.push_batch(&i, &t, &l[..1]).is_err());
        let (i2, t2, l2) = tagged(0..2, 2);
        assert!(matches!(q.push_batch(&i2, &t2, &l2), Err(Error::DimMismatch { .. })));
        assert!(q.is_empty());
        assert!(MemoryQueue::new(0, 3).is_err());
    }

    #[test]
    fn snapshots() {
        let mut q = MemoryQueue::new(5, 2).unwrap();
        let s0 = q.snapshot();
        assert_eq!((s0.image.rows(), s0.image.cols()), (0, 2));
        let (i, t, l) = tagged(0..3, 2);
        q.push_batch(&i, &t, &l).unwrap();
        let s1 = q.snapshot();
        assert_eq!(s1.image, i);
        assert_eq!(s1.text, t);
        assert_eq!(s1.labels, l);
        let (i, t, l) = tagged(3..6, 2);
        q.push_batch(&i, &t, &l).unwrap();
        assert_eq!(s1.len(), 3);
        assert_eq!(s1.image.get(0, 0), 0.0);
        assert_eq!(q.snapshot().image.get(0, 0), 1.0);
    }

    proptest! {
        #[test]
        fn fifo_matches_model(cap in 1usize..20, sizes in proptest::collection::vec(0usize..25, 0..12)) {
            let mut q = MemoryQueue::new(cap, 3).unwrap();
            let mut model: Vec<usize> = Vec::new();
            let mut next = 0;
            for s in sizes {
                let (i, t, l) = tagged(next..next + s, 3);
                q.push_batch(&i, &t, &l).unwrap();
                model.extend(next..next + s);
                next += s;
                prop_assert!(q.len() <= cap);
                let keep = model.len().saturating_sub(cap);
                prop_assert_eq!(ids_of(&q), model[keep..].to_vec());
                // features and labels evict together
                for e in q.entries() {
                    let k = e.image[0] as usize;
                    prop_assert_eq!(e.text[0], -(k as f64));
                    let fp: usize = e.label.set_indices().map(|b| 1 << b).sum();
                    prop_assert_eq!(fp, k);
                }
            }
        }
    }
}
