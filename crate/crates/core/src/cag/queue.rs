//! Indexed binary max-heap with in-place priority increases.
//!
//! Entries are ordered by priority, highest first; equal priorities pop the
//! smallest key first, so the pop order is fully determined by the contents.
//! `increase_priority` is `O(log n)` (sift-up from the entry's slot, located
//! through a key-to-slot map).

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueueError {
    #[error("key is already queued")]
    DuplicateKey,
    #[error("key is not queued")]
    AbsentKey,
}

#[derive(Debug, Clone)]
pub struct UpdatableMaxQueue<K> {
    heap: Vec<(f64, K)>,
    slot: HashMap<K, usize>,
}

impl<K: Ord + Hash + Clone> Default for UpdatableMaxQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

fn above<K: Ord>(a: &(f64, K), b: &(f64, K)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl<K: Ord + Hash + Clone> UpdatableMaxQueue<K> {
    pub fn new() -> Self {
        Self {
            heap: Vec::new(),
            slot: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn contains(&self, key: &K) -> bool {
        self.slot.contains_key(key)
    }

    pub fn priority(&self, key: &K) -> Option<f64> {
        self.slot.get(key).map(|&i| self.heap[i].0)
    }

    pub fn peek_max(&self) -> Option<(&K, f64)> {
        self.heap.first().map(|(p, k)| (k, *p))
    }

    pub fn insert(&mut self, key: K, priority: f64) -> Result<(), QueueError> {
        assert!(!priority.is_nan(), "priority must not be NaN");
        if self.slot.contains_key(&key) {
            return Err(QueueError::DuplicateKey);
        }
        self.heap.push((priority, key.clone()));
        let i = self.heap.len() - 1;
        self.slot.insert(key, i);
        self.sift_up(i);
        Ok(())
    }

    /// Raises the priority of `key` to `priority`; a lower value is ignored.
    pub fn increase_priority(&mut self, key: &K, priority: f64) -> Result<(), QueueError> {
        assert!(!priority.is_nan(), "priority must not be NaN");
        let &i = self.slot.get(key).ok_or(QueueError::AbsentKey)?;
        if priority > self.heap[i].0 {
            self.heap[i].0 = priority;
            self.sift_up(i);
        }
        Ok(())
    }

    pub fn pop_max(&mut self) -> Option<(K, f64)> {
        if self.heap.is_empty() {
            return None;
        }
        let last = self.heap.len() - 1;
        self.swap(0, last);
        let (priority, key) = self.heap.pop().expect("non-empty");
        self.slot.remove(&key);
        if !self.heap.is_empty() {
            self.sift_down(0);
        }
        Some((key, priority))
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.heap.swap(a, b);
        *self.slot.get_mut(&self.heap[a].1).expect("slot") = a;
        *self.slot.get_mut(&self.heap[b].1).expect("slot") = b;
    }

    fn sift_up(&mut self, mut i: usize) {
        while i > 0 {
            let parent = (i - 1) / 2;
            if !above(&self.heap[i], &self.heap[parent]) {
                break;
            }
            self.swap(i, parent);
            i = parent;
        }
    }

    fn sift_down(&mut self, mut i: usize) {
        loop {
            let mut best = i;
            for child in [2 * i + 1, 2 * i + 2] {
                if child < self.heap.len() && above(&self.heap[child], &self.heap[best]) {
                    best = child;
                }
            }
            if best == i {
                break;
            }
            self.swap(i, best);
            i = best;
        }
    }
}
