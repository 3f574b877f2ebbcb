//! Proportional prioritized replay over a sum tree.

use rand::Rng;

use crate::error::{Error, Result};

/// Binary tree whose internal nodes hold the sum of their children. Leaves
/// live at `[size, 2 * size)` where `size` is `capacity` rounded up to a
/// power of two; unused leaves stay zero.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    size: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "sum tree needs a positive capacity");
        let size = capacity.next_power_of_two();
        Self {
            capacity,
            size,
            nodes: vec![0.0; 2 * size],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.size + leaf]
    }

    pub fn set(&mut self, leaf: usize, priority: f64) {
        assert!(leaf < self.capacity, "leaf {leaf} out of range");
        assert!(priority >= 0.0 && priority.is_finite(), "bad priority {priority}");
        let mut i = self.size + leaf;
        self.nodes[i] = priority;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// The leaf whose cumulative range contains `mass`, skipping zero leaves.
    pub fn find(&self, mass: f64) -> usize {
        let mut mass = mass.clamp(0.0, self.total());
        let mut i = 1;
        while i < self.size {
            let left = 2 * i;
            if mass < self.nodes[left] || self.nodes[left + 1] <= 0.0 {
                i = left;
            } else {
                mass -= self.nodes[left];
                i = left + 1;
            }
        }
        (i - self.size).min(self.capacity - 1)
    }

    pub fn leaves(&self) -> &[f64] {
        &self.nodes[self.size..self.size + self.capacity]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerParams {
    pub alpha: f64,
    /// Floor added to `|delta|` so no item becomes unsampleable.
    pub eps: f64,
}

impl Default for PerParams {
    fn default() -> Self {
        Self { alpha: 0.6, eps: 1e-5 }
    }
}

/// A ring buffer of items with sum-tree priorities.
#[derive(Debug, Clone)]
pub struct PerBuffer<T> {
    params: PerParams,
    tree: SumTree,
    items: Vec<T>,
    next: usize,
    max_priority: f64,
}

/// Indices and importance weights of a sampled batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSample {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl<T> PerBuffer<T> {
    pub fn new(capacity: usize, params: PerParams) -> Self {
        Self {
            params,
            tree: SumTree::new(capacity),
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.tree.capacity()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn get(&self, index: usize) -> &T {
        &self.items[index]
    }

    pub fn priority_of(&self, delta: f64) -> f64 {
        (delta.abs() + self.params.eps).powf(self.params.alpha)
    }

    fn store(&mut self, item: T, priority: f64) -> usize {
        let slot = self.next;
        if slot < self.items.len() {
            self.items[slot] = item;
        } else {
            self.items.push(item);
        }
        self.tree.set(slot, priority);
        self.next = (slot + 1) % self.capacity();
        slot
    }

    /// Inserts with the largest priority seen so far, so new items are
    /// replayed at least once soon.
    pub fn push(&mut self, item: T) -> usize {
        self.store(item, self.max_priority)
    }

    /// Inserts with the priority implied by a known TD error.
    pub fn push_with_error(&mut self, item: T, delta: f64) -> usize {
        let p = self.priority_of(delta);
        self.max_priority = self.max_priority.max(p);
        self.store(item, p)
    }

    /// Stratified proportional sample of `k` indices with importance weights
    /// `(N * P(i))^-beta`, normalized by the batch maximum.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, beta: f64, rng: &mut R) -> Result<PerSample> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if k == 0 || k > self.items.len() {
            return Err(Error::Invalid(format!(
                "cannot sample {k} items from a buffer of {}",
                self.items.len()
            )));
        }
        let total = self.tree.total();
        let segment = total / k as f64;
        let n = self.items.len() as f64;
        let mut indices = Vec::with_capacity(k);
        let mut probabilities = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        for i in 0..k {
            let lo = segment * i as f64;
            let mass = lo + rng.random::<f64>() * segment;
            let mut idx = self.tree.find(mass);
            if idx >= self.items.len() || self.tree.get(idx) <= 0.0 {
                idx = self.items.len() - 1;
            }
            let p = self.tree.get(idx) / total;
            indices.push(idx);
            probabilities.push(p);
            weights.push((n * p).powf(-beta));
        }
        let max = weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= max;
        }
        Ok(PerSample {
            indices,
            weights,
            probabilities,
        })
    }

    pub fn update(&mut self, indices: &[usize], deltas: &[f64]) {
        for (&i, &d) in indices.iter().zip(deltas) {
            let p = self.priority_of(d);
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p);
        }
    }
}
