use rand::Rng;

use crate::error::{contract, Result};

/// One hour-level decision as stored for replay.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractTransition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Proportional prioritized replay over a sum tree.
#[derive(Debug, Clone)]
pub struct PerBuffer {
    capacity: usize,
    leaves: usize,
    tree: Vec<f64>,
    priorities: Vec<f64>,
    data: Vec<AbstractTransition>,
    next: usize,
    max_priority: f64,
    alpha: f64,
}

/// A sampled slot with its importance weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerSample {
    pub index: usize,
    pub weight: f64,
}

impl PerBuffer {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        PerBuffer {
            capacity,
            leaves,
            tree: vec![0.0; 2 * leaves],
            priorities: Vec::with_capacity(capacity),
            data: Vec::with_capacity(capacity),
            next: 0,
            max_priority: 1.0,
            alpha,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &AbstractTransition {
        &self.data[index]
    }

    /// Raw priority `p` (before the `alpha` exponent).
    pub fn priority(&self, index: usize) -> f64 {
        self.priorities[index]
    }

    /// Sampling probability `p^alpha / sum p^alpha`.
    pub fn probability(&self, index: usize) -> f64 {
        self.tree[self.leaves + index] / self.tree[1]
    }

    fn set_leaf(&mut self, index: usize, p: f64) {
        let mut node = self.leaves + index;
        self.tree[node] = p.powf(self.alpha);
        while node > 1 {
            node /= 2;
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1];
        }
    }

    /// New items enter with the largest priority seen so far.
    pub fn push(&mut self, t: AbstractTransition) {
        let p = self.max_priority;
        if self.data.len() < self.capacity {
            self.data.push(t);
            self.priorities.push(p);
        } else {
            self.data[self.next] = t;
            self.priorities[self.next] = p;
        }
        self.set_leaf(self.next, p);
        self.next = (self.next + 1) % self.capacity;
    }

    fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if mass < self.tree[left] || self.tree[left + 1] == 0.0 {
                node = left;
            } else {
                mass -= self.tree[left];
                node = left + 1;
            }
        }
        (node - self.leaves).min(self.data.len() - 1)
    }

    /// Stratified proportional sample of `n` slots. Weights are
    /// `(N * P(i))^-beta` divided by the largest weight in the batch.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize, beta: f64) -> Result<Vec<PerSample>> {
        contract!(self.len() >= n && n > 0, "cannot sample {n} from {} items", self.len());
        let total = self.tree[1];
        let seg = total / n as f64;
        let count = self.len() as f64;
        let mut out: Vec<PerSample> = (0..n)
            .map(|k| {
                let mass = (k as f64 + rng.random::<f64>()) * seg;
                let index = self.find(mass.min(total * (1.0 - 1e-12)));
                let weight = (count * self.probability(index)).powf(-beta);
                PerSample { index, weight }
            })
            .collect();
        let max_w = out.iter().map(|s| s.weight).fold(0.0, f64::max);
        for s in &mut out {
            s.weight /= max_w;
        }
        Ok(out)
    }

    pub fn update_priority(&mut self, index: usize, p: f64) -> Result<()> {
        contract!(p > 0.0 && p.is_finite(), "priority must be positive and finite, got {p}");
        contract!(index < self.len(), "priority index {index} out of range");
        self.priorities[index] = p;
        self.max_priority = self.max_priority.max(p);
        self.set_leaf(index, p);
        Ok(())
    }
}
