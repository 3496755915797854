use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::error::{contract, Result};
use crate::pscmdp::{ConstraintSpec, DeltaForm, Transition};

/// Constraint-free part of a collected step, shared by all relabeled copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    /// Action in the actor's normalized `[-1, 1]` coordinates.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub pvr: f64,
    pub terminal: bool,
    /// Constraint the behavior policy was following when this was collected.
    pub source_constraint: usize,
}

/// A stored experience tagged with the constraint it trains.
#[derive(Debug, Clone)]
pub struct Tagged {
    pub exp: Arc<Experience>,
    pub constraint_id: usize,
}

impl Tagged {
    /// Per-request penalty under this copy's constraint.
    pub fn delta(&self, form: DeltaForm, spec: &ConstraintSpec) -> f64 {
        form.eval(self.exp.pvr, spec.targets[self.constraint_id])
    }
}

/// FIFO replay buffer of tagged experiences.
#[derive(Debug, Clone)]
pub struct CherBuffer {
    capacity: usize,
    entries: VecDeque<Tagged>,
    inserted: u64,
}

impl CherBuffer {
    pub fn new(capacity: usize) -> Self {
        CherBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total insertions since creation, evicted ones included.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Tagged) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
        self.inserted += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tagged> {
        self.entries.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample<'a, R: Rng>(&'a self, rng: &mut R, n: usize) -> Vec<&'a Tagged> {
        (0..n)
            .map(|_| &self.entries[rng.random_range(0..self.entries.len())])
            .collect()
    }
}

/// Hindsight copies of a transition, one per constraint in the set. Only the
/// tag (and hence the derived penalty) changes; the reward is left alone.
pub fn cher_relabel(t: &Transition, spec: &ConstraintSpec) -> Result<Vec<Transition>> {
    contract!(
        t.constraint_id < spec.targets.len(),
        "transition tagged with unknown constraint {}",
        t.constraint_id
    );
    Ok((0..spec.targets.len())
        .map(|c| Transition {
            constraint_id: c,
            ..t.clone()
        })
        .collect())
}
