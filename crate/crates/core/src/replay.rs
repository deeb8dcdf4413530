//! Bounded FIFO experience replay.
//!
//! Transitions keep positions and a volume index only; observations are
//! re-extracted when a batch is used.

use std::collections::VecDeque;

use rand::Rng;

use crate::mdp::{Axis, Transition};
use crate::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Clone, Debug)]
pub struct ReplayMemory {
    /// `None` accepts every action (single-policy baselines).
    axis: Option<Axis>,
    capacity: usize,
    buffer: VecDeque<Transition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize, axis: Option<Axis>) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay_capacity", "must be positive"));
        }
        Ok(ReplayMemory {
            axis,
            capacity,
            buffer: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    /// One memory per partial action space, in x, y, z order.
    pub fn per_axis(capacity: usize) -> Result<[ReplayMemory; 3]> {
        Ok([
            ReplayMemory::new(capacity, Some(Axis::X))?,
            ReplayMemory::new(capacity, Some(Axis::Y))?,
            ReplayMemory::new(capacity, Some(Axis::Z))?,
        ])
    }

    pub fn axis(&self) -> Option<Axis> {
        self.axis
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buffer.iter()
    }

    /// Append, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if let Some(axis) = self.axis {
            if t.axis() != axis {
                return Err(Error::Contract(format!(
                    "{} transition pushed into the {} memory",
                    t.axis().name(),
                    axis.name()
                )));
            }
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(t);
        Ok(())
    }

    /// `batch` uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.buffer.is_empty() {
            return Err(Error::EmptyMemory);
        }
        Ok((0..batch)
            .map(|_| self.buffer[rng.random_range(0..self.buffer.len())])
            .collect())
    }
}
