use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Fixed-capacity FIFO of detached sentence embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    capacity: usize,
    width: usize,
    entries: VecDeque<Vec<f64>>,
    inserted: u64,
}

impl NegativeQueue {
    pub fn new(capacity: usize, width: usize) -> Self {
        Self {
            capacity,
            width,
            entries: VecDeque::with_capacity(capacity),
            inserted: 0,
        }
    }

    /// Restores a queue from its oldest-first contents.
    pub fn from_entries(capacity: usize, width: usize, entries: Vec<Vec<f64>>, inserted: u64) -> Result<Self> {
        if entries.len() > capacity {
            return Err(Error::Checkpoint(format!(
                "queue holds {} entries but capacity is {capacity}",
                entries.len()
            )));
        }
        if entries.iter().any(|e| e.len() != width) {
            return Err(Error::Shape(format!("queue entries must have width {width}")));
        }
        Ok(Self {
            capacity,
            width,
            entries: entries.into(),
            inserted,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of embeddings ever pushed.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Oldest-first snapshot of the contents.
    pub fn entries(&self) -> Vec<Vec<f64>> {
        self.entries.iter().cloned().collect()
    }

    /// Appends in batch order and evicts the oldest entries beyond capacity.
    /// Returns the number of evicted entries, including pushed rows that never fit.
    pub fn push(&mut self, batch: &[Vec<f64>]) -> Result<usize> {
        if let Some(row) = batch.iter().find(|r| r.len() != self.width) {
            return Err(Error::Shape(format!(
                "queue width is {}, got an embedding of width {}",
                self.width,
                row.len()
            )));
        }
        self.inserted += batch.len() as u64;
        let mut evicted = 0;
        for row in batch {
            self.entries.push_back(row.clone());
            if self.entries.len() > self.capacity {
                self.entries.pop_front();
                evicted += 1;
            }
        }
        Ok(evicted)
    }
}
