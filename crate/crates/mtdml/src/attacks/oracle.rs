//! Black-box query interface.
//!
//! SPSA and surrogate extraction touch their target only through
//! [`QueryOracle`], so swapping a fixed model for a live serving endpoint
//! (or a counting stub in tests) changes nothing about the attack code.

use crate::error::Result;
use crate::linalg::Mat;
use crate::nn::{argmax, Model};
use crate::pool::StudentPool;

use std::sync::atomic::{AtomicU64, Ordering};

/// Batched black-box access with a monotone query counter.
///
/// The counter increases by the batch size on every call and must be safe
/// under concurrent increments.
pub trait QueryOracle: Sync {
    /// Probability vectors for a batch of inputs.
    ///
    /// Oracles for hard-label-only deployments return an error here.
    fn query_probs(&self, inputs: &Mat) -> Result<Vec<Vec<f64>>>;

    /// Hard labels for a batch of inputs.
    fn query_labels(&self, inputs: &Mat) -> Result<Vec<usize>> {
        Ok(self.query_probs(inputs)?.iter().map(|p| argmax(p)).collect())
    }

    /// Total queries issued so far.
    fn query_count(&self) -> u64;

    /// Number of classes the target distinguishes.
    fn num_classes(&self) -> usize;
}

/// Oracle over a single fixed model.
pub struct ModelOracle<'a> {
    model: &'a Model,
    counter: AtomicU64,
}

impl<'a> ModelOracle<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self {
            model,
            counter: AtomicU64::new(0),
        }
    }
}

impl QueryOracle for ModelOracle<'_> {
    fn query_probs(&self, inputs: &Mat) -> Result<Vec<Vec<f64>>> {
        self.counter.fetch_add(inputs.rows() as u64, Ordering::Relaxed);
        self.model.forward(inputs)
    }

    fn query_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }
}

/// Oracle over a student pool, answering through the most-confident-model
/// scheduler exactly like the serving path does.
pub struct PoolOracle<'a> {
    pool: &'a StudentPool,
    counter: AtomicU64,
}

impl<'a> PoolOracle<'a> {
    pub fn new(pool: &'a StudentPool) -> Self {
        Self {
            pool,
            counter: AtomicU64::new(0),
        }
    }
}

impl QueryOracle for PoolOracle<'_> {
    fn query_probs(&self, inputs: &Mat) -> Result<Vec<Vec<f64>>> {
        self.counter.fetch_add(inputs.rows() as u64, Ordering::Relaxed);
        (0..inputs.rows())
            .map(|i| {
                crate::scheduler::select_most_confident(self.pool, inputs.row(i))
                    .map(|(_, probs)| probs)
            })
            .collect()
    }

    fn query_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    fn num_classes(&self) -> usize {
        self.pool.students[0].num_classes()
    }
}

/// Test stub: fixed responses, real counting.
#[cfg(test)]
pub(crate) struct CountingStub {
    pub probs: Vec<f64>,
    pub counter: AtomicU64,
}

#[cfg(test)]
impl QueryOracle for CountingStub {
    fn query_probs(&self, inputs: &Mat) -> Result<Vec<Vec<f64>>> {
        self.counter.fetch_add(inputs.rows() as u64, Ordering::Relaxed);
        Ok(vec![self.probs.clone(); inputs.rows()])
    }

    fn query_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    fn num_classes(&self) -> usize {
        self.probs.len()
    }
}
