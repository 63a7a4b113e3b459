//! Prediction scheduling and query-budgeted pool renewal.
//!
//! Every query is answered by the most confident student of the active
//! pool. A pool expires after `Q_max` queries and is replaced by the head
//! of a buffer of pre-generated standby pools; `Q_max` is recomputed at
//! each swap from the generation-time and per-query-time estimates so that
//! the buffer outlives the generation of its replacement
//! (`K_t * Q_max * T_q > T_n`, strictly).

use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::pool::StudentPool;

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Instant;

/// Smoothing factor of the exponentially weighted T_q estimate.
const T_Q_EWMA_ALPHA: f64 = 0.1;

/// Relative tolerance for deciding that T_n / (K_t * T_q) is an integer.
const QMAX_EXACTNESS_TOL: f64 = 1e-9;

/// One scheduled prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutcome {
    pub label: usize,
    /// The winning student's maximum softmax probability.
    pub confidence: f64,
    pub model_index: usize,
    /// Full probability vector of the winning student.
    pub probs: Vec<f64>,
}

/// Evaluates all students and returns `(winner_index, winner_probs)`.
/// Confidence is the maximum probability entry; ties go to the lowest
/// student index (and label ties to the lowest class index).
///
/// Deliberately sequential: this sits on the serving latency path and must
/// make progress without the shared worker pool, which concurrent
/// black-box attack clients may be saturating with blocked queries.
pub fn select_most_confident(pool: &StudentPool, x: &[f32]) -> Result<(usize, Vec<f64>)> {
    if pool.is_empty() {
        return Err(Error::InvalidState("empty pool".into()));
    }
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for (i, student) in pool.students.iter().enumerate() {
        let probs = student.forward_one(x)?;
        let conf = probs[argmax(&probs)];
        match &best {
            Some((_, best_conf, _)) if conf <= *best_conf => {}
            _ => best = Some((i, conf, probs)),
        }
    }
    let (idx, _, probs) = best.expect("pool checked non-empty");
    Ok((idx, probs))
}

/// Most-confident-model prediction over the pool.
pub fn predict(pool: &StudentPool, x: &[f32]) -> Result<PredictOutcome> {
    let (model_index, probs) = select_most_confident(pool, x)?;
    let label = argmax(&probs);
    Ok(PredictOutcome {
        label,
        confidence: probs[label],
        model_index,
        probs,
    })
}

/// Reference argmax-confidence scan used by tests: index of the largest
/// confidence, lowest index on ties.
pub fn reference_confidence_scan(confidences: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &c) in confidences.iter().enumerate().skip(1) {
        if c > confidences[best] {
            best = i;
        }
    }
    best
}

/// The optimal query budget: `ceil(T_n / (K_t * T_q))`, bumped by one when
/// the quotient is an integer so that `K_t * Q_max * T_q > T_n` holds
/// strictly.
pub fn compute_qmax(t_n: f64, k_t: usize, t_q: f64) -> Result<u64> {
    if k_t == 0 {
        return Err(Error::InvalidState(
            "buffer exhausted: K_t must be positive".into(),
        ));
    }
    if t_n <= 0.0 || t_q <= 0.0 || !t_n.is_finite() || !t_q.is_finite() {
        return Err(Error::Validation(format!(
            "T_n and T_q must be positive, got T_n={t_n}, T_q={t_q}"
        )));
    }
    let quotient = t_n / (k_t as f64 * t_q);
    let rounded = quotient.round();
    let q = if (quotient - rounded).abs() <= QMAX_EXACTNESS_TOL * rounded.max(1.0) {
        rounded + 1.0
    } else {
        quotient.ceil()
    };
    Ok(q as u64)
}

/// A renewal-log entry: one retired pool.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RenewalRecord {
    pub pool_id: u64,
    pub queries_served: u64,
    /// Wall-clock seconds the pool spent active.
    pub active_secs: f64,
    /// The budget that was in force for this pool.
    pub q_max: u64,
}

/// Manager state snapshot for the admin surface.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ManagerStatus {
    pub active_pool_id: u64,
    pub query_count: u64,
    pub q_max: u64,
    pub buffer_depth: usize,
    pub t_q_estimate_secs: f64,
    pub t_n_last_secs: f64,
    pub renewals: usize,
}

struct ManagerInner {
    active: Arc<StudentPool>,
    buffer: VecDeque<StudentPool>,
    query_count: u64,
    q_max: u64,
    t_q_ewma: Option<f64>,
    t_n_last: f64,
    renewal_log: Vec<RenewalRecord>,
    activated_at: Instant,
}

/// Serves predictions from the active pool under a query budget, swapping
/// in buffered pools as budgets expire.
///
/// The counter and swap are linearizable behind one lock: a query is
/// admitted against exactly one pool and counted exactly once. The pool
/// itself is handed out as an `Arc` snapshot, so inference runs outside
/// the lock and in-flight queries admitted before a swap complete against
/// the old pool.
pub struct PoolManager {
    inner: Mutex<ManagerInner>,
    q_max_override: Option<u64>,
}

impl PoolManager {
    /// Builds a manager from an ordered list of pools (first becomes
    /// active) with an optional fixed Q_max override.
    pub fn new(mut pools: Vec<StudentPool>, q_max_override: Option<u64>) -> Result<Self> {
        if pools.is_empty() {
            return Err(Error::InvalidState("manager needs at least one pool".into()));
        }
        let active = Arc::new(pools.remove(0));
        let buffer: VecDeque<StudentPool> = pools.into();
        let t_n_last = active.gen_duration_secs.max(
            buffer
                .back()
                .map(|p| p.gen_duration_secs)
                .unwrap_or(0.0),
        );
        let q_max = match q_max_override {
            Some(q) => q,
            // No latency observations yet; start from a conservative
            // 1 ms/query guess and recompute at the first swap.
            None => compute_qmax(t_n_last.max(1e-3), buffer.len().max(1), 1e-3)?,
        };
        Ok(Self {
            inner: Mutex::new(ManagerInner {
                active,
                buffer,
                query_count: 0,
                q_max,
                t_q_ewma: None,
                t_n_last,
                renewal_log: Vec::new(),
                activated_at: Instant::now(),
            }),
            q_max_override,
        })
    }

    /// Admits one query: returns the pool snapshot to answer from. The
    /// query is counted immediately; when it exhausts the budget the swap
    /// happens before the next admission.
    pub fn admit(&self) -> Result<(Arc<StudentPool>, Option<RenewalRecord>)> {
        let mut inner = self.inner.lock().expect("manager lock poisoned");
        let pool = Arc::clone(&inner.active);
        inner.query_count += 1;
        let renewal = if inner.query_count >= inner.q_max {
            Some(self.swap_locked(&mut inner)?)
        } else {
            None
        };
        Ok((pool, renewal))
    }

    /// Full serving step: admit, predict on the snapshot, record latency.
    pub fn predict(&self, x: &[f32]) -> Result<(PredictOutcome, Option<RenewalRecord>)> {
        let start = Instant::now();
        let (pool, renewal) = self.admit()?;
        let outcome = predict(&pool, x)?;
        self.observe_latency(start.elapsed().as_secs_f64());
        Ok((outcome, renewal))
    }

    /// Folds one latency observation into the T_q estimate.
    pub fn observe_latency(&self, secs: f64) {
        let mut inner = self.inner.lock().expect("manager lock poisoned");
        inner.t_q_ewma = Some(match inner.t_q_ewma {
            None => secs,
            Some(prev) => T_Q_EWMA_ALPHA * secs + (1.0 - T_Q_EWMA_ALPHA) * prev,
        });
    }

    /// Adds a freshly generated pool to the standby buffer.
    pub fn enqueue_pool(&self, pool: StudentPool) {
        let mut inner = self.inner.lock().expect("manager lock poisoned");
        inner.t_n_last = pool.gen_duration_secs;
        inner.buffer.push_back(pool);
    }

    /// Retires the active pool and promotes the buffer head. Fails with
    /// `BufferUnderrun` when no standby pool exists.
    pub fn swap_pool(&self) -> Result<RenewalRecord> {
        let mut inner = self.inner.lock().expect("manager lock poisoned");
        self.swap_locked(&mut inner)
    }

    fn swap_locked(&self, inner: &mut ManagerInner) -> Result<RenewalRecord> {
        let next = inner.buffer.pop_front().ok_or(Error::BufferUnderrun)?;
        let record = RenewalRecord {
            pool_id: inner.active.pool_id,
            queries_served: inner.query_count,
            active_secs: inner.activated_at.elapsed().as_secs_f64(),
            q_max: inner.q_max,
        };
        inner.active = Arc::new(next);
        inner.query_count = 0;
        inner.activated_at = Instant::now();
        inner.renewal_log.push(record.clone());

        inner.q_max = match self.q_max_override {
            Some(q) => q,
            None => {
                let k_t = inner.buffer.len();
                let t_q = inner.t_q_ewma.unwrap_or(1e-3).max(1e-9);
                if k_t > 0 && inner.t_n_last > 0.0 {
                    compute_qmax(inner.t_n_last, k_t, t_q)?
                } else {
                    // Nothing to estimate from; keep the previous budget.
                    inner.q_max
                }
            }
        };
        Ok(record)
    }

    /// Input width of the currently deployed models.
    pub fn input_dim(&self) -> usize {
        let inner = self.inner.lock().expect("manager lock poisoned");
        inner.active.students[0].input_dim()
    }

    pub fn status(&self) -> ManagerStatus {
        let inner = self.inner.lock().expect("manager lock poisoned");
        ManagerStatus {
            active_pool_id: inner.active.pool_id,
            query_count: inner.query_count,
            q_max: inner.q_max,
            buffer_depth: inner.buffer.len(),
            t_q_estimate_secs: inner.t_q_ewma.unwrap_or(0.0),
            t_n_last_secs: inner.t_n_last,
            renewals: inner.renewal_log.len(),
        }
    }

    pub fn renewal_log(&self) -> Vec<RenewalRecord> {
        self.inner
            .lock()
            .expect("manager lock poisoned")
            .renewal_log
            .clone()
    }

    /// The renewal log as CSV: pool_id, queries_served, active_secs, q_max.
    pub fn renewal_log_csv(&self) -> String {
        let mut out = String::from("pool_id,queries_served,active_secs,q_max\n");
        for r in self.renewal_log() {
            out.push_str(&format!(
                "{},{},{:.6},{}\n",
                r.pool_id, r.queries_served, r.active_secs, r.q_max
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests;
