use super::*;
use crate::linalg::Mat;
use crate::nn::{Activation, Layer, Model};
use crate::pool::StudentPool;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A 1-input model whose output distribution is fixed: softmax(logits).
fn fixed_model(logits: &[f32]) -> Model {
    let k = logits.len();
    Model::from_layers(
        vec![Layer {
            weights: Mat::zeros(k, 1),
            biases: logits.to_vec(),
            activation: Activation::Linear,
        }],
        "fixed".into(),
    )
    .unwrap()
}

/// Pool of fixed-output students; `peaks[i]` picks student i's favorite
/// class, `sharpness[i]` its confidence.
fn fixed_pool(peaks: &[usize], sharpness: &[f32], pool_id: u64) -> StudentPool {
    let k = peaks.iter().max().unwrap() + 2;
    let students: Vec<Model> = peaks
        .iter()
        .zip(sharpness)
        .map(|(&peak, &sharp)| {
            let mut logits = vec![0.0f32; k];
            logits[peak] = sharp;
            fixed_model(&logits)
        })
        .collect();
    let n = students.len();
    StudentPool::from_parts(
        students,
        vec![false; n],
        vec![crate::data::TransformSpec::identity(); n],
        pool_id,
        0,
        1.0,
        vec![f64::NAN; n],
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// predict / select
// ---------------------------------------------------------------------------

#[test]
fn most_confident_student_wins() {
    // Confidences roughly [0.3-ish, 0.9-ish, 0.7-ish] via sharpness.
    let pool = fixed_pool(&[0, 1, 2], &[0.5, 4.0, 2.0], 1);
    let out = predict(&pool, &[0.0]).unwrap();
    assert_eq!(out.model_index, 1);
    assert_eq!(out.label, 1);
    assert!(out.confidence > 0.8);
}

#[test]
fn singleton_pool_equals_plain_forward() {
    let model = fixed_model(&[0.3, 1.7, -0.4]);
    let pool = StudentPool::degenerate(&model, 1, 2).unwrap();
    let out = predict(&pool, &[0.0]).unwrap();
    assert_eq!(out.model_index, 0);
    let direct = model.forward_one(&[0.0]).unwrap();
    assert_eq!(out.probs, direct);
    assert_eq!(out.label, crate::nn::argmax(&direct));
}

#[test]
fn identical_students_tie_to_the_lowest_index() {
    let model = fixed_model(&[0.0, 2.0]);
    let pool = StudentPool::degenerate(&model, 4, 3).unwrap();
    let out = predict(&pool, &[0.0]).unwrap();
    assert_eq!(out.model_index, 0);
}

#[test]
fn selection_matches_reference_scan_on_random_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let n = rng.random_range(1..=6usize);
        let students: Vec<Model> = (0..n)
            .map(|_| {
                let logits: Vec<f32> = (0..4).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
                fixed_model(&logits)
            })
            .collect();
        let pool = StudentPool::from_parts(
            students.clone(),
            vec![false; n],
            vec![crate::data::TransformSpec::identity(); n],
            0,
            0,
            1.0,
            vec![f64::NAN; n],
        )
        .unwrap();

        let confidences: Vec<f64> = students
            .iter()
            .map(|s| {
                let p = s.forward_one(&[0.0]).unwrap();
                p[crate::nn::argmax(&p)]
            })
            .collect();
        let (selected, _) = select_most_confident(&pool, &[0.0]).unwrap();
        assert_eq!(selected, reference_confidence_scan(&confidences));
    }
}

#[test]
fn scaling_confidences_never_changes_the_winner() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..500 {
        let n = rng.random_range(2..=6usize);
        let confs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let scale = rng.random::<f64>() * 10.0 + 1e-3;
        let scaled: Vec<f64> = confs.iter().map(|&c| c * scale).collect();
        assert_eq!(
            reference_confidence_scan(&confs),
            reference_confidence_scan(&scaled)
        );
    }
}

// ---------------------------------------------------------------------------
// compute_qmax
// ---------------------------------------------------------------------------

#[test]
fn qmax_matches_the_formula_with_strictness_bump() {
    // (t_n, k_t, t_q, expected)
    let cases: &[(f64, usize, f64, u64)] = &[
        (100.0, 5, 0.01, 2001),  // exact quotient 2000 -> bump
        (99.0, 5, 0.01, 1981),   // exact quotient 1980 -> bump
        (100.5, 5, 0.01, 2011),  // exact quotient 2010 -> bump
        (101.0, 7, 0.013, 1110), // 1109.9... -> ceil
        (1.0, 1, 1.0, 2),        // exact 1 -> 2
        (1.0, 3, 1.0, 1),        // 0.33 -> 1
        (10.0, 2, 0.3, 17),      // 16.66 -> 17
    ];
    for &(t_n, k_t, t_q, expected) in cases {
        let q = compute_qmax(t_n, k_t, t_q).unwrap();
        assert_eq!(q, expected, "T_n={t_n}, K_t={k_t}, T_q={t_q}");
        // The strict renewal inequality must hold.
        assert!(
            k_t as f64 * q as f64 * t_q > t_n,
            "inequality violated for T_n={t_n}, K_t={k_t}, T_q={t_q}"
        );
    }
}

#[test]
fn qmax_rejects_exhausted_buffer_and_bad_times() {
    assert!(matches!(
        compute_qmax(10.0, 0, 0.01),
        Err(Error::InvalidState(_))
    ));
    assert!(compute_qmax(0.0, 1, 0.01).is_err());
    assert!(compute_qmax(10.0, 1, 0.0).is_err());
}

// ---------------------------------------------------------------------------
// PoolManager
// ---------------------------------------------------------------------------

fn manager_with_pools(ids: &[u64], q_max: u64) -> PoolManager {
    let pools: Vec<StudentPool> = ids
        .iter()
        .map(|&id| fixed_pool(&[0, 1], &[1.0, 2.0], id))
        .collect();
    PoolManager::new(pools, Some(q_max)).unwrap()
}

#[test]
fn renewal_fires_exactly_at_the_budget() {
    let mgr = manager_with_pools(&[1, 2], 3);
    let (_, r1) = mgr.predict(&[0.0]).unwrap();
    let (_, r2) = mgr.predict(&[0.0]).unwrap();
    assert!(r1.is_none() && r2.is_none());
    let (_, r3) = mgr.predict(&[0.0]).unwrap();
    let record = r3.expect("third query must trigger renewal");
    assert_eq!(record.pool_id, 1);
    assert_eq!(record.queries_served, 3);
    assert_eq!(mgr.status().active_pool_id, 2);
    assert_eq!(mgr.status().query_count, 0);
}

#[test]
fn renewal_log_accounts_q_max_queries_per_pool() {
    let mgr = manager_with_pools(&[1, 2, 3, 4, 5, 6], 200);
    for _ in 0..5 * 200 {
        mgr.predict(&[0.0]).unwrap();
    }
    let log = mgr.renewal_log();
    assert_eq!(log.len(), 5);
    for (i, rec) in log.iter().enumerate() {
        assert_eq!(rec.pool_id, i as u64 + 1);
        assert_eq!(rec.queries_served, 200);
        assert_eq!(rec.q_max, 200);
    }
    // Strictly increasing pool ids.
    for w in log.windows(2) {
        assert!(w[0].pool_id < w[1].pool_id);
    }
}

#[test]
fn swap_semantics_follow_queue_order() {
    let mgr = manager_with_pools(&[1, 2, 3], 100);
    assert_eq!(mgr.status().active_pool_id, 1);
    assert_eq!(mgr.status().buffer_depth, 2);
    let rec = mgr.swap_pool().unwrap();
    assert_eq!(rec.pool_id, 1);
    assert_eq!(mgr.status().active_pool_id, 2);
    assert_eq!(mgr.status().buffer_depth, 1);
    let rec2 = mgr.swap_pool().unwrap();
    assert_eq!(rec2.pool_id, 2);
    assert_eq!(mgr.status().active_pool_id, 3);
    // Buffer is now empty: the next swap underruns.
    assert!(matches!(mgr.swap_pool(), Err(Error::BufferUnderrun)));
}

#[test]
fn counting_is_linearizable_under_concurrency() {
    use std::sync::Arc as StdArc;
    let mgr = StdArc::new(manager_with_pools(&[1, 2, 3, 4, 5, 6, 7, 8, 9], 50));
    let threads: Vec<_> = (0..8)
        .map(|_| {
            let mgr = StdArc::clone(&mgr);
            std::thread::spawn(move || {
                for _ in 0..50 {
                    mgr.predict(&[0.0]).unwrap();
                }
            })
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    // 400 queries, Q_max 50 -> exactly 8 renewals, each worth exactly 50.
    let log = mgr.renewal_log();
    assert_eq!(log.len(), 8);
    assert!(log.iter().all(|r| r.queries_served == 50));
    assert_eq!(mgr.status().query_count, 0);
}

#[test]
fn ewma_latency_estimate_updates() {
    let mgr = manager_with_pools(&[1, 2], 1000);
    mgr.observe_latency(0.010);
    assert!((mgr.status().t_q_estimate_secs - 0.010).abs() < 1e-12);
    mgr.observe_latency(0.020);
    // 0.1 * 0.020 + 0.9 * 0.010 = 0.011
    assert!((mgr.status().t_q_estimate_secs - 0.011).abs() < 1e-12);
}

#[test]
fn renewal_log_csv_has_header_and_rows() {
    let mgr = manager_with_pools(&[1, 2], 2);
    mgr.predict(&[0.0]).unwrap();
    mgr.predict(&[0.0]).unwrap();
    let csv = mgr.renewal_log_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "pool_id,queries_served,active_secs,q_max");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,2,"));
}
