use super::*;
use crate::data::Shape;
use crate::linalg::Mat;
use crate::nn::{Activation, Layer};
use crate::pool::StudentPool;

/// Model that predicts class 0 iff feature `idx` > 0.5.
fn threshold_model(idx: usize) -> Model {
    let mut w = Mat::zeros(2, 2);
    w.set(0, idx, 10.0);
    w.set(1, idx, -10.0);
    Model::from_layers(
        vec![Layer {
            weights: w,
            biases: vec![-5.0, 5.0],
            activation: Activation::Linear,
        }],
        format!("thresh-{idx}"),
    )
    .unwrap()
}

fn set_of(rows: &[[f32; 2]]) -> Dataset {
    Dataset::new(
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap(),
        vec![0; rows.len()],
        2,
        (0.0, 1.0),
        "hand",
        Shape::Flat(2),
    )
    .unwrap()
}

fn degenerate_pool_of(model: &Model, n: usize, id: u64) -> StudentPool {
    StudentPool::degenerate(model, n, id).unwrap()
}

// ---------------------------------------------------------------------------
// avg_transferability
// ---------------------------------------------------------------------------

#[test]
fn hand_computed_two_model_average() {
    // Model A keys on feature 0, model B on feature 1; label is always 0,
    // so A is fooled iff x0 < 0.5 and B iff x1 < 0.5.
    let a = threshold_model(0);
    let b = threshold_model(1);

    // Four rows fool A; two of those also fool B -> rate(A->B) = 0.5.
    let set_a = set_of(&[
        [0.1, 0.1],
        [0.2, 0.2],
        [0.3, 0.9],
        [0.4, 0.8],
        [0.9, 0.9], // does not fool A
    ]);
    // Five rows fool B; one of those also fools A -> rate(B->A) = 0.2.
    let set_b = set_of(&[
        [0.2, 0.1],
        [0.9, 0.2],
        [0.8, 0.3],
        [0.7, 0.4],
        [0.6, 0.2],
    ]);

    let (matrix, avg) = avg_transferability(&[a, b], &[set_a, set_b]).unwrap();
    assert_eq!(matrix.n_adv, vec![4, 5]);
    assert_eq!(matrix.rates[0][1], Some(0.5));
    assert_eq!(matrix.rates[1][0], Some(0.2));
    assert!((avg - 0.35).abs() < 1e-12, "avg {avg}");
}

#[test]
fn identical_models_transfer_at_rate_one() {
    let a = threshold_model(0);
    let b = threshold_model(0);
    let set = set_of(&[[0.1, 0.5], [0.2, 0.5], [0.9, 0.5]]);
    let (matrix, avg) = avg_transferability(&[a, b], &[set.clone(), set]).unwrap();
    assert_eq!(matrix.rates[0][1], Some(1.0));
    assert_eq!(matrix.rates[1][0], Some(1.0));
    assert_eq!(avg, 1.0);
}

#[test]
fn matches_brute_force_recount_on_random_instances() {
    use crate::attacks::test_support::trained_blobs;
    use crate::attacks::{craft_adv_dataset, AttackKind, AttackSpec};
    use crate::nn::perturb_weights;

    for seed in [40u64, 41, 42] {
        let (base, data) = trained_blobs(seed);
        let models: Vec<Model> = (0..3)
            .map(|i| perturb_weights(&base, 0.05, seed * 10 + i).unwrap())
            .collect();
        let spec = AttackSpec::new(AttackKind::Fgsm, 0.3).with_seed(seed);
        let adv_sets: Vec<Dataset> = models
            .iter()
            .map(|m| craft_adv_dataset(m, &data, &spec).unwrap())
            .collect();

        match avg_transferability(&models, &adv_sets) {
            Ok((matrix, avg)) => {
                let (bf_rates, bf_avg) = brute_force_transfer(&models, &adv_sets);
                assert_eq!(matrix.rates, bf_rates, "seed {seed}");
                assert_eq!(avg, bf_avg, "seed {seed}");
            }
            Err(Error::UndefinedMetric(_)) => {
                let (_, counts) = brute_force_masks(&models, &adv_sets);
                assert!(counts.iter().all(|&c| c == 0));
            }
            Err(e) => panic!("unexpected error {e:?}"),
        }
    }
}

/// Independent recount: re-derives every misclassification from scratch,
/// one (pair, example) at a time.
fn brute_force_transfer(models: &[Model], sets: &[Dataset]) -> (Vec<Vec<Option<f64>>>, f64) {
    let n = models.len();
    let mut rates = vec![vec![None; n]; n];
    let mut sum = 0.0;
    let mut defined = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut fooled_i = 0usize;
            let mut both = 0usize;
            for e in 0..sets[i].len() {
                let x = sets[i].inputs.row(e);
                let y = sets[i].labels[e];
                let pi = crate::nn::argmax(&models[i].forward_one(x).unwrap());
                if pi != y {
                    fooled_i += 1;
                    let pj = crate::nn::argmax(&models[j].forward_one(x).unwrap());
                    if pj != y {
                        both += 1;
                    }
                }
            }
            if fooled_i > 0 {
                let r = both as f64 / fooled_i as f64;
                rates[i][j] = Some(r);
                sum += r;
                defined += 1;
            }
        }
    }
    (rates, sum / defined as f64)
}

fn brute_force_masks(models: &[Model], sets: &[Dataset]) -> (usize, Vec<usize>) {
    let counts: Vec<usize> = models
        .iter()
        .zip(sets)
        .map(|(m, s)| {
            (0..s.len())
                .filter(|&e| {
                    crate::nn::argmax(&m.forward_one(s.inputs.row(e)).unwrap()) != s.labels[e]
                })
                .count()
        })
        .collect();
    (models.len(), counts)
}

#[test]
fn rejects_single_model_and_all_clean() {
    let a = threshold_model(0);
    let set = set_of(&[[0.9, 0.9]]);
    assert!(matches!(
        avg_transferability(std::slice::from_ref(&a), std::slice::from_ref(&set)),
        Err(Error::Validation(_))
    ));
    // Nothing fools anyone: undefined metric.
    let b = threshold_model(0);
    assert!(matches!(
        avg_transferability(&[a, b], &[set.clone(), set]),
        Err(Error::UndefinedMetric(_))
    ));
}

// ---------------------------------------------------------------------------
// frq
// ---------------------------------------------------------------------------

#[test]
fn identical_later_pool_gives_frq_zero() {
    let model = threshold_model(0);
    let first = degenerate_pool_of(&model, 2, 1);
    let later = degenerate_pool_of(&model, 2, 2);
    // Rows with x0 < 0.5 fool the model (label 0).
    let adv = set_of(&[[0.1, 0.2], [0.3, 0.4], [0.9, 0.9]]);
    let report = frq(&first, &[later], &adv).unwrap();
    assert_eq!(report.b, 2);
    assert_eq!(report.per_pool[0].a, 0);
    assert_eq!(report.per_pool[0].frq, 0.0);
    assert_eq!(report.mean_over_pools, 0.0);
}

#[test]
fn perfect_later_pool_gives_frq_one() {
    // First pool keys on feature 1 (wrong feature): fooled by x1 < 0.5.
    // Later pool keys on feature 0 and the data is labeled by feature 0,
    // so it classifies everything correctly.
    let first = degenerate_pool_of(&threshold_model(1), 2, 1);
    let later = degenerate_pool_of(&threshold_model(0), 2, 2);
    let adv = set_of(&[[0.9, 0.1], [0.8, 0.2], [0.7, 0.3]]);
    let report = frq(&first, &[later], &adv).unwrap();
    assert_eq!(report.b, 3);
    assert_eq!(report.per_pool[0].frq, 1.0);
    assert_eq!(report.pooled, 1.0);
}

#[test]
fn frq_accounting_identity_holds() {
    use crate::attacks::test_support::trained_blobs;
    use crate::attacks::{craft_adv_dataset, AttackKind, AttackSpec};
    use crate::nn::perturb_weights;

    let (base, data) = trained_blobs(50);
    let make_pool = |seed: u64, id: u64| {
        let students: Vec<Model> = (0..3)
            .map(|i| perturb_weights(&base, 0.15, seed + i).unwrap())
            .collect();
        StudentPool::from_parts(
            students,
            vec![false; 3],
            vec![crate::data::TransformSpec::identity(); 3],
            id,
            0,
            1.0,
            vec![f64::NAN; 3],
        )
        .unwrap()
    };
    let first = make_pool(100, 1);
    let later = vec![make_pool(200, 2), make_pool(300, 3)];
    let adv = craft_adv_dataset(&base, &data, &AttackSpec::new(AttackKind::Fgsm, 0.3)).unwrap();

    let report = frq(&first, &later, &adv).unwrap();
    let m = adv.len() as f64;
    for entry in &report.per_pool {
        let lhs = entry.robust_accuracy - report.first_pool_robust_accuracy;
        let rhs = (entry.a as f64 - entry.newly_misclassified as f64) / m;
        assert!(
            (lhs - rhs).abs() < 1e-12,
            "decomposition broken for pool {}: {lhs} vs {rhs}",
            entry.pool_id
        );
    }
}

#[test]
fn frq_with_no_successful_examples_is_undefined() {
    let first = degenerate_pool_of(&threshold_model(0), 2, 1);
    let later = degenerate_pool_of(&threshold_model(0), 2, 2);
    let adv = set_of(&[[0.9, 0.9]]);
    assert!(matches!(
        frq(&first, &[later], &adv),
        Err(Error::UndefinedMetric(_))
    ));
}
