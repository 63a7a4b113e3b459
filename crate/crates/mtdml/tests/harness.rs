//! End-to-end evaluation-harness tests: robustness tables against fixed
//! models and live endpoints, surrogate-extraction pipelines, and sweeps.

use mtdml::attacks::{
    AttackKind, AttackSpec, CopycatConfig, CwParams, PgdParams, SpsaParams,
};
use mtdml::config::RunConfig;
use mtdml::data::{apply_transform, gen_blobs, TransformSpec};
use mtdml::error::Error;
use mtdml::eval::{
    robustness_eval, sweep, EvalTarget, RobustnessSetup, SweepDimension,
};
use mtdml::nn::{accuracy, train, ArchSpec, Model, TrainConfig};
use mtdml::pool::{generate_pool, PoolConfig, PoolData};
use mtdml::server::{serve, ServeConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(seed: u64) -> (Model, PoolData) {
    let train_set = gen_blobs(100, 3, 0.05, seed).unwrap();
    let test_set = gen_blobs(50, 3, 0.05, seed + 1000).unwrap();
    let model = Model::new(&ArchSpec::dense(2, vec![16], 3), seed).unwrap();
    let base = train(
        &model,
        &train_set,
        &TrainConfig {
            lr: 0.5,
            batch_size: 16,
            epochs: 40,
            seed,
        },
    )
    .unwrap();
    (
        base,
        PoolData {
            train: train_set,
            test: test_set,
        },
    )
}

fn copycat_setup<'a>(
    base: &'a Model,
    data: &'a PoolData,
    probe: &'a mtdml::data::Dataset,
) -> RobustnessSetup<'a> {
    RobustnessSetup {
        white_box: base,
        x_test: &data.test,
        copycat_probe: Some(probe),
        copycat_cfg: Some(CopycatConfig {
            arch: ArchSpec::dense(2, vec![16], 3),
            train: TrainConfig {
                lr: 0.5,
                batch_size: 16,
                epochs: 30,
                seed: 99,
            },
            holdout_fraction: 0.2,
        }),
    }
}

#[test]
fn robustness_table_against_the_undefended_fixed_model() {
    let (base, data) = fixture(60);
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let probe_spec = TransformSpec::draw(data.train.shape, &mut rng);
    let probe = apply_transform(&data.train, &probe_spec).unwrap();
    let setup = copycat_setup(&base, &data, &probe);

    let attacks = vec![
        AttackSpec::new(AttackKind::Fgsm, 0.3).with_seed(60),
        AttackSpec::new(AttackKind::Cw(CwParams::default()), 0.3).with_seed(60),
        AttackSpec::new(
            AttackKind::Spsa(SpsaParams {
                nb_iter: 10,
                spsa_samples: 64,
                learning_rate: 0.05,
                ..SpsaParams::default()
            }),
            0.3,
        )
        .with_seed(60),
        AttackSpec::new(AttackKind::CopycatFgsm, 0.3).with_seed(60),
        AttackSpec::new(AttackKind::CopycatCw, 0.3).with_seed(60),
    ];
    let table = robustness_eval(&EvalTarget::Fixed(&base), &setup, &attacks).unwrap();

    // "no_attack" equals plain accuracy on the clean test set.
    let clean = accuracy(&base, &data.test).unwrap();
    assert_eq!(table.accuracy_of("no_attack"), Some(clean));

    // The undefended model collapses under the optimization attack.
    let cw_acc = table.accuracy_of("cw").unwrap();
    assert!(cw_acc < 0.10, "undefended C&W accuracy {cw_acc}");

    // Every attack rows reports a valid accuracy over the full set.
    assert_eq!(table.rows.len(), attacks.len() + 1);
    for row in &table.rows {
        assert!((0.0..=1.0).contains(&row.accuracy), "{row:?}");
        assert_eq!(row.n, data.test.len());
    }

    // Extraction-based attacks are strictly weaker here than their
    // white-box counterparts crafted on the target itself.
    let fgsm = table.accuracy_of("fgsm").unwrap();
    let copycat_fgsm = table.accuracy_of("copycat+fgsm").unwrap();
    assert!(
        copycat_fgsm >= fgsm,
        "copycat+fgsm {copycat_fgsm} should not beat white-box fgsm {fgsm}"
    );

    let csv = table.to_csv();
    assert!(csv.starts_with("target,attack,accuracy,n,provenance"));
    assert_eq!(csv.lines().count(), table.rows.len() + 1);
}

#[test]
fn robustness_table_against_a_live_deployment() {
    let (base, data) = fixture(62);
    let cfg = PoolConfig::desk_default(62);
    let pool = generate_pool(&base, &cfg, &data, 1).unwrap();

    let serve_cfg = ServeConfig {
        listen: "127.0.0.1:0".into(),
        admin: "127.0.0.1:0".into(),
        q_max_override: Some(u64::MAX),
        expose_confidence: true, // SPSA needs probability access
        bounds: (0.0, 1.0),
    };
    let handle = serve(&serve_cfg, vec![pool]).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let probe_spec = TransformSpec::draw(data.train.shape, &mut rng);
    let probe = apply_transform(&data.train, &probe_spec).unwrap();
    let setup = copycat_setup(&base, &data, &probe);

    let attacks = vec![
        AttackSpec::new(AttackKind::Fgsm, 0.3).with_seed(62),
        AttackSpec::new(AttackKind::Cw(CwParams::default()), 0.3).with_seed(62),
        AttackSpec::new(
            AttackKind::Spsa(SpsaParams {
                nb_iter: 5,
                spsa_samples: 32,
                ..SpsaParams::default()
            }),
            0.3,
        )
        .with_seed(62),
        AttackSpec::new(AttackKind::CopycatCw, 0.3).with_seed(62),
    ];
    let target = EvalTarget::Endpoint {
        addr: handle.addr.to_string(),
        num_classes: 3,
    };
    let table = robustness_eval(&target, &setup, &attacks).unwrap();
    handle.shutdown();

    assert_eq!(table.rows.len(), attacks.len() + 1);
    let clean = table.accuracy_of("no_attack").unwrap();
    assert!(clean > 0.9, "deployment clean accuracy {clean}");
    // The deployment holds up against white-box C&W far better than a
    // fixed model does (low transferability of minimal perturbations).
    let cw = table.accuracy_of("cw").unwrap();
    assert!(cw > 0.10, "deployment C&W accuracy {cw}");
}

#[test]
fn spsa_against_hard_label_deployment_reports_partial_results() {
    let (base, data) = fixture(64);
    let pool = mtdml::pool::StudentPool::degenerate(&base, 2, 1).unwrap();
    let serve_cfg = ServeConfig {
        listen: "127.0.0.1:0".into(),
        admin: "127.0.0.1:0".into(),
        q_max_override: Some(u64::MAX),
        expose_confidence: false, // hard labels only
        bounds: (0.0, 1.0),
    };
    let handle = serve(&serve_cfg, vec![pool]).unwrap();
    let setup = RobustnessSetup {
        white_box: &base,
        x_test: &data.test,
        copycat_probe: None,
        copycat_cfg: None,
    };
    let attacks = vec![AttackSpec::new(
        AttackKind::Spsa(SpsaParams {
            nb_iter: 2,
            spsa_samples: 8,
            ..SpsaParams::default()
        }),
        0.3,
    )];
    let target = EvalTarget::Endpoint {
        addr: handle.addr.to_string(),
        num_classes: 3,
    };
    let err = robustness_eval(&target, &setup, &attacks).unwrap_err();
    handle.shutdown();
    match err {
        Error::PartialResults {
            completed, total, ..
        } => {
            assert_eq!(completed, 1, "no_attack should have completed");
            assert_eq!(total, 2);
        }
        other => panic!("expected PartialResults, got {other:?}"),
    }
}

#[test]
fn unreachable_endpoint_fails_before_any_row() {
    let (base, data) = fixture(65);
    let setup = RobustnessSetup {
        white_box: &base,
        x_test: &data.test,
        copycat_probe: None,
        copycat_cfg: None,
    };
    let target = EvalTarget::Endpoint {
        addr: "127.0.0.1:1".into(),
        num_classes: 3,
    };
    match robustness_eval(&target, &setup, &[]) {
        Err(Error::PartialResults { completed, .. }) => assert_eq!(completed, 0),
        other => panic!("expected PartialResults, got {other:?}"),
    }
}

fn quick_sweep_cfg(seed: u64) -> PoolConfig {
    PoolConfig {
        adv_mixture: vec![AttackSpec::new(
            AttackKind::Pgd(PgdParams {
                max_iter: 5,
                ..PgdParams::default()
            }),
            0.3,
        )],
        epoch_cap: 30,
        ..PoolConfig::desk_default(seed)
    }
}

#[test]
fn p_sweep_covers_both_endpoints() {
    let (base, data) = fixture(66);
    let mut cfg = quick_sweep_cfg(66);
    cfg.n = 2;
    cfg.p = 2;
    let eval_attacks = [AttackSpec::new(AttackKind::Fgsm, 0.3).with_seed(66)];
    let transfer = AttackSpec::new(AttackKind::Fgsm, 0.12).with_seed(66);
    let report = sweep(
        &base,
        &cfg,
        &data,
        &SweepDimension::P,
        &eval_attacks,
        &transfer,
    )
    .unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.rows[0].p, 0);
    assert_eq!(report.rows.last().unwrap().p, 2);
    for row in &report.rows {
        assert_eq!(row.status, "ok", "{row:?}");
        assert!(row.clean_accuracy.unwrap() > 0.9);
        assert_eq!(row.attack_accuracies.len(), 1);
    }
    let csv = report.to_csv();
    assert!(csv.lines().count() >= 4);
    // Full provenance: seed, n, p, lambda, transform mode in every row.
    for line in csv.lines().skip(1) {
        assert!(line.contains(&format!(",{},", report.rows[0].seed)), "{line}");
    }
}

#[test]
fn lambda_sweep_reports_the_first_failing_scale() {
    let (base, data) = fixture(67);
    let mut cfg = quick_sweep_cfg(67);
    cfg.p = 0;
    // A constrained retraining budget is what makes recovery fail at some
    // noise scale; with a generous one, this toy problem recovers from
    // arbitrarily large perturbations.
    cfg.retrain_lr = 0.01;
    cfg.epoch_cap = 200;
    let grid = vec![0.05, 0.5, 2.0, 10.0];
    let eval_attacks = [AttackSpec::new(AttackKind::Fgsm, 0.3).with_seed(67)];
    let transfer = AttackSpec::new(AttackKind::Fgsm, 0.12).with_seed(67);
    let report = sweep(
        &base,
        &cfg,
        &data,
        &SweepDimension::Lambda { grid },
        &eval_attacks,
        &transfer,
    )
    .unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.rows[0].status, "ok");
    assert_eq!(report.rows[1].status, "ok");
    assert!(
        report.rows[2].status.starts_with("generation_failed"),
        "{}",
        report.rows[2].status
    );
    // The sweep keeps going past the failure and reports the first
    // failing scale as the empirical maximum.
    assert!(report.rows[3].status.starts_with("generation_failed"));
    assert_eq!(report.lambda_max, Some(2.0));

    // Decreasing grids are rejected.
    let err = sweep(
        &base,
        &cfg,
        &data,
        &SweepDimension::Lambda {
            grid: vec![0.2, 0.1],
        },
        &eval_attacks,
        &transfer,
    );
    assert!(err.is_err());
}

#[test]
fn config_file_drives_the_harness() {
    // The default config is self-consistent: its data sources load, its
    // architecture matches, and the JSON written by one run can be read
    // back to regenerate it.
    let cfg = RunConfig::default();
    let train_set = cfg.data.train.load().unwrap();
    let arch = cfg.arch_for(&train_set);
    assert_eq!(arch.input_dim, train_set.dim());
    assert_eq!(arch.num_classes, train_set.num_classes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let back = RunConfig::load(&path).unwrap();
    assert_eq!(back.seed, cfg.seed);
    assert_eq!(back.pool.n, cfg.pool.n);
}
