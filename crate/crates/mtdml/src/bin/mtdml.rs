//! Command-line frontend: train a base model, generate pools, serve them,
//! craft attacks, and run the evaluation harnesses.

use clap::{Parser, Subcommand};

use mtdml::attacks::{
    craft_adv_dataset, spsa_craft, AttackKind, AttackSpec, CopycatConfig,
    CwParams, PgdParams, PoolOracle, SpsaParams,
};
use mtdml::config::RunConfig;
use mtdml::data::{apply_transform, save_csv, TransformSpec};
use mtdml::error::{Error, Result};
use mtdml::eval::{
    avg_transferability, frq, robustness_eval, sweep, write_run_manifest, EvalTarget,
    RobustnessSetup, RunManifest, SweepDimension,
};
use mtdml::nn::serialize::{load_model, save_model};
use mtdml::nn::{accuracy, train, Model};
use mtdml::pool::{generate_pool, load_pool, load_pools, pool_dir_name, save_pool, PoolData};
use mtdml::scheduler::PoolManager;
use mtdml::server::{serve_with_manager, spawn_pool_generator};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64};
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "mtdml", about = "Moving-target defense for ML classifiers")]
struct Cli {
    /// JSON run configuration; flags override individual fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model and write it to disk.
    TrainBase {
        #[arg(long, default_value = "base.bin")]
        out: PathBuf,
    },
    /// Generate one or more student pools from a base model.
    GenPool {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, default_value = "pools")]
        out_dir: PathBuf,
        /// How many pools to generate.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// First pool id.
        #[arg(long, default_value_t = 1)]
        first_id: u64,
    },
    /// Serve pools over TCP with query-budgeted renewal.
    Serve {
        #[arg(long, default_value = "pools")]
        pool_dir: PathBuf,
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        admin: Option<String>,
        /// Fixed query budget (otherwise recomputed per swap).
        #[arg(long)]
        q_max: Option<u64>,
        /// Expose confidence/probability output to clients that ask.
        #[arg(long)]
        expose_confidence: bool,
        /// Base model enabling background pool generation.
        #[arg(long)]
        gen_base: Option<PathBuf>,
        /// Standby pools the background generator maintains.
        #[arg(long, default_value_t = 2)]
        buffer_target: usize,
    },
    /// Craft an adversarial set against a fixed model and save it as CSV.
    Attack {
        #[arg(long)]
        model: PathBuf,
        /// fgsm | pgd | cw | spsa
        #[arg(long, default_value = "fgsm")]
        attack: String,
        #[arg(long, default_value_t = 0.3)]
        epsilon: f64,
        #[arg(long, default_value = "adv.csv")]
        out: PathBuf,
    },
    /// Accuracy of a target under each configured attack.
    EvalRobustness {
        /// The adversary's white-box surface (the base model).
        #[arg(long)]
        base: PathBuf,
        /// Fixed-model target path.
        #[arg(long)]
        target_model: Option<PathBuf>,
        /// Serving-endpoint target address.
        #[arg(long)]
        target_addr: Option<String>,
        #[arg(long, default_value = "robustness.csv")]
        out: PathBuf,
    },
    /// Average transferability across one pool's students.
    EvalTransfer {
        #[arg(long)]
        pool_dir: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        epsilon: f64,
        #[arg(long, default_value = "transfer.csv")]
        out: PathBuf,
    },
    /// Failed-repeated-queries across pool renewals: SPSA examples crafted
    /// against the first pool, replayed on the later pools.
    EvalFrq {
        #[arg(long, default_value = "pools")]
        pool_dir: PathBuf,
        /// Number of test examples attacked.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value = "frq.csv")]
        out: PathBuf,
    },
    /// Hyper-parameter sweep: p | lambda | transform.
    Sweep {
        #[arg(long)]
        base: PathBuf,
        /// p | lambda | transform
        #[arg(long, default_value = "p")]
        dimension: String,
        /// Comma-separated lambda grid for the lambda dimension.
        #[arg(long)]
        lambda_grid: Option<String>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.pool.seed = seed;
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::TrainBase { out } => train_base(&cfg, &out),
        Command::GenPool {
            base,
            out_dir,
            count,
            first_id,
        } => gen_pools(&cfg, &base, &out_dir, count, first_id),
        Command::Serve {
            pool_dir,
            listen,
            admin,
            q_max,
            expose_confidence,
            gen_base,
            buffer_target,
        } => run_serve(
            &cfg,
            &pool_dir,
            listen,
            admin,
            q_max,
            expose_confidence,
            gen_base,
            buffer_target,
        ),
        Command::Attack {
            model,
            attack,
            epsilon,
            out,
        } => run_attack(&cfg, &model, &attack, epsilon, &out),
        Command::EvalRobustness {
            base,
            target_model,
            target_addr,
            out,
        } => eval_robustness_cmd(&cfg, &base, target_model, target_addr, &out),
        Command::EvalTransfer {
            pool_dir,
            epsilon,
            out,
        } => eval_transfer_cmd(&cfg, &pool_dir, epsilon, &out),
        Command::EvalFrq {
            pool_dir,
            samples,
            out,
        } => eval_frq_cmd(&cfg, &pool_dir, samples, &out),
        Command::Sweep {
            base,
            dimension,
            lambda_grid,
            out,
        } => sweep_cmd(&cfg, &base, &dimension, lambda_grid, &out),
    }
}

fn manifest_for(cfg: &RunConfig, command: &str, outputs: &[&Path]) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        seed: cfg.seed,
        config: cfg.to_json(),
        outputs: outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
    }
}

fn write_outputs(cfg: &RunConfig, command: &str, csv_path: &Path, csv: &str) -> Result<()> {
    std::fs::write(csv_path, csv)?;
    let manifest_path = csv_path.with_extension("manifest.json");
    write_run_manifest(&manifest_for(cfg, command, &[csv_path]), &manifest_path)?;
    println!("wrote {} (+ manifest)", csv_path.display());
    Ok(())
}

fn train_base(cfg: &RunConfig, out: &Path) -> Result<()> {
    let train_set = cfg.data.train.load()?;
    let test_set = cfg.data.test.load()?;
    let model = Model::new(&cfg.arch_for(&train_set), cfg.seed)?;
    let trained = train(&model, &train_set, &cfg.train)?;
    let train_acc = accuracy(&trained, &train_set)?;
    let test_acc = accuracy(&trained, &test_set)?;
    save_model(&trained, out)?;
    let manifest_path = out.with_extension("manifest.json");
    write_run_manifest(&manifest_for(cfg, "train-base", &[out]), &manifest_path)?;
    println!(
        "trained {} (train acc {train_acc:.4}, test acc {test_acc:.4}) -> {}",
        trained.arch_id(),
        out.display()
    );
    Ok(())
}

fn pool_data(cfg: &RunConfig) -> Result<PoolData> {
    Ok(PoolData {
        train: cfg.data.train.load()?,
        test: cfg.data.test.load()?,
    })
}

fn gen_pools(cfg: &RunConfig, base: &Path, out_dir: &Path, count: u64, first_id: u64) -> Result<()> {
    let base_model = load_model(base)?;
    let data = pool_data(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    for offset in 0..count {
        let id = first_id + offset;
        let mut pool_cfg = cfg.pool.clone();
        pool_cfg.seed = mtdml_seed(cfg.pool.seed, id);
        let pool = generate_pool(&base_model, &pool_cfg, &data, id)?;
        let dir = out_dir.join(pool_dir_name(id));
        save_pool(&pool, &dir)?;
        println!(
            "pool {id}: {} students, T_n {:.2}s -> {}",
            pool.len(),
            pool.gen_duration_secs,
            dir.display()
        );
    }
    let manifest_path = out_dir.join("run.manifest.json");
    write_run_manifest(&manifest_for(cfg, "gen-pool", &[out_dir]), &manifest_path)?;
    Ok(())
}

fn mtdml_seed(seed: u64, id: u64) -> u64 {
    // Distinct pools need distinct generation seeds.
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id)
}

#[allow(clippy::too_many_arguments)]
fn run_serve(
    cfg: &RunConfig,
    pool_dir: &Path,
    listen: Option<String>,
    admin: Option<String>,
    q_max: Option<u64>,
    expose_confidence: bool,
    gen_base: Option<PathBuf>,
    buffer_target: usize,
) -> Result<()> {
    let pools = load_pools(pool_dir)?;
    let next_id = pools.iter().map(|p| p.pool_id).max().unwrap_or(0) + 1;
    let mut serve_cfg = cfg.serve.clone();
    if let Some(l) = listen {
        serve_cfg.listen = l;
    }
    if let Some(a) = admin {
        serve_cfg.admin = a;
    }
    if q_max.is_some() {
        serve_cfg.q_max_override = q_max;
    }
    serve_cfg.expose_confidence = serve_cfg.expose_confidence || expose_confidence;

    let manager = Arc::new(PoolManager::new(pools, serve_cfg.q_max_override)?);
    let handle = serve_with_manager(&serve_cfg, Arc::clone(&manager))?;
    println!("serving on {} (admin {})", handle.addr, handle.admin_addr);

    let shutdown = Arc::new(AtomicBool::new(false));
    if let Some(base_path) = gen_base {
        let base_model = load_model(&base_path)?;
        let data = pool_data(cfg)?;
        spawn_pool_generator(
            Arc::clone(&manager),
            base_model,
            cfg.pool.clone(),
            data,
            buffer_target,
            Arc::new(AtomicU64::new(next_id)),
            shutdown,
        );
        println!("background pool generation enabled (buffer target {buffer_target})");
    }
    handle.join();
    Ok(())
}

fn parse_attack(cfg: &RunConfig, name: &str, epsilon: f64) -> Result<AttackSpec> {
    let kind = match name {
        "fgsm" => AttackKind::Fgsm,
        "pgd" => AttackKind::Pgd(PgdParams::default()),
        "cw" => AttackKind::Cw(CwParams::default()),
        "spsa" => AttackKind::Spsa(SpsaParams::default()),
        other => {
            return Err(Error::Validation(format!(
                "unknown attack {other:?}; expected fgsm|pgd|cw|spsa"
            )))
        }
    };
    Ok(AttackSpec::new(kind, epsilon).with_seed(cfg.seed))
}

fn run_attack(cfg: &RunConfig, model: &Path, attack: &str, epsilon: f64, out: &Path) -> Result<()> {
    let target = load_model(model)?;
    let test_set = cfg.data.test.load()?;
    let spec = parse_attack(cfg, attack, epsilon)?;
    let adv = match spec.kind {
        AttackKind::Spsa(_) => {
            let pool = mtdml::pool::StudentPool::degenerate(&target, 1, 0)?;
            let oracle = PoolOracle::new(&pool);
            spsa_craft(&oracle, &test_set, &spec)?
        }
        _ => craft_adv_dataset(&target, &test_set, &spec)?,
    };
    save_csv(&adv, out)?;
    let manifest_path = out.with_extension("manifest.json");
    let mut manifest = manifest_for(cfg, "attack", &[out]);
    manifest.config["attack_spec"] = serde_json::to_value(&spec)?;
    write_run_manifest(&manifest, &manifest_path)?;
    println!("crafted {} adversarial examples -> {}", adv.len(), out.display());
    Ok(())
}

fn eval_robustness_cmd(
    cfg: &RunConfig,
    base: &Path,
    target_model: Option<PathBuf>,
    target_addr: Option<String>,
    out: &Path,
) -> Result<()> {
    let base_model = load_model(base)?;
    let test_set = cfg.data.test.load()?;
    let train_set = cfg.data.train.load()?;

    // Copycat probes a transformed copy of the training data.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC0);
    let probe_spec = TransformSpec::draw(train_set.shape, &mut rng);
    let probe = apply_transform(&train_set, &probe_spec)?;
    let copycat_cfg = CopycatConfig {
        arch: cfg.arch_for(&train_set),
        train: cfg.train,
        holdout_fraction: 0.2,
    };
    let setup = RobustnessSetup {
        white_box: &base_model,
        x_test: &test_set,
        copycat_probe: Some(&probe),
        copycat_cfg: Some(copycat_cfg),
    };

    let loaded_target;
    let target = match (&target_model, &target_addr) {
        (Some(path), None) => {
            loaded_target = load_model(path)?;
            EvalTarget::Fixed(&loaded_target)
        }
        (None, Some(addr)) => EvalTarget::Endpoint {
            addr: addr.clone(),
            num_classes: test_set.num_classes,
        },
        _ => {
            return Err(Error::Validation(
                "give exactly one of --target-model or --target-addr".into(),
            ))
        }
    };

    let table = robustness_eval(&target, &setup, &cfg.attacks)?;
    for row in &table.rows {
        println!("{:<14} accuracy {:.4} (n={})", row.attack, row.accuracy, row.n);
    }
    write_outputs(cfg, "eval-robustness", out, &table.to_csv())
}

fn eval_transfer_cmd(cfg: &RunConfig, pool_dir: &Path, epsilon: f64, out: &Path) -> Result<()> {
    let pool = load_pool(pool_dir)?;
    let test_set = cfg.data.test.load()?;
    let spec = AttackSpec::new(AttackKind::Fgsm, epsilon).with_seed(cfg.seed);
    let adv_sets = pool
        .students
        .iter()
        .map(|s| craft_adv_dataset(s, &test_set, &spec))
        .collect::<Result<Vec<_>>>()?;
    let (matrix, avg) = avg_transferability(&pool.students, &adv_sets)?;

    let mut csv = String::from("from,to,rate,n_adv_from,attack,epsilon,seed\n");
    for (i, row) in matrix.rates.iter().enumerate() {
        for (j, rate) in row.iter().enumerate() {
            if let Some(r) = rate {
                csv.push_str(&format!(
                    "{i},{j},{r:.6},{},fgsm,{epsilon},{}\n",
                    matrix.n_adv[i], cfg.seed
                ));
            }
        }
    }
    println!("average transferability {avg:.4}");
    write_outputs(cfg, "eval-transfer", out, &csv)
}

fn eval_frq_cmd(cfg: &RunConfig, pool_dir: &Path, samples: usize, out: &Path) -> Result<()> {
    let pools = load_pools(pool_dir)?;
    if pools.len() < 2 {
        return Err(Error::Validation(
            "eval-frq needs at least two pools".into(),
        ));
    }
    let test_set = cfg.data.test.load()?;
    let subset: Vec<usize> = (0..test_set.len().min(samples)).collect();
    let probe = test_set.select(&subset, "frq-probe")?;

    let first = &pools[0];
    let oracle = PoolOracle::new(first);
    // The configured SPSA spec drives the repeated-query attack; default
    // parameters otherwise.
    let spsa_spec = cfg
        .attacks
        .iter()
        .find(|a| matches!(a.kind, AttackKind::Spsa(_)))
        .cloned()
        .unwrap_or_else(|| {
            AttackSpec::new(AttackKind::Spsa(SpsaParams::default()), 0.3).with_seed(cfg.seed)
        });
    let adv = spsa_craft(&oracle, &probe, &spsa_spec)?;
    let report = frq(first, &pools[1..], &adv)?;

    let mut csv = String::from("pool_id,a,b,frq,robust_accuracy,newly_misclassified,seed\n");
    for entry in &report.per_pool {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{}\n",
            entry.pool_id,
            entry.a,
            report.b,
            entry.frq,
            entry.robust_accuracy,
            entry.newly_misclassified,
            cfg.seed
        ));
    }
    println!(
        "FRQ: b={} mean-over-pools {:.4} pooled {:.4}",
        report.b, report.mean_over_pools, report.pooled
    );
    write_outputs(cfg, "eval-frq", out, &csv)
}

fn sweep_cmd(
    cfg: &RunConfig,
    base: &Path,
    dimension: &str,
    lambda_grid: Option<String>,
    out: &Path,
) -> Result<()> {
    let base_model = load_model(base)?;
    let data = pool_data(cfg)?;
    let dim = match dimension {
        "p" => SweepDimension::P,
        "lambda" => {
            let grid = match lambda_grid {
                Some(s) => s
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Validation(format!("bad lambda {v:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => vec![0.01, 0.03, 0.05, 0.1, 0.2, 0.4, 0.8],
            };
            SweepDimension::Lambda { grid }
        }
        "transform" => SweepDimension::TransformMode,
        other => {
            return Err(Error::Validation(format!(
                "unknown sweep dimension {other:?}; expected p|lambda|transform"
            )))
        }
    };
    let eval_attacks: Vec<AttackSpec> = cfg
        .attacks
        .iter()
        .filter(|a| !matches!(a.kind, AttackKind::Spsa(_)))
        .cloned()
        .collect();
    let transfer_attack = AttackSpec::new(AttackKind::Fgsm, 0.3).with_seed(cfg.seed);
    let report = sweep(&base_model, &cfg.pool, &data, &dim, &eval_attacks, &transfer_attack)?;
    if let Some(lmax) = report.lambda_max {
        println!("empirical lambda_max: {lmax}");
    }
    write_outputs(cfg, "sweep", out, &report.to_csv())
}
