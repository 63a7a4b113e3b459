//! Student-pool generation.
//!
//! Each student starts as a Laplace-perturbed copy of the base model,
//! recovers accuracy by retraining on its own transformed training set, and
//! (for the last `p` students) is additionally trained on an adversarial
//! mixture. A student only ships if its clean test accuracy sits within
//! `max_acc_loss` of the base model's; otherwise the perturbation scale is
//! halved and the student is rebuilt.

mod io;

pub use io::{load_pool, load_pools, pool_dir_name, save_pool};

use crate::attacks::{craft_adv_dataset, AttackKind, AttackSpec, CwParams, PgdParams};
use crate::data::{apply_transform, validate_transform, Dataset, TransformSpec};
use crate::error::{Error, Result};
use crate::nn::{accuracy, perturb_weights, train_epoch, Model};
use crate::par;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Smallest noise scale the retry loop may reach before giving up.
pub const LAMBDA_FLOOR: f64 = 1e-6;

fn default_true() -> bool {
    true
}

/// Retry budget for the post-adversarial clean-accuracy recovery loop.
const ADV_RECOVERY_ROUNDS: usize = 3;

/// How the per-student retraining sets are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TransformMode {
    /// Each student retrains on its own transformed copy of the training set.
    Distinct,
    /// Every student retrains on the shared, untransformed training set.
    Shared,
}

/// Pool-generation configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PoolConfig {
    /// Pool size.
    pub n: usize,
    /// Number of adversarially trained students (the last `p` by index).
    pub p: usize,
    /// Laplace noise scale for the weight perturbation.
    pub lambda: f64,
    /// Allowed clean-accuracy drop versus the base model.
    pub max_acc_loss: f64,
    /// Convergence threshold on the 5-epoch validation-accuracy delta.
    pub eps_conv: f64,
    /// Evasion attacks mixed into adversarial retraining data.
    pub adv_mixture: Vec<AttackSpec>,
    /// Clean samples shuffled into adversarial retraining, as a fraction of
    /// the retraining set size.
    pub clean_mix_ratio: f64,
    /// Multiplicative back-off applied to lambda when the gate fails.
    pub lambda_shrink: f64,
    /// Retry with a smaller lambda when the gate fails. The lambda sweep
    /// turns this off to observe each noise scale's raw recovery outcome.
    #[serde(default = "default_true")]
    pub retry_on_gate_failure: bool,
    pub seed: u64,
    pub transform_mode: TransformMode,
    /// Hard epoch cap per retraining call; 0 disables retraining entirely.
    pub epoch_cap: usize,
    pub retrain_lr: f64,
    pub retrain_batch_size: usize,
    /// Minimum fraction of transformed samples the base model must still
    /// recognize for a drawn transform to be considered valid.
    pub min_keep: f64,
}

impl PoolConfig {
    /// Desk-scale defaults: n=4 students, the last 3 adversarially trained
    /// on a PGD + C&W mixture.
    pub fn desk_default(seed: u64) -> Self {
        Self {
            n: 4,
            p: 3,
            lambda: 0.1,
            max_acc_loss: 0.02,
            eps_conv: 0.01,
            adv_mixture: vec![
                AttackSpec::new(AttackKind::Pgd(PgdParams::default()), 0.5),
                AttackSpec::new(AttackKind::Cw(CwParams::default()), 0.5),
            ],
            clean_mix_ratio: 1.0,
            lambda_shrink: 0.5,
            retry_on_gate_failure: true,
            seed,
            transform_mode: TransformMode::Distinct,
            epoch_cap: 200,
            retrain_lr: 0.5,
            retrain_batch_size: 16,
            min_keep: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("pool size n must be >= 1".into()));
        }
        if self.p > self.n {
            return Err(Error::Validation(format!(
                "p = {} exceeds pool size n = {}",
                self.p, self.n
            )));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Validation(format!("bad lambda {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.max_acc_loss) {
            return Err(Error::Validation(format!(
                "max_acc_loss {} outside [0, 1)",
                self.max_acc_loss
            )));
        }
        if self.eps_conv <= 0.0 {
            return Err(Error::Validation("eps_conv must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.lambda_shrink) || self.lambda_shrink == 0.0 {
            return Err(Error::Validation(format!(
                "lambda_shrink {} outside (0, 1)",
                self.lambda_shrink
            )));
        }
        if self.clean_mix_ratio < 0.0 {
            return Err(Error::Validation("clean_mix_ratio must be >= 0".into()));
        }
        if self.p > 0 && self.adv_mixture.is_empty() {
            return Err(Error::Validation(
                "adversarial training requested with an empty attack mixture".into(),
            ));
        }
        for spec in &self.adv_mixture {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Train/test split handed to the generator.
#[derive(Debug, Clone)]
pub struct PoolData {
    pub train: Dataset,
    pub test: Dataset,
}

/// A generated pool of student models.
#[derive(Debug, Clone)]
pub struct StudentPool {
    pub students: Vec<Model>,
    pub adv_flags: Vec<bool>,
    pub transform_specs: Vec<TransformSpec>,
    pub pool_id: u64,
    /// Seed the pool was generated from.
    pub gen_seed: u64,
    /// Wall-clock generation time in seconds (T_n).
    pub gen_duration_secs: f64,
    /// Clean test accuracy per student, recorded at generation time.
    pub clean_accuracies: Vec<f64>,
}

impl StudentPool {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        students: Vec<Model>,
        adv_flags: Vec<bool>,
        transform_specs: Vec<TransformSpec>,
        pool_id: u64,
        gen_seed: u64,
        gen_duration_secs: f64,
        clean_accuracies: Vec<f64>,
    ) -> Result<Self> {
        if students.is_empty() {
            return Err(Error::Validation("pool needs at least one student".into()));
        }
        if students.len() != adv_flags.len()
            || students.len() != transform_specs.len()
            || students.len() != clean_accuracies.len()
        {
            return Err(Error::Shape("pool metadata lengths disagree".into()));
        }
        Ok(Self {
            students,
            adv_flags,
            transform_specs,
            pool_id,
            gen_seed,
            gen_duration_secs,
            clean_accuracies,
        })
    }

    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    /// A degenerate pool of identical copies of one model; serves exactly
    /// like the bare model would.
    pub fn degenerate(model: &Model, n: usize, pool_id: u64) -> Result<Self> {
        Self::from_parts(
            vec![model.clone(); n],
            vec![false; n],
            vec![TransformSpec::identity(); n],
            pool_id,
            0,
            0.0,
            vec![f64::NAN; n],
        )
    }
}

/// Retraining hyper-parameters shared by all retrain calls of one pool.
#[derive(Debug, Clone, Copy)]
pub struct RetrainSettings {
    pub eps_conv: f64,
    pub epoch_cap: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl RetrainSettings {
    fn of(cfg: &PoolConfig) -> Self {
        Self {
            eps_conv: cfg.eps_conv,
            epoch_cap: cfg.epoch_cap,
            lr: cfg.retrain_lr,
            batch_size: cfg.retrain_batch_size,
        }
    }
}

/// How a retraining call ended. Hitting the epoch cap is a warning-grade
/// outcome, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrainOutcome {
    Converged { epochs: usize },
    EpochCapReached { epochs: usize },
}

/// Epoch-at-a-time retraining with periodic convergence checks.
///
/// Every 5 completed epochs the validation accuracy is compared against
/// the checkpointed value; training stops when the change drops below
/// `eps_conv`. When `adv_mixture` is given, the validation set is replaced
/// by adversarial examples crafted from the test set against the incoming
/// student.
pub fn retrain(
    student: &Model,
    x_retrain: &Dataset,
    x_test: &Dataset,
    settings: &RetrainSettings,
    adv_mixture: Option<&[AttackSpec]>,
    seed: u64,
) -> Result<(Model, RetrainOutcome)> {
    let validation = match adv_mixture {
        Some(mixture) => adv_validation_set(student, x_test, mixture)?,
        None => x_test.clone(),
    };
    let mut current = student.clone();
    if settings.epoch_cap == 0 {
        return Ok((current, RetrainOutcome::Converged { epochs: 0 }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc_tmp = accuracy(&current, &validation)?;
    let mut epochs = 0usize;
    loop {
        if epochs >= settings.epoch_cap {
            return Ok((current, RetrainOutcome::EpochCapReached { epochs }));
        }
        current = train_epoch(&current, x_retrain, settings.lr, settings.batch_size, &mut rng)?;
        epochs += 1;
        if epochs.is_multiple_of(5) {
            let acc = accuracy(&current, &validation)?;
            if (acc - acc_tmp).abs() < settings.eps_conv {
                return Ok((current, RetrainOutcome::Converged { epochs }));
            }
            acc_tmp = acc;
        }
    }
}

/// The adversarial validation set: every attack in the mixture applied to
/// the test set, concatenated.
fn adv_validation_set(model: &Model, x_test: &Dataset, mixture: &[AttackSpec]) -> Result<Dataset> {
    let parts: Vec<Dataset> = mixture
        .iter()
        .map(|spec| craft_adv_dataset(model, x_test, spec))
        .collect::<Result<_>>()?;
    let refs: Vec<&Dataset> = parts.iter().collect();
    Dataset::concat(&refs, &format!("{}-advval", x_test.name))
}

/// Builds the adversarial retraining mixture: one adversarial copy of
/// `data` per attack in the mixture, crafted against `model`, plus a
/// `clean_mix_ratio` fraction of clean samples, shuffled deterministically.
pub fn build_adv_mixture(
    model: &Model,
    data: &Dataset,
    mixture: &[AttackSpec],
    clean_mix_ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    if mixture.is_empty() {
        return Err(Error::Validation("empty attack mixture".into()));
    }
    if clean_mix_ratio < 0.0 {
        return Err(Error::Validation("clean_mix_ratio must be >= 0".into()));
    }
    let mut parts: Vec<Dataset> = Vec::with_capacity(mixture.len() + 1);
    for (ai, spec) in mixture.iter().enumerate() {
        let mut per_attack = spec.clone();
        per_attack.seed = mix(seed, 0x41 + ai as u64);
        parts.push(craft_adv_dataset(model, data, &per_attack)?);
    }

    // Clean admixture, sampled without replacement until the pool runs out,
    // then cycling.
    let clean_count = (clean_mix_ratio * data.len() as f64).round() as usize;
    if clean_count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xC1EA4));
        let mut order: Vec<usize> = (0..data.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let picks: Vec<usize> = (0..clean_count).map(|i| order[i % order.len()]).collect();
        parts.push(data.select(&picks, "clean-mix")?);
    }

    let refs: Vec<&Dataset> = parts.iter().collect();
    let combined = Dataset::concat(&refs, &format!("{}-advmix", data.name))?;

    // Deterministic output shuffle.
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5u64));
    let mut order: Vec<usize> = (0..combined.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    combined.select(&order, &combined.name.clone())
}

/// Generates one student model.
///
/// Perturb, retrain on the student's retraining set, and repeat with a
/// smaller lambda while the clean-accuracy gate fails. With `adv` set, a
/// further adversarial-mixture retraining runs, followed by up to three
/// clean recovery retrainings if the clean gate regressed.
pub fn generate_student(
    base: &Model,
    cfg: &PoolConfig,
    data: &PoolData,
    t_i: &TransformSpec,
    adv: bool,
    student_idx: usize,
) -> Result<Model> {
    let settings = RetrainSettings::of(cfg);
    let base_acc = accuracy(base, &data.test)?;
    let retrain_set = student_retrain_set(base, cfg, data, t_i)?;

    let mut lambda = cfg.lambda;
    let mut round = 0u64;
    let mut student = loop {
        let perturb_seed = mix(cfg.seed, (student_idx as u64) << 8 | round);
        let candidate = perturb_weights(base, lambda, perturb_seed)?;
        let (candidate, _) = retrain(
            &candidate,
            &retrain_set,
            &data.test,
            &settings,
            None,
            mix(perturb_seed, 0x7E),
        )?;
        let acc = accuracy(&candidate, &data.test)?;
        if base_acc - acc <= cfg.max_acc_loss {
            break candidate;
        }
        if !cfg.retry_on_gate_failure {
            return Err(Error::GenerationFailure(format!(
                "student {student_idx}: accuracy gate failed at lambda {lambda} \
                 (base {base_acc:.4}, student {acc:.4}) and retries are disabled"
            )));
        }
        lambda *= cfg.lambda_shrink;
        round += 1;
        if lambda < LAMBDA_FLOOR {
            return Err(Error::GenerationFailure(format!(
                "student {student_idx}: lambda underflowed below {LAMBDA_FLOOR} \
                 without meeting the accuracy gate (base {base_acc:.4}, last {acc:.4})"
            )));
        }
    };

    if adv {
        let mix_seed = mix(cfg.seed, 0xAD00 + student_idx as u64);
        let adv_set = build_adv_mixture(
            &student,
            &retrain_set,
            &cfg.adv_mixture,
            cfg.clean_mix_ratio,
            mix_seed,
        )?;
        let (hardened, _) = retrain(
            &student,
            &adv_set,
            &data.test,
            &settings,
            Some(&cfg.adv_mixture),
            mix(mix_seed, 0x7F),
        )?;
        student = hardened;

        // Clean-accuracy recovery loop.
        let mut rounds = 0usize;
        loop {
            let acc = accuracy(&student, &data.test)?;
            if base_acc - acc <= cfg.max_acc_loss {
                break;
            }
            if rounds >= ADV_RECOVERY_ROUNDS {
                return Err(Error::GenerationFailure(format!(
                    "student {student_idx}: clean accuracy {acc:.4} still more than \
                     {} below base {base_acc:.4} after {ADV_RECOVERY_ROUNDS} recovery rounds",
                    cfg.max_acc_loss
                )));
            }
            let (recovered, _) = retrain(
                &student,
                &retrain_set,
                &data.test,
                &settings,
                None,
                mix(mix_seed, 0x90 + rounds as u64),
            )?;
            student = recovered;
            rounds += 1;
        }
    }
    Ok(student)
}

/// The retraining set for one student under the configured transform mode.
fn student_retrain_set(
    base: &Model,
    cfg: &PoolConfig,
    data: &PoolData,
    t_i: &TransformSpec,
) -> Result<Dataset> {
    match cfg.transform_mode {
        TransformMode::Shared => Ok(data.train.clone()),
        TransformMode::Distinct => {
            let transformed = apply_transform(&data.train, t_i)?;
            validate_transform(base, &transformed, cfg.min_keep)
        }
    }
}

/// Draws `n` pairwise-distinct transform specs that pass the validity
/// filter against the base model.
pub fn draw_transform_specs(
    base: &Model,
    cfg: &PoolConfig,
    data: &PoolData,
) -> Result<Vec<TransformSpec>> {
    if cfg.transform_mode == TransformMode::Shared {
        return Ok(vec![TransformSpec::identity(); cfg.n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x7A));
    let mut specs: Vec<TransformSpec> = Vec::with_capacity(cfg.n);
    let mut attempts = 0usize;
    while specs.len() < cfg.n {
        attempts += 1;
        if attempts > cfg.n * 50 {
            return Err(Error::GenerationFailure(
                "could not draw enough valid, distinct transforms".into(),
            ));
        }
        let candidate = TransformSpec::draw(data.train.shape, &mut rng);
        if specs.contains(&candidate) {
            continue;
        }
        let transformed = apply_transform(&data.train, &candidate)?;
        match validate_transform(base, &transformed, cfg.min_keep) {
            Ok(_) => specs.push(candidate),
            // Too aggressive: draw milder parameters on the next spin.
            Err(Error::TransformTooAggressive { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(specs)
}

/// Generates a full pool: `n` students over distinct transforms, the last
/// `p` adversarially trained. Student generations run in parallel;
/// everything except the wall-clock duration is deterministic in
/// `(base, cfg)`.
pub fn generate_pool(
    base: &Model,
    cfg: &PoolConfig,
    data: &PoolData,
    pool_id: u64,
) -> Result<StudentPool> {
    cfg.validate()?;
    let specs = draw_transform_specs(base, cfg, data)?;
    let start = std::time::Instant::now();
    let students: Vec<Model> = par::try_map_indexed(cfg.n, |i| {
        let adv = i >= cfg.n - cfg.p;
        generate_student(base, cfg, data, &specs[i], adv, i)
    })?;
    let gen_duration_secs = start.elapsed().as_secs_f64();
    let adv_flags: Vec<bool> = (0..cfg.n).map(|i| i >= cfg.n - cfg.p).collect();
    let clean_accuracies = students
        .iter()
        .map(|s| accuracy(s, &data.test))
        .collect::<Result<Vec<f64>>>()?;
    StudentPool::from_parts(
        students,
        adv_flags,
        specs,
        pool_id,
        cfg.seed,
        gen_duration_secs,
        clean_accuracies,
    )
}

/// Cheap splittable seed derivation.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
