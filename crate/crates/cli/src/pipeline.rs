//! The stages every experiment is assembled from. Each stage derives its
//! randomness from the run seed alone, so a stage repeated in another
//! experiment reproduces the same result.

use darc_core::corpus::{generate_synthetic_corpus, read_corpus, Document};
use darc_core::diagnostics::{
    cross_accuracy_matrix, monotonicity_report, AccuracyMatrix, MonotonicityReport, QuestionerSnapshot, SolverSnapshot,
};
use darc_core::questioner::{
    calibration, train_questioner, DifficultyEstimatorConfig, Estimator, QuestionerPolicy, QuestionerTrainConfig,
    RewardRecord, RewardRule, TierCalibration,
};
use darc_core::solver::{
    build_offline_set, order_curriculum, run_coupled_baseline, train_solver, validation_questions, CoupledBaselineConfig,
    CoupledRun, CurriculumSchedule, OfflineQuestionSet, OrderedItems, Ordering, SolverTrainState, StepRecord,
};
use darc_core::{Domain, Result, SolverProfile, StreamKey, SyntheticQuestion};

use crate::config::RunConfig;

/// Per-stage seeds, all derived from the run seed.
#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    pub corpus: u64,
    pub questioner: u64,
    pub calibration: u64,
    pub offline_set: u64,
    pub validation: u64,
    pub shuffle: u64,
    pub solver: u64,
    pub coupled: u64,
    pub evaluation: u64,
}

impl Seeds {
    pub fn new(seed: u64) -> Self {
        let k = |d: Domain| StreamKey::root(seed).domain(d).raw();
        Seeds {
            corpus: k(Domain::Corpus),
            questioner: k(Domain::Training),
            calibration: k(Domain::Estimation),
            offline_set: k(Domain::Generation),
            validation: k(Domain::Validation),
            shuffle: k(Domain::Shuffle),
            solver: k(Domain::Student),
            coupled: k(Domain::Baseline),
            evaluation: k(Domain::Evaluation),
        }
    }
}

pub fn base_solver(cfg: &RunConfig) -> Result<SolverProfile> {
    SolverProfile::new(cfg.model.base_ability, cfg.model.doc_boost)
}

pub fn estimator(cfg: &RunConfig) -> Result<Estimator> {
    Ok(Estimator::new(DifficultyEstimatorConfig {
        rollouts: cfg.model.rollouts,
        base_solver: base_solver(cfg)?,
        num_options: cfg.model.num_options,
    }))
}

pub fn corpus(cfg: &RunConfig) -> Result<Vec<Document>> {
    match &cfg.corpus.path {
        Some(p) => read_corpus(std::path::Path::new(p)),
        None => generate_synthetic_corpus(
            cfg.corpus.size,
            (cfg.corpus.offset_min, cfg.corpus.offset_max),
            Seeds::new(cfg.seed).corpus,
        ),
    }
}

/// Tier means start at the base ability: no tier preference before training.
pub fn initial_questioner(cfg: &RunConfig, tiers: &[f64]) -> Result<QuestionerPolicy> {
    QuestionerPolicy::new(
        tiers,
        cfg.model.base_ability,
        cfg.questioner.initial_log_scale,
        cfg.questioner.initial_grounding_logit,
    )
}

pub struct QuestionerStage {
    pub policy: QuestionerPolicy,
    pub curve: Vec<RewardRecord>,
    /// `true` when the policy came from a checkpoint.
    pub loaded: bool,
}

pub fn questioner_stage(cfg: &RunConfig, docs: &[Document]) -> Result<QuestionerStage> {
    if let Some(path) = &cfg.questioner.checkpoint {
        let text = std::fs::read_to_string(path).map_err(|e| darc_core::LabError::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
        return Ok(QuestionerStage {
            policy: QuestionerPolicy::from_checkpoint(&text)?,
            curve: Vec::new(),
            loaded: true,
        });
    }
    let initial = initial_questioner(cfg, &cfg.questioner.tiers)?;
    let (policy, curve) = train_questioner(initial, docs, &estimator(cfg)?, &cfg.questioner_train(), Seeds::new(cfg.seed).questioner)?;
    Ok(QuestionerStage {
        policy,
        curve,
        loaded: false,
    })
}

pub fn calibration_stage(cfg: &RunConfig, policy: &QuestionerPolicy, docs: &[Document]) -> Result<Vec<TierCalibration>> {
    calibration(policy, docs, &estimator(cfg)?, cfg.questioner.calibration_per_tier, Seeds::new(cfg.seed).calibration)
}

pub struct SolverStage {
    pub set: OfflineQuestionSet,
    pub ordered: OrderedItems,
    pub validation: Vec<SyntheticQuestion>,
    pub state: SolverTrainState,
    pub curve: Vec<StepRecord>,
}

pub fn offline_set(cfg: &RunConfig, policy: &QuestionerPolicy, docs: &[Document]) -> Result<OfflineQuestionSet> {
    build_offline_set(
        policy,
        docs,
        &policy.tier_values(),
        cfg.solver.per_tier_count,
        cfg.model.num_options,
        Seeds::new(cfg.seed).offline_set,
    )
}

/// Offline set, ordering and student training on a frozen questioner.
pub fn solver_stage(
    cfg: &RunConfig,
    policy: &QuestionerPolicy,
    docs: &[Document],
    ordering: Ordering,
    student: SolverProfile,
) -> Result<SolverStage> {
    let seeds = Seeds::new(cfg.seed);
    let set = offline_set(cfg, policy, docs)?;
    let schedule = CurriculumSchedule::easy_to_hard(&policy.tier_values());
    let ordered = order_curriculum(&set, &schedule, ordering, seeds.shuffle)?;
    let validation = validation_questions(policy, docs, cfg.solver.validation_per_tier, cfg.model.num_options, seeds.validation)?;
    let state = if cfg.solver.frozen_teacher {
        SolverTrainState::frozen_teacher(student)
    } else {
        SolverTrainState::shared(student)
    };
    let (state, curve) = train_solver(state, &ordered, &cfg.solver_train(), &validation, seeds.solver)?;
    Ok(SolverStage {
        set,
        ordered,
        validation,
        state,
        curve,
    })
}

/// `count` abilities evenly spaced along a training curve, the first being
/// the ability before training.
pub fn ability_snapshots(initial: f64, curve: &[StepRecord], count: usize) -> Vec<f64> {
    let n = curve.len();
    (0..count)
        .map(|k| {
            let at = k * n / (count - 1).max(1);
            if at == 0 {
                initial
            } else {
                curve[at - 1].phi
            }
        })
        .collect()
}

pub fn coupled_config(cfg: &RunConfig) -> CoupledBaselineConfig {
    CoupledBaselineConfig {
        rounds: cfg.heatmap.rounds,
        questioner: QuestionerTrainConfig {
            steps: cfg.heatmap.questioner_steps_per_round,
            reward_rule: RewardRule::Boundary,
            ..cfg.questioner_train()
        },
        solver: cfg.solver_train(),
        questions_per_round: cfg.heatmap.questions_per_round,
        num_options: cfg.model.num_options,
    }
}

/// The single target the coupled questioner is indexed by.
pub const COUPLED_TIER: f64 = 0.5;

pub fn coupled_stage(cfg: &RunConfig, docs: &[Document]) -> Result<CoupledRun> {
    let initial = initial_questioner(cfg, &[COUPLED_TIER])?;
    run_coupled_baseline(base_solver(cfg)?, initial, docs, &coupled_config(cfg), Seeds::new(cfg.seed).coupled)
}

pub struct Heatmap {
    pub matrix: AccuracyMatrix,
    pub report: MonotonicityReport,
}

fn heatmap(cfg: &RunConfig, q: &[QuestionerSnapshot], s: &[SolverSnapshot], docs: &[Document]) -> Result<Heatmap> {
    let matrix = cross_accuracy_matrix(
        q,
        s,
        docs,
        cfg.heatmap.per_cell_questions,
        cfg.heatmap.eval_rollouts,
        cfg.model.num_options,
        Seeds::new(cfg.seed).evaluation,
    )?;
    let report = monotonicity_report(&matrix);
    Ok(Heatmap { matrix, report })
}

/// Rows `Q1..Qr`, columns `S0..Sr`.
pub fn coupled_heatmap(cfg: &RunConfig, run: &CoupledRun, docs: &[Document]) -> Result<Heatmap> {
    let q: Vec<QuestionerSnapshot> = run
        .questioners
        .iter()
        .enumerate()
        .map(|(i, p)| QuestionerSnapshot {
            label: format!("Q{}", i + 1),
            policy: p.clone(),
            tier: COUPLED_TIER,
        })
        .collect();
    let s: Vec<SolverSnapshot> = run
        .solvers
        .iter()
        .enumerate()
        .map(|(t, p)| SolverSnapshot {
            label: format!("S{t}"),
            profile: *p,
        })
        .collect();
    heatmap(cfg, &q, &s, docs)
}

/// Rows are the frozen questioner's tiers, columns evenly spaced student snapshots.
pub fn darc_heatmap(cfg: &RunConfig, policy: &QuestionerPolicy, stage: &SolverStage, docs: &[Document]) -> Result<Heatmap> {
    let q: Vec<QuestionerSnapshot> = policy
        .tier_values()
        .into_iter()
        .map(|tier| QuestionerSnapshot {
            label: format!("tier{tier}"),
            policy: policy.clone(),
            tier,
        })
        .collect();
    let initial = cfg.model.base_ability;
    let s: Vec<SolverSnapshot> = ability_snapshots(initial, &stage.curve, cfg.heatmap.darc_snapshots)
        .into_iter()
        .enumerate()
        .map(|(t, phi)| SolverSnapshot {
            label: format!("S{t}"),
            profile: SolverProfile {
                ability: phi,
                doc_boost: cfg.model.doc_boost,
            },
        })
        .collect();
    heatmap(cfg, &q, &s, docs)
}
