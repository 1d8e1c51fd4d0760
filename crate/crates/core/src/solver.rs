//! Stage 2: offline curriculum training of the student solver with
//! pseudo-labels from a document-augmented teacher.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{io_error, out_of_range, LabError, Result};
use crate::model::{sample_answers, sigmoid, sigmoid_prime, AnswerSample, SolverProfile, SyntheticQuestion};
use crate::questioner::{
    generate_question, group_relative_advantage, train_questioner, DifficultyEstimatorConfig, Estimator, QuestionerPolicy,
    QuestionerTrainConfig, RewardRule,
};
use crate::rng::{Domain, StreamKey};
use crate::voting::{filter_by_agreement, majority_vote, PseudoLabel};

pub const DEFAULT_GAMMA: f64 = 0.3;
pub const DESK_BATCH_SIZE: usize = 64;
pub const PAPER_BATCH_SIZE: usize = 512;

const TIER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineItem {
    pub doc_id: u64,
    pub tier_target: f64,
    pub question: SyntheticQuestion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierCount {
    pub tier: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetManifest {
    pub policy_digest: String,
    pub seed: u64,
    pub tier_counts: Vec<TierCount>,
    /// Synthetic questions cannot fail output-format checks, so nothing is dropped.
    pub format_rejections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineQuestionSet {
    pub manifest: SetManifest,
    pub items: Vec<OfflineItem>,
}

impl OfflineQuestionSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_string(&serde_json::json!({ "manifest": self.manifest })).expect("manifest serializes");
        out.push('\n');
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("item serializes"));
            out.push('\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| io_error(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            manifest: SetManifest,
        }
        let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, e: &dyn std::fmt::Display| LabError::Parse {
            line,
            message: e.to_string(),
        };
        let first = lines
            .next()
            .ok_or_else(|| parse_err(1, &"missing manifest header"))?
            .map_err(|e| io_error(path, e))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| parse_err(1, &e))?;
        let mut items = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| io_error(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            items.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 2, &e))?);
        }
        Ok(OfflineQuestionSet {
            manifest: header.manifest,
            items,
        })
    }
}

/// Samples `per_tier_count` questions per tier from a frozen policy. Tiers are
/// interleaved in sampling order; each question draws its document uniformly.
pub fn build_offline_set(
    frozen_policy: &QuestionerPolicy,
    corpus: &[Document],
    tiers: &[f64],
    per_tier_count: usize,
    num_options: usize,
    seed: u64,
) -> Result<OfflineQuestionSet> {
    if corpus.is_empty() {
        return Err(LabError::EmptyCorpus);
    }
    for &t in tiers {
        frozen_policy.tier_index(t)?;
    }
    let key = StreamKey::root(seed).domain(Domain::Generation);
    let total = per_tier_count * tiers.len();
    let items: Vec<OfflineItem> = (0..total)
        .into_par_iter()
        .map(|i| {
            let tier = tiers[i % tiers.len()];
            let mut rng = key.child(i as u64).rng();
            let doc = &corpus[rng.random_range(0..corpus.len())];
            let question = generate_question(frozen_policy, doc, tier, i as u64, num_options, &mut rng)?;
            Ok(OfflineItem {
                doc_id: doc.doc_id,
                tier_target: question.tier_target,
                question,
            })
        })
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(out_of_range("per_tier_count", "offline set would be empty"));
    }
    Ok(OfflineQuestionSet {
        manifest: SetManifest {
            policy_digest: frozen_policy.digest(),
            seed,
            tier_counts: tiers
                .iter()
                .map(|&tier| TierCount {
                    tier,
                    count: per_tier_count,
                })
                .collect(),
            format_rejections: 0,
        },
        items,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumPhase {
    pub tier: f64,
    /// Cap on the number of items taken from this tier; `None` takes all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub phases: Vec<CurriculumPhase>,
}

impl CurriculumSchedule {
    /// One uncapped phase per tier, easiest (highest target success) first.
    pub fn easy_to_hard(tiers: &[f64]) -> Self {
        let mut t = tiers.to_vec();
        t.sort_by(|a, b| b.total_cmp(a));
        CurriculumSchedule {
            phases: t
                .into_iter()
                .map(|tier| CurriculumPhase { tier, item_budget: None })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(out_of_range("schedule", "no phases"));
        }
        if self.phases.windows(2).any(|w| w[1].tier > w[0].tier) {
            return Err(out_of_range(
                "schedule",
                "phases must run from easy to hard (non-increasing target success rate)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    Curriculum,
    /// The curriculum's items under a seeded uniform permutation.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedItems {
    pub ordering: Ordering,
    pub items: Vec<OfflineItem>,
}

pub fn order_curriculum(
    set: &OfflineQuestionSet,
    schedule: &CurriculumSchedule,
    ordering: Ordering,
    seed: u64,
) -> Result<OrderedItems> {
    schedule.validate()?;
    let mut items = Vec::with_capacity(set.len());
    for phase in &schedule.phases {
        let in_tier: Vec<&OfflineItem> = set
            .items
            .iter()
            .filter(|it| (it.tier_target - phase.tier).abs() < TIER_TOLERANCE)
            .collect();
        if in_tier.is_empty() {
            return Err(LabError::MissingTier(phase.tier));
        }
        let take = phase.item_budget.unwrap_or(usize::MAX).min(in_tier.len());
        items.extend(in_tier.into_iter().take(take).cloned());
    }
    if ordering == Ordering::Shuffled {
        let mut rng = StreamKey::root(seed).domain(Domain::Shuffle).rng();
        items.shuffle(&mut rng);
    }
    Ok(OrderedItems { ordering, items })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelOutcome {
    pub label: PseudoLabel,
    pub accepted: bool,
}

/// Majority vote of `rollouts` document-augmented teacher answers, gated by `gamma`.
pub fn pseudo_label_item(
    item: &OfflineItem,
    teacher: &SolverProfile,
    rollouts: usize,
    gamma: f64,
    key: StreamKey,
) -> Result<LabelOutcome> {
    if rollouts == 0 {
        return Err(out_of_range("rollouts", "must be >= 1"));
    }
    let mut rng = key.child(item.question.id).domain(Domain::Teacher).rng();
    let votes = sample_answers(&mut rng, teacher, &item.question, true, rollouts);
    let label = majority_vote(&votes, item.question.num_options)?;
    let accepted = filter_by_agreement(&label, gamma);
    Ok(LabelOutcome { label, accepted })
}

/// `1` iff the answer matches the pseudo-label.
#[inline]
pub fn solver_reward(answer: &AnswerSample, label: &PseudoLabel) -> f64 {
    if answer.option_index == label.label_index {
        1.0
    } else {
        0.0
    }
}

/// Expected correctness reward of a student with ability `phi` and its
/// derivative in `phi`, when the pseudo-label is the true answer with
/// probability `p_label_correct` and otherwise one of the distractors.
pub fn expected_reward_and_grad(phi: f64, question: &SyntheticQuestion, p_label_correct: f64) -> (f64, f64) {
    let z = phi - question.latent_difficulty;
    let s = sigmoid(z);
    let ds = sigmoid_prime(z);
    let wrong_share = 1.0 / (question.num_options - 1) as f64;
    let value = p_label_correct * s + (1.0 - p_label_correct) * (1.0 - s) * wrong_share;
    let grad = p_label_correct * ds - (1.0 - p_label_correct) * ds * wrong_share;
    (value, grad)
}

/// Point-mass belief for a realized label.
#[inline]
pub fn realized_label_belief(label: &PseudoLabel, question: &SyntheticQuestion) -> f64 {
    if label.label_index == question.correct_option {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Ascend the exact expected reward given each realized label.
    Analytic,
    /// REINFORCE on sampled student rollouts with group-relative advantages.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    /// Bias-corrected Adam with β₁ = 0.9, β₂ = 0.999.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverTrainConfig {
    pub rollouts: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub mode: UpdateMode,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: f64,
    pub v: f64,
    pub t: u64,
}

impl AdamMoments {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    /// The ascent step for gradient `g`.
    pub fn step(&mut self, g: f64, lr: f64) -> f64 {
        self.t += 1;
        self.m = Self::BETA1 * self.m + (1.0 - Self::BETA1) * g;
        self.v = Self::BETA2 * self.v + (1.0 - Self::BETA2) * g * g;
        let m_hat = self.m / (1.0 - Self::BETA1.powi(self.t as i32));
        let v_hat = self.v / (1.0 - Self::BETA2.powi(self.t as i32));
        lr * m_hat / (v_hat.sqrt() + Self::EPS)
    }
}

impl Default for SolverTrainConfig {
    fn default() -> Self {
        SolverTrainConfig {
            rollouts: 8,
            gamma: DEFAULT_GAMMA,
            lr: 0.5,
            batch_size: DESK_BATCH_SIZE,
            mode: UpdateMode::Analytic,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl SolverTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 {
            return Err(out_of_range("rollouts", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(out_of_range("gamma", "gamma must be in [0,1]"));
        }
        if self.batch_size == 0 {
            return Err(out_of_range("batch_size", "must be >= 1"));
        }
        if !(self.lr >= 0.0) {
            return Err(out_of_range("lr", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrainState {
    pub student: SolverProfile,
    pub teacher_is_shared: bool,
    /// Ability of the teacher when it is frozen.
    pub frozen_teacher_ability: f64,
    pub accepted_count: usize,
    pub rejected_count: usize,
    pub reward_history: Vec<f64>,
    pub moments: AdamMoments,
}

impl SolverTrainState {
    pub fn shared(student: SolverProfile) -> Self {
        SolverTrainState {
            student,
            teacher_is_shared: true,
            frozen_teacher_ability: student.ability,
            accepted_count: 0,
            rejected_count: 0,
            reward_history: Vec::new(),
            moments: AdamMoments::default(),
        }
    }

    pub fn frozen_teacher(student: SolverProfile) -> Self {
        SolverTrainState {
            teacher_is_shared: false,
            ..Self::shared(student)
        }
    }

    /// The teacher's profile; with sharing it is the student itself.
    pub fn teacher(&self) -> SolverProfile {
        if self.teacher_is_shared {
            self.student
        } else {
            SolverProfile {
                ability: self.frozen_teacher_ability,
                doc_boost: self.student.doc_boost,
            }
        }
    }

    pub fn processed(&self) -> usize {
        self.accepted_count + self.rejected_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Tier of the batch, NaN for a mixed (shuffled) batch.
    pub phase_tier: f64,
    /// Mean reward over accepted items; NaN when none were accepted.
    pub mean_train_reward: f64,
    pub acceptance_rate: f64,
    /// Accepted items whose rollout rewards are not all equal (expected count in analytic mode).
    pub active_items: f64,
    /// Ability after the update.
    pub phi: f64,
    /// Mean true-answer success probability on the validation questions after the update.
    pub validation_reward: f64,
}

pub fn write_training_curve(records: &[StepRecord], path: &Path) -> Result<()> {
    let mut out = String::from("step,phase_tier,mean_train_reward,acceptance_rate,active_items,phi,validation_reward\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            r.step, r.phase_tier, r.mean_train_reward, r.acceptance_rate, r.active_items, r.phi, r.validation_reward
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| io_error(path, e))
}

/// Mean oracle-true success probability.
pub fn validation_reward(student: &SolverProfile, questions: &[SyntheticQuestion]) -> f64 {
    if questions.is_empty() {
        return f64::NAN;
    }
    questions
        .iter()
        .map(|q| sigmoid(student.ability - q.latent_difficulty))
        .sum::<f64>()
        / questions.len() as f64
}

fn batches(ordered: &OrderedItems, batch_size: usize) -> Vec<&[OfflineItem]> {
    let items = &ordered.items[..];
    if ordered.ordering == Ordering::Shuffled {
        return items.chunks(batch_size).collect();
    }
    // never let a batch straddle a phase boundary
    let mut out = Vec::new();
    let mut start = 0;
    while start < items.len() {
        let tier = items[start].tier_target;
        let mut end = start;
        while end < items.len() && end - start < batch_size && items[end].tier_target == tier {
            end += 1;
        }
        out.push(&items[start..end]);
        start = end;
    }
    out
}

struct ItemUpdate {
    accepted: bool,
    reward: f64,
    grad: f64,
    active: f64,
}

fn item_update(
    item: &OfflineItem,
    state: &SolverTrainState,
    teacher: &SolverProfile,
    cfg: &SolverTrainConfig,
    key: StreamKey,
) -> Result<ItemUpdate> {
    let outcome = pseudo_label_item(item, teacher, cfg.rollouts, cfg.gamma, key)?;
    if !outcome.accepted {
        return Ok(ItemUpdate {
            accepted: false,
            reward: 0.0,
            grad: 0.0,
            active: 0.0,
        });
    }
    let q = &item.question;
    let phi = state.student.ability;
    match cfg.mode {
        UpdateMode::Analytic => {
            let belief = realized_label_belief(&outcome.label, q);
            let (value, grad) = expected_reward_and_grad(phi, q, belief);
            let n = cfg.rollouts as i32;
            Ok(ItemUpdate {
                accepted: true,
                reward: value,
                grad,
                active: 1.0 - value.powi(n) - (1.0 - value).powi(n),
            })
        }
        UpdateMode::Sampled => {
            let mut rng = key.child(q.id).domain(Domain::Student).rng();
            let answers = sample_answers(&mut rng, &state.student, q, false, cfg.rollouts);
            let rewards: Vec<f64> = answers.iter().map(|a| solver_reward(a, &outcome.label)).collect();
            let s = sigmoid(phi - q.latent_difficulty);
            let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
            let active = rewards.iter().any(|&r| r != rewards[0]);
            let grad = if rewards.len() >= 2 && active {
                let adv = group_relative_advantage(&rewards)?;
                // d/dφ log P(answer): 1−σ for the true option, −σ for a distractor
                answers
                    .iter()
                    .zip(&adv)
                    .map(|(a, adv)| adv * if a.correct { 1.0 - s } else { -s })
                    .sum::<f64>()
                    / answers.len() as f64
            } else {
                0.0
            };
            Ok(ItemUpdate {
                accepted: true,
                reward: mean_reward,
                grad,
                active: if active { 1.0 } else { 0.0 },
            })
        }
    }
}

/// One gradient step on φ per batch. Teacher labels use the teacher as it is
/// at the start of the batch; rejected items are dropped.
pub fn train_solver(
    mut state: SolverTrainState,
    ordered: &OrderedItems,
    cfg: &SolverTrainConfig,
    validation: &[SyntheticQuestion],
    seed: u64,
) -> Result<(SolverTrainState, Vec<StepRecord>)> {
    cfg.validate()?;
    let key = StreamKey::root(seed).domain(Domain::Training);
    let mut curve = Vec::new();
    for (step, batch) in batches(ordered, cfg.batch_size).into_iter().enumerate() {
        let teacher = state.teacher();
        let updates: Vec<ItemUpdate> = batch
            .par_iter()
            .map(|item| item_update(item, &state, &teacher, cfg, key))
            .collect::<Result<_>>()?;
        let accepted: Vec<&ItemUpdate> = updates.iter().filter(|u| u.accepted).collect();
        state.accepted_count += accepted.len();
        state.rejected_count += updates.len() - accepted.len();
        let (mean_reward, mean_grad) = if accepted.is_empty() {
            (f64::NAN, 0.0)
        } else {
            let n = accepted.len() as f64;
            (
                accepted.iter().map(|u| u.reward).sum::<f64>() / n,
                accepted.iter().map(|u| u.grad).sum::<f64>() / n,
            )
        };
        state.student.ability += match cfg.optimizer {
            Optimizer::Sgd => cfg.lr * mean_grad,
            // a batch with nothing accepted leaves the moments untouched
            Optimizer::Adam if accepted.is_empty() => 0.0,
            Optimizer::Adam => state.moments.step(mean_grad, cfg.lr),
        };
        state.reward_history.push(mean_reward);
        let first_tier = batch[0].tier_target;
        curve.push(StepRecord {
            step,
            phase_tier: if batch.iter().all(|it| it.tier_target == first_tier) {
                first_tier
            } else {
                f64::NAN
            },
            mean_train_reward: mean_reward,
            acceptance_rate: accepted.len() as f64 / batch.len() as f64,
            active_items: accepted.iter().map(|u| u.active).sum(),
            phi: state.student.ability,
            validation_reward: validation_reward(&state.student, validation),
        });
    }
    Ok((state, curve))
}

/// Held-out questions drawn from every tier of a frozen policy.
pub fn validation_questions(
    policy: &QuestionerPolicy,
    corpus: &[Document],
    per_tier: usize,
    num_options: usize,
    seed: u64,
) -> Result<Vec<SyntheticQuestion>> {
    if corpus.is_empty() {
        return Err(LabError::EmptyCorpus);
    }
    let key = StreamKey::root(seed).domain(Domain::Validation);
    let tiers = policy.tier_values();
    (0..per_tier * tiers.len())
        .map(|i| {
            let mut rng = key.child(i as u64).rng();
            let doc = &corpus[rng.random_range(0..corpus.len())];
            generate_question(policy, doc, tiers[i % tiers.len()], i as u64, num_options, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupledBaselineConfig {
    pub rounds: usize,
    /// Questioner steps per round, each scoring one group.
    pub questioner: QuestionerTrainConfig,
    pub solver: SolverTrainConfig,
    /// Offline questions the solver trains on per round.
    pub questions_per_round: usize,
    pub num_options: usize,
}

impl Default for CoupledBaselineConfig {
    fn default() -> Self {
        CoupledBaselineConfig {
            rounds: 5,
            questioner: QuestionerTrainConfig {
                steps: 100,
                reward_rule: RewardRule::Boundary,
                ..Default::default()
            },
            solver: SolverTrainConfig::default(),
            questions_per_round: 512,
            num_options: 4,
        }
    }
}

impl CoupledBaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(out_of_range("rounds", "must be >= 1"));
        }
        if self.questions_per_round == 0 {
            return Err(out_of_range("questions_per_round", "must be >= 1"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRound {
    pub round: usize,
    pub questioner_mean: f64,
    pub questioner_scale: f64,
    pub mean_questioner_reward: f64,
    pub acceptance_rate: f64,
    pub phi_before: f64,
    pub phi_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    /// `Q1..Qr`.
    pub questioners: Vec<QuestionerPolicy>,
    /// `S0..Sr`.
    pub solvers: Vec<SolverProfile>,
    pub rounds: Vec<CoupledRound>,
}

/// Coupled self-play without documents: each round trains the questioner
/// against the frozen current solver with the boundary reward, then trains the
/// solver on that questioner's questions labelled by its own majority vote.
/// The questioner must have a single tier.
pub fn run_coupled_baseline(
    initial: SolverProfile,
    questioner: QuestionerPolicy,
    corpus: &[Document],
    cfg: &CoupledBaselineConfig,
    seed: u64,
) -> Result<CoupledRun> {
    cfg.validate()?;
    let tiers = questioner.tier_values();
    if tiers.len() != 1 {
        return Err(out_of_range("questioner", "coupled baseline uses a single-tier questioner"));
    }
    let mut student = SolverProfile {
        ability: initial.ability,
        doc_boost: 0.0,
    };
    let mut policy = questioner;
    let mut run = CoupledRun {
        questioners: Vec::with_capacity(cfg.rounds),
        solvers: vec![student],
        rounds: Vec::with_capacity(cfg.rounds),
    };
    for round in 0..cfg.rounds {
        let round_seed = StreamKey::root(seed).domain(Domain::Baseline).child(round as u64).raw();
        let estimator = Estimator::new(DifficultyEstimatorConfig {
            rollouts: cfg.solver.rollouts,
            base_solver: student,
            num_options: cfg.num_options,
        });
        let (trained, curve) = train_questioner(policy, corpus, &estimator, &cfg.questioner, round_seed)?;
        policy = trained;
        let set = build_offline_set(&policy, corpus, &tiers, cfg.questions_per_round, cfg.num_options, round_seed)?;
        let ordered = OrderedItems {
            ordering: Ordering::Curriculum,
            items: set.items,
        };
        let phi_before = student.ability;
        let (state, _) = train_solver(SolverTrainState::shared(student), &ordered, &cfg.solver, &[], round_seed)?;
        student = state.student;
        run.rounds.push(CoupledRound {
            round: round + 1,
            questioner_mean: policy.tiers[0].mean,
            questioner_scale: policy.scale(),
            mean_questioner_reward: curve.iter().map(|r| r.mean_reward).sum::<f64>() / curve.len() as f64,
            acceptance_rate: state.accepted_count as f64 / state.processed() as f64,
            phi_before,
            phi_after: student.ability,
        });
        run.questioners.push(policy.clone());
        run.solvers.push(student);
    }
    Ok(run)
}
