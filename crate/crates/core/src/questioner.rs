//! Stage 1: a difficulty-conditioned questioner trained against a frozen
//! difficulty estimator.
//!
//! The policy emits latent difficulties `μ_tier + offset_doc + s·z` and a
//! grounding flag with probability `σ(grounding_logit)`. Grounded questions
//! are scored `1 − |D(q) − τ|`, where D(q) is the frozen base solver's
//! agreement rate with the document-augmented teacher's majority vote.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{io_error, out_of_range, LabError, Result};
use crate::model::{sample_answers, sigmoid, SolverProfile, SyntheticQuestion};
use crate::quadrature::NormalRule;
use crate::rng::{Domain, StreamKey};
use crate::toy::ObjectiveEstimate;
use crate::voting::{empirical_success_rate, majority_vote, pseudo_label_distribution};

/// Easy, medium and hard target success rates.
pub const DEFAULT_TIERS: [f64; 3] = [0.8, 0.5, 0.2];
pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const DEFAULT_ROLLOUTS: usize = 8;
pub const DEFAULT_OPTIONS: usize = 4;
pub const DEFAULT_EPS_STD: f64 = 1e-8;
/// Reward of a question that is not grounded in its document.
pub const UNGROUNDED_REWARD: f64 = -1.0;

const TIER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierMean {
    pub tier: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionerPolicy {
    pub tiers: Vec<TierMean>,
    pub emission_log_scale: f64,
    pub grounding_logit: f64,
}

impl QuestionerPolicy {
    pub fn new(tiers: &[f64], initial_mean: f64, emission_log_scale: f64, grounding_logit: f64) -> Result<Self> {
        if tiers.is_empty() {
            return Err(out_of_range("tiers", "at least one tier is required"));
        }
        for (i, &t) in tiers.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(out_of_range("tiers", format!("{t} not in [0,1]")));
            }
            if tiers[..i].iter().any(|&u| (u - t).abs() < TIER_TOLERANCE) {
                return Err(out_of_range("tiers", format!("duplicate tier {t}")));
            }
        }
        if !emission_log_scale.is_finite() {
            return Err(out_of_range("emission_log_scale", "must be finite"));
        }
        Ok(QuestionerPolicy {
            tiers: tiers.iter().map(|&tier| TierMean { tier, mean: initial_mean }).collect(),
            emission_log_scale,
            grounding_logit,
        })
    }

    pub fn tier_index(&self, tier: f64) -> Result<usize> {
        self.tiers
            .iter()
            .position(|t| (t.tier - tier).abs() < TIER_TOLERANCE)
            .ok_or(LabError::UnknownTier(tier))
    }

    pub fn tier_values(&self) -> Vec<f64> {
        self.tiers.iter().map(|t| t.tier).collect()
    }

    pub fn mean(&self, tier: f64) -> Result<f64> {
        Ok(self.tiers[self.tier_index(tier)?].mean)
    }

    pub fn scale(&self) -> f64 {
        self.emission_log_scale.exp()
    }

    pub fn grounding_rate(&self) -> f64 {
        sigmoid(self.grounding_logit)
    }

    /// Full-precision TOML checkpoint.
    pub fn to_checkpoint(&self) -> String {
        toml::to_string(self).expect("policy serializes")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Parse {
            line: 0,
            message: e.to_string(),
        })
    }

    /// SHA-256 of the checkpoint text.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_checkpoint().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyEstimatorConfig {
    pub rollouts: usize,
    pub base_solver: SolverProfile,
    pub num_options: usize,
}

impl DifficultyEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 {
            return Err(out_of_range("rollouts", "must be >= 1"));
        }
        if self.num_options < 2 {
            return Err(out_of_range("num_options", "must be >= 2"));
        }
        Ok(())
    }

    /// The document-augmented copy of the base solver used for pseudo-labels.
    pub fn default_teacher(&self) -> SolverProfile {
        self.base_solver
    }
}

/// A question together with the standard-normal draw behind its difficulty.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub question: SyntheticQuestion,
    pub noise: f64,
}

pub fn emit<R: Rng + ?Sized>(
    policy: &QuestionerPolicy,
    doc: &Document,
    tier: f64,
    question_id: u64,
    num_options: usize,
    rng: &mut R,
) -> Result<Emission> {
    let mean = policy.mean(tier)?;
    if num_options < 2 {
        return Err(out_of_range("num_options", "must be >= 2"));
    }
    let noise: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    let correct_option = rng.random_range(0..num_options);
    let question = SyntheticQuestion {
        id: question_id,
        latent_difficulty: mean + doc.latent_topic_difficulty_offset + policy.scale() * noise,
        grounded: u < policy.grounding_rate(),
        num_options,
        correct_option,
        doc_id: doc.doc_id,
        tier_target: policy.tiers[policy.tier_index(tier)?].tier,
    };
    Ok(Emission { question, noise })
}

pub fn generate_question<R: Rng + ?Sized>(
    policy: &QuestionerPolicy,
    doc: &Document,
    tier: f64,
    question_id: u64,
    num_options: usize,
    rng: &mut R,
) -> Result<SyntheticQuestion> {
    emit(policy, doc, tier, question_id, num_options, rng).map(|e| e.question)
}

/// D(q): the base solver's agreement with the teacher's majority vote over
/// `rollouts` document-augmented samples. Streams are keyed by `key` and the
/// question id.
pub fn estimate_difficulty(
    question: &SyntheticQuestion,
    cfg: &DifficultyEstimatorConfig,
    teacher: &SolverProfile,
    key: StreamKey,
) -> f64 {
    let key = key.child(question.id);
    let mut teacher_rng = key.domain(Domain::Teacher).rng();
    let votes = sample_answers(&mut teacher_rng, teacher, question, true, cfg.rollouts);
    let label = majority_vote(&votes, question.num_options).expect("rollouts >= 1");
    let mut base_rng = key.domain(Domain::Student).rng();
    let answers = sample_answers(&mut base_rng, &cfg.base_solver, question, false, cfg.rollouts);
    empirical_success_rate(&answers, &label).expect("rollouts >= 1")
}

/// Self-consistency estimate: agreement of `rollouts` no-document answers
/// with their own majority vote.
pub fn self_consistency(question: &SyntheticQuestion, cfg: &DifficultyEstimatorConfig, key: StreamKey) -> f64 {
    let mut rng = key.child(question.id).domain(Domain::Student).rng();
    let answers = sample_answers(&mut rng, &cfg.base_solver, question, false, cfg.rollouts);
    majority_vote(&answers, question.num_options).expect("rollouts >= 1").agreement
}

/// Exact law of D(q) for a question of the given latent difficulty:
/// `pmf[k] = P(D = k/N)`.
pub fn difficulty_pmf(latent_difficulty: f64, cfg: &DifficultyEstimatorConfig, teacher: &SolverProfile) -> Result<Vec<f64>> {
    let n = cfg.rollouts;
    let k_opts = cfg.num_options;
    let teacher_p = sigmoid(teacher.ability + teacher.doc_boost - latent_difficulty);
    let p_label_correct = pseudo_label_distribution(teacher_p, n, k_opts)?.p_label_correct();
    let student_p = sigmoid(cfg.base_solver.ability - latent_difficulty);
    let match_if_wrong = (1.0 - student_p) / (k_opts - 1) as f64;
    let a = binomial_pmf(n, student_p);
    let b = binomial_pmf(n, match_if_wrong);
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| p_label_correct * x + (1.0 - p_label_correct) * y)
        .collect())
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut coef = 1.0;
    (0..=n)
        .map(|k| {
            if k > 0 {
                coef *= (n - k + 1) as f64 / k as f64;
            }
            coef * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
        })
        .collect()
}

/// E[1 − |D(q) − τ|] for a grounded question, by exact enumeration.
pub fn expected_grounded_reward(
    latent_difficulty: f64,
    tier: f64,
    cfg: &DifficultyEstimatorConfig,
    teacher: &SolverProfile,
) -> Result<f64> {
    let n = cfg.rollouts as f64;
    Ok(difficulty_pmf(latent_difficulty, cfg, teacher)?
        .iter()
        .enumerate()
        .map(|(k, p)| p * (1.0 - (k as f64 / n - tier).abs()))
        .sum())
}

/// `1 − |D − τ|` when grounded, −1 otherwise.
pub fn questioner_reward(question: &SyntheticQuestion, estimated_difficulty: f64) -> Result<f64> {
    if !question.grounded {
        return Ok(UNGROUNDED_REWARD);
    }
    if !(0.0..=1.0).contains(&estimated_difficulty) {
        return Err(out_of_range(
            "estimated_difficulty",
            format!("{estimated_difficulty} not in [0,1]"),
        ));
    }
    Ok(1.0 - (estimated_difficulty - question.tier_target).abs())
}

/// Group-normalized advantages `(r − mean)/max(std, eps)`, re-centred so the
/// mean is zero to rounding. A group with identical rewards gets all zeros.
pub fn group_relative_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    group_relative_advantage_with_floor(rewards, DEFAULT_EPS_STD)
}

pub fn group_relative_advantage_with_floor(rewards: &[f64], eps_std: f64) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(LabError::GroupTooSmall(g));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; g]);
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt().max(eps_std);
    let mut adv: Vec<f64> = rewards.iter().map(|r| (r - mean) / std).collect();
    let drift = adv.iter().sum::<f64>() / g as f64;
    adv.iter_mut().for_each(|a| *a -= drift);
    Ok(adv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingGroup {
    pub tier_target: f64,
    pub questions: Vec<SyntheticQuestion>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuestionerTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub group_size: usize,
    pub eps_std: f64,
    /// Precondition the gaussian parameters by their Fisher information.
    pub natural_gradient: bool,
    pub reward_rule: RewardRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardRule {
    /// `1 − |D(q) − τ|` against the frozen estimator.
    TierTarget,
    /// `−|ŝ − ½|`, where ŝ is the agreement of the estimator's base solver
    /// with its own no-document majority vote.
    Boundary,
}

impl Default for QuestionerTrainConfig {
    fn default() -> Self {
        QuestionerTrainConfig {
            steps: 500,
            lr: 0.1,
            group_size: DEFAULT_GROUP_SIZE,
            eps_std: DEFAULT_EPS_STD,
            natural_gradient: true,
            reward_rule: RewardRule::TierTarget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub step: usize,
    pub tier: f64,
    pub mean_reward: f64,
    /// Mean D(q) over grounded questions; NaN when none were grounded.
    pub mean_estimated_difficulty: f64,
    pub grounding_rate: f64,
}

pub fn write_reward_curve(records: &[RewardRecord], path: &Path) -> Result<()> {
    let mut out = String::from("step,tier,mean_reward,mean_estimated_difficulty,grounding_rate\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{:.12e},{:.12e},{:.12e}\n",
            r.step, r.tier, r.mean_reward, r.mean_estimated_difficulty, r.grounding_rate
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| io_error(path, e))
}

/// The frozen pieces a questioner is scored against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator {
    pub cfg: DifficultyEstimatorConfig,
    pub teacher: SolverProfile,
}

impl Estimator {
    pub fn new(cfg: DifficultyEstimatorConfig) -> Self {
        Estimator {
            teacher: cfg.default_teacher(),
            cfg,
        }
    }
}

struct Scored {
    emission: Emission,
    reward: f64,
    difficulty: Option<f64>,
}

fn score_question(
    policy: &QuestionerPolicy,
    doc: &Document,
    tier: f64,
    question_id: u64,
    estimator: &Estimator,
    rule: RewardRule,
    gen_key: StreamKey,
    est_key: StreamKey,
) -> Result<Scored> {
    let mut rng = gen_key.child(question_id).rng();
    let emission = emit(policy, doc, tier, question_id, estimator.cfg.num_options, &mut rng)?;
    // ungrounded questions are short-circuited: no rollouts are spent on them
    let (reward, difficulty) = if emission.question.grounded {
        match rule {
            RewardRule::TierTarget => {
                let d = estimate_difficulty(&emission.question, &estimator.cfg, &estimator.teacher, est_key);
                (questioner_reward(&emission.question, d)?, Some(d))
            }
            RewardRule::Boundary => {
                let s = self_consistency(&emission.question, &estimator.cfg, est_key);
                (-(s - 0.5).abs(), Some(s))
            }
        }
    } else {
        (UNGROUNDED_REWARD, None)
    };
    Ok(Scored {
        emission,
        reward,
        difficulty,
    })
}

/// Trains with group-relative REINFORCE: for every step and tier, one document
/// is drawn and `group_size` questions are scored against the frozen
/// estimator; the policy moves along the mean of advantage × score.
pub fn train_questioner(
    mut policy: QuestionerPolicy,
    corpus: &[Document],
    estimator: &Estimator,
    cfg: &QuestionerTrainConfig,
    seed: u64,
) -> Result<(QuestionerPolicy, Vec<RewardRecord>)> {
    if corpus.is_empty() {
        return Err(LabError::EmptyCorpus);
    }
    if cfg.steps == 0 {
        return Err(out_of_range("steps", "must be >= 1"));
    }
    if cfg.group_size < 2 {
        return Err(LabError::GroupTooSmall(cfg.group_size));
    }
    estimator.cfg.validate()?;
    let root = StreamKey::root(seed);
    let tiers = policy.tier_values();
    let g = cfg.group_size;
    let mut curve = Vec::with_capacity(cfg.steps * tiers.len());

    for step in 0..cfg.steps {
        let step_key = root.domain(Domain::Training).child(step as u64);
        let mut grad_means = vec![0.0; tiers.len()];
        let mut grad_log_scale = 0.0;
        let mut grad_logit = 0.0;
        let scale = policy.scale();
        let ground_p = policy.grounding_rate();

        for (ti, &tier) in tiers.iter().enumerate() {
            let tier_key = step_key.child(ti as u64);
            let doc_ix = tier_key.domain(Domain::Corpus).rng().random_range(0..corpus.len());
            let doc = &corpus[doc_ix];
            let base_id = ((step * tiers.len() + ti) * g) as u64;
            let scored: Vec<Scored> = (0..g as u64)
                .into_par_iter()
                .map(|k| {
                    score_question(
                        &policy,
                        doc,
                        tier,
                        base_id + k,
                        estimator,
                        cfg.reward_rule,
                        tier_key.domain(Domain::Generation),
                        tier_key.domain(Domain::Estimation),
                    )
                })
                .collect::<Result<_>>()?;
            let rewards: Vec<f64> = scored.iter().map(|s| s.reward).collect();
            let adv = group_relative_advantage_with_floor(&rewards, cfg.eps_std)?;
            for (s, a) in scored.iter().zip(&adv) {
                let z = s.emission.noise;
                grad_means[ti] += a * z / scale;
                grad_log_scale += a * (z * z - 1.0);

                let grounded = if s.emission.question.grounded { 1.0 } else { 0.0 };
                grad_logit += a * (grounded - ground_p);
            }
            grad_means[ti] /= g as f64;

            let ds: Vec<f64> = scored.iter().filter_map(|s| s.difficulty).collect();
            curve.push(RewardRecord {
                step,
                tier,
                mean_reward: rewards.iter().sum::<f64>() / g as f64,
                mean_estimated_difficulty: if ds.is_empty() {
                    f64::NAN
                } else {
                    ds.iter().sum::<f64>() / ds.len() as f64
                },
                grounding_rate: scored.iter().filter(|s| s.emission.question.grounded).count() as f64 / g as f64,
            });
        }
        let denom = (g * tiers.len()) as f64;
        // Fisher preconditioning for the gaussian head: F_μ = 1/s², F_{log s} = 2.
        let (pre_mean, pre_log_scale) = if cfg.natural_gradient { (scale * scale, 0.5) } else { (1.0, 1.0) };
        for (tm, gm) in policy.tiers.iter_mut().zip(&grad_means) {
            tm.mean += cfg.lr * pre_mean * gm;
        }
        policy.emission_log_scale += cfg.lr * pre_log_scale * grad_log_scale / denom;
        policy.grounding_logit += cfg.lr * grad_logit / denom;
    }
    Ok((policy, curve))
}

/// J̃(θ): Monte Carlo mean of the questioner reward against the frozen
/// estimator, cycling through the tiers. Nothing here reads any solver other
/// than the estimator.
pub fn decoupled_objective_value(
    policy: &QuestionerPolicy,
    tiers: &[f64],
    corpus: &[Document],
    estimator: &Estimator,
    mc_questions: usize,
    seed: u64,
) -> Result<ObjectiveEstimate> {
    if mc_questions == 0 {
        return Err(out_of_range("mc_questions", "must be >= 1"));
    }
    if corpus.is_empty() {
        return Err(LabError::EmptyCorpus);
    }
    if tiers.is_empty() {
        return Err(out_of_range("tiers", "at least one tier is required"));
    }
    let root = StreamKey::root(seed).domain(Domain::Objective);
    let rewards: Vec<f64> = (0..mc_questions as u64)
        .into_par_iter()
        .map(|i| {
            let tier = tiers[i as usize % tiers.len()];
            let doc = &corpus[root.child(i).domain(Domain::Corpus).rng().random_range(0..corpus.len())];
            score_question(
                policy,
                doc,
                tier,
                i,
                estimator,
                RewardRule::TierTarget,
                root.domain(Domain::Generation),
                root.domain(Domain::Estimation),
            )
            .map(|s| s.reward)
        })
        .collect::<Result<_>>()?;
    Ok(mean_and_error(&rewards))
}

pub(crate) fn mean_and_error(xs: &[f64]) -> ObjectiveEstimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    ObjectiveEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierCalibration {
    pub tier: f64,
    pub mean_difficulty: f64,
    /// Mean of |D(q) − τ| over the evaluated questions.
    pub mean_abs_error: f64,
    pub questions: usize,
}

/// D(q) statistics of `per_tier` fresh questions per tier. Grounding is
/// ignored: every question is estimated.
pub fn calibration(
    policy: &QuestionerPolicy,
    corpus: &[Document],
    estimator: &Estimator,
    per_tier: usize,
    seed: u64,
) -> Result<Vec<TierCalibration>> {
    if corpus.is_empty() {
        return Err(LabError::EmptyCorpus);
    }
    let root = StreamKey::root(seed).domain(Domain::Evaluation);
    policy
        .tier_values()
        .iter()
        .enumerate()
        .map(|(ti, &tier)| {
            let key = root.child(ti as u64);
            let ds: Vec<f64> = (0..per_tier as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = key.domain(Domain::Generation).child(i).rng();
                    let doc = &corpus[rng.random_range(0..corpus.len())];
                    let q = generate_question(policy, doc, tier, i, estimator.cfg.num_options, &mut rng)?;
                    Ok(estimate_difficulty(&q, &estimator.cfg, &estimator.teacher, key.domain(Domain::Estimation)))
                })
                .collect::<Result<_>>()?;
            let n = ds.len().max(1) as f64;
            Ok(TierCalibration {
                tier,
                mean_difficulty: ds.iter().sum::<f64>() / n,
                mean_abs_error: ds.iter().map(|d| (d - tier).abs()).sum::<f64>() / n,
                questions: ds.len(),
            })
        })
        .collect()
}

/// Smoothed objective of one tier as a function of its emission mean,
/// `σ(l)·E_z[R(μ + offset + s·z)] − (1 − σ(l))`, with the inner expectation
/// exact in the rollouts and Gauss–Hermite in z.
pub fn smoothed_tier_objective(
    policy: &QuestionerPolicy,
    tier: f64,
    doc: &Document,
    estimator: &Estimator,
    nodes: usize,
) -> Result<f64> {
    let mean = policy.mean(tier)? + doc.latent_topic_difficulty_offset;
    let scale = policy.scale();
    let rule = NormalRule::new(nodes);
    let mut err = None;
    let inner = rule.expect(|z| match expected_grounded_reward(mean + scale * z, tier, &estimator.cfg, &estimator.teacher) {
        Ok(v) => v,
        Err(e) => {
            err = Some(e);
            0.0
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let g = policy.grounding_rate();
    Ok(g * inner + (1.0 - g) * UNGROUNDED_REWARD)
}

/// Score-function estimate of d(objective)/d(μ_tier) from `samples` sampled
/// questions, with the sample-mean reward as baseline. Returns the estimate
/// and its standard error.
pub fn score_function_mean_gradient(
    policy: &QuestionerPolicy,
    tier: f64,
    doc: &Document,
    estimator: &Estimator,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(out_of_range("samples", "must be >= 2"));
    }
    let root = StreamKey::root(seed).domain(Domain::MonteCarlo);
    let scored: Vec<(f64, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            score_question(
                policy,
                doc,
                tier,
                i,
                estimator,
                RewardRule::TierTarget,
                root.domain(Domain::Generation),
                root.domain(Domain::Estimation),
            )
            .map(|s| (s.reward, s.emission.noise))
        })
        .collect::<Result<_>>()?;
    let n = samples as f64;
    let baseline = scored.iter().map(|(r, _)| r).sum::<f64>() / n;
    let scale = policy.scale();
    let terms: Vec<f64> = scored.iter().map(|(r, z)| (r - baseline) * z / scale).collect();
    let est = mean_and_error(&terms);
    Ok((est.value, est.std_error))
}
