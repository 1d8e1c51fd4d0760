//! Logistic ability/difficulty oracle and answer sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Result};

/// Default ability increment of a solver that can read the source document.
pub const DEFAULT_DOC_BOOST: f64 = 2.0;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic function, `σ(z)·σ(−z)`.
#[inline]
pub fn sigmoid_prime(z: f64) -> f64 {
    sigmoid(z) * sigmoid(-z)
}

/// Inverse of [`sigmoid`] on (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverProfile {
    pub ability: f64,
    pub doc_boost: f64,
}

impl SolverProfile {
    pub fn new(ability: f64, doc_boost: f64) -> Result<Self> {
        if !ability.is_finite() {
            return Err(out_of_range("ability", "must be finite"));
        }
        if !(doc_boost >= 0.0) || !doc_boost.is_finite() {
            return Err(out_of_range("doc_boost", format!("must be finite and >= 0, got {doc_boost}")));
        }
        Ok(SolverProfile { ability, doc_boost })
    }

    /// Ability actually applied to a question.
    #[inline]
    pub fn effective_ability(&self, with_doc: bool) -> f64 {
        if with_doc {
            self.ability + self.doc_boost
        } else {
            self.ability
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuestion {
    pub id: u64,
    pub latent_difficulty: f64,
    pub grounded: bool,
    pub num_options: usize,
    /// Latent ground truth. Only evaluation code may look at it.
    pub correct_option: usize,
    pub doc_id: u64,
    pub tier_target: f64,
}

impl SyntheticQuestion {
    pub fn validate(&self) -> Result<()> {
        if self.num_options < 2 {
            return Err(out_of_range("num_options", format!("need K >= 2, got {}", self.num_options)));
        }
        if self.correct_option >= self.num_options {
            return Err(out_of_range(
                "correct_option",
                format!("{} >= K={}", self.correct_option, self.num_options),
            ));
        }
        if !(0.0..=1.0).contains(&self.tier_target) {
            return Err(out_of_range("tier_target", format!("{} not in [0,1]", self.tier_target)));
        }
        if !self.latent_difficulty.is_finite() {
            return Err(out_of_range("latent_difficulty", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSample {
    pub option_index: usize,
    pub correct: bool,
}

/// Probability that `profile` answers `question` correctly: `σ(φ + β·[with_doc] − τ*)`.
#[inline]
pub fn success_probability(profile: &SolverProfile, question: &SyntheticQuestion, with_doc: bool) -> f64 {
    sigmoid(profile.effective_ability(with_doc) - question.latent_difficulty)
}

/// Draws one answer given a success probability. Always consumes exactly two
/// uniforms so that the k-th sample of a stream sits at a fixed position.
pub fn sample_with_probability<R: Rng + ?Sized>(
    rng: &mut R,
    p_correct: f64,
    num_options: usize,
    correct_option: usize,
) -> AnswerSample {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    if u < p_correct {
        return AnswerSample {
            option_index: correct_option,
            correct: true,
        };
    }
    // uniform over the K-1 distractors
    let slot = ((v * (num_options - 1) as f64) as usize).min(num_options - 2);
    let option_index = if slot >= correct_option { slot + 1 } else { slot };
    AnswerSample {
        option_index,
        correct: false,
    }
}

pub fn sample_answer<R: Rng + ?Sized>(
    rng: &mut R,
    profile: &SolverProfile,
    question: &SyntheticQuestion,
    with_doc: bool,
) -> AnswerSample {
    sample_with_probability(
        rng,
        success_probability(profile, question, with_doc),
        question.num_options,
        question.correct_option,
    )
}

/// `n` consecutive draws from one stream.
pub fn sample_answers<R: Rng + ?Sized>(
    rng: &mut R,
    profile: &SolverProfile,
    question: &SyntheticQuestion,
    with_doc: bool,
    n: usize,
) -> Vec<AnswerSample> {
    let p = success_probability(profile, question, with_doc);
    (0..n)
        .map(|_| sample_with_probability(rng, p, question.num_options, question.correct_option))
        .collect()
}
