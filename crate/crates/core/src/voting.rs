//! Majority-vote pseudo-labels, agreement filtering, the empirical success
//! rate, and an exact enumeration of the pseudo-label distribution.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::AnswerSample;

/// Largest rollout count accepted by [`pseudo_label_distribution`].
pub const MAX_ENUM_ROLLOUTS: usize = 12;
/// Largest option count accepted by [`pseudo_label_distribution`].
pub const MAX_ENUM_OPTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub label_index: usize,
    pub agreement: f64,
    pub vote_counts: Vec<usize>,
}

impl PseudoLabel {
    pub fn total_votes(&self) -> usize {
        self.vote_counts.iter().sum()
    }
}

/// Modal option of `samples`. Ties go to the lowest option index.
pub fn majority_vote(samples: &[AnswerSample], num_options: usize) -> Result<PseudoLabel> {
    if samples.is_empty() {
        return Err(LabError::NoVotes);
    }
    let mut vote_counts = vec![0usize; num_options];
    for s in samples {
        if s.option_index >= num_options {
            return Err(LabError::OptionOutOfRange {
                index: s.option_index,
                options: num_options,
            });
        }
        vote_counts[s.option_index] += 1;
    }
    let mut label_index = 0;
    for (i, &c) in vote_counts.iter().enumerate() {
        if c > vote_counts[label_index] {
            label_index = i;
        }
    }
    let agreement = vote_counts[label_index] as f64 / samples.len() as f64;
    Ok(PseudoLabel {
        label_index,
        agreement,
        vote_counts,
    })
}

/// Keeps a label iff its agreement is at least `gamma`.
#[inline]
pub fn filter_by_agreement(label: &PseudoLabel, gamma: f64) -> bool {
    label.agreement >= gamma
}

/// Fraction of `samples` that agree with the pseudo-label. This is the
/// difficulty estimate D(q) when `samples` come from the reference solver.
pub fn empirical_success_rate(samples: &[AnswerSample], label: &PseudoLabel) -> Result<f64> {
    if samples.is_empty() {
        return Err(LabError::NoSamples);
    }
    let hits = samples
        .iter()
        .filter(|s| s.option_index == label.label_index)
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Exact joint law of (pseudo-label is correct, top vote count) for `N` votes
/// drawn i.i.d. with `P(correct) = p` and the remaining mass spread uniformly
/// over the `K-1` distractors, under lowest-index tie-breaking with the correct
/// option at a uniformly random position.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub rollouts: usize,
    pub options: usize,
    /// `correct[m]`: probability that the label is correct and has `m` votes.
    pub correct: Vec<f64>,
    /// `wrong[m]`: probability that the label is a distractor with `m` votes.
    pub wrong: Vec<f64>,
}

impl LabelDistribution {
    pub fn p_label_correct(&self) -> f64 {
        self.correct.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.correct.iter().chain(self.wrong.iter()).sum()
    }

    pub fn mean_agreement(&self) -> f64 {
        let n = self.rollouts as f64;
        (0..=self.rollouts)
            .map(|m| (self.correct[m] + self.wrong[m]) * m as f64 / n)
            .sum()
    }

    /// Probability that the label survives [`filter_by_agreement`] with `gamma`.
    pub fn p_accept(&self, gamma: f64) -> f64 {
        let n = self.rollouts as f64;
        (0..=self.rollouts)
            .filter(|&m| m as f64 / n >= gamma)
            .map(|m| self.correct[m] + self.wrong[m])
            .sum()
    }

    /// `(P(correct and accepted), P(wrong and accepted))`.
    pub fn accepted_split(&self, gamma: f64) -> (f64, f64) {
        let n = self.rollouts as f64;
        (0..=self.rollouts)
            .filter(|&m| m as f64 / n >= gamma)
            .fold((0.0, 0.0), |(c, w), m| (c + self.correct[m], w + self.wrong[m]))
    }
}

pub fn pseudo_label_distribution(p_correct: f64, rollouts: usize, options: usize) -> Result<LabelDistribution> {
    if rollouts == 0 || rollouts > MAX_ENUM_ROLLOUTS || options < 2 || options > MAX_ENUM_OPTIONS {
        return Err(LabError::EnumerationTooLarge {
            rollouts,
            options,
            max_rollouts: MAX_ENUM_ROLLOUTS,
            max_options: MAX_ENUM_OPTIONS,
        });
    }
    if !(0.0..=1.0).contains(&p_correct) {
        return Err(crate::error::out_of_range("p_correct", format!("{p_correct} not in [0,1]")));
    }
    let q = (1.0 - p_correct) / (options - 1) as f64;
    let mut factorial = vec![1.0f64; rollouts + 1];
    for i in 1..=rollouts {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut out = LabelDistribution {
        rollouts,
        options,
        correct: vec![0.0; rollouts + 1],
        wrong: vec![0.0; rollouts + 1],
    };
    let mut counts = vec![0usize; options];
    enumerate_compositions(&mut counts, 0, rollouts, &mut |c| {
        let mut coef = factorial[rollouts];
        for &k in c.iter() {
            coef /= factorial[k];
        }
        let prob = coef * p_correct.powi(c[0] as i32) * q.powi((rollouts - c[0]) as i32);
        if prob == 0.0 {
            return;
        }
        let top = *c.iter().max().unwrap();
        if c[0] == top {
            // Exchangeable distractors: the correct option wins a t-way tie w.p. 1/t.
            let tied = c.iter().filter(|&&k| k == top).count() as f64;
            out.correct[top] += prob / tied;
            out.wrong[top] += prob * (tied - 1.0) / tied;
        } else {
            out.wrong[top] += prob;
        }
    });
    Ok(out)
}

fn enumerate_compositions(counts: &mut [usize], slot: usize, remaining: usize, visit: &mut impl FnMut(&[usize])) {
    if slot == counts.len() - 1 {
        counts[slot] = remaining;
        visit(counts);
        return;
    }
    for k in 0..=remaining {
        counts[slot] = k;
        enumerate_compositions(counts, slot + 1, remaining - k, visit);
    }
}
