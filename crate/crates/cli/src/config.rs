//! Run configuration: a TOML document whose sections mirror the modules.
//! Every section is optional and every field has a default; unknown fields
//! are rejected.

use std::path::Path;

use darc_core::questioner::{QuestionerTrainConfig, RewardRule, DEFAULT_TIERS};
use darc_core::solver::{Optimizer, SolverTrainConfig, UpdateMode};
use darc_core::toy::TheoremCheckConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected field=value")]
    Override(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TheoremCheck,
    CoupledSim,
    TrainQuestioner,
    TrainSolver,
    Heatmap,
    GradCheck,
    Ablation,
    GenCorpus,
    CorpusStats,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TheoremCheck => "theorem-check",
            ExperimentKind::CoupledSim => "coupled-sim",
            ExperimentKind::TrainQuestioner => "train-questioner",
            ExperimentKind::TrainSolver => "train-solver",
            ExperimentKind::Heatmap => "heatmap",
            ExperimentKind::GradCheck => "grad-check",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::GenCorpus => "gen-corpus",
            ExperimentKind::CorpusStats => "corpus-stats",
        }
    }
}

/// Constants shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// K
    pub num_options: usize,
    /// β
    pub doc_boost: f64,
    /// φ of the frozen base solver and of the student before training.
    pub base_ability: f64,
    /// N
    pub rollouts: usize,
    /// γ
    pub gamma: f64,
    /// G
    pub group_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_options: 4,
            doc_boost: 2.0,
            base_ability: 0.0,
            rollouts: 8,
            gamma: 0.3,
            group_size: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    PointMass,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupledSimConfig {
    pub iterations: usize,
    pub eta: f64,
    pub alpha: f64,
    pub phi: f64,
    pub policy: PolicyKind,
    /// Initial policy location relative to `phi`.
    pub initial_offset: f64,
    pub log_scale: f64,
    /// Monte Carlo samples per objective evaluation; 0 uses quadrature.
    pub mc_samples: usize,
}

impl Default for CoupledSimConfig {
    fn default() -> Self {
        CoupledSimConfig {
            iterations: 50,
            eta: 0.1,
            alpha: 0.5,
            phi: 0.0,
            policy: PolicyKind::Gaussian,
            initial_offset: 0.5,
            log_scale: -1.0,
            mc_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub size: usize,
    pub offset_min: f64,
    pub offset_max: f64,
    /// Read documents from this file instead of generating them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub histogram_bins: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            size: 1000,
            offset_min: -0.2,
            offset_max: 0.2,
            path: None,
            histogram_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuestionerConfig {
    pub tiers: Vec<f64>,
    pub steps: usize,
    pub lr: f64,
    pub eps_std: f64,
    pub natural_gradient: bool,
    pub initial_log_scale: f64,
    pub initial_grounding_logit: f64,
    /// Questions per tier in the post-training calibration table.
    pub calibration_per_tier: usize,
    /// Load this policy instead of training one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl Default for QuestionerConfig {
    fn default() -> Self {
        let t = QuestionerTrainConfig::default();
        QuestionerConfig {
            tiers: DEFAULT_TIERS.to_vec(),
            steps: t.steps,
            lr: t.lr,
            eps_std: t.eps_std,
            natural_gradient: t.natural_gradient,
            initial_log_scale: 0.0,
            initial_grounding_logit: -2.0,
            calibration_per_tier: 2000,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub mode: UpdateMode,
    pub optimizer: Optimizer,
    pub per_tier_count: usize,
    pub validation_per_tier: usize,
    pub frozen_teacher: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let t = SolverTrainConfig::default();
        SolverConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            mode: t.mode,
            optimizer: t.optimizer,
            per_tier_count: 1024,
            validation_per_tier: 500,
            frozen_teacher: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub rounds: usize,
    pub questioner_steps_per_round: usize,
    pub questions_per_round: usize,
    pub per_cell_questions: usize,
    pub eval_rollouts: usize,
    /// Solver snapshots taken along the decoupled run, including the start.
    pub darc_snapshots: usize,
    pub diagonal_band: [f64; 2],
    pub stability_tau: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            rounds: 5,
            questioner_steps_per_round: 100,
            questions_per_round: 512,
            per_cell_questions: 500,
            eval_rollouts: 8,
            darc_snapshots: 6,
            diagonal_band: [0.35, 0.55],
            stability_tau: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub fd_step: f64,
    pub score_function_samples: usize,
    pub toy_tolerance: f64,
    pub solver_tolerance: f64,
    pub score_function_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            fd_step: 1e-5,
            score_function_samples: 100_000,
            toy_tolerance: 1e-6,
            solver_tolerance: 1e-8,
            score_function_tolerance: 5e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Tier the paired solver runs train on.
    pub tier: f64,
    /// Teacher boost of the ablated run.
    pub ablated_doc_boost: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            tier: 0.2,
            ablated_doc_boost: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    pub seed: u64,
    pub model: ModelConfig,
    pub theorem: TheoremCheckConfig,
    pub coupled_sim: CoupledSimConfig,
    pub corpus: CorpusConfig,
    pub questioner: QuestionerConfig,
    pub solver: SolverConfig,
    pub heatmap: HeatmapConfig,
    pub grad_check: GradCheckConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: None,
            seed: 0,
            model: ModelConfig::default(),
            theorem: TheoremCheckConfig::default(),
            coupled_sim: CoupledSimConfig::default(),
            corpus: CorpusConfig::default(),
            questioner: QuestionerConfig::default(),
            solver: SolverConfig::default(),
            heatmap: HeatmapConfig::default(),
            grad_check: GradCheckConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be a positive number, got {v}")))
    }
}

fn at_least(path: &str, v: usize, min: usize) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(invalid(path, format!("must be >= {min}, got {v}")))
    }
}

fn unit(path: &str, name: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(path, format!("{name} must be in [0,1]")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        at_least("model.num_options", m.num_options, 2)?;
        if !(m.doc_boost >= 0.0 && m.doc_boost.is_finite()) {
            return Err(invalid("model.doc_boost", "must be finite and >= 0"));
        }
        if !m.base_ability.is_finite() {
            return Err(invalid("model.base_ability", "must be finite"));
        }
        at_least("model.rollouts", m.rollouts, 1)?;
        unit("model.gamma", "gamma", m.gamma)?;
        at_least("model.group_size", m.group_size, 2)?;

        self.theorem
            .validate()
            .map_err(|e| invalid("theorem", e.to_string()))?;

        let c = &self.coupled_sim;
        at_least("coupled_sim.iterations", c.iterations, 1)?;
        for (p, v) in [("coupled_sim.eta", c.eta), ("coupled_sim.phi", c.phi), ("coupled_sim.initial_offset", c.initial_offset), ("coupled_sim.log_scale", c.log_scale)] {
            if !v.is_finite() {
                return Err(invalid(p, "must be finite"));
            }
        }
        positive("coupled_sim.alpha", c.alpha)?;

        let k = &self.corpus;
        at_least("corpus.size", k.size, 1)?;
        if !(k.offset_min <= k.offset_max) || !k.offset_min.is_finite() || !k.offset_max.is_finite() {
            return Err(invalid("corpus.offset_min", "need finite offset_min <= offset_max"));
        }
        at_least("corpus.histogram_bins", k.histogram_bins, 1)?;

        let q = &self.questioner;
        if q.tiers.is_empty() {
            return Err(invalid("questioner.tiers", "need at least one tier"));
        }
        for t in &q.tiers {
            unit("questioner.tiers", "tiers", *t)?;
        }
        at_least("questioner.steps", q.steps, 1)?;
        positive("questioner.lr", q.lr)?;
        positive("questioner.eps_std", q.eps_std)?;
        at_least("questioner.calibration_per_tier", q.calibration_per_tier, 1)?;

        let s = &self.solver;
        if !(s.lr >= 0.0 && s.lr.is_finite()) {
            return Err(invalid("solver.lr", "must be finite and >= 0"));
        }
        at_least("solver.batch_size", s.batch_size, 1)?;
        at_least("solver.per_tier_count", s.per_tier_count, 1)?;
        at_least("solver.validation_per_tier", s.validation_per_tier, 1)?;

        let h = &self.heatmap;
        at_least("heatmap.rounds", h.rounds, 1)?;
        at_least("heatmap.questioner_steps_per_round", h.questioner_steps_per_round, 1)?;
        at_least("heatmap.questions_per_round", h.questions_per_round, 1)?;
        at_least("heatmap.per_cell_questions", h.per_cell_questions, 1)?;
        at_least("heatmap.eval_rollouts", h.eval_rollouts, 1)?;
        at_least("heatmap.darc_snapshots", h.darc_snapshots, 2)?;
        if !(h.diagonal_band[0] <= h.diagonal_band[1]) {
            return Err(invalid("heatmap.diagonal_band", "lower bound exceeds upper bound"));
        }
        if !(-1.0..=1.0).contains(&h.stability_tau) {
            return Err(invalid("heatmap.stability_tau", "must be in [-1,1]"));
        }

        let g = &self.grad_check;
        positive("grad_check.fd_step", g.fd_step)?;
        at_least("grad_check.score_function_samples", g.score_function_samples, 2)?;

        unit("ablation.tier", "tier", self.ablation.tier)?;
        if !self.questioner.tiers.contains(&self.ablation.tier) {
            return Err(invalid("ablation.tier", "must be one of questioner.tiers"));
        }
        if !(self.ablation.ablated_doc_boost >= 0.0) {
            return Err(invalid("ablation.ablated_doc_boost", "must be >= 0"));
        }
        Ok(())
    }

    pub fn questioner_train(&self) -> QuestionerTrainConfig {
        QuestionerTrainConfig {
            steps: self.questioner.steps,
            lr: self.questioner.lr,
            group_size: self.model.group_size,
            eps_std: self.questioner.eps_std,
            natural_gradient: self.questioner.natural_gradient,
            reward_rule: RewardRule::TierTarget,
        }
    }

    pub fn solver_train(&self) -> SolverTrainConfig {
        SolverTrainConfig {
            rollouts: self.model.rollouts,
            gamma: self.model.gamma,
            lr: self.solver.lr,
            batch_size: self.solver.batch_size,
            mode: self.solver.mode,
            optimizer: self.solver.optimizer,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Where a resolved field value came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub field: String,
    pub value: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub config_path: Option<String>,
    pub overrides: Vec<Provenance>,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, field: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = field.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::Override(field.to_string()))?;
    let mut table = root;
    for p in parts {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(field, format!("`{p}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Parses `text`, applies `field=value` overrides in order, then validates.
/// Overrides win over file values; the returned provenance lists each one.
pub fn load_config_str(text: &str, overrides: &[String], flag_source: &str) -> Result<(RunConfig, Vec<Provenance>), ConfigError> {
    let mut root: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut provenance = Vec::new();
    for o in overrides {
        let (field, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
        let (field, raw) = (field.trim(), raw.trim());
        apply_override(&mut root, field, parse_value(raw))?;
        provenance.push(Provenance {
            field: field.to_string(),
            value: raw.to_string(),
            source: flag_source.to_string(),
        });
    }
    let config: RunConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok((config, provenance))
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })?,
        None => String::new(),
    };
    let (config, overrides) = load_config_str(&text, overrides, "flag")?;
    Ok(LoadedConfig {
        config,
        config_path: path.map(|p| p.display().to_string()),
        overrides,
    })
}
