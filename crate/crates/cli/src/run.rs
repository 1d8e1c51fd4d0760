//! Experiment dispatch, run directories and manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use darc_core::corpus::{corpus_stats, ingest_corpus_stats, write_corpus};
use darc_core::diagnostics::export_heatmap;
use darc_core::questioner::{score_function_mean_gradient, smoothed_tier_objective, write_reward_curve, QuestionerPolicy};
use darc_core::solver::{
    expected_reward_and_grad, order_curriculum, train_solver, write_training_curve, CurriculumPhase, CurriculumSchedule,
    Ordering, SolverTrainState, StepRecord,
};
use darc_core::toy::{
    coupled_objective_exact, coupled_objective_grad, run_coupled_selfplay, theorem_check, CoupledState, DifficultyPolicy1D,
};
use darc_core::{SolverProfile, SyntheticQuestion};
use serde::Serialize;

use crate::config::{ExperimentKind, LoadedConfig, PolicyKind, RunConfig};
use crate::manifest::{create_run_dir, sha256_file, OutputFile, RunManifest, MANIFEST_FILE};
use crate::pipeline::{self, Seeds};

pub const TOOL: &str = "darc-lab";
pub const ERROR_FILE: &str = "error.json";

/// A run directory being filled.
pub struct Run {
    pub dir: PathBuf,
    outputs: Vec<OutputFile>,
}

impl Run {
    fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.record(name)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    /// Registers a file some other writer already put in the run directory.
    fn record(&mut self, name: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        let (sha256, bytes) = sha256_file(&path).with_context(|| format!("hashing {}", path.display()))?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256,
            bytes,
        });
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        self.manifest.complete && self.manifest.checks_passed
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Present the shuffled control instead of the curriculum (solver training).
    pub shuffle: bool,
}

fn now() -> chrono::DateTime<chrono::Utc> {
    chrono::Utc::now()
}

/// Runs one experiment into a fresh directory under `out_root`. The manifest
/// is written whether or not the experiment succeeds; a failure also leaves
/// `error.json` and is returned as `Err` together with the directory.
pub fn run_experiment(
    kind: ExperimentKind,
    loaded: &LoadedConfig,
    options: RunOptions,
    out_root: &Path,
) -> Result<RunOutcome, (Option<PathBuf>, anyhow::Error)> {
    let mut config = loaded.config.clone();
    config.experiment = Some(kind);
    let started = now();
    let stamp = started.format("%Y%m%dT%H%M%SZ").to_string();
    let dir = create_run_dir(out_root, &stamp, config.seed, kind.name())
        .with_context(|| format!("creating run directory under {}", out_root.display()))
        .map_err(|e| (None, e))?;
    let mut run = Run {
        dir: dir.clone(),
        outputs: Vec::new(),
    };
    let result = dispatch(kind, &config, options, &mut run);
    let (complete, checks_passed) = match &result {
        Ok(checks) => (true, *checks),
        Err(_) => (false, false),
    };
    let manifest = RunManifest {
        tool: TOOL.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: kind.name().to_string(),
        seed: config.seed,
        started: started.to_rfc3339(),
        finished: now().to_rfc3339(),
        complete,
        checks_passed,
        config_path: loaded.config_path.clone(),
        overrides: loaded.overrides.clone(),
        outputs: run.outputs.clone(),
        config,
    };
    let written = std::fs::write(dir.join(MANIFEST_FILE), manifest.to_toml()).with_context(|| format!("writing manifest in {}", dir.display()));
    match (result, written) {
        (Ok(_), Ok(())) => Ok(RunOutcome { dir, manifest }),
        (Err(e), _) | (Ok(_), Err(e)) => {
            let record = error_record(kind.name(), Some(&dir), &e);
            let _ = std::fs::write(dir.join(ERROR_FILE), serde_json::to_string_pretty(&record).unwrap_or_default() + "\n");
            Err((Some(dir), e))
        }
    }
}

/// The machine-readable failure record.
pub fn error_record(experiment: &str, dir: Option<&Path>, err: &anyhow::Error) -> serde_json::Value {
    serde_json::json!({
        "status": "error",
        "experiment": experiment,
        "run_dir": dir.map(|d| d.display().to_string()),
        "message": format!("{err:#}"),
    })
}

fn dispatch(kind: ExperimentKind, cfg: &RunConfig, options: RunOptions, run: &mut Run) -> anyhow::Result<bool> {
    match kind {
        ExperimentKind::TheoremCheck => theorem(cfg, run),
        ExperimentKind::CoupledSim => coupled_sim(cfg, run),
        ExperimentKind::TrainQuestioner => train_questioner(cfg, run),
        ExperimentKind::TrainSolver => train_solver_run(cfg, options, run),
        ExperimentKind::Heatmap => heatmap(cfg, run),
        ExperimentKind::GradCheck => grad_check(cfg, run),
        ExperimentKind::Ablation => ablation(cfg, run),
        ExperimentKind::GenCorpus => gen_corpus(cfg, run),
        ExperimentKind::CorpusStats => corpus_stats_run(cfg, run),
    }
}

fn e12(v: f64) -> String {
    format!("{v:.12e}")
}

fn theorem(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<bool> {
    let report = theorem_check(&cfg.theorem)?;
    run.write_json("theorem_report.json", &report)?;
    let mut csv = String::from("quantity,value\n");
    for (k, v) in [
        ("success_before", report.success_before),
        ("success_after", report.success_after),
        ("alpha_used", report.alpha_used),
        ("directional_derivative", report.directional_derivative),
        ("directional_derivative_fd", report.directional_derivative_fd),
        ("delta_j", report.delta_j),
        ("gaussian_delta_j", report.gaussian_delta_j),
    ] {
        writeln!(csv, "{k},{}", e12(v))?;
    }
    run.write("theorem_report.csv", &csv)?;
    Ok(report.reversal_confirmed)
}

fn coupled_sim(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<bool> {
    let c = &cfg.coupled_sim;
    let location = c.phi + c.initial_offset;
    let policy = match c.policy {
        PolicyKind::PointMass => DifficultyPolicy1D::PointMass { location },
        PolicyKind::Gaussian => DifficultyPolicy1D::Gaussian {
            location,
            log_scale: c.log_scale,
        },
    };
    let initial = CoupledState {
        solver_ability: c.phi,
        policy,
        iteration: 0,
    };
    let traj = run_coupled_selfplay(initial, c.eta, c.alpha, c.iterations, c.mc_samples, cfg.seed)?;
    traj.write_csv(&run.path("trajectory.csv"))?;
    run.record("trajectory.csv")?;
    let flips = traj
        .records
        .windows(2)
        .filter(|w| w[0].grad * w[1].grad < 0.0)
        .count();
    let last = traj.records.last().expect("iterations >= 1");
    run.write_json(
        "coupled_sim_summary.json",
        &serde_json::json!({
            "iterations": traj.records.len(),
            "gradient_sign_flips": flips,
            "final_phi": last.phi,
            "final_location": last.location,
            "final_gap": last.location - last.phi,
        }),
    )?;
    Ok(true)
}

fn write_corpus_file(docs: &[darc_core::corpus::Document], run: &mut Run) -> anyhow::Result<()> {
    write_corpus(docs, &run.path("corpus.jsonl"))?;
    run.record("corpus.jsonl")
}

fn questioner_outputs(stage: &pipeline::QuestionerStage, run: &mut Run) -> anyhow::Result<()> {
    run.write("questioner.toml", &stage.policy.to_checkpoint())?;
    if !stage.loaded {
        write_reward_curve(&stage.curve, &run.path("reward_curve.csv"))?;
        run.record("reward_curve.csv")?;
    }
    Ok(())
}

fn train_questioner(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<bool> {
    let docs = pipeline::corpus(cfg)?;
    if cfg.corpus.path.is_none() {
        write_corpus_file(&docs, run)?;
    }
    let stage = pipeline::questioner_stage(cfg, &docs)?;
    questioner_outputs(&stage, run)?;
    let cal = pipeline::calibration_stage(cfg, &stage.policy, &docs)?;
    let mut csv = String::from("tier,mean_difficulty,mean_abs_error,questions\n");
    for c in &cal {
        writeln!(csv, "{},{},{},{}", c.tier, e12(c.mean_difficulty), e12(c.mean_abs_error), c.questions)?;
    }
    run.write("calibration.csv", &csv)?;
    let mut by_tier = cal.clone();
    by_tier.sort_by(|a, b| b.tier.total_cmp(&a.tier));
    let monotone = by_tier.windows(2).all(|w| w[0].mean_difficulty > w[1].mean_difficulty);
    run.write_json(
        "questioner_summary.json",
        &serde_json::json!({
            "policy_digest": stage.policy.digest(),
            "tier_means": stage.policy.tiers,
            "scale": stage.policy.scale(),
            "grounding_rate": stage.policy.grounding_rate(),
            "calibration": cal,
            "difficulty_monotone_across_tiers": monotone,
            "max_mean_abs_error": cal.iter().map(|c| c.mean_abs_error).fold(0.0, f64::max),
        }),
    )?;
    Ok(true)
}

/// First step whose validation reward reaches `threshold`, counting from 1.
pub fn steps_to_reach(curve: &[StepRecord], threshold: f64) -> Option<usize> {
    curve.iter().position(|r| r.validation_reward >= threshold).map(|i| i + 1)
}

/// For each tier change in a curriculum curve: (last reward before, first reward after).
pub fn phase_boundary_rewards(curve: &[StepRecord]) -> Vec<(f64, f64, f64, f64)> {
    curve
        .windows(2)
        .filter(|w| w[0].phase_tier != w[1].phase_tier && !w[0].phase_tier.is_nan() && !w[1].phase_tier.is_nan())
        .map(|w| (w[0].phase_tier, w[1].phase_tier, w[0].mean_train_reward, w[1].mean_train_reward))
        .collect()
}

fn train_solver_run(cfg: &RunConfig, options: RunOptions, run: &mut Run) -> anyhow::Result<bool> {
    let docs = pipeline::corpus(cfg)?;
    let q = pipeline::questioner_stage(cfg, &docs)?;
    questioner_outputs(&q, run)?;
    let ordering = if options.shuffle { Ordering::Shuffled } else { Ordering::Curriculum };
    let stage = pipeline::solver_stage(cfg, &q.policy, &docs, ordering, pipeline::base_solver(cfg)?)?;
    stage.set.write_jsonl(&run.path("offline_set.jsonl"))?;
    run.record("offline_set.jsonl")?;
    let mut order = String::from("position,question_id,tier\n");
    for (i, item) in stage.ordered.items.iter().enumerate() {
        writeln!(order, "{i},{},{}", item.question.id, item.tier_target)?;
    }
    run.write("item_order.csv", &order)?;
    write_training_curve(&stage.curve, &run.path("training_curve.csv"))?;
    run.record("training_curve.csv")?;

    let mut consumed: Vec<u64> = stage.ordered.items.iter().map(|i| i.question.id).collect();
    let mut offered: Vec<u64> = stage.set.items.iter().map(|i| i.question.id).collect();
    consumed.sort_unstable();
    offered.sort_unstable();
    let conserved = consumed == offered;
    let bookkeeping = stage.state.processed() == stage.ordered.items.len()
        && stage.curve.iter().all(|r| (0.0..=1.0).contains(&r.acceptance_rate));
    let tiers: Vec<f64> = stage.ordered.items.iter().map(|i| i.tier_target).collect();
    let curriculum_order = ordering == Ordering::Shuffled || tiers.windows(2).all(|w| w[1] <= w[0]);

    let boundaries: Vec<serde_json::Value> = phase_boundary_rewards(&stage.curve)
        .into_iter()
        .map(|(from, to, before, after)| serde_json::json!({ "from_tier": from, "to_tier": to, "last_reward": before, "first_reward": after, "dip": after < before }))
        .collect();
    run.write_json(
        "solver_summary.json",
        &serde_json::json!({
            "ordering": ordering,
            "policy_digest": q.policy.digest(),
            "items": stage.ordered.items.len(),
            "accepted": stage.state.accepted_count,
            "rejected": stage.state.rejected_count,
            "initial_phi": cfg.model.base_ability,
            "final_phi": stage.state.student.ability,
            "final_validation_reward": stage.curve.last().map(|r| r.validation_reward),
            "steps_to_validation_0_7": steps_to_reach(&stage.curve, 0.7),
            "phase_boundaries": boundaries,
            "question_multiset_conserved": conserved,
        }),
    )?;
    Ok(conserved && bookkeeping && curriculum_order)
}

fn heatmap(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<bool> {
    let docs = pipeline::corpus(cfg)?;
    let q = pipeline::questioner_stage(cfg, &docs)?;
    let darc = pipeline::solver_stage(cfg, &q.policy, &docs, Ordering::Curriculum, pipeline::base_solver(cfg)?)?;
    let darc_map = pipeline::darc_heatmap(cfg, &q.policy, &darc, &docs)?;
    let coupled = pipeline::coupled_stage(cfg, &docs)?;
    let coupled_map = pipeline::coupled_heatmap(cfg, &coupled, &docs)?;

    for (prefix, map) in [("darc_heatmap", &darc_map), ("coupled_heatmap", &coupled_map)] {
        let files = export_heatmap(&map.matrix, &map.report, &run.path(prefix))?;
        for f in [files.csv, files.report, files.svg] {
            run.record(f.file_name().and_then(|n| n.to_str()).expect("utf-8 name"))?;
        }
    }
    let mut rounds = String::from("round,questioner_mean,questioner_scale,mean_questioner_reward,acceptance_rate,phi_before,phi_after\n");
    for r in &coupled.rounds {
        writeln!(
            rounds,
            "{},{},{},{},{},{},{}",
            r.round,
            e12(r.questioner_mean),
            e12(r.questioner_scale),
            e12(r.mean_questioner_reward),
            e12(r.acceptance_rate),
            e12(r.phi_before),
            e12(r.phi_after)
        )?;
    }
    run.write("coupled_rounds.csv", &rounds)?;
    let h = &cfg.heatmap;
    let min_tau = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let coupled_min = min_tau(&coupled_map.report.row_kendall_tau);
    let darc_min = min_tau(&darc_map.report.row_kendall_tau);
    let diag = coupled_map.report.diagonal_mean;
    run.write_json(
        "heatmap_summary.json",
        &serde_json::json!({
            "coupled_min_solver_axis_tau": coupled_min,
            "coupled_diagonal_mean": diag,
            "darc_min_solver_axis_tau": darc_min,
            "coupled_unstable": coupled_min < h.stability_tau,
            "coupled_diagonal_in_band": diag >= h.diagonal_band[0] && diag <= h.diagonal_band[1],
            "darc_stable": darc_min >= h.stability_tau,
        }),
    )?;
    Ok(true)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub component: String,
    pub point: String,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn grad_check_rows(cfg: &RunConfig) -> anyhow::Result<Vec<GradCheckRow>> {
    let g = &cfg.grad_check;
    let h = g.fd_step;
    let mut rows = Vec::new();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-12);

    // toy objective: point masses and gaussians away from the kink
    for &offset in &[-2.0, -0.7, -0.2, 0.3, 0.9, 2.5] {
        for policy in [
            DifficultyPolicy1D::PointMass { location: offset },
            DifficultyPolicy1D::Gaussian {
                location: offset,
                log_scale: (0.3f64).ln(),
            },
        ] {
            let a = coupled_objective_grad(&policy, 0.0);
            let n = (coupled_objective_exact(&policy.with_location(offset + h), 0.0)
                - coupled_objective_exact(&policy.with_location(offset - h), 0.0))
                / (2.0 * h);
            let e = rel(a, n);
            rows.push(GradCheckRow {
                component: "toy".into(),
                point: format!("{policy:?}"),
                analytic: a,
                numeric: n,
                error: e,
                tolerance: g.toy_tolerance,
                pass: e < g.toy_tolerance,
            });
        }
    }

    // solver expected reward
    let sh = 1e-6;
    for &(phi, tau, pc) in &[(0.0, 0.0, 0.9), (1.3, -0.4, 1.0), (-2.0, 0.5, 0.3), (0.7, 2.0, 0.0), (0.2, 0.1, 0.6)] {
        let q = SyntheticQuestion {
            id: 0,
            latent_difficulty: tau,
            grounded: true,
            num_options: cfg.model.num_options,
            correct_option: 0,
            doc_id: 0,
            tier_target: 0.5,
        };
        let (_, a) = expected_reward_and_grad(phi, &q, pc);
        let n = (expected_reward_and_grad(phi + sh, &q, pc).0 - expected_reward_and_grad(phi - sh, &q, pc).0) / (2.0 * sh);
        let e = rel(a, n);
        rows.push(GradCheckRow {
            component: "solver".into(),
            point: format!("phi={phi} tau={tau} p_label_correct={pc}"),
            analytic: a,
            numeric: n,
            error: e,
            tolerance: g.solver_tolerance,
            pass: e < g.solver_tolerance,
        });
    }

    // questioner score function against differences of the smoothed objective
    let est = pipeline::estimator(cfg)?;
    let doc = darc_core::corpus::Document::neutral(0);
    for &offset in &[-0.6, 0.4] {
        let mean = cfg.model.base_ability + offset;
        let mut p = QuestionerPolicy::new(&[0.5], mean, (0.5f64).ln(), 3.0)?;
        let (a, _) = score_function_mean_gradient(&p, 0.5, &doc, &est, g.score_function_samples, Seeds::new(cfg.seed).evaluation)?;
        let fh = 1e-4;
        p.tiers[0].mean = mean + fh;
        let up = smoothed_tier_objective(&p, 0.5, &doc, &est, 64)?;
        p.tiers[0].mean = mean - fh;
        let down = smoothed_tier_objective(&p, 0.5, &doc, &est, 64)?;
        let n = (up - down) / (2.0 * fh);
        let e = (a - n).abs();
        rows.push(GradCheckRow {
            component: "questioner".into(),
            point: format!("tier=0.5 mean={mean} scale=0.5"),
            analytic: a,
            numeric: n,
            error: e,
            tolerance: g.score_function_tolerance,
            pass: e < g.score_function_tolerance,
        });
    }
    Ok(rows)
}

fn grad_check(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<bool> {
    let rows = grad_check_rows(cfg)?;
    let mut csv = String::from("component,point,analytic,numeric,error,tolerance,pass\n");
    for r in &rows {
        writeln!(
            csv,
            "{},\"{}\",{},{},{},{},{}",
            r.component,
            r.point,
            e12(r.analytic),
            e12(r.numeric),
            e12(r.error),
            r.tolerance,
            r.pass
        )?;
    }
    run.write("grad_check.csv", &csv)?;
    Ok(rows.iter().all(|r| r.pass))
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub doc_boost: f64,
    pub teacher: String,
    pub acceptance_rate: f64,
    pub final_phi: f64,
    pub phi_gain: f64,
    pub final_validation_reward: f64,
}

/// Paired student runs on one tier: full teacher, weakened teacher, frozen teacher.
pub fn ablation_rows(cfg: &RunConfig) -> anyhow::Result<Vec<AblationRow>> {
    let docs = pipeline::corpus(cfg)?;
    let q = pipeline::questioner_stage(cfg, &docs)?;
    let seeds = Seeds::new(cfg.seed);
    let set = pipeline::offline_set(cfg, &q.policy, &docs)?;
    let schedule = CurriculumSchedule {
        phases: vec![CurriculumPhase {
            tier: cfg.ablation.tier,
            item_budget: None,
        }],
    };
    let ordered = order_curriculum(&set, &schedule, Ordering::Curriculum, seeds.shuffle)?;
    let validation = darc_core::solver::validation_questions(&q.policy, &docs, cfg.solver.validation_per_tier, cfg.model.num_options, seeds.validation)?;
    let base = cfg.model.base_ability;
    let variants = [
        ("full", cfg.model.doc_boost, false),
        ("weak_teacher", cfg.ablation.ablated_doc_boost, false),
        ("frozen_teacher", cfg.model.doc_boost, true),
    ];
    variants
        .iter()
        .map(|&(name, boost, frozen)| {
            let student = SolverProfile::new(base, boost)?;
            let state = if frozen {
                SolverTrainState::frozen_teacher(student)
            } else {
                SolverTrainState::shared(student)
            };
            let (state, curve) = train_solver(state, &ordered, &cfg.solver_train(), &validation, seeds.solver)?;
            Ok(AblationRow {
                variant: name.to_string(),
                doc_boost: boost,
                teacher: if frozen { "frozen" } else { "shared" }.to_string(),
                acceptance_rate: state.accepted_count as f64 / state.processed().max(1) as f64,
                final_phi: state.student.ability,
                phi_gain: state.student.ability - base,
                final_validation_reward: curve.last().map_or(f64::NAN, |r| r.validation_reward),
            })
        })
        .collect()
}

fn ablation(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<bool> {
    let rows = ablation_rows(cfg)?;
    let mut csv = String::from("variant,doc_boost,teacher,acceptance_rate,final_phi,phi_gain,final_validation_reward\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.variant,
            r.doc_boost,
            r.teacher,
            e12(r.acceptance_rate),
            e12(r.final_phi),
            e12(r.phi_gain),
            e12(r.final_validation_reward)
        )?;
    }
    run.write("ablation.csv", &csv)?;
    Ok(true)
}

fn gen_corpus(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<bool> {
    let docs = pipeline::corpus(cfg)?;
    write_corpus_file(&docs, run)?;
    run.write_json("corpus_stats.json", &corpus_stats(&docs, cfg.corpus.histogram_bins)?)?;
    Ok(true)
}

fn corpus_stats_run(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<bool> {
    let path = cfg
        .corpus
        .path
        .as_deref()
        .context("corpus-stats needs a corpus file")?;
    let stats = ingest_corpus_stats(Path::new(path), cfg.corpus.histogram_bins)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    run.write_json("corpus_stats.json", &stats)?;
    Ok(true)
}
