//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line with
//! the measured quantities, then asserts.

use std::time::{Duration, Instant};

use darc_cli::config::{load_config_str, ExperimentKind, LoadedConfig, RunConfig};
use darc_cli::pipeline;
use darc_cli::run::{grad_check_rows, phase_boundary_rewards, run_experiment, steps_to_reach, RunOptions};
use darc_core::model::{sample_with_probability, SolverProfile, SyntheticQuestion};
use darc_core::questioner::{
    decoupled_objective_value, group_relative_advantage, questioner_reward, DifficultyEstimatorConfig, Estimator,
    DEFAULT_TIERS,
};
use darc_core::solver::{solver_reward, Ordering};
use darc_core::toy::{theorem_check, TheoremCheckConfig};
use darc_core::voting::{majority_vote, pseudo_label_distribution, PseudoLabel};
use darc_core::{sigmoid, AnswerSample, StreamKey};
use rand::Rng;

fn report(n: u32, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let verdict = if pass && elapsed <= limit { "PASS" } else { "FAIL" };
    println!(
        "criterion {n}: {verdict} [{:.3}s of {:.0}s] {detail}",
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
}

fn defaults() -> RunConfig {
    RunConfig::default()
}

#[test]
fn criterion_01_theorem_reproduction() {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = String::new();
    for (eta, delta) in [(1.0, 0.5), (-1.0, -0.5)] {
        let cfg = TheoremCheckConfig {
            eta,
            delta,
            alpha: 1e-3,
            ..Default::default()
        };
        let r = theorem_check(&cfg).unwrap();
        let (lo, hi) = if eta > 0.0 {
            (sigmoid(-delta), sigmoid(eta - delta))
        } else {
            (sigmoid(eta - delta), sigmoid(-delta))
        };
        let opposite_sides = lo < 0.5 && 0.5 < hi;
        let ok = r.alpha_used <= 1e-3 && r.directional_derivative < 0.0 && r.delta_j < 0.0 && opposite_sides;
        pass &= ok;
        detail += &format!(
            "eta={eta} delta={delta}: dd={:.4e} dJ={:.4e} s_before={:.4} s_after={:.4}; ",
            r.directional_derivative, r.delta_j, r.success_before, r.success_after
        );
    }
    let elapsed = start.elapsed();
    report(1, pass, elapsed, Duration::from_secs(1), &detail);
    assert!(pass && elapsed < Duration::from_secs(1));
}

#[test]
fn criterion_02_decoupling_stationarity() {
    let start = Instant::now();
    let cfg = defaults();
    let docs = pipeline::corpus(&cfg).unwrap();
    let est = pipeline::estimator(&cfg).unwrap();
    let policy = pipeline::initial_questioner(&cfg, &DEFAULT_TIERS).unwrap();
    let objective = |e: &Estimator| decoupled_objective_value(&policy, &DEFAULT_TIERS, &docs, e, 2000, 5).unwrap().value;

    let before = objective(&est);
    // a student trained on this questioner's output moves, the objective must not
    let student = pipeline::solver_stage(&cfg, &policy, &docs, Ordering::Curriculum, pipeline::base_solver(&cfg).unwrap()).unwrap();
    let after = objective(&est);
    let moved = student.state.student.ability - cfg.model.base_ability;

    // control: moving the estimator itself does move the objective
    let shifted = Estimator::new(DifficultyEstimatorConfig {
        base_solver: SolverProfile::new(1.0, cfg.model.doc_boost).unwrap(),
        ..est.cfg
    });
    let control = objective(&shifted);
    let pass = before.to_bits() == after.to_bits() && moved.abs() > 0.1 && control != before;
    let elapsed = start.elapsed();
    report(
        2,
        pass,
        elapsed,
        Duration::from_secs(1),
        &format!("J before={before:.15} after={after:.15} (student moved by {moved:.3}); estimator shifted: J={control:.6}"),
    );
    assert!(pass && elapsed < Duration::from_secs(1));
}

#[test]
fn criterion_03_formula_contracts() {
    let start = Instant::now();
    let mut max_err: f64 = 0.0;
    let mut ungrounded_ok = true;
    for &tier in &DEFAULT_TIERS {
        for k in 0..=100 {
            let d = k as f64 / 100.0;
            let mut q = SyntheticQuestion {
                id: 0,
                latent_difficulty: 0.0,
                grounded: true,
                num_options: 4,
                correct_option: 0,
                doc_id: 0,
                tier_target: tier,
            };
            max_err = max_err.max((questioner_reward(&q, d).unwrap() - (1.0 - (d - tier).abs())).abs());
            q.grounded = false;
            ungrounded_ok &= questioner_reward(&q, d).unwrap() == -1.0;
        }
    }
    let mut indicator_ok = true;
    for label_index in 0..4 {
        let label = PseudoLabel {
            label_index,
            agreement: 1.0,
            vote_counts: vec![0; 4],
        };
        for option_index in 0..4 {
            let r = solver_reward(&AnswerSample { option_index, correct: false }, &label);
            indicator_ok &= r == if option_index == label_index { 1.0 } else { 0.0 };
        }
    }
    let mut rng = StreamKey::root(3).rng();
    let mut max_mean: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..32);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let adv = group_relative_advantage(&rewards).unwrap();
        max_mean = max_mean.max((adv.iter().sum::<f64>() / n as f64).abs());
    }
    let pass = max_err == 0.0 && ungrounded_ok && indicator_ok && max_mean < 1e-10;
    let elapsed = start.elapsed();
    report(
        3,
        pass,
        elapsed,
        Duration::from_secs(1),
        &format!("reward grid max error={max_err:e}, ungrounded branch ok={ungrounded_ok}, indicator ok={indicator_ok}, max |mean advantage|={max_mean:e}"),
    );
    assert!(pass && elapsed < Duration::from_secs(1));
}

#[test]
fn criterion_04_enumeration_oracle() {
    let start = Instant::now();
    let (n, k, trials) = (8usize, 4usize, 100_000u64);
    let mut pass = true;
    let mut detail = String::new();
    for (pi, &p) in [0.2, 0.5, 0.8].iter().enumerate() {
        let exact = pseudo_label_distribution(p, n, k).unwrap();
        let mut rng = StreamKey::root(11).child(pi as u64).rng();
        let (mut hits, mut agree, mut agree_sq) = (0.0, 0.0, 0.0);
        for _ in 0..trials {
            let correct = rng.random_range(0..k);
            let votes: Vec<AnswerSample> = (0..n).map(|_| sample_with_probability(&mut rng, p, k, correct)).collect();
            let label = majority_vote(&votes, k).unwrap();
            if label.label_index == correct {
                hits += 1.0;
            }
            agree += label.agreement;
            agree_sq += label.agreement * label.agreement;
        }
        let t = trials as f64;
        let pc = hits / t;
        let pc_exact = exact.p_label_correct();
        let pc_se = (pc_exact * (1.0 - pc_exact) / t).sqrt();
        let ma = agree / t;
        let ma_se = ((agree_sq / t - ma * ma) / t).sqrt();
        let ok = (pc - pc_exact).abs() <= 3.0 * pc_se && (ma - exact.mean_agreement()).abs() <= 3.0 * ma_se;
        pass &= ok;
        detail += &format!(
            "p={p}: P(correct) mc={pc:.5} exact={pc_exact:.5} ({:.2} se), agreement mc={ma:.5} exact={:.5} ({:.2} se); ",
            (pc - pc_exact).abs() / pc_se,
            exact.mean_agreement(),
            (ma - exact.mean_agreement()).abs() / ma_se
        );
    }
    let elapsed = start.elapsed();
    report(4, pass, elapsed, Duration::from_secs(30), &detail);
    assert!(pass && elapsed < Duration::from_secs(30));
}

#[test]
fn criterion_05_asymmetric_teacher_dominance() {
    let start = Instant::now();
    let phi = 0.0;
    let mut pass = true;
    let mut strict_at_boundary = false;
    let mut worst_gap = f64::INFINITY;
    for i in 0..21 {
        let tau = -3.0 + 6.0 * i as f64 / 20.0;
        let with_doc = pseudo_label_distribution(sigmoid(phi + 2.0 - tau), 8, 4).unwrap().p_label_correct();
        let without = pseudo_label_distribution(sigmoid(phi - tau), 8, 4).unwrap().p_label_correct();
        pass &= with_doc >= without;
        worst_gap = worst_gap.min(with_doc - without);
        if tau == phi {
            strict_at_boundary = with_doc > without;
        }
    }
    let pass = pass && strict_at_boundary;
    let elapsed = start.elapsed();
    report(
        5,
        pass,
        elapsed,
        Duration::from_secs(5),
        &format!("min gap over grid={worst_gap:.3e}, strict at tau=phi: {strict_at_boundary}"),
    );
    assert!(pass && elapsed < Duration::from_secs(5));
}

#[test]
fn criterion_06_gradient_checks() {
    let start = Instant::now();
    let rows = grad_check_rows(&defaults()).unwrap();
    let worst = |c: &str| rows.iter().filter(|r| r.component == c).map(|r| r.error).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.pass);
    let elapsed = start.elapsed();
    report(
        6,
        pass,
        elapsed,
        Duration::from_secs(60),
        &format!(
            "toy max rel err={:.2e} (<1e-6), solver max rel err={:.2e} (<1e-8), score-function max abs err={:.2e} (<5e-2)",
            worst("toy"),
            worst("solver"),
            worst("questioner")
        ),
    );
    assert!(pass && elapsed < Duration::from_secs(60));
}

#[test]
fn criterion_07_stability_contrast() {
    let start = Instant::now();
    let cfg = defaults();
    let docs = pipeline::corpus(&cfg).unwrap();
    let coupled = pipeline::coupled_stage(&cfg, &docs).unwrap();
    let coupled_map = pipeline::coupled_heatmap(&cfg, &coupled, &docs).unwrap();
    let q = pipeline::questioner_stage(&cfg, &docs).unwrap();
    let darc = pipeline::solver_stage(&cfg, &q.policy, &docs, Ordering::Curriculum, pipeline::base_solver(&cfg).unwrap()).unwrap();
    let darc_map = pipeline::darc_heatmap(&cfg, &q.policy, &darc, &docs).unwrap();

    let shape = (coupled_map.matrix.rows(), coupled_map.matrix.cols());
    let coupled_min = coupled_map.report.row_kendall_tau.iter().cloned().fold(f64::INFINITY, f64::min);
    let darc_min = darc_map.report.row_kendall_tau.iter().cloned().fold(f64::INFINITY, f64::min);
    let diag = coupled_map.report.diagonal_mean;
    let unstable = coupled_min < 0.8;
    let in_band = (0.35..=0.55).contains(&diag);
    let stable = darc_min >= 0.8;
    let pass = shape == (5, 6) && unstable && in_band && stable;
    let elapsed = start.elapsed();
    let phis: Vec<String> = coupled.solvers.iter().map(|s| format!("{:.3}", s.ability)).collect();
    report(
        7,
        pass,
        elapsed,
        Duration::from_secs(300),
        &format!(
            "coupled {}x{}: min solver-axis tau={coupled_min:.3} (<0.8: {unstable}), diagonal mean={diag:.3} (in [0.35,0.55]: {in_band}), coupled abilities [{}]; decoupled min solver-axis tau={darc_min:.3} (>=0.8: {stable})",
            shape.0,
            shape.1,
            phis.join(", ")
        ),
    );
    assert!(pass && elapsed < Duration::from_secs(300));
}

#[test]
fn criterion_08_curriculum_dynamics() {
    let start = Instant::now();
    let cfg = defaults();
    let docs = pipeline::corpus(&cfg).unwrap();
    let q = pipeline::questioner_stage(&cfg, &docs).unwrap();
    let base = pipeline::base_solver(&cfg).unwrap();
    let curriculum = pipeline::solver_stage(&cfg, &q.policy, &docs, Ordering::Curriculum, base).unwrap();
    let shuffled = pipeline::solver_stage(&cfg, &q.policy, &docs, Ordering::Shuffled, base).unwrap();

    let boundaries = phase_boundary_rewards(&curriculum.curve);
    let dips = boundaries.len() == cfg.questioner.tiers.len() - 1 && boundaries.iter().all(|b| b.3 < b.2);
    let reach_c = steps_to_reach(&curriculum.curve, 0.7);
    let reach_s = steps_to_reach(&shuffled.curve, 0.7);
    let faster = matches!((reach_c, reach_s), (Some(c), Some(s)) if c <= s) || matches!((reach_c, reach_s), (Some(_), None));
    let ids = |items: &[darc_core::solver::OfflineItem]| {
        let mut v: Vec<u64> = items.iter().map(|i| i.question.id).collect();
        v.sort_unstable();
        v
    };
    let same_multiset = ids(&curriculum.ordered.items) == ids(&shuffled.ordered.items);
    let pass = dips && faster && same_multiset;
    let elapsed = start.elapsed();
    let b: Vec<String> = boundaries
        .iter()
        .map(|(from, to, before, after)| format!("{from}->{to}: {before:.3}->{after:.3}"))
        .collect();
    report(
        8,
        pass,
        elapsed,
        Duration::from_secs(300),
        &format!(
            "boundary dips [{}] ok={dips}; steps to validation 0.7: curriculum={reach_c:?} shuffled={reach_s:?} ok={faster}; identical multisets={same_multiset}",
            b.join(", ")
        ),
    );
    assert!(pass && elapsed < Duration::from_secs(300));
}

#[test]
fn criterion_09_questioner_calibration() {
    let start = Instant::now();
    let cfg = defaults();
    assert_eq!(cfg.questioner.steps, 500);
    assert_eq!(cfg.seed, 0);
    let docs = pipeline::corpus(&cfg).unwrap();
    let q = pipeline::questioner_stage(&cfg, &docs).unwrap();
    let cal = pipeline::calibration_stage(&cfg, &q.policy, &docs).unwrap();
    let d = |tier: f64| cal.iter().find(|c| c.tier == tier).unwrap();
    let monotone = d(0.8).mean_difficulty > d(0.5).mean_difficulty && d(0.5).mean_difficulty > d(0.2).mean_difficulty;
    let calibrated = cal.iter().all(|c| c.mean_abs_error < 0.15);
    let pass = monotone && calibrated;
    let elapsed = start.elapsed();
    let detail: Vec<String> = cal
        .iter()
        .map(|c| format!("tier {}: mean D={:.3} mean|D-tau|={:.3}", c.tier, c.mean_difficulty, c.mean_abs_error))
        .collect();
    report(9, pass, elapsed, Duration::from_secs(600), &format!("{}; monotone={monotone}", detail.join(", ")));
    assert!(pass && elapsed < Duration::from_secs(600));
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let (config, overrides) = load_config_str("", &[], "flag").unwrap();
    let loaded = LoadedConfig {
        config,
        config_path: None,
        overrides,
    };
    let mut pass = true;
    let mut compared = 0;
    let kinds = [
        ExperimentKind::TheoremCheck,
        ExperimentKind::CoupledSim,
        ExperimentKind::TrainQuestioner,
        ExperimentKind::TrainSolver,
        ExperimentKind::Heatmap,
        ExperimentKind::GradCheck,
        ExperimentKind::Ablation,
        ExperimentKind::GenCorpus,
    ];
    for kind in kinds {
        let a = run_experiment(kind, &loaded, RunOptions::default(), root.path()).map_err(|e| e.1).unwrap();
        let b = run_experiment(kind, &loaded, RunOptions::default(), root.path()).map_err(|e| e.1).unwrap();
        assert_ne!(a.dir, b.dir);
        for out in a.manifest.outputs.iter().filter(|o| o.path.ends_with(".csv")) {
            compared += 1;
            pass &= b.manifest.output(&out.path).map(|o| &o.sha256) == Some(&out.sha256);
        }
    }
    let elapsed = start.elapsed();
    report(
        10,
        pass,
        elapsed,
        Duration::from_secs(600),
        &format!("{compared} CSV artifacts compared across {} paired runs", kinds.len()),
    );
    assert!(pass && compared > 0);
}
