use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use darc_core::corpus::generate_synthetic_corpus;
use darc_core::diagnostics::{cross_accuracy_matrix, QuestionerSnapshot, SolverSnapshot};
use darc_core::questioner::{estimate_difficulty, DifficultyEstimatorConfig, QuestionerPolicy, DEFAULT_TIERS};
use darc_core::solver::{build_offline_set, order_curriculum, train_solver, CurriculumSchedule, Ordering, SolverTrainConfig, SolverTrainState};
use darc_core::toy::{theorem_check, TheoremCheckConfig};
use darc_core::{pseudo_label_distribution, SolverProfile, StreamKey, SyntheticQuestion};

fn policy() -> QuestionerPolicy {
    let mut p = QuestionerPolicy::new(&DEFAULT_TIERS, 0.0, 0.3f64.ln(), 4.0).unwrap();
    for t in &mut p.tiers {
        t.mean = ((1.0 - t.tier) / t.tier).ln();
    }
    p
}

fn enumeration(c: &mut Criterion) {
    c.bench_function("pseudo_label_distribution N=8 K=4", |b| {
        b.iter(|| pseudo_label_distribution(black_box(0.37), 8, 4).unwrap())
    });
    c.bench_function("pseudo_label_distribution N=12 K=8", |b| {
        b.iter(|| pseudo_label_distribution(black_box(0.37), 12, 8).unwrap())
    });
}

fn estimator(c: &mut Criterion) {
    let cfg = DifficultyEstimatorConfig {
        rollouts: 8,
        base_solver: SolverProfile::new(0.0, 2.0).unwrap(),
        num_options: 4,
    };
    let q = SyntheticQuestion {
        id: 3,
        latent_difficulty: 0.4,
        grounded: true,
        num_options: 4,
        correct_option: 1,
        doc_id: 0,
        tier_target: 0.5,
    };
    let key = StreamKey::root(1);
    c.bench_function("estimate_difficulty", |b| {
        b.iter(|| estimate_difficulty(black_box(&q), &cfg, &cfg.base_solver, key))
    });
}

fn theorem(c: &mut Criterion) {
    let cfg = TheoremCheckConfig::default();
    c.bench_function("theorem_check", |b| b.iter(|| theorem_check(black_box(&cfg)).unwrap()));
}

fn solver_training(c: &mut Criterion) {
    let docs = generate_synthetic_corpus(1000, (-0.2, 0.2), 0).unwrap();
    let set = build_offline_set(&policy(), &docs, &DEFAULT_TIERS, 1024, 4, 0).unwrap();
    let ordered = order_curriculum(&set, &CurriculumSchedule::easy_to_hard(&DEFAULT_TIERS), Ordering::Curriculum, 0).unwrap();
    let cfg = SolverTrainConfig::default();
    let student = SolverProfile::new(0.0, 2.0).unwrap();
    c.bench_function("train_solver 3072 items", |b| {
        b.iter(|| train_solver(SolverTrainState::shared(student), black_box(&ordered), &cfg, &[], 1).unwrap())
    });
}

fn heatmap(c: &mut Criterion) {
    let docs = generate_synthetic_corpus(1000, (-0.2, 0.2), 0).unwrap();
    let p = policy();
    let rows: Vec<QuestionerSnapshot> = DEFAULT_TIERS
        .iter()
        .map(|&tier| QuestionerSnapshot {
            label: format!("tier{tier}"),
            policy: p.clone(),
            tier,
        })
        .collect();
    let cols: Vec<SolverSnapshot> = (0..6)
        .map(|t| SolverSnapshot {
            label: format!("S{t}"),
            profile: SolverProfile::new(0.3 * t as f64, 2.0).unwrap(),
        })
        .collect();
    c.bench_function("cross_accuracy_matrix 3x6x500", |b| {
        b.iter(|| cross_accuracy_matrix(black_box(&rows), &cols, &docs, 500, 8, 4, 2).unwrap())
    });
}

criterion_group!(benches, enumeration, estimator, theorem, solver_training, heatmap);
criterion_main!(benches);
