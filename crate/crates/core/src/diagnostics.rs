//! Cross-iteration accuracy matrices and their monotonicity diagnostics.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{io_error, out_of_range, LabError, Result};
use crate::model::{sample_answers, SolverProfile};
use crate::questioner::{generate_question, QuestionerPolicy};
use crate::rng::{Domain, StreamKey};

/// Rows: questioner snapshots. Columns: solver snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub values: Vec<Vec<f64>>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Answers scored per cell (questions × evaluation rollouts).
    pub samples_per_cell: usize,
}

impl AccuracyMatrix {
    pub fn new(values: Vec<Vec<f64>>, row_labels: Vec<String>, col_labels: Vec<String>, samples_per_cell: usize) -> Result<Self> {
        if values.len() != row_labels.len() {
            return Err(out_of_range("values", "row count does not match row labels"));
        }
        if values.iter().any(|r| r.len() != col_labels.len()) {
            return Err(out_of_range("values", "matrix is not rectangular or does not match column labels"));
        }
        if values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(out_of_range("values", "entries must lie in [0,1]"));
        }
        Ok(AccuracyMatrix {
            values,
            row_labels,
            col_labels,
            samples_per_cell,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[t]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("questioner");
        for c in &self.col_labels {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            out.push_str(label);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionerSnapshot {
    pub label: String,
    pub policy: QuestionerPolicy,
    pub tier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSnapshot {
    pub label: String,
    pub profile: SolverProfile,
}

/// `A[i][t]`: share of no-document answers of solver `t` that hit the true
/// option, over `per_cell_questions` questions from questioner `i` with
/// `eval_rollouts` answers each. Questions and answer streams depend only on
/// the row, so every column sees the same draws.
pub fn cross_accuracy_matrix(
    questioners: &[QuestionerSnapshot],
    solvers: &[SolverSnapshot],
    corpus: &[Document],
    per_cell_questions: usize,
    eval_rollouts: usize,
    num_options: usize,
    seed: u64,
) -> Result<AccuracyMatrix> {
    if questioners.is_empty() || solvers.is_empty() {
        return Err(out_of_range("snapshots", "need at least one snapshot on each side"));
    }
    if corpus.is_empty() {
        return Err(LabError::EmptyCorpus);
    }
    if per_cell_questions == 0 || eval_rollouts == 0 {
        return Err(out_of_range("per_cell_questions", "cells need at least one question and one rollout"));
    }
    let root = StreamKey::root(seed).domain(Domain::Evaluation);
    let values = questioners
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let row_key = root.child(i as u64);
            let questions = (0..per_cell_questions as u64)
                .map(|j| {
                    let mut rng = row_key.domain(Domain::Generation).child(j).rng();
                    let doc = &corpus[rng.random_range(0..corpus.len())];
                    let mut question = generate_question(&q.policy, doc, q.tier, j, num_options, &mut rng)?;
                    // grounding is a questioner-reward concern, not an accuracy one
                    question.grounded = true;
                    Ok(question)
                })
                .collect::<Result<Vec<_>>>()?;
            let row = solvers
                .par_iter()
                .map(|s| {
                    let hits: usize = questions
                        .iter()
                        .map(|question| {
                            let mut rng = row_key.domain(Domain::Student).child(question.id).rng();
                            sample_answers(&mut rng, &s.profile, question, false, eval_rollouts)
                                .iter()
                                .filter(|a| a.correct)
                                .count()
                        })
                        .sum();
                    hits as f64 / (per_cell_questions * eval_rollouts) as f64
                })
                .collect();
            Ok(row)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    AccuracyMatrix::new(
        values,
        questioners.iter().map(|q| q.label.clone()).collect(),
        solvers.iter().map(|s| s.label.clone()).collect(),
        per_cell_questions * eval_rollouts,
    )
}

/// Kendall's tau-b of `values` against their index; 0 when either side is constant.
pub fn kendall_tau_b(values: &[f64]) -> f64 {
    let n = values.len();
    let (mut concordant, mut discordant, mut ties) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            match values[j].partial_cmp(&values[i]) {
                Some(std::cmp::Ordering::Greater) => concordant += 1,
                Some(std::cmp::Ordering::Less) => discordant += 1,
                _ => ties += 1,
            }
        }
    }
    let pairs = (n * n.saturating_sub(1) / 2) as i64;
    // the index has no ties, so n1 = pairs
    let denom = ((pairs as f64) * ((pairs - ties) as f64)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (concordant - discordant) as f64 / denom
    }
}

fn adjacent_monotone(values: &[f64], increasing: bool) -> (usize, usize) {
    let ok = values
        .windows(2)
        .filter(|w| if increasing { w[1] >= w[0] } else { w[1] <= w[0] })
        .count();
    (ok, values.len().saturating_sub(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// Per questioner row, tau against the solver index (+1 when solvers improve).
    pub row_kendall_tau: Vec<f64>,
    /// Per solver column, tau against the questioner index (−1 when questioners harden).
    pub col_kendall_tau: Vec<f64>,
    /// Mean of `A[i][i]` over `min(rows, cols)` entries. When there is one more
    /// column than rows, columns start at a pre-training snapshot and the
    /// diagonal pairs `Q_i` with `S_i` at offset one.
    pub diagonal_mean: f64,
    pub adjacent_monotone_fraction_rows: f64,
    pub adjacent_monotone_fraction_cols: f64,
    pub row_means: Vec<f64>,
    pub col_means: Vec<f64>,
}

pub fn monotonicity_report(matrix: &AccuracyMatrix) -> MonotonicityReport {
    let (r, c) = (matrix.rows(), matrix.cols());
    let offset = if c == r + 1 { 1 } else { 0 };
    let diag: Vec<f64> = (0..r.min(c - offset)).map(|i| matrix.values[i][i + offset]).collect();
    let diagonal_mean = diag.iter().sum::<f64>() / diag.len() as f64;

    let row_kendall_tau = if c >= 2 {
        matrix.values.iter().map(|row| kendall_tau_b(row)).collect()
    } else {
        Vec::new()
    };
    let col_kendall_tau = if r >= 2 {
        (0..c).map(|t| kendall_tau_b(&matrix.column(t))).collect()
    } else {
        Vec::new()
    };
    let fraction = |parts: Vec<(usize, usize)>| {
        let (ok, total) = parts.into_iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        if total == 0 {
            1.0
        } else {
            ok as f64 / total as f64
        }
    };
    MonotonicityReport {
        row_kendall_tau,
        col_kendall_tau,
        diagonal_mean,
        adjacent_monotone_fraction_rows: fraction(matrix.values.iter().map(|row| adjacent_monotone(row, true)).collect()),
        adjacent_monotone_fraction_cols: fraction((0..c).map(|t| adjacent_monotone(&matrix.column(t), false)).collect()),
        row_means: matrix.values.iter().map(|row| row.iter().sum::<f64>() / c as f64).collect(),
        col_means: (0..c).map(|t| matrix.column(t).iter().sum::<f64>() / r as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapFiles {
    pub csv: PathBuf,
    pub report: PathBuf,
    pub svg: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(contents.as_bytes()))
        .map_err(|e| io_error(path, e))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<prefix>.csv`, `<prefix>_report.json` and `<prefix>.svg`.
pub fn export_heatmap(matrix: &AccuracyMatrix, report: &MonotonicityReport, path_prefix: &Path) -> Result<HeatmapFiles> {
    let files = HeatmapFiles {
        csv: with_suffix(path_prefix, ".csv"),
        report: with_suffix(path_prefix, "_report.json"),
        svg: with_suffix(path_prefix, ".svg"),
    };
    write_file(&files.csv, &matrix.to_csv())?;
    let json = serde_json::json!({ "matrix": matrix, "report": report });
    write_file(&files.report, &(serde_json::to_string_pretty(&json).expect("report serializes") + "\n"))?;
    write_file(&files.svg, &heatmap_svg(matrix))?;
    Ok(files)
}

/// White at 0 to dark blue at 1, whatever the data range.
fn color(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn heatmap_svg(matrix: &AccuracyMatrix) -> String {
    const CELL: usize = 56;
    const LEFT: usize = 90;
    const TOP: usize = 40;
    let (r, c) = (matrix.rows(), matrix.cols());
    let width = LEFT + c * CELL + 80;
    let height = TOP + r * CELL + 20;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    for (t, label) in matrix.col_labels.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            LEFT + t * CELL + CELL / 2,
            TOP - 10,
            escape(label)
        ));
    }
    for (i, row) in matrix.values.iter().enumerate() {
        let y = TOP + i * CELL;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            LEFT - 8,
            y + CELL / 2 + 4,
            escape(&matrix.row_labels[i])
        ));
        for (t, &v) in row.iter().enumerate() {
            let x = LEFT + t * CELL;
            let ink = if v > 0.55 { "#ffffff" } else { "#000000" };
            out.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\" stroke=\"#ffffff\"/>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{ink}\">{v:.3}</text>\n",
                color(v),
                x + CELL / 2,
                y + CELL / 2 + 4
            ));
        }
    }
    // colour bar
    let bar_x = LEFT + c * CELL + 20;
    let bar_h = r * CELL;
    for k in 0..20 {
        let v = 1.0 - k as f64 / 19.0;
        out.push_str(&format!(
            "<rect x=\"{bar_x}\" y=\"{}\" width=\"16\" height=\"{}\" fill=\"{}\"/>\n",
            TOP + k * bar_h / 20,
            bar_h / 20 + 1,
            color(v)
        ));
    }
    out.push_str(&format!("<text x=\"{}\" y=\"{}\">1.0</text>\n", bar_x + 20, TOP + 10));
    out.push_str(&format!("<text x=\"{}\" y=\"{}\">0.0</text>\n", bar_x + 20, TOP + bar_h));
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(values: Vec<Vec<f64>>) -> AccuracyMatrix {
        let r = values.len();
        let c = values[0].len();
        AccuracyMatrix::new(
            values,
            (1..=r).map(|i| format!("Q{i}")).collect(),
            (0..c).map(|t| format!("S{t}")).collect(),
            1,
        )
        .unwrap()
    }

    /// Direct tau-b from the textbook definition with both tie corrections.
    fn tau_b_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut nc, mut nd, mut tx, mut ty) = (0.0, 0.0, 0.0, 0.0);
        let mut n0 = 0.0;
        for i in 0..n {
            for j in 0..i {
                n0 += 1.0;
                let sign = |d: f64| if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                let s = sign(x[i] - x[j]) * sign(y[i] - y[j]);
                if x[i] == x[j] {
                    tx += 1.0;
                }
                if y[i] == y[j] {
                    ty += 1.0;
                }
                if s > 0.0 {
                    nc += 1.0;
                } else if s < 0.0 {
                    nd += 1.0;
                }
            }
        }
        let d: f64 = (n0 - tx) * (n0 - ty);
        if d == 0.0 {
            0.0
        } else {
            (nc - nd) / d.sqrt()
        }
    }

    #[test]
    fn tau_examples() {
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(kendall_tau_b(&[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(kendall_tau_b(&[0.4, 0.4, 0.4]), 0.0);
        for v in [[0.1, 0.3, 0.2, 0.2, 0.9], [0.5, 0.5, 0.1, 0.7, 0.7]] {
            let idx: Vec<f64> = (0..5).map(|i| i as f64).collect();
            assert!((kendall_tau_b(&v) - tau_b_oracle(&idx, &v)).abs() < 1e-15);
        }
    }

    #[test]
    fn stable_matrix_report() {
        let m = matrix(vec![vec![0.5, 0.6, 0.7], vec![0.4, 0.5, 0.6], vec![0.3, 0.4, 0.5]]);
        let r = monotonicity_report(&m);
        assert!(r.row_kendall_tau.iter().all(|&t| t == 1.0));
        assert!(r.col_kendall_tau.iter().all(|&t| t == -1.0));
        assert_eq!(r.adjacent_monotone_fraction_rows, 1.0);
        assert_eq!(r.adjacent_monotone_fraction_cols, 1.0);
        assert!((r.diagonal_mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_matrix_report() {
        let m = matrix(vec![vec![0.5; 4]; 3]);
        let r = monotonicity_report(&m);
        assert!(r.row_kendall_tau.iter().chain(&r.col_kendall_tau).all(|&t| t == 0.0));
        assert_eq!(r.adjacent_monotone_fraction_rows, 1.0);
        assert_eq!(r.adjacent_monotone_fraction_cols, 1.0);
    }

    #[test]
    fn degenerate_shapes() {
        let m = matrix(vec![vec![0.2, 0.9, 0.4]]);
        let r = monotonicity_report(&m);
        assert!(r.col_kendall_tau.is_empty());
        assert_eq!(r.row_kendall_tau.len(), 1);
        let one = monotonicity_report(&matrix(vec![vec![0.3]]));
        assert!(one.row_kendall_tau.is_empty() && one.col_kendall_tau.is_empty());
        assert_eq!(one.diagonal_mean, 0.3);
    }

    #[test]
    fn diagonal_skips_initial_solver() {
        let m = matrix(vec![vec![0.9, 0.1, 0.0], vec![0.9, 0.9, 0.3]]);
        assert!((monotonicity_report(&m).diagonal_mean - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(AccuracyMatrix::new(vec![vec![1.2]], vec!["a".into()], vec!["b".into()], 1).is_err());
        assert!(AccuracyMatrix::new(vec![vec![0.2, 0.3]], vec!["a".into()], vec!["b".into()], 1).is_err());
    }

    #[test]
    fn csv_layout_and_reexport() {
        let m = matrix(vec![vec![0.25, 0.5], vec![1.0 / 3.0, 1.0]]);
        let csv = m.to_csv();
        assert_eq!(csv, "questioner,S0,S1\nQ1,0.250000,0.500000\nQ2,0.333333,1.000000\n");
        let dir = tempfile::tempdir().unwrap();
        let r = monotonicity_report(&m);
        let a = export_heatmap(&m, &r, &dir.path().join("a")).unwrap();
        let b = export_heatmap(&m, &r, &dir.path().join("b")).unwrap();
        assert_eq!(std::fs::read(&a.csv).unwrap(), std::fs::read(&b.csv).unwrap());
        assert_eq!(std::fs::read_to_string(&a.csv).unwrap().lines().count(), 3);
        let svg = std::fs::read_to_string(&a.svg).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains(&color(1.0)) && svg.contains(&color(0.25)));
        let err = export_heatmap(&m, &r, &dir.path().join("missing/dir/x"));
        assert!(matches!(err, Err(LabError::Io { .. })));
    }

    #[test]
    fn color_scale_is_fixed() {
        assert_eq!(color(0.0), "#ffffff");
        assert_eq!(color(1.0), "#08306b");
        assert_eq!(color(2.0), color(1.0));
    }

    fn snapshots() -> (Vec<QuestionerSnapshot>, Vec<Document>) {
        let policy = QuestionerPolicy::new(&[0.5], 0.0, 0.0, 0.0).unwrap();
        let q = (0..2)
            .map(|i| QuestionerSnapshot { label: format!("Q{i}"), policy: policy.clone(), tier: 0.5 })
            .collect();
        (q, (0..5).map(Document::neutral).collect())
    }

    #[test]
    fn identical_solvers_give_identical_columns() {
        let (q, corpus) = snapshots();
        let s = SolverProfile::new(0.3, 2.0).unwrap();
        let solvers = vec![
            SolverSnapshot { label: "S0".into(), profile: s },
            SolverSnapshot { label: "S1".into(), profile: s },
        ];
        let m = cross_accuracy_matrix(&q, &solvers, &corpus, 50, 4, 4, 9).unwrap();
        assert_eq!(m.column(0), m.column(1));
        assert_eq!(m.samples_per_cell, 200);
        assert_eq!(m, cross_accuracy_matrix(&q, &solvers, &corpus, 50, 4, 4, 9).unwrap());
    }

    #[test]
    fn strong_solver_column_is_one() {
        let (q, corpus) = snapshots();
        let solvers = vec![
            SolverSnapshot { label: "weak".into(), profile: SolverProfile::new(-1.0, 2.0).unwrap() },
            SolverSnapshot { label: "strong".into(), profile: SolverProfile::new(80.0, 2.0).unwrap() },
        ];
        let m = cross_accuracy_matrix(&q, &solvers, &corpus, 30, 4, 4, 1).unwrap();
        assert!(m.column(1).iter().all(|&v| v == 1.0));
        // common random numbers: a stronger solver never scores lower on a row
        assert!(m.values.iter().all(|r| r[1] >= r[0]));
    }
}
