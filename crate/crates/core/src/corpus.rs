//! Synthetic document corpus. A document only carries an additive offset on
//! the latent difficulty of questions generated from it.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, out_of_range, LabError, Result};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: u64,
    pub latent_topic_difficulty_offset: f64,
}

impl Document {
    pub fn neutral(doc_id: u64) -> Self {
        Document {
            doc_id,
            latent_topic_difficulty_offset: 0.0,
        }
    }
}

/// `size` documents with offsets uniform on `[lo, hi]`.
pub fn generate_synthetic_corpus(size: usize, difficulty_range: (f64, f64), seed: u64) -> Result<Vec<Document>> {
    let (lo, hi) = difficulty_range;
    if size == 0 {
        return Err(out_of_range("size", "must be >= 1"));
    }
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(out_of_range("difficulty_range", format!("invalid range [{lo}, {hi}]")));
    }
    let mut rng = stream(seed, Domain::Corpus, &[]);
    Ok((0..size as u64)
        .map(|doc_id| {
            let u: f64 = rng.random();
            Document {
                doc_id,
                latent_topic_difficulty_offset: lo + (hi - lo) * u,
            }
        })
        .collect())
}

pub fn write_corpus(docs: &[Document], path: &Path) -> Result<()> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("document serializes"));
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| io_error(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| LabError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !doc.latent_topic_difficulty_offset.is_finite() {
            return Err(LabError::Parse {
                line: i + 1,
                message: "offset must be finite".into(),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub min_offset: f64,
    pub max_offset: f64,
    pub mean_offset: f64,
    /// Equal-width bins over `[min_offset, max_offset]`.
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

pub fn corpus_stats(docs: &[Document], bins: usize) -> Result<CorpusStats> {
    if docs.is_empty() {
        return Err(LabError::EmptyCorpus);
    }
    let bins = bins.max(1);
    let offsets: Vec<f64> = docs.iter().map(|d| d.latent_topic_difficulty_offset).collect();
    let min = offsets.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &o in &offsets {
        let b = if width > 0.0 {
            (((o - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: min + width * i as f64,
            hi: if i + 1 == bins { max } else { min + width * (i + 1) as f64 },
            count,
        })
        .collect();
    Ok(CorpusStats {
        count: docs.len(),
        min_offset: min,
        max_offset: max,
        mean_offset: mean,
        histogram,
    })
}

/// Reads a corpus file and summarizes it.
pub fn ingest_corpus_stats(path: &Path, bins: usize) -> Result<CorpusStats> {
    corpus_stats(&read_corpus(path)?, bins)
}
