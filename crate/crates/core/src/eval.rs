//! STS scoring: cosine predictions against gold scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingView;
use crate::error::{MetaError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StsRecord {
    pub index_a: usize,
    pub index_b: usize,
    pub gold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StsSubset {
    pub name: String,
    pub records: Vec<StsRecord>,
}

/// Sentence pairs grouped into named subsets, in first-seen order. Indices
/// point into an embedding file of unique sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct StsDataset {
    subsets: Vec<StsSubset>,
}

impl StsDataset {
    pub fn new(subsets: Vec<StsSubset>) -> Result<Self> {
        if subsets.is_empty() {
            return Err(MetaError::invalid("an STS dataset needs at least one subset"));
        }
        for s in &subsets {
            if s.records.is_empty() {
                return Err(MetaError::invalid(format!("subset '{}' is empty", s.name)));
            }
            if let Some(r) = s.records.iter().find(|r| !r.gold.is_finite()) {
                return Err(MetaError::invalid(format!(
                    "subset '{}' has a non-finite gold score {}",
                    s.name, r.gold
                )));
            }
        }
        for (i, s) in subsets.iter().enumerate() {
            if subsets[..i].iter().any(|o| o.name == s.name) {
                return Err(MetaError::invalid(format!("duplicate subset name '{}'", s.name)));
            }
        }
        Ok(Self { subsets })
    }

    /// Groups `(subset, record)` pairs by subset name, keeping first-seen order.
    pub fn from_records(records: impl IntoIterator<Item = (String, StsRecord)>) -> Result<Self> {
        let mut subsets: Vec<StsSubset> = Vec::new();
        for (name, rec) in records {
            match subsets.iter_mut().find(|s| s.name == name) {
                Some(s) => s.records.push(rec),
                None => subsets.push(StsSubset {
                    name,
                    records: vec![rec],
                }),
            }
        }
        Self::new(subsets)
    }

    pub fn subsets(&self) -> &[StsSubset] {
        &self.subsets
    }

    pub fn n_records(&self) -> usize {
        self.subsets.iter().map(|s| s.records.len()).sum()
    }

    fn records(&self) -> impl Iterator<Item = &StsRecord> {
        self.subsets.iter().flat_map(|s| s.records.iter())
    }
}

/// Cosine similarity; zero if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// `ŷ = cos(emb[a], emb[b])` for every record, in dataset order.
pub fn predict_similarities(emb: &EmbeddingView, ds: &StsDataset) -> Result<Vec<f64>> {
    let n = emb.n_rows();
    ds.records()
        .map(|r| {
            if r.index_a >= n || r.index_b >= n {
                return Err(MetaError::invalid(format!(
                    "sentence index ({}, {}) out of range for {n} embeddings",
                    r.index_a, r.index_b
                )));
            }
            let a = emb.matrix().row(r.index_a);
            let b = emb.matrix().row(r.index_b);
            let a: Vec<f64> = a.iter().copied().collect();
            let b: Vec<f64> = b.iter().copied().collect();
            Ok(cosine(&a, &b))
        })
        .collect()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(MetaError::invalid(format!(
            "correlation inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(MetaError::invalid("correlation needs at least two points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetaError::invalid("correlation input is not finite"));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if is_constant(x) || is_constant(y) || sxx == 0.0 || syy == 0.0 {
        return Err(MetaError::DegenerateInput(
            "correlation of a constant vector".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// 1-based ranks; tied values share the mean of their rank range.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Err(MetaError::DegenerateInput(
            "correlation of a constant vector".into(),
        ));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub subset: String,
    pub n: usize,
    pub pearson: f64,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_subset: Vec<ScoreRow>,
    /// Unweighted mean over subsets (STS12–16 convention).
    pub aggregate_mean: ScoreRow,
    /// Correlation over all pairs pooled (STS Benchmark convention).
    pub aggregate_pooled: ScoreRow,
}

pub const MEAN_LABEL: &str = "mean (unweighted, STS12-16 style)";
pub const POOLED_LABEL: &str = "pooled (all pairs, STS-B style)";

pub fn evaluate(emb: &EmbeddingView, ds: &StsDataset) -> Result<EvalReport> {
    let predictions = predict_similarities(emb, ds)?;
    let mut per_subset = Vec::with_capacity(ds.subsets().len());
    let mut offset = 0;
    for s in ds.subsets() {
        let pred = &predictions[offset..offset + s.records.len()];
        let gold: Vec<f64> = s.records.iter().map(|r| r.gold).collect();
        offset += s.records.len();
        per_subset.push(ScoreRow {
            subset: s.name.clone(),
            n: gold.len(),
            pearson: pearson(pred, &gold)?,
            spearman: spearman(pred, &gold)?,
        });
    }
    let k = per_subset.len() as f64;
    let aggregate_mean = ScoreRow {
        subset: MEAN_LABEL.into(),
        n: ds.n_records(),
        pearson: per_subset.iter().map(|r| r.pearson).sum::<f64>() / k,
        spearman: per_subset.iter().map(|r| r.spearman).sum::<f64>() / k,
    };
    let gold: Vec<f64> = ds.records().map(|r| r.gold).collect();
    let aggregate_pooled = ScoreRow {
        subset: POOLED_LABEL.into(),
        n: gold.len(),
        pearson: pearson(&predictions, &gold)?,
        spearman: spearman(&predictions, &gold)?,
    };
    Ok(EvalReport {
        per_subset,
        aggregate_mean,
        aggregate_pooled,
    })
}

impl EvalReport {
    /// Aligned plain-text table, scores ×100.
    pub fn to_table(&self) -> String {
        let rows: Vec<&ScoreRow> = self
            .per_subset
            .iter()
            .chain([&self.aggregate_mean, &self.aggregate_pooled])
            .collect();
        let width = rows
            .iter()
            .map(|r| r.subset.chars().count())
            .max()
            .unwrap_or(0)
            .max("subset".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>8}  {:>8}",
            "subset", "n", "pearson", "spearman"
        );
        let _ = writeln!(out, "{}", "-".repeat(width + 29));
        for (i, r) in rows.iter().enumerate() {
            if i == self.per_subset.len() {
                let _ = writeln!(out, "{}", "-".repeat(width + 29));
            }
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>8.2}  {:>8.2}",
                r.subset,
                r.n,
                r.pearson * 100.0,
                r.spearman * 100.0
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
