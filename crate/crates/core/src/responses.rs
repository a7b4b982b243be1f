//! Response partitions, per-level response frequencies, and the
//! law-of-total-probability mixture `F(y) = Σ_l P(Y ≤ y | R_l) P(R_l)`.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::{self, DistributionSpec};
use crate::error::{Error, Result};
use crate::ingest::TrialDataset;

/// Below this many subjects the frequency estimates carry a warning.
pub const SMALL_SUBJECT_COUNT: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsePartition {
    /// Labels in lexicographic order.
    pub labels: Vec<String>,
    /// Record indices per label, aligned with `labels`.
    pub subsets: Vec<Vec<usize>>,
    /// Trials with no response.
    pub dropped: usize,
}

impl ResponsePartition {
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

pub fn partition_by_response(dataset: &TrialDataset) -> Result<ResponsePartition> {
    let labels: Vec<String> = dataset
        .records
        .iter()
        .filter_map(|r| r.response.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let mut subsets = vec![Vec::new(); labels.len()];
    let mut dropped = 0;
    for (i, r) in dataset.records.iter().enumerate() {
        match &r.response {
            Some(label) => {
                let l = labels.binary_search(label).expect("label collected above");
                subsets[l].push(i);
            }
            None => dropped += 1,
        }
    }
    Ok(ResponsePartition {
        labels,
        subsets,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseProbTable {
    pub labels: Vec<String>,
    /// `counts[level][label]`, levels 0-based.
    pub counts: Vec<Vec<usize>>,
    /// `probs[level][label]`.
    pub probs: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl ResponseProbTable {
    pub fn level_count(&self) -> usize {
        self.probs.len()
    }

    /// Probabilities at 1-based `level`.
    pub fn weights(&self, level: usize) -> Result<&[f64]> {
        if level == 0 || level > self.probs.len() {
            return Err(Error::domain(format!(
                "level {level} outside 1..={}",
                self.probs.len()
            )));
        }
        Ok(&self.probs[level - 1])
    }

    /// CSV with columns `level_id,label,count,probability`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level_id", "label", "count", "probability"])?;
        for (i, (counts, probs)) in self.counts.iter().zip(&self.probs).enumerate() {
            for ((label, c), p) in self.labels.iter().zip(counts).zip(probs) {
                w.write_record([
                    (i + 1).to_string(),
                    label.clone(),
                    c.to_string(),
                    p.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let expected = ["level_id", "label", "count", "probability"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Schema(format!(
                "response table header must be {}",
                expected.join(",")
            )));
        }
        let mut rows: Vec<(usize, String, usize, f64)> = Vec::new();
        for row in reader.records() {
            let row = row?;
            let parse_err =
                |what: &str| Error::Schema(format!("bad {what} in response table row {row:?}"));
            let level: usize = row[0].parse().map_err(|_| parse_err("level_id"))?;
            let count: usize = row[2].parse().map_err(|_| parse_err("count"))?;
            let p: f64 = row[3].parse().map_err(|_| parse_err("probability"))?;
            if level == 0 {
                return Err(parse_err("level_id"));
            }
            rows.push((level, row[1].to_string(), count, p));
        }
        let labels: Vec<String> = rows
            .iter()
            .map(|r| r.1.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let levels = rows.iter().map(|r| r.0).max().unwrap_or(0);
        let mut counts = vec![vec![0; labels.len()]; levels];
        let mut probs = vec![vec![f64::NAN; labels.len()]; levels];
        for (level, label, count, p) in rows {
            let l = labels.binary_search(&label).expect("label collected above");
            counts[level - 1][l] = count;
            probs[level - 1][l] = p;
        }
        Ok(Self {
            labels,
            counts,
            probs,
            warnings: Vec::new(),
        })
    }
}

/// Relative frequency of each label among the non-missing responses at each level.
pub fn response_probs(
    partition: &ResponsePartition,
    dataset: &TrialDataset,
) -> Result<ResponseProbTable> {
    let levels = dataset.level_count;
    let mut counts = vec![vec![0usize; partition.labels.len()]; levels];
    for (l, subset) in partition.subsets.iter().enumerate() {
        for &r in subset {
            let level = dataset.records[r].level_id;
            if level == 0 || level > levels {
                return Err(Error::Schema(format!(
                    "record {r} has level {level} outside 1..={levels}"
                )));
            }
            counts[level - 1][l] += 1;
        }
    }
    let mut probs = Vec::with_capacity(levels);
    for (i, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total == 0 {
            return Err(Error::UndefinedProbability { level: i + 1 });
        }
        probs.push(row.iter().map(|&c| c as f64 / total as f64).collect());
    }
    let mut warnings = Vec::new();
    if dataset.subject_count < SMALL_SUBJECT_COUNT {
        let msg = format!(
            "only {} subjects: response frequencies may not be consistent estimates of the response probabilities",
            dataset.subject_count
        );
        warnings.push(msg);
    }
    Ok(ResponseProbTable {
        labels: partition.labels.clone(),
        counts,
        probs,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub labels: Vec<String>,
    /// `components[label][level]`: conditional RT law given the response.
    pub components: Vec<Vec<DistributionSpec>>,
    /// `weights[level][label]`.
    pub weights: Vec<Vec<f64>>,
}

impl MixtureModel {
    pub fn new(
        labels: Vec<String>,
        components: Vec<Vec<DistributionSpec>>,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if labels.is_empty() || components.len() != labels.len() {
            return Err(Error::param("one component sequence per label is required"));
        }
        let levels = weights.len();
        if components.iter().any(|c| c.len() != levels) {
            return Err(Error::param("every label needs one component per level"));
        }
        for (i, row) in weights.iter().enumerate() {
            if row.len() != labels.len() || row.iter().any(|w| !(*w >= 0.0 && *w <= 1.0)) {
                return Err(Error::param(format!(
                    "weights at level {} are invalid",
                    i + 1
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::param(format!(
                    "weights at level {} sum to {total}",
                    i + 1
                )));
            }
        }
        Ok(Self {
            labels,
            components,
            weights,
        })
    }

    /// Mixture with the same component law at every level.
    pub fn constant(
        labels: Vec<String>,
        components: Vec<DistributionSpec>,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let levels = weights.len();
        let per_level = components.into_iter().map(|c| vec![c; levels]).collect();
        Self::new(labels, per_level, weights)
    }

    pub fn level_count(&self) -> usize {
        self.weights.len()
    }

    fn level_index(&self, level: usize) -> Result<usize> {
        if level == 0 || level > self.weights.len() {
            return Err(Error::domain(format!(
                "level {level} outside 1..={}",
                self.weights.len()
            )));
        }
        Ok(level - 1)
    }

    pub fn weights_at(&self, level: usize) -> Result<&[f64]> {
        Ok(&self.weights[self.level_index(level)?])
    }

    pub fn component(&self, label: usize, level: usize) -> Result<&DistributionSpec> {
        Ok(&self.components[label][self.level_index(level)?])
    }
}

pub fn mixture_cdf(model: &MixtureModel, level: usize, y: f64) -> Result<f64> {
    let i = model.level_index(level)?;
    let mut total = 0.0;
    for (l, w) in model.weights[i].iter().enumerate() {
        if *w > 0.0 {
            total += w * distributions::cdf(&model.components[l][i], y)?;
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Inverse of [`mixture_cdf`] by bisection.
pub fn mixture_quantile(model: &MixtureModel, level: usize, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    let i = model.level_index(level)?;
    let mut hi: f64 = 0.0;
    for (l, w) in model.weights[i].iter().enumerate() {
        if *w > 0.0 {
            hi = hi.max(distributions::quantile(&model.components[l][i], p)?);
        }
    }
    let mut lo = 0.0;
    while mixture_cdf(model, level, hi)? < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(model, level, mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= distributions::QUANTILE_TOL * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
