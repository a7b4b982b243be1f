//! Trial-level reaction-time data: CSV reading with per-reason rejection
//! tallies, writing, and a seeded generator of GLMM-shaped synthetic data.
//!
//! File schema (header required): `subject_id,level_id,block,response,rt_seconds`.
//! RTs are in seconds; an empty response field marks a missing response.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{self, DistributionSpec, Family};
use crate::error::{Error, Result};
use crate::rng;

pub const HEADER: [&str; 5] = ["subject_id", "level_id", "block", "response", "rt_seconds"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub subject_id: String,
    /// Combined stimulus level, 1-based.
    pub level_id: usize,
    pub block: u32,
    pub response: Option<String>,
    pub rt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MalformedRow,
    MissingSubject,
    NonNumericLevel,
    LevelOutOfRange,
    NonNumericBlock,
    MissingRt,
    NonNumericRt,
    NonfiniteRt,
    NonpositiveRt,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::MalformedRow => "malformed_row",
            RejectReason::MissingSubject => "missing_subject",
            RejectReason::NonNumericLevel => "non_numeric_level",
            RejectReason::LevelOutOfRange => "level_out_of_range",
            RejectReason::NonNumericBlock => "non_numeric_block",
            RejectReason::MissingRt => "missing_rt",
            RejectReason::NonNumericRt => "non_numeric_rt",
            RejectReason::NonfiniteRt => "nonfinite_rt",
            RejectReason::NonpositiveRt => "nonpositive_rt",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    pub records: Vec<TrialRecord>,
    pub level_count: usize,
    pub subject_count: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl TrialDataset {
    /// Validates records against `level_count` and counts subjects.
    pub fn new(records: Vec<TrialRecord>, level_count: usize) -> Result<Self> {
        if level_count == 0 {
            return Err(Error::Schema("level_count must be at least 1".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if !(r.rt > 0.0 && r.rt.is_finite()) {
                return Err(Error::Schema(format!(
                    "record {i}: rt {} is not a positive finite number",
                    r.rt
                )));
            }
            if r.level_id == 0 || r.level_id > level_count {
                return Err(Error::Schema(format!(
                    "record {i}: level {} outside 1..={level_count}",
                    r.level_id
                )));
            }
        }
        let subject_count = records
            .iter()
            .map(|r| r.subject_id.as_str())
            .collect::<BTreeSet<_>>()
            .len();
        Ok(Self {
            records,
            level_count,
            subject_count,
            rejected: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subject_ids(&self) -> Vec<&str> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.subject_id.as_str(), ()).is_none() {
                out.push(r.subject_id.as_str());
            }
        }
        out
    }

    /// Trials carrying response `label`; rejection tallies are not carried over.
    pub fn with_response(&self, label: &str) -> TrialDataset {
        let records: Vec<TrialRecord> = self
            .records
            .iter()
            .filter(|r| r.response.as_deref() == Some(label))
            .cloned()
            .collect();
        let subject_count = records
            .iter()
            .map(|r| r.subject_id.as_str())
            .collect::<BTreeSet<_>>()
            .len();
        TrialDataset {
            records,
            level_count: self.level_count,
            subject_count,
            rejected: BTreeMap::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for r in &self.records {
            w.write_record([
                r.subject_id.clone(),
                r.level_id.to_string(),
                r.block.to_string(),
                r.response.clone().unwrap_or_default(),
                r.rt.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub fn read_csv(path: &Path, level_count: usize) -> Result<TrialDataset> {
    let file = std::fs::File::open(path)?;
    read_csv_from(std::io::BufReader::new(file), level_count)
}

/// Parses trial rows, rejecting (and tallying) rather than dropping bad rows.
pub fn read_csv_from<R: Read>(input: R, level_count: usize) -> Result<TrialDataset> {
    if level_count == 0 {
        return Err(Error::Schema("level_count must be at least 1".into()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::Schema("missing header row".into()));
    }
    let mut columns = [0usize; 5];
    for (slot, name) in columns.iter_mut().zip(HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))?;
    }
    let width = headers.len();

    let mut records = Vec::new();
    let mut rejected: BTreeMap<RejectReason, usize> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        match parse_row(&row, &columns, width, level_count) {
            Ok(rec) => records.push(rec),
            Err(reason) => *rejected.entry(reason).or_default() += 1,
        }
    }
    let subject_count = records
        .iter()
        .map(|r| r.subject_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    Ok(TrialDataset {
        records,
        level_count,
        subject_count,
        rejected,
    })
}

fn parse_row(
    row: &csv::StringRecord,
    columns: &[usize; 5],
    width: usize,
    level_count: usize,
) -> std::result::Result<TrialRecord, RejectReason> {
    if row.len() != width {
        return Err(RejectReason::MalformedRow);
    }
    let field = |i: usize| row.get(columns[i]).unwrap_or("").trim();

    let subject_id = field(0);
    if subject_id.is_empty() {
        return Err(RejectReason::MissingSubject);
    }
    let level_id: usize = field(1)
        .parse()
        .map_err(|_| RejectReason::NonNumericLevel)?;
    if level_id == 0 || level_id > level_count {
        return Err(RejectReason::LevelOutOfRange);
    }
    let block: u32 = field(2)
        .parse()
        .map_err(|_| RejectReason::NonNumericBlock)?;
    let response = match field(3) {
        "" => None,
        s => Some(s.to_string()),
    };
    let rt_text = field(4);
    if rt_text.is_empty() {
        return Err(RejectReason::MissingRt);
    }
    let rt: f64 = rt_text.parse().map_err(|_| RejectReason::NonNumericRt)?;
    if !rt.is_finite() {
        return Err(RejectReason::NonfiniteRt);
    }
    if rt <= 0.0 {
        return Err(RejectReason::NonpositiveRt);
    }
    Ok(TrialRecord {
        subject_id: subject_id.to_string(),
        level_id,
        block,
        response,
        rt,
    })
}

/// Experimental layout: every subject sees every level `reps` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthDesign {
    pub levels: usize,
    pub subjects: usize,
    pub reps: usize,
}

/// Response label probabilities per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    pub labels: Vec<String>,
    /// `probs[level][label]`, each row summing to 1.
    pub probs: Vec<Vec<f64>>,
}

impl ResponseModel {
    pub fn single(label: &str, levels: usize) -> Self {
        Self {
            labels: vec![label.to_string()],
            probs: vec![vec![1.0]; levels],
        }
    }

    pub fn constant(labels: &[&str], probs: &[f64], levels: usize) -> Self {
        Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            probs: vec![probs.to_vec(); levels],
        }
    }

    fn validate(&self, levels: usize) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::param("response model needs at least one label"));
        }
        if self.probs.len() != levels {
            return Err(Error::param(format!(
                "response model has {} probability rows for {levels} levels",
                self.probs.len()
            )));
        }
        for (i, row) in self.probs.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.len() != self.labels.len()
                || row.iter().any(|p| !(*p >= 0.0))
                || (total - 1.0).abs() > 1e-9
            {
                return Err(Error::param(format!(
                    "response probabilities at level {} are invalid",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, level: usize, rng: &mut R) -> String {
        let u: f64 = rng.random();
        let row = &self.probs[level];
        let mut acc = 0.0;
        for (label, p) in self.labels.iter().zip(row) {
            acc += p;
            if u < acc {
                return label.clone();
            }
        }
        // rounding left u above the last partial sum
        let last = row.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        self.labels[last].clone()
    }
}

/// Generating parameters for [`synthesize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// Log-mean per level (cell-means coding).
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub family: Family,
    pub dispersion: f64,
    pub responses: ResponseModel,
}

/// Draws a GLMM dataset: subject intercepts `C_k ~ N(0, tau2)`, RTs from
/// `family` with mean `exp(beta_i + C_k)` and dispersion `phi`, and labels
/// from the response model. Subject `k` uses substream `k` of `seed`.
pub fn synthesize(design: SynthDesign, truth: &SynthTruth, seed: u64) -> Result<TrialDataset> {
    if design.levels == 0 || design.subjects == 0 || design.reps == 0 {
        return Err(Error::param(
            "design needs at least one level, subject and replicate",
        ));
    }
    if truth.beta.len() != design.levels {
        return Err(Error::param(format!(
            "{} fixed effects supplied for {} levels",
            truth.beta.len(),
            design.levels
        )));
    }
    if !(truth.tau2 >= 0.0 && truth.tau2.is_finite()) {
        return Err(Error::param(format!(
            "tau2 must be nonnegative, got {}",
            truth.tau2
        )));
    }
    if !(truth.dispersion > 0.0 && truth.dispersion.is_finite()) {
        return Err(Error::param(format!(
            "dispersion must be positive, got {}",
            truth.dispersion
        )));
    }
    truth.responses.validate(design.levels)?;

    let width = design.subjects.to_string().len();
    let tau = truth.tau2.sqrt();
    let mut records = Vec::with_capacity(design.levels * design.subjects * design.reps);
    for k in 0..design.subjects {
        let mut rng = rng::substream(seed, k as u64);
        let z: f64 = rng.sample(StandardNormal);
        let intercept = tau * z;
        let subject_id = format!("s{:0width$}", k + 1);
        for block in 1..=design.reps {
            for (level, beta) in truth.beta.iter().enumerate() {
                let mean = (beta + intercept).exp();
                let spec =
                    DistributionSpec::from_mean_dispersion(truth.family, mean, truth.dispersion)?;
                let rt = distributions::draw(&spec, &mut rng);
                let response = truth.responses.draw(level, &mut rng);
                records.push(TrialRecord {
                    subject_id: subject_id.clone(),
                    level_id: level + 1,
                    block: block as u32,
                    response: Some(response),
                    rt,
                });
            }
        }
    }
    TrialDataset::new(records, design.levels)
}
