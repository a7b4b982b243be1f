use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::ingest::TrialDataset;

/// Cell-means design: each row is the indicator of its level, so every row
/// sums to 1 and there is no global intercept. Rows are grouped by subject.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub level_count: usize,
    pub subject_count: usize,
    /// 0-based level of each row.
    pub level: Vec<usize>,
    /// 0-based subject of each row; nondecreasing.
    pub subject: Vec<usize>,
    /// Index of the source record in the dataset.
    pub record: Vec<usize>,
    pub subject_ranges: Vec<Range<usize>>,
}

impl DesignMatrix {
    /// Builds the design from per-trial subject and 0-based level indices.
    pub fn from_indices(level_count: usize, subjects: &[usize], levels: &[usize]) -> Result<Self> {
        if level_count == 0 {
            return Err(Error::Schema("design needs at least one level".into()));
        }
        if subjects.len() != levels.len() {
            return Err(Error::Schema(
                "subject and level vectors differ in length".into(),
            ));
        }
        if let Some(l) = levels.iter().find(|l| **l >= level_count) {
            return Err(Error::Schema(format!(
                "level index {l} outside 0..{level_count}"
            )));
        }
        let mut seen = vec![false; level_count];
        for &l in levels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::DesignDeficiency { level: missing + 1 });
        }

        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by_key(|&t| subjects[t]);
        let subject_count = subjects.iter().max().map_or(0, |m| m + 1);
        let mut subject_ranges = vec![0..0; subject_count];
        let mut start = 0;
        while start < order.len() {
            let s = subjects[order[start]];
            let mut end = start;
            while end < order.len() && subjects[order[end]] == s {
                end += 1;
            }
            subject_ranges[s] = start..end;
            start = end;
        }
        Ok(Self {
            level_count,
            subject_count,
            level: order.iter().map(|&t| levels[t]).collect(),
            subject: order.iter().map(|&t| subjects[t]).collect(),
            record: order,
            subject_ranges,
        })
    }

    pub fn len(&self) -> usize {
        self.level.len()
    }

    pub fn is_empty(&self) -> bool {
        self.level.is_empty()
    }

    /// Indicator row `x_t = (δ_{i1}, …, δ_{in})`.
    pub fn row(&self, t: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.level_count];
        x[self.level[t]] = 1.0;
        x
    }

    /// RTs of `dataset` in design row order.
    pub fn gather_rt(&self, dataset: &TrialDataset) -> Vec<f64> {
        self.record.iter().map(|&r| dataset.records[r].rt).collect()
    }

    /// Trials per level.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.level_count];
        for &l in &self.level {
            counts[l] += 1;
        }
        counts
    }
}

/// Design matrix for a validated dataset; subjects are numbered in order of
/// first appearance.
pub fn build_design(dataset: &TrialDataset) -> Result<DesignMatrix> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut subjects = Vec::with_capacity(dataset.len());
    let mut levels = Vec::with_capacity(dataset.len());
    for r in &dataset.records {
        let next = ids.len();
        subjects.push(*ids.entry(r.subject_id.as_str()).or_insert(next));
        if r.level_id == 0 || r.level_id > dataset.level_count {
            return Err(Error::Schema(format!(
                "level {} outside 1..={}",
                r.level_id, dataset.level_count
            )));
        }
        levels.push(r.level_id - 1);
    }
    DesignMatrix::from_indices(dataset.level_count, &subjects, &levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TrialRecord;

    fn rec(s: &str, level: usize) -> TrialRecord {
        TrialRecord {
            subject_id: s.into(),
            level_id: level,
            block: 1,
            response: Some("a".into()),
            rt: 0.5,
        }
    }

    #[test]
    fn indicator_rows() {
        let ds = TrialDataset::new(vec![rec("s1", 1), rec("s1", 2)], 2).unwrap();
        let d = build_design(&ds).unwrap();
        assert_eq!(d.row(1), vec![0.0, 1.0]);
        for t in 0..d.len() {
            assert_eq!(d.row(t).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn rows_grouped_by_subject() {
        let ds =
            TrialDataset::new(vec![rec("a", 1), rec("b", 2), rec("a", 2), rec("b", 1)], 2).unwrap();
        let d = build_design(&ds).unwrap();
        assert_eq!(d.subject, vec![0, 0, 1, 1]);
        assert_eq!(d.record, vec![0, 2, 1, 3]);
        assert_eq!(d.subject_ranges, vec![0..2, 2..4]);
    }

    #[test]
    fn unreferenced_level_is_deficient() {
        let ds = TrialDataset::new(vec![rec("s1", 1), rec("s2", 1)], 3).unwrap();
        assert!(matches!(
            build_design(&ds),
            Err(Error::DesignDeficiency { level: 2 })
        ));
    }
}
