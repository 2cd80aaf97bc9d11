//! Utility and subgroup-fairness metrics: AUC, equalized-odds disparity,
//! AUC disparity, calibration curves and group positive rates.
//!
//! Subgroups are either the joint cells of all binary attributes (keyed by
//! the attribute values concatenated, e.g. `"101"`) or the two values of a
//! single attribute (keyed `"0"` / `"1"`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MIN_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    /// n rows of m binary attribute values.
    pub attributes: Vec<Vec<u8>>,
    pub threshold: f64,
}

impl PredictionTable {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, attributes: Vec<Vec<u8>>) -> Result<Self> {
        let table = Self {
            scores,
            labels,
            attributes,
            threshold: DEFAULT_THRESHOLD,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.scores.len();
        if self.labels.len() != n || self.attributes.len() != n {
            return Err(Error::invalid(format!(
                "prediction table lengths disagree: {n} scores, {} labels, {} attribute rows",
                self.labels.len(),
                self.attributes.len()
            )));
        }
        let m = self.num_attributes();
        if self.attributes.iter().any(|a| a.len() != m) {
            return Err(Error::invalid("ragged attribute rows"));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("non-finite score"));
        }
        if self
            .labels
            .iter()
            .chain(self.attributes.iter().flatten())
            .any(|v| *v > 1)
        {
            return Err(Error::invalid("labels and attributes must be 0/1"));
        }
        Ok(())
    }

    /// Group key of each row under `grouping`.
    pub fn group_keys(&self, grouping: Grouping) -> Result<Vec<String>> {
        let m = self.num_attributes();
        match grouping {
            Grouping::Joint => Ok(self.attributes.iter().map(|a| joint_key(a)).collect()),
            Grouping::Attribute(i) if i < m => {
                Ok(self.attributes.iter().map(|a| a[i].to_string()).collect())
            }
            Grouping::Attribute(i) => Err(Error::invalid(format!(
                "attribute index {i} out of range for {m} attributes"
            ))),
        }
    }

    /// CSV with header `score,label,a_1,…,a_m`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["score".to_string(), "label".to_string()];
        header.extend((1..=self.num_attributes()).map(|i| format!("a_{i}")));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for i in 0..self.len() {
            let mut rec = vec![format!("{}", self.scores[i]), self.labels[i].to_string()];
            rec.extend(self.attributes[i].iter().map(u8::to_string));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.len() < 2 || &header[0] != "score" || &header[1] != "label" {
            return Err(Error::Csv {
                path: path.into(),
                message: "expected header score,label,a_1,...".into(),
            });
        }
        let (mut scores, mut labels, mut attributes) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let parse_f = |s: &str| s.trim().parse::<f64>();
            let parse_b = |s: &str| s.trim().parse::<u8>();
            scores.push(parse_f(&rec[0]).map_err(|e| bad(path, e))?);
            labels.push(parse_b(&rec[1]).map_err(|e| bad(path, e))?);
            attributes.push(
                rec.iter()
                    .skip(2)
                    .map(parse_b)
                    .collect::<std::result::Result<Vec<u8>, _>>()
                    .map_err(|e| bad(path, e))?,
            );
        }
        PredictionTable::new(scores, labels, attributes)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.into(),
        message: e.to_string(),
    }
}

fn bad(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.into(),
        message: e.to_string(),
    }
}

pub fn joint_key(attrs: &[u8]) -> String {
    attrs.iter().map(u8::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Joint,
    Attribute(usize),
}

impl Grouping {
    pub fn name(self) -> String {
        match self {
            Grouping::Joint => "joint".into(),
            Grouping::Attribute(i) => format!("a_{}", i + 1),
        }
    }
}

/// How the two conditional-rate gaps of equalized odds are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdMode {
    /// Max over both labels of the largest pairwise gap.
    #[default]
    Max,
    /// Mean of the TPR gap and the TNR gap.
    MeanGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub min_count: usize,
    pub ed_mode: EdMode,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            min_count: DEFAULT_MIN_COUNT,
            ed_mode: EdMode::Max,
        }
    }
}

/// A group excluded from a disparity computation, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub grouping: String,
    pub metric: String,
    pub group: String,
    pub label: Option<u8>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disparity {
    pub value: f64,
    pub skipped: Vec<SkippedGroup>,
}

/// Area under the ROC curve via the Mann–Whitney rank sum (ties count 0.5).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|l| **l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::Undefined("AUC undefined: no positive labels".into()));
    }
    if n_neg == 0 {
        return Err(Error::Undefined("AUC undefined: no negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks doubled so tie midranks stay integral.
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, midrank*2 = i+j+2
        let mid2 = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank_sum2 += mid2;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    // 2U = 2R₊ − n₊(n₊+1); U is a multiple of 0.5
    let u2 = pos_rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

/// Per-group index lists in key order.
fn partition(keys: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(k.as_str()).or_default().push(i);
    }
    groups
}

/// Equalized-odds disparity: the largest gap across groups in
/// `P(Ŷ=y | A=π, Y=y)` over both labels `y`.
pub fn ed_disparity(
    table: &PredictionTable,
    grouping: Grouping,
    opts: &MetricOptions,
) -> Result<Disparity> {
    table.validate()?;
    let keys = table.group_keys(grouping)?;
    let groups = partition(&keys);
    let mut skipped = Vec::new();
    let mut gaps = Vec::new();
    for y in [1u8, 0u8] {
        let mut rates = Vec::new();
        for (key, idx) in &groups {
            let cond: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|&i| table.labels[i] == y)
                .collect();
            if cond.len() < opts.min_count.max(1) {
                skipped.push(SkippedGroup {
                    grouping: grouping.name(),
                    metric: "ed".into(),
                    group: key.to_string(),
                    label: Some(y),
                    reason: format!(
                        "{} samples with label {y} (< {})",
                        cond.len(),
                        opts.min_count.max(1)
                    ),
                });
                continue;
            }
            let hits = cond
                .iter()
                .filter(|&&i| u8::from(table.scores[i] >= table.threshold) == y)
                .count();
            rates.push(hits as f64 / cond.len() as f64);
        }
        if rates.len() >= 2 {
            let hi = rates.iter().copied().fold(f64::MIN, f64::max);
            let lo = rates.iter().copied().fold(f64::MAX, f64::min);
            gaps.push(hi - lo);
        }
    }
    if gaps.is_empty() {
        return Err(Error::Undefined(format!(
            "ED disparity undefined for {} grouping: fewer than two eligible groups",
            grouping.name()
        )));
    }
    let value = match opts.ed_mode {
        EdMode::Max => gaps.iter().copied().fold(0.0, f64::max),
        EdMode::MeanGap => gaps.iter().sum::<f64>() / gaps.len() as f64,
    };
    Ok(Disparity { value, skipped })
}

/// Largest pairwise gap in per-group AUC over groups containing both classes.
pub fn auc_disparity(table: &PredictionTable, grouping: Grouping) -> Result<Disparity> {
    table.validate()?;
    let keys = table.group_keys(grouping)?;
    let groups = partition(&keys);
    let mut skipped = Vec::new();
    let mut aucs = Vec::new();
    for (key, idx) in &groups {
        let scores: Vec<f64> = idx.iter().map(|&i| table.scores[i]).collect();
        let labels: Vec<u8> = idx.iter().map(|&i| table.labels[i]).collect();
        match auc(&scores, &labels) {
            Ok(a) => aucs.push(a),
            Err(e) => skipped.push(SkippedGroup {
                grouping: grouping.name(),
                metric: "auc".into(),
                group: key.to_string(),
                label: None,
                reason: e.to_string(),
            }),
        }
    }
    if aucs.len() < 2 {
        return Err(Error::Undefined(format!(
            "AUC disparity undefined for {} grouping: fewer than two eligible groups",
            grouping.name()
        )));
    }
    let hi = aucs.iter().copied().fold(f64::MIN, f64::max);
    let lo = aucs.iter().copied().fold(f64::MAX, f64::min);
    Ok(Disparity {
        value: hi - lo,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub center: f64,
    /// Empirical positive fraction; `None` (serialized as null) for empty bins.
    pub fraction: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCalibration {
    pub group: String,
    pub bins: Vec<CalibrationBin>,
}

/// Equal-width reliability curve on [0, 1] for every group present.
pub fn calibration_curve(
    table: &PredictionTable,
    grouping: Grouping,
    bins: usize,
) -> Result<Vec<GroupCalibration>> {
    if bins < 2 {
        return Err(Error::invalid(format!(
            "calibration needs at least 2 bins, got {bins}"
        )));
    }
    table.validate()?;
    let keys = table.group_keys(grouping)?;
    let groups = partition(&keys);
    Ok(groups
        .into_iter()
        .map(|(key, idx)| {
            let mut counts = vec![0usize; bins];
            let mut positives = vec![0usize; bins];
            for i in idx {
                let s = table.scores[i].clamp(0.0, 1.0);
                let b = ((s * bins as f64).floor() as usize).min(bins - 1);
                counts[b] += 1;
                positives[b] += usize::from(table.labels[i]);
            }
            let bins = (0..bins)
                .map(|b| CalibrationBin {
                    center: (b as f64 + 0.5) / bins as f64,
                    fraction: (counts[b] > 0).then(|| positives[b] as f64 / counts[b] as f64),
                    count: counts[b],
                })
                .collect();
            GroupCalibration {
                group: key.to_string(),
                bins,
            }
        })
        .collect())
}

/// Positive rates for attribute `i` = 1 and = 0, and their absolute gap.
pub fn group_positive_rate(
    labels: &[u8],
    attributes: &[Vec<u8>],
    i: usize,
) -> Result<(f64, f64, f64)> {
    if labels.len() != attributes.len() {
        return Err(Error::invalid("labels and attribute rows differ in length"));
    }
    let mut n = [0usize; 2];
    let mut pos = [0usize; 2];
    for (y, a) in labels.iter().zip(attributes) {
        let v = *a
            .get(i)
            .ok_or_else(|| Error::invalid(format!("attribute index {i} out of range")))?
            as usize;
        if v > 1 {
            return Err(Error::invalid("attributes must be 0/1"));
        }
        n[v] += 1;
        pos[v] += usize::from(*y);
    }
    for v in [1, 0] {
        if n[v] == 0 {
            return Err(Error::Undefined(format!(
                "attribute {i} has no samples with value {v}"
            )));
        }
    }
    let r1 = pos[1] as f64 / n[1] as f64;
    let r0 = pos[0] as f64 / n[0] as f64;
    Ok((r1, r0, (r1 - r0).abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDisparity {
    pub attribute: usize,
    pub ed: f64,
    pub auc_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub auc: f64,
    pub joint_ed: f64,
    pub joint_auc_gap: f64,
    pub per_attribute: Vec<AttributeDisparity>,
    pub subgroup_counts: BTreeMap<String, usize>,
    pub skipped_pairs: Vec<SkippedGroup>,
}

impl FairnessReport {
    pub fn mean_individual_ed(&self) -> f64 {
        if self.per_attribute.is_empty() {
            return 0.0;
        }
        self.per_attribute.iter().map(|a| a.ed).sum::<f64>() / self.per_attribute.len() as f64
    }
}

/// Full report: AUC plus joint and per-attribute disparities.
pub fn evaluate(table: &PredictionTable, opts: &MetricOptions) -> Result<FairnessReport> {
    table.validate()?;
    let auc_value = auc(&table.scores, &table.labels)?;
    let joint_ed = ed_disparity(table, Grouping::Joint, opts)?;
    let joint_auc = auc_disparity(table, Grouping::Joint)?;
    let mut skipped = joint_ed.skipped;
    skipped.extend(joint_auc.skipped);
    let mut per_attribute = Vec::new();
    for i in 0..table.num_attributes() {
        let ed = ed_disparity(table, Grouping::Attribute(i), opts)?;
        let gap = auc_disparity(table, Grouping::Attribute(i))?;
        skipped.extend(ed.skipped);
        skipped.extend(gap.skipped);
        per_attribute.push(AttributeDisparity {
            attribute: i,
            ed: ed.value,
            auc_gap: gap.value,
        });
    }
    let mut subgroup_counts = BTreeMap::new();
    for key in table.group_keys(Grouping::Joint)? {
        *subgroup_counts.entry(key).or_insert(0) += 1;
    }
    Ok(FairnessReport {
        auc: auc_value,
        joint_ed: joint_ed.value,
        joint_auc_gap: joint_auc.value,
        per_attribute,
        subgroup_counts,
        skipped_pairs: skipped,
    })
}
