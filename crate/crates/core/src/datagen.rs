//! Synthetic multi-attribute tabular data with planted target and attribute
//! directions, bias amplification by subsampling, and stratified splits.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairmetrics::{group_positive_rate, joint_key};
use crate::linalg::{orthonormalize_against, Matrix};

pub const MAX_ATTRIBUTES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub target_signal_strength: f64,
    pub attribute_signal_strength: f64,
    pub noise_sigma: f64,
    pub base_positive_rate: f64,
    pub seed: u64,
    /// Slope of the label log-odds in the latent target factor.
    pub label_sharpness: f64,
    /// Log-odds shift per attribute (±) in the latent score; 0 keeps labels
    /// independent of attributes.
    pub attribute_label_coupling: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n: 4000,
            p: 32,
            m: 3,
            target_signal_strength: 1.0,
            attribute_signal_strength: 6.0,
            noise_sigma: 0.5,
            base_positive_rate: 0.5,
            seed: 0,
            label_sharpness: 6.0,
            attribute_label_coupling: 0.0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let problems = self.violations();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }

    /// All problems, one per entry, each starting with the field name.
    pub fn violations(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.n < 100 {
            problems.push(format!("n must be >= 100 (got {})", self.n));
        }
        if self.m == 0 || self.m > MAX_ATTRIBUTES {
            problems.push(format!(
                "m must be in 1..={MAX_ATTRIBUTES} (got {})",
                self.m
            ));
        }
        if self.p < self.m + 1 {
            problems.push(format!(
                "p must be >= m + 1 (got p={}, m={})",
                self.p, self.m
            ));
        }
        if !(self.base_positive_rate > 0.0 && self.base_positive_rate < 1.0) {
            problems.push(format!(
                "base_positive_rate must be in (0, 1) (got {})",
                self.base_positive_rate
            ));
        }
        for (name, v) in [
            ("target_signal_strength", self.target_signal_strength),
            ("attribute_signal_strength", self.attribute_signal_strength),
            ("label_sharpness", self.label_sharpness),
            ("attribute_label_coupling", self.attribute_label_coupling),
        ] {
            if !v.is_finite() {
                problems.push(format!("{name} must be finite"));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            problems.push("noise_sigma must be finite and >= 0".into());
        }
        problems
    }
}

/// Rows are samples: `features` is n×p.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub attributes: Vec<Vec<u8>>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<u8>, attributes: Vec<Vec<u8>>) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || attributes.len() != n {
            return Err(Error::invalid(format!(
                "dataset lengths disagree: {n} feature rows, {} labels, {} attribute rows",
                labels.len(),
                attributes.len()
            )));
        }
        let m = attributes.first().map_or(0, Vec::len);
        if attributes.iter().any(|a| a.len() != m) {
            return Err(Error::invalid("ragged attribute rows"));
        }
        if labels
            .iter()
            .chain(attributes.iter().flatten())
            .any(|v| *v > 1)
        {
            return Err(Error::invalid("labels and attributes must be 0/1"));
        }
        Ok(Self {
            features,
            labels,
            attributes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.first().map_or(0, Vec::len)
    }

    /// Rows `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        let p = self.num_features();
        let features = Matrix::from_fn(idx.len(), p, |r, c| self.features[(idx[r], c)]);
        LabeledDataset {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            attributes: idx.iter().map(|&i| self.attributes[i].clone()).collect(),
        }
    }

    /// Features of rows `idx` as a p×B batch (columns are samples).
    pub fn batch(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(self.num_features(), idx.len(), |r, c| {
            self.features[(idx[c], r)]
        })
    }

    /// Every row as a p×n batch.
    pub fn all_columns(&self) -> Matrix {
        self.features.transpose()
    }

    /// Per-attribute `(rate₁, rate₀, gap)`.
    pub fn positive_rate_gaps(&self) -> Result<Vec<(f64, f64, f64)>> {
        (0..self.num_attributes())
            .map(|i| group_positive_rate(&self.labels, &self.attributes, i))
            .collect()
    }

    /// CSV with header `f_1..f_p,label,a_1..a_m`.
    pub fn to_csv_string(&self) -> String {
        let mut header: Vec<String> = (1..=self.num_features())
            .map(|i| format!("f_{i}"))
            .collect();
        header.push("label".into());
        header.extend((1..=self.num_attributes()).map(|i| format!("a_{i}")));
        let mut out = header.join(",");
        out.push('\n');
        for r in 0..self.len() {
            let mut fields: Vec<String> = self
                .features
                .row(r)
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            fields.push(self.labels[r].to_string());
            fields.extend(self.attributes[r].iter().map(u8::to_string));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
        let path = path.as_ref();
        let bad = |message: String| Error::Csv {
            path: path.into(),
            message,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        let label_col = header
            .iter()
            .position(|h| h == "label")
            .ok_or_else(|| bad("missing `label` column".into()))?;
        let p = label_col;
        let m = header.len() - label_col - 1;
        if header
            .iter()
            .take(p)
            .enumerate()
            .any(|(i, h)| h != format!("f_{}", i + 1))
            || header
                .iter()
                .skip(p + 1)
                .enumerate()
                .any(|(i, h)| h != format!("a_{}", i + 1))
        {
            return Err(bad("expected header f_1..f_p,label,a_1..a_m".into()));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut attributes = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let row_err = |e: &dyn std::fmt::Display| bad(format!("row {}: {e}", line + 1));
            for f in rec.iter().take(p) {
                features.push(f.trim().parse::<f64>().map_err(|e| row_err(&e))?);
            }
            labels.push(rec[p].trim().parse::<u8>().map_err(|e| row_err(&e))?);
            let a = rec
                .iter()
                .skip(p + 1)
                .map(|v| v.trim().parse::<u8>())
                .collect::<std::result::Result<Vec<u8>, _>>()
                .map_err(|e| row_err(&e))?;
            if a.len() != m {
                return Err(row_err(&"wrong number of attribute columns"));
            }
            attributes.push(a);
        }
        let n = labels.len();
        LabeledDataset::new(Matrix::new(n, p, features)?, labels, attributes)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `m + 1` mutually orthogonal unit directions in `R^p`: target first, then one per attribute.
pub fn planted_directions(p: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    while dirs.len() < m + 1 {
        let g: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(w) = orthonormalize_against(&g, &dirs, 1e-3) {
            dirs.push(w);
        }
    }
    dirs
}

/// Draws a dataset: independent Bernoulli(½) attributes, a latent target
/// factor driving the label, and features that plant the target factor and
/// each attribute along fixed orthogonal directions plus isotropic noise.
pub fn generate(spec: &GenSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let dirs = planted_directions(spec.p, spec.m, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let offset = (spec.base_positive_rate / (1.0 - spec.base_positive_rate)).ln();

    let mut features = Vec::with_capacity(spec.n * spec.p);
    let mut labels = Vec::with_capacity(spec.n);
    let mut attributes = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let a: Vec<u8> = (0..spec.m)
            .map(|_| u8::from(coin.sample(&mut rng)))
            .collect();
        let t: f64 = StandardNormal.sample(&mut rng);
        let coupling: f64 = a.iter().map(|&v| 2.0 * f64::from(v) - 1.0).sum::<f64>()
            * spec.attribute_label_coupling;
        let prob = sigmoid(offset + spec.label_sharpness * t + coupling);
        let y = u8::from(rng.random_bool_compat(prob));
        let mut x = vec![0.0; spec.p];
        for (xi, wi) in x.iter_mut().zip(&dirs[0]) {
            *xi += spec.target_signal_strength * t * wi;
        }
        for (k, &ak) in a.iter().enumerate() {
            if ak == 1 {
                for (xi, wi) in x.iter_mut().zip(&dirs[k + 1]) {
                    *xi += spec.attribute_signal_strength * wi;
                }
            }
        }
        for xi in &mut x {
            let e: f64 = StandardNormal.sample(&mut rng);
            *xi += spec.noise_sigma * e;
        }
        features.extend(x);
        labels.push(y);
        attributes.push(a);
    }
    LabeledDataset::new(Matrix::new(spec.n, spec.p, features)?, labels, attributes)
}

trait BernoulliExt {
    fn random_bool_compat(&mut self, p: f64) -> bool;
}

impl BernoulliExt for ChaCha8Rng {
    fn random_bool_compat(&mut self, p: f64) -> bool {
        let u: f64 = rand::Rng::random(self);
        u < p
    }
}

/// Result of [`bias_amplify`].
#[derive(Debug, Clone, PartialEq)]
pub struct Amplified {
    pub data: LabeledDataset,
    /// Indices into the input that were kept, ascending.
    pub kept: Vec<usize>,
    /// Achieved per-attribute absolute positive-rate gaps.
    pub gaps: Vec<f64>,
}

/// Stopping tolerance on each attribute's gap.
const AMPLIFY_TOL: f64 = 0.005;
/// Never shrink an attribute-value group below this many samples.
const AMPLIFY_MIN_GROUP: usize = 20;

/// Removes samples until every attribute's positive-rate gap is within
/// ±0.01 of `target_gap`, never duplicating or editing rows.
///
/// Samples are removed one at a time from the (joint subgroup, label) cell
/// whose removal moves the gap vector closest to the target; within a cell
/// the removal order is a seeded shuffle. The sign of each attribute's
/// initial gap is kept (an initial gap of zero counts as positive).
pub fn bias_amplify(data: &LabeledDataset, target_gap: f64, seed: u64) -> Result<Amplified> {
    if !(0.0..1.0).contains(&target_gap) {
        return Err(Error::invalid(format!(
            "target gap must be in [0, 1), got {target_gap}"
        )));
    }
    let m = data.num_attributes();
    if m == 0 {
        return Err(Error::invalid("dataset has no sensitive attributes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // cell id = joint attribute bits * 2 + label
    let cell_of = |i: usize| -> usize {
        let bits = data.attributes[i]
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, &v)| acc | (usize::from(v) << k));
        bits * 2 + usize::from(data.labels[i])
    };
    let n_cells = (1usize << m) * 2;
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    for i in 0..data.len() {
        cells[cell_of(i)].push(i);
    }
    for c in &mut cells {
        c.shuffle(&mut rng);
    }

    // counts[k][v] and positives[k][v] for attribute k with value v
    let mut counts = vec![[0usize; 2]; m];
    let mut positives = vec![[0usize; 2]; m];
    for i in 0..data.len() {
        for k in 0..m {
            let v = usize::from(data.attributes[i][k]);
            counts[k][v] += 1;
            positives[k][v] += usize::from(data.labels[i]);
        }
    }
    let signed_gaps = |counts: &[[usize; 2]], positives: &[[usize; 2]]| -> Option<Vec<f64>> {
        (0..m)
            .map(|k| {
                if counts[k][0] == 0 || counts[k][1] == 0 {
                    None
                } else {
                    Some(
                        positives[k][1] as f64 / counts[k][1] as f64
                            - positives[k][0] as f64 / counts[k][0] as f64,
                    )
                }
            })
            .collect()
    };
    let initial = signed_gaps(&counts, &positives)
        .ok_or_else(|| Error::Undefined("an attribute value has no samples".into()))?;
    let targets: Vec<f64> = initial
        .iter()
        .map(|g| if *g < 0.0 { -target_gap } else { target_gap })
        .collect();
    let objective =
        |g: &[f64]| -> f64 { g.iter().zip(&targets).map(|(a, b)| (a - b).powi(2)).sum() };

    let mut removed = vec![false; data.len()];
    let mut gaps = initial;
    loop {
        if gaps
            .iter()
            .zip(&targets)
            .all(|(g, t)| (g - t).abs() <= AMPLIFY_TOL)
        {
            break;
        }
        let current = objective(&gaps);
        let mut best: Option<(usize, f64)> = None;
        for (cell, members) in cells.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let bits = cell / 2;
            let label = cell % 2;
            let mut feasible = true;
            let mut trial = Vec::with_capacity(m);
            for k in 0..m {
                let v = (bits >> k) & 1;
                let n_v = counts[k][v] - 1;
                if n_v < AMPLIFY_MIN_GROUP {
                    feasible = false;
                    break;
                }
                let (mut r1, mut r0) = (
                    positives[k][1] as f64 / counts[k][1] as f64,
                    positives[k][0] as f64 / counts[k][0] as f64,
                );
                let new_rate = (positives[k][v] - label) as f64 / n_v as f64;
                if v == 1 {
                    r1 = new_rate;
                } else {
                    r0 = new_rate;
                }
                trial.push(r1 - r0);
            }
            if !feasible {
                continue;
            }
            let f = objective(&trial);
            if best.is_none_or(|(_, bf)| f < bf) {
                best = Some((cell, f));
            }
        }
        match best {
            Some((cell, f)) if f < current => {
                let i = cells[cell].pop().expect("non-empty cell");
                removed[i] = true;
                let label = cell % 2;
                for k in 0..m {
                    let v = usize::from(data.attributes[i][k]);
                    counts[k][v] -= 1;
                    positives[k][v] -= label;
                }
                gaps = signed_gaps(&counts, &positives).expect("groups stay non-empty");
            }
            _ => {
                let achieved = gaps.iter().map(|g| g.abs()).fold(f64::MAX, f64::min);
                return Err(Error::Infeasible {
                    target: target_gap,
                    max_achievable: achieved,
                });
            }
        }
    }
    let kept: Vec<usize> = (0..data.len()).filter(|&i| !removed[i]).collect();
    Ok(Amplified {
        data: data.subset(&kept),
        kept,
        gaps: gaps.iter().map(|g| g.abs()).collect(),
    })
}

/// Index sets of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test: Vec<usize>,
    pub folds: Vec<Fold>,
    pub warnings: Vec<String>,
}

/// Held-out test set plus k folds over the rest, stratified by label and
/// joint subgroup. Strata smaller than `folds` fall back to label-only
/// stratification.
pub fn split(
    data: &LabeledDataset,
    test_fraction: f64,
    folds: usize,
    seed: u64,
) -> Result<SplitPlan> {
    if folds < 2 {
        return Err(Error::invalid(format!("folds must be >= 2, got {folds}")));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: BTreeMap<(u8, String), Vec<usize>> = BTreeMap::new();
    for i in 0..data.len() {
        strata
            .entry((data.labels[i], joint_key(&data.attributes[i])))
            .or_default()
            .push(i);
    }

    let mut test = Vec::new();
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); folds];
    let mut leftovers: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut offset = 0usize;
    for ((label, key), mut members) in strata {
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        let rest = &members[n_test..];
        if rest.len() < folds {
            if !rest.is_empty() {
                warnings.push(format!(
                    "stratum (label {label}, subgroup {key}) has {} samples for {folds} folds; stratified by label only",
                    rest.len()
                ));
                leftovers.entry(label).or_default().extend_from_slice(rest);
            }
            continue;
        }
        for (r, &i) in rest.iter().enumerate() {
            assignment[(offset + r) % folds].push(i);
        }
        offset = (offset + rest.len()) % folds;
    }
    for (_, mut pool) in leftovers {
        pool.shuffle(&mut rng);
        for (r, &i) in pool.iter().enumerate() {
            assignment[(offset + r) % folds].push(i);
        }
        offset = (offset + pool.len()) % folds;
    }

    test.sort_unstable();
    for a in &mut assignment {
        a.sort_unstable();
    }
    let folds = (0..folds)
        .map(|f| {
            let mut train: Vec<usize> = assignment
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            Fold {
                train,
                validation: assignment[f].clone(),
            }
        })
        .collect();
    Ok(SplitPlan {
        test,
        folds,
        warnings,
    })
}
