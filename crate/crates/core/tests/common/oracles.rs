use fcro::fairmetrics::{joint_key, EdMode, Grouping, MetricOptions, PredictionTable};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Scores on a coarse grid so ties and threshold hits are common.
pub fn random_table(g: &mut ChaCha8Rng) -> PredictionTable {
    let n = g.random_range(10..=100);
    let m = g.random_range(1..=3);
    let scores = (0..n)
        .map(|_| g.random_range(0..=10) as f64 / 10.0)
        .collect();
    let labels = (0..n).map(|_| g.random_range(0..2u8)).collect();
    let attributes = (0..n)
        .map(|_| (0..m).map(|_| g.random_range(0..2u8)).collect())
        .collect();
    PredictionTable::new(scores, labels, attributes).unwrap()
}

fn keys(table: &PredictionTable, grouping: Grouping) -> Vec<String> {
    table
        .attributes
        .iter()
        .map(|a| match grouping {
            Grouping::Joint => joint_key(a),
            Grouping::Attribute(i) => a[i].to_string(),
        })
        .collect()
}

fn all_keys(table: &PredictionTable, grouping: Grouping) -> Vec<String> {
    match grouping {
        Grouping::Attribute(_) => vec!["0".into(), "1".into()],
        Grouping::Joint => {
            let m = table.num_attributes();
            (0..1usize << m)
                .map(|code| {
                    (0..m)
                        .map(|b| ((code >> (m - 1 - b)) & 1).to_string())
                        .collect()
                })
                .collect()
        }
    }
}

/// Every eligible pair of subgroups, every label.
pub fn brute_ed(table: &PredictionTable, grouping: Grouping, opts: &MetricOptions) -> Option<f64> {
    let keys = keys(table, grouping);
    let mut per_label = Vec::new();
    for y in [1u8, 0] {
        let mut rates = Vec::new();
        for key in all_keys(table, grouping) {
            let mut n = 0usize;
            let mut hit = 0usize;
            for (i, k) in keys.iter().enumerate() {
                if *k == key && table.labels[i] == y {
                    n += 1;
                    let pred = u8::from(table.scores[i] >= table.threshold);
                    hit += usize::from(pred == y);
                }
            }
            if n >= opts.min_count.max(1) {
                rates.push(hit as f64 / n as f64);
            }
        }
        let mut best: Option<f64> = None;
        for a in 0..rates.len() {
            for b in 0..rates.len() {
                if a != b {
                    let gap = rates[a] - rates[b];
                    best = Some(best.map_or(gap, |v: f64| v.max(gap)));
                }
            }
        }
        if let Some(v) = best {
            per_label.push(v);
        }
    }
    if per_label.is_empty() {
        return None;
    }
    Some(match opts.ed_mode {
        EdMode::Max => per_label.iter().copied().fold(0.0, f64::max),
        EdMode::MeanGap => per_label.iter().sum::<f64>() / per_label.len() as f64,
    })
}

/// Pairwise count: a positive beating a negative scores 2, a tie scores 1.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut twice = 0u64;
    let (mut np, mut nn) = (0u64, 0u64);
    for i in 0..scores.len() {
        if labels[i] == 1 {
            np += 1;
        } else {
            nn += 1;
        }
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (np > 0 && nn > 0).then(|| twice as f64 / (2 * np * nn) as f64)
}

pub fn brute_auc_gap(table: &PredictionTable, grouping: Grouping) -> Option<f64> {
    let keys = keys(table, grouping);
    let aucs: Vec<f64> = all_keys(table, grouping)
        .iter()
        .filter_map(|key| {
            let idx: Vec<usize> = (0..table.len()).filter(|&i| &keys[i] == key).collect();
            let s: Vec<f64> = idx.iter().map(|&i| table.scores[i]).collect();
            let l: Vec<u8> = idx.iter().map(|&i| table.labels[i]).collect();
            pairwise_auc(&s, &l)
        })
        .collect();
    let mut best: Option<f64> = None;
    for a in &aucs {
        for b in &aucs {
            let gap = a - b;
            best = Some(best.map_or(gap, |v: f64| v.max(gap)));
        }
    }
    best.filter(|_| aucs.len() >= 2)
}

pub fn groupings(table: &PredictionTable) -> Vec<Grouping> {
    let mut g = vec![Grouping::Joint];
    g.extend((0..table.num_attributes()).map(Grouping::Attribute));
    g
}
