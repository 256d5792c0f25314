use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Class, DataError, GpllDataset};

/// Number of equal-width ambiguity-ratio bins over [0, 1].
pub const RATIO_BINS: usize = 10;

/// Correct and wrong candidate-link counts per class. Candidate links are
/// every instance x label pair within a group; a wrong link is counted once
/// for each distinct class it touches.
fn link_counts(ds: &GpllDataset) -> Result<BTreeMap<Class, (usize, usize)>, DataError> {
    let mut counts: BTreeMap<Class, (usize, usize)> = BTreeMap::new();
    for g in &ds.groups {
        for inst in &g.instances {
            let truth = inst
                .true_class
                .ok_or(DataError::MissingGroundTruth(inst.id))?;
            for l in &g.labels {
                let label = Class::Named(l.class_id);
                if truth == label {
                    counts.entry(truth).or_default().0 += 1;
                } else {
                    counts.entry(truth).or_default().1 += 1;
                    counts.entry(label).or_default().1 += 1;
                }
            }
        }
    }
    Ok(counts)
}

fn ratio_of(correct: usize, wrong: usize) -> Option<f64> {
    let total = correct + wrong;
    (total > 0).then(|| 1.0 - correct as f64 / total as f64)
}

/// Fraction of candidate links touching `class` that are wrong.
pub fn ambiguity_ratio(ds: &GpllDataset, class: Class) -> Result<f64, DataError> {
    let counts = link_counts(ds)?;
    let (t, f) = counts.get(&class).copied().unwrap_or_default();
    ratio_of(t, f).ok_or(DataError::UndefinedRatio(class))
}

/// Ratio for every named class (index = class id) and for the null class.
/// `None` marks classes no candidate link touches.
pub(crate) fn all_ratios(ds: &GpllDataset) -> Result<(Vec<Option<f64>>, Option<f64>), DataError> {
    let counts = link_counts(ds)?;
    let get = |c: Class| {
        let (t, f) = counts.get(&c).copied().unwrap_or_default();
        ratio_of(t, f)
    };
    let named = (0..ds.num_classes as u32)
        .map(|c| get(Class::Named(c)))
        .collect();
    Ok((named, get(Class::Null)))
}

/// Per named class, the number of groups where an instance of that class
/// co-occurs with a label of the same class.
pub fn ground_truth_frequency(ds: &GpllDataset) -> Vec<usize> {
    let mut freq = vec![0; ds.num_classes];
    for g in &ds.groups {
        let mut seen = vec![false; ds.num_classes];
        for inst in &g.instances {
            if let Some(Class::Named(c)) = inst.true_class {
                if !seen[c as usize] && g.labels.iter().any(|l| l.class_id == c) {
                    seen[c as usize] = true;
                    freq[c as usize] += 1;
                }
            }
        }
    }
    freq
}

pub(crate) fn ratio_bin(r: f64) -> usize {
    ((r * RATIO_BINS as f64).floor() as usize).min(RATIO_BINS - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_groups: usize,
    pub num_instances: usize,
    pub num_labels: usize,
    pub num_classes: usize,
    pub null_fraction: Option<f64>,
    /// Named instances whose class is absent from their own label set but
    /// present in another group's.
    pub cross_fraction: Option<f64>,
    pub ground_truth_frequency: Vec<usize>,
    pub ambiguity: Vec<Option<f64>>,
    pub mean_ambiguity: Option<f64>,
    /// Named classes per ambiguity-ratio bin.
    pub ambiguity_histogram: Vec<usize>,
}

pub fn dataset_stats(ds: &GpllDataset) -> DatasetStats {
    let n = ds.num_instances();
    let truth = ds.has_ground_truth() && n > 0;
    let null_fraction = truth.then(|| {
        ds.instances()
            .filter(|i| i.true_class == Some(Class::Null))
            .count() as f64
            / n as f64
    });
    let cross_fraction = truth.then(|| {
        let mut label_groups: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
        for l in ds.labels() {
            label_groups[l.class_id as usize].push(l.group_id);
        }
        ds.instances()
            .filter(|i| match i.true_class {
                Some(Class::Named(c)) => {
                    let gs = &label_groups[c as usize];
                    !gs.contains(&i.group_id) && !gs.is_empty()
                }
                _ => false,
            })
            .count() as f64
            / n as f64
    });
    let (ambiguity, histogram, mean) = match all_ratios(ds) {
        Ok((named, _)) => {
            let mut hist = vec![0; RATIO_BINS];
            for r in named.iter().flatten() {
                hist[ratio_bin(*r)] += 1;
            }
            let defined: Vec<f64> = named.iter().flatten().copied().collect();
            let mean =
                (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            (named, hist, mean)
        }
        Err(_) => (vec![None; ds.num_classes], vec![0; RATIO_BINS], None),
    };
    DatasetStats {
        num_groups: ds.groups.len(),
        num_instances: n,
        num_labels: ds.num_labels(),
        num_classes: ds.num_classes,
        null_fraction,
        cross_fraction,
        ground_truth_frequency: ground_truth_frequency(ds),
        ambiguity,
        mean_ambiguity: mean,
        ambiguity_histogram: histogram,
    }
}
