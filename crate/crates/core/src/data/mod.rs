//! Group-level partial-label data: groups of instances paired with candidate
//! label occurrences, plus a synthetic generator and dataset statistics.

mod generator;
mod io;
pub(crate) mod stats;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use generator::{generate_synthetic, GeneratorConfig};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use stats::{ambiguity_ratio, dataset_stats, ground_truth_frequency, DatasetStats, RATIO_BINS};

/// A class of the label space: one of the `C` named classes or the null class
/// for instances whose class never appears in any candidate label set.
///
/// Ordering puts every named class before `Null`, and named classes by id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Named(u32),
    Null,
}

impl Class {
    pub fn named(self) -> Option<u32> {
        match self {
            Class::Named(c) => Some(c),
            Class::Null => None,
        }
    }

    pub fn is_null(self) -> bool {
        matches!(self, Class::Null)
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Class::Named(c) => write!(f, "{c}"),
            Class::Null => f.write_str("null"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u64,
    pub group_id: usize,
    pub features: Vec<f64>,
    /// Evaluation-only ground truth; `None` when unknown.
    pub true_class: Option<Class>,
}

/// One occurrence of a class name in a group's candidate label set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelOccurrence {
    pub class_id: u32,
    pub group_id: usize,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub group_id: usize,
    pub instances: Vec<Instance>,
    pub labels: Vec<LabelOccurrence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Generated { config: GeneratorConfig },
    Imported { path: String },
    Unspecified,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpllDataset {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub groups: Vec<Group>,
    pub provenance: Provenance,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid generator config: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Schema {
        line: Option<usize>,
        message: String,
    },
    #[error("ambiguity ratio undefined for class {0}: no candidate links touch it")]
    UndefinedRatio(Class),
    #[error("ground truth missing for instance {0}")]
    MissingGroundTruth(u64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GpllDataset {
    pub fn empty(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
            groups: Vec::new(),
            provenance: Provenance::Unspecified,
        }
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.groups.iter().flat_map(|g| g.instances.iter())
    }

    pub fn labels(&self) -> impl Iterator<Item = &LabelOccurrence> {
        self.groups.iter().flat_map(|g| g.labels.iter())
    }

    pub fn num_instances(&self) -> usize {
        self.groups.iter().map(|g| g.instances.len()).sum()
    }

    pub fn num_labels(&self) -> usize {
        self.groups.iter().map(|g| g.labels.len()).sum()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.instances().all(|i| i.true_class.is_some())
    }

    /// Checks dense group ids, class bounds, feature dimensions, unique
    /// instance ids and unique label slots.
    pub fn validate(&self) -> Result<(), DataError> {
        let schema = |message: String| DataError::Schema {
            line: None,
            message,
        };
        let mut ids = std::collections::HashSet::new();
        for (k, g) in self.groups.iter().enumerate() {
            if g.group_id != k {
                return Err(schema(format!(
                    "group at position {k} has id {}",
                    g.group_id
                )));
            }
            for inst in &g.instances {
                if inst.group_id != k {
                    return Err(schema(format!(
                        "instance {} in group {k} claims group {}",
                        inst.id, inst.group_id
                    )));
                }
                if inst.features.len() != self.feature_dim {
                    return Err(schema(format!(
                        "instance {} has {} features, expected {}",
                        inst.id,
                        inst.features.len(),
                        self.feature_dim
                    )));
                }
                if inst.features.iter().any(|v| !v.is_finite()) {
                    return Err(schema(format!(
                        "instance {} has non-finite features",
                        inst.id
                    )));
                }
                if let Some(Class::Named(c)) = inst.true_class {
                    if c as usize >= self.num_classes {
                        return Err(schema(format!(
                            "instance {} true class {c} >= {}",
                            inst.id, self.num_classes
                        )));
                    }
                }
                if !ids.insert(inst.id) {
                    return Err(schema(format!("duplicate instance id {}", inst.id)));
                }
            }
            let mut slots = std::collections::HashSet::new();
            for l in &g.labels {
                if l.class_id as usize >= self.num_classes {
                    return Err(schema(format!(
                        "label class {} >= {} in group {k}",
                        l.class_id, self.num_classes
                    )));
                }
                if l.group_id != k || !slots.insert(l.slot) {
                    return Err(schema(format!(
                        "label slot ({}, {}) is misplaced or duplicated",
                        l.group_id, l.slot
                    )));
                }
            }
        }
        Ok(())
    }
}
