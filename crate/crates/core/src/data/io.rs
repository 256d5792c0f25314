//! JSON Lines dataset files: one header line, then one line per group.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use super::{Class, DataError, GpllDataset, Group, Instance, LabelOccurrence, Provenance};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    num_classes: usize,
    feature_dim: usize,
    #[serde(default = "unspecified")]
    provenance: Provenance,
}

fn unspecified() -> Provenance {
    Provenance::Unspecified
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupRecord {
    group_id: usize,
    instances: Vec<InstanceRecord>,
    labels: Vec<LabelRecord>,
}

/// `true_class` is an integer for a named class, `null` for the null class,
/// and absent when unknown.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: u64,
    features: Vec<f64>,
    #[serde(
        default,
        deserialize_with = "present",
        skip_serializing_if = "Option::is_none"
    )]
    true_class: Option<Option<u32>>,
}

fn present<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<u32>>, D::Error> {
    Option::<u32>::deserialize(d).map(Some)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    class_id: u32,
    slot: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_dataset<W: Write>(ds: &GpllDataset, mut w: W) -> std::io::Result<()> {
    let header = Header {
        num_classes: ds.num_classes,
        feature_dim: ds.feature_dim,
        provenance: ds.provenance.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for g in &ds.groups {
        let rec = GroupRecord {
            group_id: g.group_id,
            instances: g
                .instances
                .iter()
                .map(|i| InstanceRecord {
                    id: i.id,
                    features: i.features.clone(),
                    true_class: i.true_class.map(Class::named),
                })
                .collect(),
            labels: g
                .labels
                .iter()
                .map(|l| LabelRecord {
                    class_id: l.class_id,
                    slot: l.slot,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_dataset(ds: &GpllDataset, path: &Path) -> Result<(), DataError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    write_dataset(ds, BufWriter::new(f)).map_err(|e| io_err(path, e))
}

/// Parses a dataset; errors carry 1-based line numbers.
pub fn read_dataset<R: Read>(r: R) -> Result<GpllDataset, DataError> {
    let reader = BufReader::new(r);
    let mut header: Option<Header> = None;
    let mut groups = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| DataError::Parse {
            line: lineno,
            message: e.to_string(),
        };
        let Some(h) = &header else {
            header = Some(serde_json::from_str(&line).map_err(parse_err)?);
            continue;
        };
        let rec: GroupRecord = serde_json::from_str(&line).map_err(parse_err)?;
        let schema = |message: String| DataError::Schema {
            line: Some(lineno),
            message,
        };
        if rec.group_id != groups.len() {
            return Err(schema(format!(
                "group id {} where {} was expected",
                rec.group_id,
                groups.len()
            )));
        }
        let mut instances = Vec::with_capacity(rec.instances.len());
        for i in rec.instances {
            if i.features.len() != h.feature_dim {
                return Err(schema(format!(
                    "instance {} has {} features, header says {}",
                    i.id,
                    i.features.len(),
                    h.feature_dim
                )));
            }
            let true_class = match i.true_class {
                None => None,
                Some(None) => Some(Class::Null),
                Some(Some(c)) if (c as usize) < h.num_classes => Some(Class::Named(c)),
                Some(Some(c)) => {
                    return Err(schema(format!(
                        "instance {} true class {c} >= num_classes {}",
                        i.id, h.num_classes
                    )))
                }
            };
            instances.push(Instance {
                id: i.id,
                group_id: rec.group_id,
                features: i.features,
                true_class,
            });
        }
        let mut labels = Vec::with_capacity(rec.labels.len());
        for l in rec.labels {
            if l.class_id as usize >= h.num_classes {
                return Err(schema(format!(
                    "label class_id {} >= num_classes {}",
                    l.class_id, h.num_classes
                )));
            }
            labels.push(LabelOccurrence {
                class_id: l.class_id,
                group_id: rec.group_id,
                slot: l.slot,
            });
        }
        groups.push(Group {
            group_id: rec.group_id,
            instances,
            labels,
        });
    }
    let header = header.ok_or(DataError::Parse {
        line: 1,
        message: "missing header line".into(),
    })?;
    let ds = GpllDataset {
        num_classes: header.num_classes,
        feature_dim: header.feature_dim,
        groups,
        provenance: header.provenance,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn load_dataset(path: &Path) -> Result<GpllDataset, DataError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    read_dataset(f)
}
