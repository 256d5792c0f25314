//! Seeded synthetic GPLL datasets.
//!
//! Each named class and each background (null) identity has a Gaussian
//! prototype; instances are noisy copies of their prototype. Groups are
//! assembled around an anchor class whose sociability sets how crowded the
//! group is. Exact quotas of instances are then turned into null instances
//! or have their label occurrence displaced into another group, and finally
//! distractor labels are added.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Class, DataError, GpllDataset, Group, Instance, LabelOccurrence, Provenance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub num_groups: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub min_labels: usize,
    pub max_labels: usize,
    /// Expected norm of a class prototype.
    pub separation: f64,
    /// Expected norm of an instance's offset from its prototype.
    pub noise: f64,
    /// Fraction of instances whose class appears in no label set.
    pub null_rate: f64,
    /// Fraction of instances whose label occurrence sits in another group.
    pub cross_rate: f64,
    /// Mean number of distractor labels per group.
    pub distractor_rate: f64,
    /// 0 gives every class the same group-size distribution; 1 spreads
    /// classes from always-alone to always-crowded.
    pub crowding: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_classes: 20,
            feature_dim: 32,
            num_groups: 200,
            min_instances: 1,
            max_instances: 3,
            min_labels: 0,
            max_labels: 8,
            separation: 6.0,
            noise: 1.0,
            null_rate: 0.2,
            cross_rate: 0.2,
            distractor_rate: 0.2,
            crowding: 1.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field, reason: &str| {
            Err(DataError::Config {
                field,
                reason: reason.to_string(),
            })
        };
        if self.num_classes == 0 {
            return bad("num_classes", "must be at least 1");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be at least 1");
        }
        if self.min_instances > self.max_instances {
            return bad("min_instances", "exceeds max_instances");
        }
        if self.max_instances > self.num_classes {
            return bad(
                "max_instances",
                "a group holds at most one instance per class",
            );
        }
        if self.min_labels > self.max_labels {
            return bad("min_labels", "exceeds max_labels");
        }
        if self.max_labels > self.num_classes {
            return bad("max_labels", "a group holds at most one label per class");
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad("separation", "must be positive");
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad("noise", "must be positive");
        }
        for (field, v) in [
            ("null_rate", self.null_rate),
            ("cross_rate", self.cross_rate),
            ("crowding", self.crowding),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(field, "must lie in [0, 1]");
            }
        }
        if self.null_rate + self.cross_rate > 1.0 + 1e-12 {
            return bad("cross_rate", "null_rate + cross_rate exceeds 1");
        }
        if !(self.distractor_rate >= 0.0 && self.distractor_rate.is_finite()) {
            return bad("distractor_rate", "must be non-negative");
        }
        if self.cross_rate > 0.0 && self.num_groups < 2 {
            return bad(
                "cross_rate",
                "cross-group displacement needs at least 2 groups",
            );
        }
        Ok(())
    }
}

fn gaussian_point(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    let s = norm / (dim as f64).sqrt();
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            s * z
        })
        .collect()
}

// Shy classes are rarely drawn as companions of other anchors.
const COMPANION_FLOOR: f64 = 0.005;
const COMPANION_POWER: i32 = 6;
// Weight of an empty group as a destination for displaced labels.
const TARGET_FLOOR: f64 = 0.25;
// Sharpens the split between mostly-alone and mostly-crowded anchors.
const SIZE_POWER: i32 = 3;
// How strongly nulls, displacements and distractors favour crowded groups.
const SLOT_POWER: i32 = 3;
const DISTRACTOR_POWER: i32 = 3;

/// Slot of a generated instance before labels are assigned.
#[derive(Clone, Copy)]
enum Identity {
    Named(u32),
    Background(usize),
}

pub fn generate_synthetic(config: &GeneratorConfig) -> Result<GpllDataset, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.num_classes;
    let d = config.feature_dim;

    let prototypes: Vec<Vec<f64>> = (0..c)
        .map(|_| gaussian_point(&mut rng, d, config.separation))
        .collect();
    let background: Vec<Vec<f64>> = (0..c)
        .map(|_| gaussian_point(&mut rng, d, config.separation))
        .collect();

    // Sociability spreads evenly over [0, 1] in a random class order.
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng);
    let mut sociability = vec![0.5; c];
    for (rank, &cls) in order.iter().enumerate() {
        sociability[cls] = if c > 1 {
            rank as f64 / (c - 1) as f64
        } else {
            0.5
        };
    }
    let crowd = |cls: usize| (1.0 - config.crowding) * 0.5 + config.crowding * sociability[cls];

    // Class identities per group: anchor plus companions without repeats.
    let span = config.max_instances - config.min_instances;
    let mut members: Vec<Vec<u32>> = Vec::with_capacity(config.num_groups);
    for _ in 0..config.num_groups {
        let anchor = rng.random_range(0..c);
        let p = crowd(anchor).powi(SIZE_POWER);
        let extra = (0..span).filter(|_| rng.random_bool(p)).count();
        let size = config.min_instances + extra;
        let mut classes = Vec::with_capacity(size);
        if size > 0 {
            classes.push(anchor as u32);
        }
        while classes.len() < size {
            let pool: Vec<usize> = (0..c).filter(|k| !classes.contains(&(*k as u32))).collect();
            let pick = *pool
                .choose_weighted(&mut rng, |&k| {
                    COMPANION_FLOOR + crowd(k).powi(COMPANION_POWER)
                })
                .expect("pool is non-empty while size <= num_classes");
            classes.push(pick as u32);
        }
        members.push(classes);
    }

    // Exact quotas of null and displaced instances.
    let total: usize = members.iter().map(Vec::len).sum();
    let slots: Vec<(usize, usize)> = members
        .iter()
        .enumerate()
        .flat_map(|(g, m)| (0..m.len()).map(move |k| (g, k)))
        .collect();
    let n_null = (config.null_rate * total as f64).round() as usize;
    let n_cross = ((config.cross_rate * total as f64).round() as usize).min(total - n_null);
    // Crowded groups are likelier to hide a null or displaced instance.
    let slots: Vec<(usize, usize)> = slots
        .choose_multiple_weighted(&mut rng, n_null + n_cross, |&(g, _)| {
            (members[g].len() as f64).powi(SLOT_POWER)
        })
        .expect("group sizes are valid weights")
        .copied()
        .collect();
    let mut identity: Vec<Vec<Identity>> = members
        .iter()
        .map(|m| m.iter().map(|&k| Identity::Named(k)).collect())
        .collect();
    let mut displaced: Vec<Vec<bool>> = members.iter().map(|m| vec![false; m.len()]).collect();
    for &(g, k) in &slots[..n_null] {
        identity[g][k] = Identity::Background(rng.random_range(0..c));
    }
    for &(g, k) in &slots[n_null..n_null + n_cross] {
        displaced[g][k] = true;
    }

    // Own-group labels for named, non-displaced instances.
    let mut label_classes: Vec<Vec<u32>> = vec![Vec::new(); config.num_groups];
    for g in 0..config.num_groups {
        for (k, id) in identity[g].iter().enumerate() {
            if let (Identity::Named(cls), false) = (id, displaced[g][k]) {
                label_classes[g].push(*cls);
            }
        }
    }
    // Displaced labels go to another group that lacks that class entirely.
    let named_in = |g: usize, cls: u32, identity: &[Vec<Identity>]| {
        identity[g]
            .iter()
            .any(|id| matches!(id, Identity::Named(k) if *k == cls))
    };
    for g in 0..config.num_groups {
        for k in 0..identity[g].len() {
            let Identity::Named(cls) = identity[g][k] else {
                continue;
            };
            if !displaced[g][k] {
                continue;
            }
            let candidates: Vec<usize> = (0..config.num_groups)
                .filter(|&h| {
                    h != g
                        && !label_classes[h].contains(&cls)
                        && !named_in(h, cls, &identity)
                        && label_classes[h].len() < config.max_labels
                })
                .collect();
            let target = match candidates
                .choose_weighted(&mut rng, |&h| (identity[h].len() as f64).max(TARGET_FLOOR))
                .ok()
            {
                Some(&h) => h,
                None => {
                    let others: Vec<usize> = (0..config.num_groups).filter(|&h| h != g).collect();
                    *others.choose(&mut rng).expect("at least two groups")
                }
            };
            if !label_classes[target].contains(&cls) {
                label_classes[target].push(cls);
            }
        }
    }

    // Distractors favour crowded groups and sociable names; the mean per
    // group equals distractor_rate.
    let heft = |g: usize| (members[g].len() as f64).powi(DISTRACTOR_POWER);
    let mean_heft = (0..config.num_groups).map(heft).sum::<f64>() / config.num_groups.max(1) as f64;
    for g in 0..config.num_groups {
        let expected = if mean_heft > 0.0 {
            config.distractor_rate * heft(g) / mean_heft
        } else {
            config.distractor_rate
        };
        let mut want = expected.floor() as usize;
        if rng.random_bool((expected - expected.floor()).clamp(0.0, 1.0)) {
            want += 1;
        }
        let target_len = (label_classes[g].len() + want)
            .max(config.min_labels)
            .min(config.max_labels);
        while label_classes[g].len() < target_len {
            let pool: Vec<u32> = (0..c as u32)
                .filter(|&k| !label_classes[g].contains(&k) && !named_in(g, k, &identity))
                .collect();
            let Ok(&pick) = pool.choose_weighted(&mut rng, |&k| {
                COMPANION_FLOOR + crowd(k as usize).powi(COMPANION_POWER)
            }) else {
                break;
            };
            label_classes[g].push(pick);
        }
        label_classes[g].shuffle(&mut rng);
    }

    let mut next_id = 0u64;
    let mut groups = Vec::with_capacity(config.num_groups);
    for g in 0..config.num_groups {
        let mut instances = Vec::with_capacity(identity[g].len());
        for id in &identity[g] {
            let (proto, truth) = match *id {
                Identity::Named(k) => (&prototypes[k as usize], Class::Named(k)),
                Identity::Background(b) => (&background[b], Class::Null),
            };
            let offset = gaussian_point(&mut rng, d, config.noise);
            let features = proto.iter().zip(&offset).map(|(p, o)| p + o).collect();
            instances.push(Instance {
                id: next_id,
                group_id: g,
                features,
                true_class: Some(truth),
            });
            next_id += 1;
        }
        let labels = label_classes[g]
            .iter()
            .enumerate()
            .map(|(slot, &class_id)| LabelOccurrence {
                class_id,
                group_id: g,
                slot,
            })
            .collect();
        groups.push(Group {
            group_id: g,
            instances,
            labels,
        });
    }

    Ok(GpllDataset {
        num_classes: c,
        feature_dim: d,
        groups,
        provenance: Provenance::Generated {
            config: config.clone(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unambiguous() -> GeneratorConfig {
        GeneratorConfig {
            num_classes: 2,
            num_groups: 2,
            min_instances: 1,
            max_instances: 1,
            min_labels: 1,
            max_labels: 1,
            null_rate: 0.0,
            cross_rate: 0.0,
            distractor_rate: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn unambiguous_groups_contain_their_true_label() {
        let ds = generate_synthetic(&unambiguous()).unwrap();
        for g in &ds.groups {
            for inst in &g.instances {
                let Some(Class::Named(c)) = inst.true_class else {
                    panic!("expected a named class");
                };
                assert!(g.labels.iter().any(|l| l.class_id == c));
            }
        }
    }

    #[test]
    fn all_null_instances_never_find_their_class() {
        let cfg = GeneratorConfig {
            null_rate: 1.0,
            cross_rate: 0.0,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert!(ds.instances().all(|i| i.true_class == Some(Class::Null)));
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let cases = [
            (
                GeneratorConfig {
                    null_rate: 0.7,
                    cross_rate: 0.5,
                    ..Default::default()
                },
                "cross_rate",
            ),
            (
                GeneratorConfig {
                    separation: 0.0,
                    ..Default::default()
                },
                "separation",
            ),
            (
                GeneratorConfig {
                    noise: -1.0,
                    ..Default::default()
                },
                "noise",
            ),
        ];
        for (cfg, field) in cases {
            match generate_synthetic(&cfg) {
                Err(DataError::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn generated_dataset_validates() {
        let ds = generate_synthetic(&GeneratorConfig::default()).unwrap();
        ds.validate().unwrap();
    }
}
