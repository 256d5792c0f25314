use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::pool::Prediction;
use super::EvalError;
use crate::data::stats::{all_ratios, ratio_bin};
use crate::data::{ground_truth_frequency, Class, DataError, GpllDataset, RATIO_BINS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Inclusive upper edges of the ground-truth frequency bins; a final open
    /// bin collects everything above the last edge.
    pub frequency_edges: Vec<usize>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            frequency_edges: vec![7, 14],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: Class,
    pub support: usize,
    pub predicted: usize,
    pub f1: f64,
    pub ambiguity: Option<f64>,
    pub frequency: usize,
}

/// Metrics over the instances whose true class falls in `[low, high]`
/// (`high = None` for an open bin).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinMetrics {
    pub low: f64,
    pub high: Option<f64>,
    pub n: usize,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub num_instances: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub classes: Vec<ClassMetrics>,
    pub ambiguity_bins: Vec<BinMetrics>,
    pub frequency_bins: Vec<BinMetrics>,
}

/// Per-class F1 for every class present among the truths.
fn class_f1(pairs: &[(Class, Class)]) -> BTreeMap<Class, (usize, usize, f64)> {
    let mut tp: HashMap<Class, usize> = HashMap::new();
    let mut support: BTreeMap<Class, usize> = BTreeMap::new();
    let mut predicted: HashMap<Class, usize> = HashMap::new();
    for &(t, p) in pairs {
        *support.entry(t).or_default() += 1;
        *predicted.entry(p).or_default() += 1;
        if t == p {
            *tp.entry(t).or_default() += 1;
        }
    }
    support
        .into_iter()
        .map(|(c, s)| {
            let tp = tp.get(&c).copied().unwrap_or(0);
            let pred = predicted.get(&c).copied().unwrap_or(0);
            let f1 = 2.0 * tp as f64 / (s + pred) as f64;
            (c, (s, pred, f1))
        })
        .collect()
}

/// Unweighted mean F1 over the classes present among the truths.
pub fn macro_f1(pairs: &[(Class, Class)]) -> Option<f64> {
    let per = class_f1(pairs);
    (!per.is_empty()).then(|| per.values().map(|v| v.2).sum::<f64>() / per.len() as f64)
}

fn bin_metrics(low: f64, high: Option<f64>, pairs: &[(Class, Class)]) -> BinMetrics {
    let n = pairs.len();
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    BinMetrics {
        low,
        high,
        n,
        accuracy: (n > 0).then(|| correct as f64 / n as f64),
        f1: macro_f1(pairs),
    }
}

/// Scores `predictions` against the dataset's ground truth. Predictions are
/// matched to instances by id, so their order does not matter.
///
/// Classes with no candidate link have no ambiguity ratio and are counted in
/// the top ambiguity bin. The null class has ground-truth frequency 0.
pub fn evaluate(
    method: &str,
    predictions: &[Prediction],
    ds: &GpllDataset,
    config: &EvaluationConfig,
) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<u64, Class> = predictions
        .iter()
        .map(|p| (p.instance_id, p.class))
        .collect();
    let mut pairs = Vec::with_capacity(ds.num_instances());
    for inst in ds.instances() {
        let truth = inst
            .true_class
            .ok_or(DataError::MissingGroundTruth(inst.id))?;
        let pred = by_id.get(&inst.id).copied().ok_or_else(|| {
            EvalError::Mismatch(format!("no prediction for instance {}", inst.id))
        })?;
        pairs.push((truth, pred));
    }
    if pairs.is_empty() {
        return Err(EvalError::Mismatch("dataset has no instances".into()));
    }
    if by_id.len() != pairs.len() {
        return Err(EvalError::Mismatch(format!(
            "{} predictions for {} instances",
            by_id.len(),
            pairs.len()
        )));
    }

    let (named_ratio, null_ratio) = all_ratios(ds)?;
    let ratio_of = |c: Class| match c {
        Class::Named(k) => named_ratio.get(k as usize).copied().flatten(),
        Class::Null => null_ratio,
    };
    let freq = ground_truth_frequency(ds);
    let freq_of = |c: Class| {
        c.named()
            .map_or(0, |k| freq.get(k as usize).copied().unwrap_or(0))
    };
    let amb_bin = |c: Class| ratio_of(c).map_or(RATIO_BINS - 1, ratio_bin);
    let edges = &config.frequency_edges;
    let freq_bin = |c: Class| {
        let f = freq_of(c);
        edges.iter().position(|&e| f <= e).unwrap_or(edges.len())
    };

    let mut amb_pairs = vec![Vec::new(); RATIO_BINS];
    let mut freq_pairs = vec![Vec::new(); edges.len() + 1];
    for &(t, p) in &pairs {
        amb_pairs[amb_bin(t)].push((t, p));
        freq_pairs[freq_bin(t)].push((t, p));
    }
    let ambiguity_bins = amb_pairs
        .iter()
        .enumerate()
        .map(|(k, ps)| {
            let n = RATIO_BINS as f64;
            bin_metrics(k as f64 / n, Some((k + 1) as f64 / n), ps)
        })
        .collect();
    let frequency_bins = freq_pairs
        .iter()
        .enumerate()
        .map(|(k, ps)| {
            let low = if k == 0 { 0 } else { edges[k - 1] + 1 };
            bin_metrics(low as f64, edges.get(k).map(|&e| e as f64), ps)
        })
        .collect();

    let classes = class_f1(&pairs)
        .into_iter()
        .map(|(class, (support, predicted, f1))| ClassMetrics {
            class,
            support,
            predicted,
            f1,
            ambiguity: ratio_of(class),
            frequency: freq_of(class),
        })
        .collect();
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    Ok(EvalReport {
        method: method.to_string(),
        num_instances: pairs.len(),
        correct,
        accuracy: correct as f64 / pairs.len() as f64,
        macro_f1: macro_f1(&pairs).expect("non-empty"),
        classes,
        ambiguity_bins,
        frequency_bins,
    })
}

impl EvalReport {
    /// Pooled accuracy over the ambiguity bins whose range lies inside
    /// `[low, high]`.
    pub fn accuracy_in_ratio_range(&self, low: f64, high: f64) -> Option<f64> {
        let eps = 1e-9;
        let (mut n, mut correct) = (0usize, 0.0);
        for b in &self.ambiguity_bins {
            let hi = b.high.unwrap_or(f64::INFINITY);
            if b.low >= low - eps && hi <= high + eps {
                n += b.n;
                correct += b.accuracy.unwrap_or(0.0) * b.n as f64;
            }
        }
        (n > 0).then(|| correct / n as f64)
    }
}

const F1_NOTE: &str =
    "Macro-F1 averages per-class F1 over every class present in the ground truth, the null class included.";

fn opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

/// Human-readable comparison of one or more methods.
pub fn render_report(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{F1_NOTE}\n");
    let _ = writeln!(
        s,
        "{:<20} {:>10} {:>10} {:>10}",
        "method", "instances", "accuracy", "macro_f1"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<20} {:>10} {:>10.4} {:>10.4}",
            r.method, r.num_instances, r.accuracy, r.macro_f1
        );
    }
    for (title, pick) in [
        (
            "ambiguity ratio",
            (|r: &EvalReport| &r.ambiguity_bins) as fn(&EvalReport) -> &Vec<BinMetrics>,
        ),
        ("ground-truth frequency", |r: &EvalReport| &r.frequency_bins),
    ] {
        let _ = writeln!(s, "\nby {title}:");
        let _ = writeln!(
            s,
            "{:<20} {:>8} {:>8} {:>6} {:>10} {:>10}",
            "method", "low", "high", "n", "accuracy", "f1"
        );
        for r in reports {
            for b in pick(r) {
                let _ = writeln!(
                    s,
                    "{:<20} {:>8} {:>8} {:>6} {:>10} {:>10}",
                    r.method,
                    b.low,
                    b.high.map_or("inf".to_string(), |h| h.to_string()),
                    b.n,
                    opt(b.accuracy),
                    opt(b.f1)
                );
            }
        }
    }
    s
}

/// Pretty JSON record of `reports`, newline-terminated.
pub fn reports_to_json(reports: &[EvalReport]) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(&serde_json::json!({ "reports": reports }))?;
    s.push('\n');
    Ok(s)
}

/// CSV of every bin of every report. `curve` is `ambiguity` or `frequency`.
pub fn write_curves<W: Write>(reports: &[EvalReport], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "curve", "method", "bin_low", "bin_high", "n", "accuracy", "f1",
    ])?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in reports {
        for (curve, bins) in [
            ("ambiguity", &r.ambiguity_bins),
            ("frequency", &r.frequency_bins),
        ] {
            for b in bins {
                out.write_record([
                    curve.to_string(),
                    r.method.clone(),
                    b.low.to_string(),
                    fmt(b.high),
                    b.n.to_string(),
                    fmt(b.accuracy),
                    fmt(b.f1),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Group, Instance, LabelOccurrence, Provenance};

    fn ds(truths: &[Class]) -> GpllDataset {
        GpllDataset {
            num_classes: 2,
            feature_dim: 1,
            groups: vec![Group {
                group_id: 0,
                instances: truths
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| Instance {
                        id: k as u64,
                        group_id: 0,
                        features: vec![0.0],
                        true_class: Some(t),
                    })
                    .collect(),
                labels: vec![LabelOccurrence {
                    class_id: 0,
                    group_id: 0,
                    slot: 0,
                }],
            }],
            provenance: Provenance::Unspecified,
        }
    }

    fn preds(classes: &[Class]) -> Vec<Prediction> {
        classes
            .iter()
            .enumerate()
            .map(|(k, &class)| Prediction {
                instance_id: k as u64,
                group_id: 0,
                class,
                scores: vec![],
            })
            .collect()
    }

    const A: Class = Class::Named(0);
    const B: Class = Class::Named(1);

    #[test]
    fn perfect_predictions() {
        let r = evaluate(
            "m",
            &preds(&[A, B]),
            &ds(&[A, B]),
            &EvaluationConfig::default(),
        )
        .unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn binary_hand_computed() {
        let r = evaluate(
            "m",
            &preds(&[A, A]),
            &ds(&[A, B]),
            &EvaluationConfig::default(),
        )
        .unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!((r.classes[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.classes[1].f1, 0.0);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bins_partition_instances() {
        let r = evaluate(
            "m",
            &preds(&[A, B, Class::Null]),
            &ds(&[A, B, Class::Null]),
            &EvaluationConfig::default(),
        )
        .unwrap();
        assert_eq!(r.ambiguity_bins.iter().map(|b| b.n).sum::<usize>(), 3);
        assert_eq!(r.frequency_bins.iter().map(|b| b.n).sum::<usize>(), 3);
        assert_eq!(r.frequency_bins.len(), 3);
        assert_eq!(r.frequency_bins[1].low, 8.0);
        assert_eq!(r.frequency_bins[2].high, None);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let err = evaluate(
            "m",
            &preds(&[A]),
            &ds(&[A, B]),
            &EvaluationConfig::default(),
        );
        assert!(matches!(err, Err(EvalError::Mismatch(_))));
    }

    #[test]
    fn unknown_truth_is_an_error() {
        let mut d = ds(&[A]);
        d.groups[0].instances[0].true_class = None;
        let err = evaluate("m", &preds(&[A]), &d, &EvaluationConfig::default());
        assert!(matches!(
            err,
            Err(EvalError::Data(DataError::MissingGroundTruth(0)))
        ));
    }

    #[test]
    fn curves_have_one_row_per_bin() {
        let r = evaluate("m", &preds(&[A]), &ds(&[A]), &EvaluationConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_curves(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + RATIO_BINS + 3);
        assert!(text.starts_with("curve,method,bin_low,bin_high,n,accuracy,f1"));
    }
}
