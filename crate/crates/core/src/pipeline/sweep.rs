use std::io::Write;

use serde::{Deserialize, Serialize};
use toml::Value;

use super::config::parse_value;
use super::{run_pipeline, PipelineError, RunConfig};

/// Values accepted by the `ablation` sweep parameter.
pub const ABLATIONS: [&str; 4] = ["full", "no_cross", "no_attention", "no_dual"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted config key, or `ablation`.
    pub parameter: String,
    pub values: Vec<Value>,
    #[serde(default = "one")]
    pub replicates: usize,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    /// Parses each raw value as TOML, falling back to a string.
    pub fn from_raw(parameter: &str, values: &[String], replicates: usize) -> Self {
        Self {
            parameter: parameter.to_string(),
            values: values.iter().map(|v| parse_value(v.trim())).collect(),
            replicates,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.values.is_empty() {
            return bad("sweep needs at least one value".into());
        }
        if self.replicates == 0 {
            return bad("sweep needs at least one replicate".into());
        }
        if self.parameter == "ablation" {
            for v in &self.values {
                if !v.as_str().is_some_and(|s| ABLATIONS.contains(&s)) {
                    return bad(format!(
                        "unknown ablation {v}; expected one of {ABLATIONS:?}"
                    ));
                }
            }
        }
        Ok(())
    }

    fn overrides(&self, value: &Value) -> Vec<String> {
        if self.parameter != "ablation" {
            return vec![format!("{}={value}", self.parameter)];
        }
        let (cross, attention, dual) = match value.as_str() {
            Some("no_cross") => (false, true, true),
            Some("no_attention") => (true, false, true),
            Some("no_dual") => (true, true, false),
            _ => (true, true, true),
        };
        vec![
            format!("model.use_cross_links={cross}"),
            format!("model.use_attention={attention}"),
            format!("model.use_dual_paths={dual}"),
        ]
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one sweep run, decorrelated across values and replicates.
pub fn derive_seed(global: u64, value_index: usize, replicate: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(global) ^ value_index as u64) ^ replicate as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    /// `ok`, or the error that stopped the run.
    pub status: String,
}

fn display(v: &Value) -> String {
    v.as_str().map_or_else(|| v.to_string(), str::to_string)
}

/// One pipeline run per (value, replicate), each writing its artifacts
/// under `base.io.out_dir`. Failed runs become error rows and the sweep
/// carries on.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &RunConfig,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>, PipelineError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (vi, value) in spec.values.iter().enumerate() {
        for r in 0..spec.replicates {
            let seed = derive_seed(base.seed, vi, r);
            let mut push = |method: &str, accuracy, f1, status: String| {
                let row = SweepRow {
                    value: display(value),
                    replicate: r,
                    seed,
                    method: method.to_string(),
                    accuracy,
                    f1,
                    status,
                };
                on_row(&row);
                rows.push(row);
            };
            let outcome = base
                .with_overrides(&spec.overrides(value))
                .and_then(|mut c| {
                    c.seed = seed;
                    c.io.out_dir = base.io.out_dir.join(format!("run-v{vi}-r{r}"));
                    run_pipeline(&c)
                });
            match outcome {
                Ok(out) => {
                    for rep in &out.reports {
                        push(
                            &rep.method,
                            Some(rep.accuracy),
                            Some(rep.macro_f1),
                            "ok".into(),
                        );
                    }
                }
                Err(e) => push("-", None, None, e.to_string()),
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "value",
        "replicate",
        "seed",
        "method",
        "accuracy",
        "f1",
        "status",
    ])?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        out.write_record([
            r.value.clone(),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.method.clone(),
            fmt(r.accuracy),
            fmt(r.f1),
            r.status.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
