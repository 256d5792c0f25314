use serde::{Deserialize, Serialize};

use super::encoder::{build, ratings_from, PreparedGraph};
use super::{ModelConfig, ModelDims, ModelError, ModelParams, RatingMatrix};
use crate::graph::DualBipartiteGraph;
use crate::numerics::{
    grad_check, AdamConfig, AdamState, GradCheckConfig, GradCheckReport, NumericsError, Tape, Var,
};

/// Decoder normalisation measured on every forward pass of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationAudit {
    pub passes_checked: usize,
    /// Largest |sum of a rating distribution - 1|.
    pub max_sum_error: f64,
    pub min_expected: f64,
    pub max_expected: f64,
}

impl Default for NormalizationAudit {
    fn default() -> Self {
        Self {
            passes_checked: 0,
            max_sum_error: 0.0,
            min_expected: f64::INFINITY,
            max_expected: f64::NEG_INFINITY,
        }
    }
}

impl NormalizationAudit {
    fn record(&mut self, r: &RatingMatrix) {
        self.passes_checked += 1;
        self.max_sum_error = self.max_sum_error.max(r.max_sum_error());
        if let Some((lo, hi)) = r.expected_range() {
            self.min_expected = self.min_expected.min(lo);
            self.max_expected = self.max_expected.max(hi);
        }
    }

    /// Every distribution summed to one within `tol` and every expectation
    /// stayed in [0, 1].
    pub fn holds(&self, tol: f64) -> bool {
        self.max_sum_error <= tol
            && (self.min_expected.is_infinite() || self.min_expected >= 0.0)
            && (self.max_expected.is_infinite() || self.max_expected <= 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    /// Ratings for every scored edge under the final parameters.
    pub ratings: RatingMatrix,
    /// Loss of each epoch, measured before that epoch's update.
    pub loss_trace: Vec<f64>,
    pub audit: NormalizationAudit,
}

/// Trains from a seeded initialisation.
pub fn train(graph: &DualBipartiteGraph, config: &ModelConfig) -> Result<TrainOutput, ModelError> {
    let g = PreparedGraph::new(graph, config)?;
    let dims = ModelDims::new(config, graph.feature_dim, graph.num_classes);
    train_with(&g, ModelParams::init(dims, config.seed), config, |_, _| {})
}

/// Full-batch Adam on the reconstruction loss, starting from `params`.
/// `on_epoch` receives each epoch index and loss.
pub fn train_with(
    g: &PreparedGraph,
    mut params: ModelParams,
    config: &ModelConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutput, ModelError> {
    config.validate()?;
    if g.num_observed() == 0 {
        return Err(ModelError::NoObservedEdges);
    }
    let dims = params.dims;
    let trial = super::encoder::trace(&params, g)?;
    let mut audit = NormalizationAudit::default();
    audit.record(&trial.ratings);

    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &params.tensors,
    );
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .tensors
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect();
        let built = build(&mut tape, &vars, &dims, g, true)?;
        let loss_var = built.loss.expect("loss requested");
        let loss = tape.value(loss_var).item()?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                epoch,
                last_finite: loss_trace.last().copied(),
            });
        }
        audit.record(&ratings_from(g, tape.value(built.logits)));
        loss_trace.push(loss);
        on_epoch(epoch, loss);

        let mut grads = tape.backward(loss_var)?;
        let grads: Vec<_> = vars.iter().map(|&v| grads.take(v)).collect();
        adam.step(&mut params.tensors, &grads)
            .map_err(|e| match e {
                NumericsError::NonFinite { .. } => ModelError::NonFiniteLoss {
                    epoch,
                    last_finite: Some(loss),
                },
                other => other.into(),
            })?;
    }
    let ratings = super::encoder::trace(&params, g)?.ratings;
    audit.record(&ratings);
    Ok(TrainOutput {
        params,
        ratings,
        loss_trace,
        audit,
    })
}

/// Compares the analytic loss gradient of every parameter with central
/// differences on `g`.
pub fn check_gradients(
    params: &ModelParams,
    g: &PreparedGraph,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, ModelError> {
    g.check(&params.dims)?;
    if g.num_observed() == 0 {
        return Err(ModelError::NoObservedEdges);
    }
    let dims = params.dims;
    let mut tensors = params.tensors.clone();
    let report = grad_check(
        &mut tensors,
        |tape, vars| build(tape, vars, &dims, g, true).map(|b| b.loss.expect("loss requested")),
        config,
    )?;
    Ok(report)
}
