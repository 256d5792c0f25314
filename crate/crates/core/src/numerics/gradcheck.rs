//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub samples_per_param: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            samples_per_param: 64,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a rectifier kink.
    pub excluded: usize,
    /// (parameter, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compares analytic gradients of `loss_fn` with central differences.
///
/// `loss_fn` must rebuild the loss on the given tape from the parameter vars;
/// it is called once for the analytic pass and twice per sampled coordinate.
pub fn grad_check<F>(
    params: &mut [Tensor],
    loss_fn: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(NumericsError::NonFinite {
            what: format!("parameter {i} before gradient check"),
        });
    }
    let eval = |params: &[Tensor]| -> Result<(f64, Vec<bool>), NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok((tape.value(loss).item()?, tape.activation_pattern()))
    };

    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        let mut grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.take(v)).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport {
        tolerance: config.tolerance,
        ..Default::default()
    };
    for pi in 0..params.len() {
        let n = params[pi].len();
        let coords: Vec<usize> = if n <= config.samples_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, config.samples_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for k in coords {
            let orig = params[pi].data()[k];
            params[pi].data_mut()[k] = orig + config.step;
            let (up, pat_up) = eval(params)?;
            params[pi].data_mut()[k] = orig - config.step;
            let (down, pat_down) = eval(params)?;
            params[pi].data_mut()[k] = orig;
            if pat_up != pat_down {
                report.excluded += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * config.step);
            let a = analytic[pi].data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((pi, k, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
