use nalgebra::{DMatrix, DVector};

use super::{FilterRecord, FilterState, InnovationCache, InputNode, StepInput};
use crate::error::{Error, Result};
use crate::gaussian::{
    combine_forward_backward, count_factorizations, GaussianMessage, GaussianMoments, SpdFactor,
};
use crate::node::{backward_marginal, forward_pass, ForwardPassResult};
use crate::quadrature::{QuadratureRule, VectorFn};
use crate::ssm::StateSpaceModel;

/// Output of [`predict_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub predicted: GaussianMoments,
    /// Forward pass of the previous filtered marginal through `f`.
    pub transition: ForwardPassResult,
    /// Forward pass through `g`, present for Gaussian-prior inputs.
    pub input: Option<InputNode>,
}

/// Output of [`update_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub filtered: GaussianMoments,
    /// Present for linear outputs with an observation.
    pub innovation: Option<InnovationCache>,
}

/// Propagates the previous filtered marginal through
/// `x = f(x_prev) + g(u) + w`.
pub fn predict_step(
    prev_filtered: &GaussianMoments,
    input: &StepInput,
    model: &StateSpaceModel,
    rule: &QuadratureRule,
) -> Result<Prediction> {
    let transition = forward_pass(&model.transition(), prev_filtered, rule)?;
    let mut mean = transition.y_forward.mean().clone();
    let mut cov = transition.y_forward.cov() + &model.q;

    let mut input_node = None;
    match (model.input_map(), input) {
        (None, _) => {}
        (Some(g), StepInput::Known(u)) => {
            mean += g.eval(u)?;
        }
        (Some(g), StepInput::Gaussian(prior)) => {
            let input_rule = rule.kind().build(prior.dim())?;
            let node = forward_pass(&g, prior, &input_rule)?;
            mean += node.y_forward.mean();
            cov += node.y_forward.cov();
            input_node = Some(InputNode {
                prior: prior.clone(),
                node,
            });
        }
    }
    let predicted = GaussianMoments::projected(mean, cov, "predicted covariance")?;
    Ok(Prediction {
        predicted,
        transition,
        input: input_node,
    })
}

fn linear_update(
    predicted: &GaussianMoments,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<Update> {
    let v = predicted.cov();
    let vht = v * h.transpose();
    let s = h * &vht + r;
    let g = SpdFactor::new(&s, "innovation covariance H V Hᵀ + R")?.inverse();
    let gain = &vht * &g;
    let residual = y - h * predicted.mean();
    let mean = predicted.mean() + &gain * &residual;

    let n = predicted.dim();
    let f = DMatrix::identity(n, n) - &gain * h;
    let cov = &f * v * f.transpose() + &gain * r * gain.transpose();
    let filtered = GaussianMoments::projected(mean, cov, "filtered covariance")?;
    Ok(Update {
        filtered,
        innovation: Some(InnovationCache { g, gain, residual }),
    })
}

/// Conditions the predicted marginal on an observation. `None` skips the
/// update.
///
/// Linear outputs use the innovation form with one factorization of
/// `H V Hᵀ + R`. Nonlinear outputs pass the prediction forward through `h`,
/// combine the result with the likelihood message `N(y, R)` and carry the
/// resulting output marginal back with the moment-form rule.
pub fn update_step(
    predicted: &GaussianMoments,
    y_obs: Option<&DVector<f64>>,
    model: &StateSpaceModel,
    rule: &QuadratureRule,
) -> Result<Update> {
    let Some(y) = y_obs else {
        return Ok(Update {
            filtered: predicted.clone(),
            innovation: None,
        });
    };
    if y.len() != model.obs_dim {
        return Err(Error::Dimension {
            context: "observation length",
            expected: model.obs_dim,
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("observation is not finite".into()));
    }
    if let Some(h) = model.output_matrix() {
        return linear_update(predicted, y, h, &model.r);
    }
    let node = forward_pass(&model.output(), predicted, rule)?;
    let likelihood = GaussianMoments::new(y.clone(), model.r.clone())?;
    let y_marginal =
        combine_forward_backward(&node.y_forward, &GaussianMessage::Informative(likelihood))?;
    let filtered = backward_marginal(&node, predicted, &y_marginal)?;
    Ok(Update {
        filtered,
        innovation: None,
    })
}

/// Forward sweep over `i = 1..=N` starting from the model prior.
///
/// `observations[i]` set to `None` marks a missing observation. `inputs`
/// holds one entry per step, or may be empty for models without inputs.
pub fn run_filter(
    model: &StateSpaceModel,
    observations: &[Option<DVector<f64>>],
    inputs: &[StepInput],
    rule: &QuadratureRule,
) -> Result<FilterState> {
    let steps = observations.len();
    if steps == 0 {
        return Err(Error::Parameter(
            "at least one time step is required".into(),
        ));
    }
    let no_inputs = inputs.is_empty() && (model.input_dim == 0 || model.g.is_none());
    if !no_inputs && inputs.len() != steps {
        return Err(Error::Dimension {
            context: "run_filter inputs",
            expected: steps,
            got: inputs.len(),
        });
    }
    if rule.dim() != model.state_dim {
        return Err(Error::Dimension {
            context: "run_filter rule dimension",
            expected: model.state_dim,
            got: rule.dim(),
        });
    }
    let empty = StepInput::Known(DVector::zeros(0));
    let mut records = Vec::with_capacity(steps);
    let mut prev = model.x0.clone();
    for (i, y) in observations.iter().enumerate() {
        let step = i + 1;
        let input = if no_inputs { &empty } else { &inputs[i] };
        let prediction = predict_step(&prev, input, model, rule).map_err(|e| e.at_step(step))?;
        let (update, tally) =
            count_factorizations(|| update_step(&prediction.predicted, y.as_ref(), model, rule));
        let update = update.map_err(|e| e.at_step(step))?;
        prev = update.filtered.clone();
        records.push(FilterRecord {
            predicted: prediction.predicted,
            filtered: update.filtered,
            transition: prediction.transition,
            input: prediction.input,
            innovation: update.innovation,
            observed: y.is_some(),
            update_factorizations: tally,
        });
    }
    Ok(FilterState { records })
}
