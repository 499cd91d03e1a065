//! Chain inference built from the node rules: a sigma-point filter, an
//! RTS-type smoother (moment form) and a nonlinear modified Bryson-Frazier
//! smoother (dual form).
//!
//! In the chain `x₀ → x₁ → … → x_N` each state connects to the past only
//! through its transition node, so the Markov condition the backward rules
//! need holds by construction.

mod backward;
mod filter;

use nalgebra::{DMatrix, DVector};

pub use backward::{mbf_smooth, rts_smooth};
pub use filter::{predict_step, run_filter, update_step, Prediction, Update};

use crate::error::{Error, Result};
use crate::gaussian::{FactorizationTally, GaussianMoments};
use crate::node::ForwardPassResult;

/// Smoothed covariance diagonals are kept at or above this value.
pub const VARIANCE_FLOOR: f64 = 1e-14;

/// Input at one time step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepInput {
    Known(DVector<f64>),
    /// Input with a Gaussian prior; `g` becomes a node of its own.
    Gaussian(GaussianMoments),
}

/// Wraps the rows of an N×m matrix as known inputs.
pub fn known_inputs(inputs: &DMatrix<f64>) -> Vec<StepInput> {
    inputs
        .row_iter()
        .map(|r| StepInput::Known(r.transpose()))
        .collect()
}

/// The `g` node of a step with a Gaussian-prior input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNode {
    pub prior: GaussianMoments,
    pub node: ForwardPassResult,
}

/// Quantities of a linear measurement update reused by the dual sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationCache {
    /// `G = (H V⃗ Hᵀ + R)⁻¹`.
    pub g: DMatrix<f64>,
    /// `K = V⃗ Hᵀ G`.
    pub gain: DMatrix<f64>,
    /// `y − H m⃗`.
    pub residual: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRecord {
    pub predicted: GaussianMoments,
    pub filtered: GaussianMoments,
    /// Forward pass of the previous filtered marginal through `f`.
    pub transition: ForwardPassResult,
    pub input: Option<InputNode>,
    pub innovation: Option<InnovationCache>,
    pub observed: bool,
    /// Factorizations performed by the measurement update.
    pub update_factorizations: FactorizationTally,
}

/// Per-step records of a forward sweep, steps `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub records: Vec<FilterRecord>,
}

impl FilterState {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn filtered(&self) -> Vec<GaussianMoments> {
        self.records.iter().map(|r| r.filtered.clone()).collect()
    }

    pub fn predicted(&self) -> Vec<GaussianMoments> {
        self.records.iter().map(|r| r.predicted.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedResult {
    pub smoothed: Vec<GaussianMoments>,
    /// Smoothed input marginals, for steps with Gaussian-prior inputs.
    pub inputs: Vec<Option<GaussianMoments>>,
    /// Factorizations performed by each backward step.
    pub backward_factorizations: Vec<FactorizationTally>,
}

/// Root mean squared error of the estimate means against `truth` (N×n),
/// over all steps and coordinates.
pub fn rmse(estimates: &[GaussianMoments], truth: &DMatrix<f64>) -> Result<f64> {
    if estimates.len() != truth.nrows() {
        return Err(Error::Dimension {
            context: "rmse steps",
            expected: truth.nrows(),
            got: estimates.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::Parameter("rmse of an empty sequence".into()));
    }
    let mut sum = 0.0;
    for (est, row) in estimates.iter().zip(truth.row_iter()) {
        if est.dim() != row.len() {
            return Err(Error::Dimension {
                context: "rmse state dimension",
                expected: row.len(),
                got: est.dim(),
            });
        }
        sum += (est.mean() - row.transpose()).norm_squared();
    }
    Ok((sum / (estimates.len() * truth.ncols()) as f64).sqrt())
}
