//! Ready-made models.

use nalgebra::{DMatrix, DVector};

use super::expr::parse_expr;
use super::model::{ModelFn, StateSpaceModel};
use crate::gaussian::GaussianMoments;

/// Drift of the univariate nonstationary growth model.
pub const UNGM_DRIFT: &str = "0.5*x1 + 25*x1/(1 + x1^2)";
/// Quadratic output of the classic UNGM benchmark.
pub const UNGM_QUADRATIC_OUTPUT: &str = "x1^2/20";

/// Univariate nonstationary growth model
///
/// ```text
/// xᵢ = 0.5 xᵢ₋₁ + 25 xᵢ₋₁ / (1 + xᵢ₋₁²) + 8 uᵢ + wᵢ,   wᵢ ~ N(0, 10)
/// yᵢ = xᵢ + vᵢ  (or xᵢ²/20 + vᵢ),                      vᵢ ~ N(0, 1)
/// ```
///
/// with the forcing `uᵢ = cos(1.2 i)` supplied as a known input (see
/// [`ungm_inputs`]) and `x₀ ~ N(0, 1)`.
pub fn ungm(linear_output: bool) -> StateSpaceModel {
    let h = if linear_output {
        ModelFn::Matrix(DMatrix::from_element(1, 1, 1.0))
    } else {
        ModelFn::Exprs(vec![
            parse_expr(UNGM_QUADRATIC_OUTPUT, 1, 0).expect("valid output")
        ])
    };
    StateSpaceModel {
        state_dim: 1,
        input_dim: 1,
        obs_dim: 1,
        f: ModelFn::Exprs(vec![parse_expr(UNGM_DRIFT, 1, 0).expect("valid drift")]),
        g: Some(ModelFn::Exprs(vec![
            parse_expr("8*u1", 0, 1).expect("valid input map")
        ])),
        h,
        q: DMatrix::from_element(1, 1, 10.0),
        r: DMatrix::from_element(1, 1, 1.0),
        x0: GaussianMoments::scalar(0.0, 1.0).expect("valid prior"),
    }
}

/// Forcing sequence `uᵢ = cos(1.2 i)` for `i = 1..=steps`, one row per step.
pub fn ungm_inputs(steps: usize) -> DMatrix<f64> {
    DMatrix::from_fn(steps, 1, |i, _| (1.2 * (i + 1) as f64).cos())
}

/// Linear constant-velocity model observing position, with white
/// acceleration noise of intensity `accel_var` and measurement variance
/// `obs_var`.
pub fn constant_velocity(dt: f64, accel_var: f64, obs_var: f64) -> StateSpaceModel {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let q = DMatrix::from_row_slice(
        2,
        2,
        &[dt.powi(3) / 3.0, dt.powi(2) / 2.0, dt.powi(2) / 2.0, dt],
    ) * accel_var;
    StateSpaceModel {
        state_dim: 2,
        input_dim: 0,
        obs_dim: 1,
        f: ModelFn::Matrix(a),
        g: None,
        h: ModelFn::Matrix(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
        q,
        r: DMatrix::from_element(1, 1, obs_var),
        x0: GaussianMoments::new(DVector::zeros(2), DMatrix::identity(2, 2)).expect("valid prior"),
    }
}
