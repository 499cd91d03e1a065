//! Nonlinear state-space models `xᵢ = f(xᵢ₋₁) + g(uᵢ) + wᵢ`,
//! `yᵢ = h(xᵢ) + vᵢ`: component expressions, validation, JSON model files
//! and simulation.

pub mod catalog;
mod expr;
mod model;
mod simulate;

pub use expr::{parse_expr, BinOp, EvalError, Expr, Func, ParseError, MAX_EXPONENT};
pub use model::{
    validate_model, InputFn, ModelFileError, ModelFn, StateFn, StateSpaceModel, Violation,
};
pub use simulate::{simulate, Trajectory};
