//! Approximate Gaussian message passing through deterministic nonlinear
//! factor-graph nodes `y = f(x)`.
//!
//! Forward messages are propagated with unit-Gaussian quadrature
//! ([`quadrature`]); backward messages use RTS-type rules in either moment
//! form or the `(ξ̃, W̃)` dual form ([`node`]). Chained together over the
//! state-space model `xᵢ = f(xᵢ₋₁) + g(uᵢ) + wᵢ`, `yᵢ = h(xᵢ) + vᵢ`, the
//! rules give a sigma-point filter, an RTS-type smoother and a nonlinear
//! modified Bryson-Frazier smoother ([`smoother`]).

pub mod error;
pub mod gaussian;

pub use error::{Error, Result};
pub use gaussian::{
    chol_psd, combine_forward_backward, marginal_from_dual, to_dual, DualMessage, GaussianMessage,
    GaussianMoments, JointGaussian,
};
pub mod node;
pub mod quadrature;

pub use node::{backward_dual, backward_marginal, forward_pass, ForwardPassResult};
pub use quadrature::{
    expect, gauss_hermite_rule, spherical_radial_rule, transform_points, unscented_rule,
    QuadratureRule, SigmaPoints, VectorFn,
};
pub mod smoother;
pub mod ssm;

pub use smoother::{
    mbf_smooth, rmse, rts_smooth, run_filter, FilterState, SmoothedResult, StepInput,
};

pub mod oracle;

pub mod cli;
