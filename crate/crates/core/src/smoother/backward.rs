use nalgebra::DMatrix;

use super::{FilterState, SmoothedResult, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::gaussian::{
    count_factorizations, marginal_from_dual, DualMessage, FactorizationTally, GaussianMoments,
};
use crate::node::{backward_dual, backward_marginal};
use crate::ssm::StateSpaceModel;

fn log_variance_growth(step: usize, filtered: &GaussianMoments, smoothed: &GaussianMoments) {
    for k in 0..filtered.dim() {
        let excess = smoothed.cov()[(k, k)] - filtered.cov()[(k, k)];
        if excess > 1e-8 {
            log::debug!(
                "step {step}: smoothed variance of x{} exceeds filtered by {excess:e}",
                k + 1
            );
        }
    }
}

/// Moment-form backward sweep.
///
/// Each transition `xᵢ₊₁ = f(xᵢ) + g(uᵢ₊₁) + wᵢ₊₁` is treated as one node
/// whose forward output message is the prediction: the additive input and
/// noise terms are independent of `xᵢ`, so `Cov(xᵢ, xᵢ₊₁)` is the cross
/// covariance of the `f` forward pass and the moment-form rule applies with
/// the smoothed marginal of `xᵢ₊₁` as the output marginal.
pub fn rts_smooth(fs: &FilterState, _model: &StateSpaceModel) -> Result<SmoothedResult> {
    let recs = &fs.records;
    let steps = recs.len();
    if steps == 0 {
        return Err(Error::Parameter("empty filter state".into()));
    }
    let mut smoothed = vec![recs[steps - 1].filtered.clone(); steps];
    let mut inputs = vec![None; steps];
    let mut tallies = vec![FactorizationTally::default(); steps];

    for i in (0..steps).rev() {
        let (out, tally) = count_factorizations(|| -> Result<()> {
            if i + 1 < steps {
                let next = &recs[i + 1];
                let node = next.transition.with_output(next.predicted.clone())?;
                let s = backward_marginal(&node, &recs[i].filtered, &smoothed[i + 1])?;
                smoothed[i] = s.floor_variances(VARIANCE_FLOOR);
                log_variance_growth(i + 1, &recs[i].filtered, &smoothed[i]);
            }
            if let Some(input) = &recs[i].input {
                let node = input.node.with_output(recs[i].predicted.clone())?;
                inputs[i] = Some(backward_marginal(&node, &input.prior, &smoothed[i])?);
            }
            Ok(())
        });
        out.map_err(|e| e.at_step(i + 1))?;
        tallies[i] = tally;
    }
    Ok(SmoothedResult {
        smoothed,
        inputs,
        backward_factorizations: tallies,
    })
}

/// Nonlinear modified Bryson-Frazier smoother: a backward sweep of dual
/// messages `(ξ̃, W̃)` that performs no factorization.
///
/// Per step, from the dual `(ξ̃⁺, W̃⁺)` on the filtered side of `xᵢ`:
///
/// ```text
/// F   = I − K H
/// W̃⁻ = Fᵀ W̃⁺ F + Hᵀ G H
/// ξ̃⁻ = Fᵀ ξ̃⁺ + Hᵀ G (H m⃗ − y)
/// ```
///
/// with `G = (H V⃗ Hᵀ + R)⁻¹` and `K` from the filter. The smoothed marginal
/// is recovered from the prediction and `(ξ̃⁻, W̃⁻)`. Duals pass unchanged
/// through the additive noise and input terms, and through `f` with the dual
/// node rule using the precision cached by the forward pass.
///
/// Requires a linear output `h(x) = H x`.
pub fn mbf_smooth(fs: &FilterState, model: &StateSpaceModel) -> Result<SmoothedResult> {
    let h = model.output_matrix().ok_or_else(|| {
        Error::Precondition(
            "the modified Bryson-Frazier smoother needs a linear output h(x) = Hx; \
             use rts_smooth for nonlinear outputs"
                .into(),
        )
    })?;
    let recs = &fs.records;
    let steps = recs.len();
    if steps == 0 {
        return Err(Error::Parameter("empty filter state".into()));
    }
    let n = recs[0].predicted.dim();
    let mut smoothed = Vec::with_capacity(steps);
    let mut inputs = vec![None; steps];
    let mut tallies = vec![FactorizationTally::default(); steps];
    let mut dual = DualMessage::zero(n);

    for i in (0..steps).rev() {
        let rec = &recs[i];
        let (out, tally) = count_factorizations(|| -> Result<(GaussianMoments, DualMessage)> {
            let before_obs = match (&rec.innovation, rec.observed) {
                (Some(c), _) => {
                    let f = DMatrix::identity(n, n) - &c.gain * h;
                    let hg = h.transpose() * &c.g;
                    let w = f.transpose() * dual.w() * &f + &hg * h;
                    let xi = f.transpose() * dual.xi() - &hg * &c.residual;
                    DualMessage::projected(xi, w)?
                }
                (None, false) => dual.clone(),
                (None, true) => {
                    return Err(Error::Precondition(
                        "filter record lacks the innovation cache of a linear update".into(),
                    ))
                }
            };
            let s =
                marginal_from_dual(&rec.predicted, &before_obs)?.floor_variances(VARIANCE_FLOOR);
            log_variance_growth(i + 1, &rec.filtered, &s);
            if let Some(input) = &rec.input {
                let u_dual = backward_dual(&input.node, &before_obs)?;
                inputs[i] = Some(marginal_from_dual(&input.prior, &u_dual)?);
            }
            let upstream = backward_dual(&rec.transition, &before_obs)?;
            Ok((s, upstream))
        });
        let (s, upstream) = out.map_err(|e| e.at_step(i + 1))?;
        smoothed.push(s);
        dual = upstream;
        tallies[i] = tally;
    }
    smoothed.reverse();
    Ok(SmoothedResult {
        smoothed,
        inputs,
        backward_factorizations: tallies,
    })
}
