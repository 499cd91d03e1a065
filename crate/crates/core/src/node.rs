//! Message-passing rules for a deterministic node `y = f(x)`.
//!
//! Forward (filtering), with sigma points `xᵢ` of the forward message on `X`:
//!
//! ```text
//! m⃗_Y = Σ wᵢ f(xᵢ)
//! V⃗_Y = Σ wᵢ (f(xᵢ) − m⃗_Y)(f(xᵢ) − m⃗_Y)ᵀ
//! C⃗   = Σ wᵢ (xᵢ − m⃗_X)(f(xᵢ) − m⃗_Y)ᵀ
//! ```
//!
//! Backward (smoothing), moment form with `D⃗ = C⃗ V⃗_Y⁻¹`:
//!
//! ```text
//! m_X = m⃗_X + D⃗ (m_Y − m⃗_Y)
//! V_X = V⃗_X + D⃗ (V_Y − V⃗_Y) D⃗ᵀ
//! ```
//!
//! and dual form:
//!
//! ```text
//! W̃_X = W⃗_X C⃗ W̃_Y C⃗ᵀ W⃗_X
//! ξ̃_X = W⃗_X C⃗ ξ̃_Y
//! ```
//!
//! The backward rules hold only when every path between `X` and `Y` in the
//! surrounding graph runs through this node. The node cannot check that; the
//! caller must guarantee it (the chain drivers in [`crate::smoother`] do so
//! by construction).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{
    psd_inverse, symmetrize, DualMessage, GaussianMoments, JointGaussian, SpdFactor,
};
use crate::quadrature::{transform_points, QuadratureRule, VectorFn};

/// Everything the backward rules need from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPassResult {
    /// Forward message on `Y`: `(m⃗_Y, V⃗_Y)`.
    pub y_forward: GaussianMoments,
    /// `C⃗ = Cov(X, Y)`, n×p.
    pub cross: DMatrix<f64>,
    /// Statistical linearization `C⃗ᵀ W⃗_X`, p×n.
    pub lin: DMatrix<f64>,
    /// `W⃗_X = V⃗_X⁻¹`, cached so the dual backward pass needs no inversion.
    pub x_precision: DMatrix<f64>,
}

impl ForwardPassResult {
    pub fn input_dim(&self) -> usize {
        self.cross.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.cross.ncols()
    }

    pub fn joint(&self, x_forward: &GaussianMoments) -> JointGaussian {
        JointGaussian {
            mean_x: x_forward.mean().clone(),
            mean_y: self.y_forward.mean().clone(),
            cov_x: x_forward.cov().clone(),
            cov_y: self.y_forward.cov().clone(),
            cross: self.cross.clone(),
        }
    }

    /// The same node followed by an independent additive term whose moments
    /// turn the output message into `y_forward`. `Cov(X, Y)` is unchanged.
    pub fn with_output(&self, y_forward: GaussianMoments) -> Result<Self> {
        if y_forward.dim() != self.output_dim() {
            return Err(Error::Dimension {
                context: "ForwardPassResult::with_output",
                expected: self.output_dim(),
                got: y_forward.dim(),
            });
        }
        Ok(Self {
            y_forward,
            ..self.clone()
        })
    }
}

/// Propagates the forward message on `X` through `f`.
pub fn forward_pass<F: VectorFn + ?Sized>(
    f: &F,
    x_forward: &GaussianMoments,
    rule: &QuadratureRule,
) -> Result<ForwardPassResult> {
    let sp = transform_points(rule, x_forward)?;
    let mut outputs: Vec<DVector<f64>> = Vec::with_capacity(sp.len());
    for i in 0..sp.len() {
        let x = sp.point(i);
        let y = f.eval(&x).map_err(|e| Error::NonFiniteAtNode {
            node: i,
            detail: e.to_string(),
        })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteAtNode {
                node: i,
                detail: format!("f({:?}) = {:?}", x.as_slice(), y.as_slice()),
            });
        }
        if let Some(first) = outputs.first() {
            if first.len() != y.len() {
                return Err(Error::Dimension {
                    context: "forward_pass output length",
                    expected: first.len(),
                    got: y.len(),
                });
            }
        }
        outputs.push(y);
    }

    let (n, p) = (x_forward.dim(), outputs[0].len());
    let mut mean_y = DVector::zeros(p);
    for (w, y) in sp.weights.iter().zip(&outputs) {
        mean_y.axpy(*w, y, 1.0);
    }

    let mut cov_y = DMatrix::zeros(p, p);
    let mut cross = DMatrix::zeros(n, p);
    for (i, (w, y)) in sp.weights.iter().zip(&outputs).enumerate() {
        let dy = y - &mean_y;
        let dx = sp.point(i) - x_forward.mean();
        cov_y.ger(*w, &dy, &dy, 1.0);
        cross.ger(*w, &dx, &dy, 1.0);
    }
    let y_forward = GaussianMoments::projected(mean_y, cov_y, "V_Y").map_err(|e| match e {
        Error::NotPsd { min_eigenvalue, .. } => Error::Indefinite {
            rule: rule.kind().to_string(),
            min_eigenvalue,
        },
        other => other,
    })?;

    let x_precision = psd_inverse(x_forward.cov(), "V_X")?;
    let lin = cross.transpose() * &x_precision;
    Ok(ForwardPassResult {
        y_forward,
        cross,
        lin,
        x_precision,
    })
}

/// RTS gain `D⃗ = C⃗ V⃗_Y⁻¹`, n×p.
pub fn rts_gain(fp: &ForwardPassResult) -> Result<DMatrix<f64>> {
    let factor = SpdFactor::new(fp.y_forward.cov(), "forward output covariance V_Y")?;
    Ok(factor.solve(&fp.cross.transpose()).transpose())
}

/// Moment-form backward rule: the marginal on `X` given the marginal on `Y`.
pub fn backward_marginal(
    fp: &ForwardPassResult,
    x_forward: &GaussianMoments,
    y_marginal: &GaussianMoments,
) -> Result<GaussianMoments> {
    if x_forward.dim() != fp.input_dim() {
        return Err(Error::Dimension {
            context: "backward_marginal x_forward",
            expected: fp.input_dim(),
            got: x_forward.dim(),
        });
    }
    if y_marginal.dim() != fp.output_dim() {
        return Err(Error::Dimension {
            context: "backward_marginal y_marginal",
            expected: fp.output_dim(),
            got: y_marginal.dim(),
        });
    }
    let gain = rts_gain(fp)?;
    let mean = x_forward.mean() + &gain * (y_marginal.mean() - fp.y_forward.mean());
    let cov = x_forward.cov() + &gain * (y_marginal.cov() - fp.y_forward.cov()) * gain.transpose();
    GaussianMoments::projected(mean, cov, "smoothed V_X")
}

/// Dual-form backward rule. Performs no factorization: `W⃗_X` comes from
/// the forward pass.
pub fn backward_dual(fp: &ForwardPassResult, y_dual: &DualMessage) -> Result<DualMessage> {
    if y_dual.dim() != fp.output_dim() {
        return Err(Error::Dimension {
            context: "backward_dual y_dual",
            expected: fp.output_dim(),
            got: y_dual.dim(),
        });
    }
    if y_dual.is_zero() {
        return Ok(DualMessage::zero(fp.input_dim()));
    }
    let b = fp.lin.transpose();
    let w = symmetrize(&(&b * y_dual.w() * b.transpose()));
    let xi = &b * y_dual.xi();
    DualMessage::projected(xi, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{combine_forward_backward, marginal_from_dual, to_dual};
    use crate::quadrature::{gauss_hermite_rule, spherical_radial_rule, unscented_rule};

    fn rules(n: usize) -> Vec<QuadratureRule> {
        vec![
            unscented_rule(n, 3.0 - n as f64).unwrap(),
            gauss_hermite_rule(n, 3).unwrap(),
            spherical_radial_rule(n).unwrap(),
        ]
    }

    fn scalar(m: f64, v: f64) -> GaussianMoments {
        GaussianMoments::scalar(m, v).unwrap()
    }

    #[test]
    fn identity_forward() {
        let x = GaussianMoments::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        for rule in rules(2) {
            let fp = forward_pass(&|v: &DVector<f64>| v.clone(), &x, &rule).unwrap();
            assert!((fp.y_forward.mean() - x.mean()).amax() < 1e-14);
            assert!((fp.y_forward.cov() - x.cov()).amax() < 1e-14);
            assert!((&fp.cross - x.cov()).amax() < 1e-14);
        }
    }

    #[test]
    fn affine_scalar_forward() {
        let x = scalar(3.0, 4.0);
        for rule in rules(1) {
            let fp = forward_pass(
                &|v: &DVector<f64>| v * 2.0 + DVector::from_element(1, 1.0),
                &x,
                &rule,
            )
            .unwrap();
            assert!((fp.y_forward.mean()[0] - 7.0).abs() < 1e-13);
            assert!((fp.y_forward.cov()[(0, 0)] - 16.0).abs() < 1e-13);
            assert!((fp.cross[(0, 0)] - 8.0).abs() < 1e-13);
        }
    }

    #[test]
    fn square_through_ghq_and_srt() {
        let sq = |v: &DVector<f64>| v.map(|a| a * a);
        let x = scalar(0.0, 1.0);
        let fp = forward_pass(&sq, &x, &gauss_hermite_rule(1, 3).unwrap()).unwrap();
        assert!((fp.y_forward.mean()[0] - 1.0).abs() < 1e-14);
        assert!((fp.y_forward.cov()[(0, 0)] - 2.0).abs() < 1e-13);
        assert!(fp.cross[(0, 0)].abs() < 1e-14);

        // points ±1 give f = 1 at both: zero variance
        let fp = forward_pass(&sq, &x, &spherical_radial_rule(1).unwrap()).unwrap();
        assert_eq!(fp.y_forward.mean()[0], 1.0);
        assert_eq!(fp.y_forward.cov()[(0, 0)], 0.0);
    }

    #[test]
    fn forward_reports_non_finite() {
        let err = forward_pass(
            &|v: &DVector<f64>| v.map(|a| a.ln()),
            &scalar(0.0, 1.0),
            &spherical_radial_rule(1).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteAtNode { node: 1, .. }));
    }

    #[test]
    fn forward_negative_weights_can_be_indefinite() {
        // n=4, kappa=-1: center weight -1/3, cubic outputs make V_Y indefinite
        let rule = unscented_rule(4, -1.0).unwrap();
        let x = GaussianMoments::new(DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        let f = |v: &DVector<f64>| {
            let r2 = v.norm_squared();
            DVector::from_vec(vec![r2, r2 + 1e-3 * v[0]])
        };
        let fp = forward_pass(&f, &x, &rule);
        match fp {
            Err(Error::Indefinite { rule, .. }) => assert!(rule.contains("unscented")),
            other => panic!("expected indefinite, got {other:?}"),
        }
    }

    #[test]
    fn backward_marginal_examples() {
        let x = scalar(0.0, 1.0);
        let double = |v: &DVector<f64>| v * 2.0;
        let fp = forward_pass(&double, &x, &spherical_radial_rule(1).unwrap()).unwrap();

        let same = backward_marginal(&fp, &x, &fp.y_forward).unwrap();
        assert!((same.mean() - x.mean()).amax() < 1e-12);
        assert!((same.cov() - x.cov()).amax() < 1e-12);

        let out = backward_marginal(&fp, &x, &scalar(1.6, 0.8)).unwrap();
        assert!((out.mean()[0] - 0.8).abs() < 1e-14);
        assert!((out.cov()[(0, 0)] - 0.2).abs() < 1e-14);

        let id = |v: &DVector<f64>| v.clone();
        let fp = forward_pass(&id, &x, &gauss_hermite_rule(1, 3).unwrap()).unwrap();
        let out = backward_marginal(&fp, &x, &scalar(0.7, 0.3)).unwrap();
        assert!((out.mean()[0] - 0.7).abs() < 1e-14 && (out.cov()[(0, 0)] - 0.3).abs() < 1e-14);
    }

    #[test]
    fn backward_marginal_singular_output() {
        let x = scalar(0.0, 1.0);
        let sq = |v: &DVector<f64>| v.map(|a| a * a);
        let fp = forward_pass(&sq, &x, &spherical_radial_rule(1).unwrap()).unwrap();
        assert!(matches!(
            backward_marginal(&fp, &x, &scalar(1.0, 0.1)),
            Err(Error::Conditioning { .. })
        ));
    }

    #[test]
    fn backward_dual_examples() {
        let x = scalar(0.0, 1.0);
        let double = |v: &DVector<f64>| v * 2.0;
        let fp = forward_pass(&double, &x, &spherical_radial_rule(1).unwrap()).unwrap();
        assert!(backward_dual(&fp, &DualMessage::zero(1)).unwrap().is_zero());

        let yd = DualMessage::new(
            DVector::from_element(1, -0.4),
            DMatrix::from_element(1, 1, 0.2),
        )
        .unwrap();
        let xd = backward_dual(&fp, &yd).unwrap();
        assert!((xd.xi()[0] + 0.8).abs() < 1e-14);
        assert!((xd.w()[(0, 0)] - 0.8).abs() < 1e-14);
        let m = marginal_from_dual(&x, &xd).unwrap();
        assert!((m.mean()[0] - 0.8).abs() < 1e-14 && (m.cov()[(0, 0)] - 0.2).abs() < 1e-14);

        let x2 = GaussianMoments::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let fp = forward_pass(
            &|v: &DVector<f64>| v.clone(),
            &x2,
            &gauss_hermite_rule(2, 2).unwrap(),
        )
        .unwrap();
        let yd = DualMessage::new(
            DVector::from_vec(vec![0.3, -0.1]),
            DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.2]),
        )
        .unwrap();
        let xd = backward_dual(&fp, &yd).unwrap();
        assert!((xd.xi() - yd.xi()).amax() < 1e-13);
        assert!((xd.w() - yd.w()).amax() < 1e-13);
    }

    #[test]
    fn linearization_and_joint_invariants() {
        let x = GaussianMoments::new(
            DVector::from_vec(vec![0.2, 0.4]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
        )
        .unwrap();
        let f = |v: &DVector<f64>| {
            DVector::from_vec(vec![v[0].sin() * v[1], (0.5 * v[0]).exp(), v[1].tanh()])
        };
        let fp = forward_pass(&f, &x, &gauss_hermite_rule(2, 5).unwrap()).unwrap();
        let resid = (&fp.lin * x.cov() - fp.cross.transpose()).amax();
        assert!(resid < 1e-9 * fp.cross.amax().max(1.0));
        fp.joint(&x).validate(1e-8).unwrap();
    }

    #[test]
    fn moment_and_dual_forms_agree_on_scalar_chain() {
        let x = scalar(0.0, 1.0);
        let fp = forward_pass(
            &|v: &DVector<f64>| v * 2.0,
            &x,
            &gauss_hermite_rule(1, 2).unwrap(),
        )
        .unwrap();
        let obs = scalar(2.0, 1.0);
        let y_marg = combine_forward_backward(&fp.y_forward, &obs.clone().into()).unwrap();
        let y_dual = to_dual(&fp.y_forward, &obs.into()).unwrap();
        let a = backward_marginal(&fp, &x, &y_marg).unwrap();
        let b = marginal_from_dual(&x, &backward_dual(&fp, &y_dual).unwrap()).unwrap();
        assert!((a.mean() - b.mean()).amax() < 1e-14);
        assert!((a.cov() - b.cov()).amax() < 1e-14);
    }
}
