//! Gaussian message algebra.
//!
//! Messages and marginals are held in moment form ([`GaussianMoments`]).
//! The backward sweep of the modified Bryson-Frazier smoother works in the
//! dual parameterization ([`DualMessage`]):
//!
//! ```text
//! W̃ = (V_fwd + V_bwd)⁻¹        ξ̃ = W̃ (m_fwd − m_bwd)
//! m  = m_fwd − V_fwd ξ̃         V  = V_fwd − V_fwd W̃ V_fwd
//! ```
//!
//! A message carrying no information is an explicit [`GaussianMessage::Vacuous`]
//! value; its dual is the all-zeros [`DualMessage`].

mod linalg;

use nalgebra::{DMatrix, DVector};

pub use linalg::{
    asymmetry, chol_psd, count_factorizations, psd_project, symmetrize, FactorizationTally,
    SpdFactor, Tolerances, TOLERANCE_SCALE_ENV,
};
pub(crate) use linalg::{check_psd, check_square, check_symmetric, max_abs, psd_inverse};

use crate::error::{Error, Result};

/// A Gaussian in mean/covariance form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMoments {
    /// Validates dimensions, symmetry and positive semidefiniteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let tol = Tolerances::global();
        check_square(&cov, "GaussianMoments covariance")?;
        if mean.len() != cov.nrows() {
            return Err(Error::Dimension {
                context: "GaussianMoments mean vs covariance",
                expected: cov.nrows(),
                got: mean.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(
                "GaussianMoments mean is not finite".into(),
            ));
        }
        check_symmetric(&cov, "covariance", tol)?;
        check_psd(&cov, "covariance", tol)?;
        Ok(Self { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, var),
        )
    }

    /// A point mass at `mean`.
    pub fn deterministic(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(n, n),
        }
    }

    /// Symmetrizes and PSD-clips `cov` before wrapping it.
    pub(crate) fn projected(mean: DVector<f64>, cov: DMatrix<f64>, name: &str) -> Result<Self> {
        let cov = psd_project(&cov, name, Tolerances::global())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("{name}: mean is not finite")));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    /// Raises every covariance diagonal entry below `floor` to `floor`.
    pub(crate) fn floor_variances(mut self, floor: f64) -> Self {
        for i in 0..self.dim() {
            if self.cov[(i, i)] < floor {
                self.cov[(i, i)] = floor;
            }
        }
        self
    }
}

/// A message that is either Gaussian or carries no information at all.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussianMessage {
    Vacuous { dim: usize },
    Informative(GaussianMoments),
}

impl GaussianMessage {
    pub fn dim(&self) -> usize {
        match self {
            GaussianMessage::Vacuous { dim } => *dim,
            GaussianMessage::Informative(g) => g.dim(),
        }
    }
}

impl From<GaussianMoments> for GaussianMessage {
    fn from(g: GaussianMoments) -> Self {
        GaussianMessage::Informative(g)
    }
}

/// Backward-sweep message in the `(ξ̃, W̃)` parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMessage {
    xi: DVector<f64>,
    w: DMatrix<f64>,
}

impl DualMessage {
    pub fn new(xi: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        let tol = Tolerances::global();
        check_square(&w, "DualMessage W̃")?;
        if xi.len() != w.nrows() {
            return Err(Error::Dimension {
                context: "DualMessage ξ̃ vs W̃",
                expected: w.nrows(),
                got: xi.len(),
            });
        }
        check_symmetric(&w, "W̃", tol)?;
        check_psd(&w, "W̃", tol)?;
        Ok(Self { xi, w })
    }

    /// The dual of a vacuous backward message.
    pub fn zero(dim: usize) -> Self {
        Self {
            xi: DVector::zeros(dim),
            w: DMatrix::zeros(dim, dim),
        }
    }

    pub(crate) fn projected(xi: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        let w = psd_project(&w, "W̃", Tolerances::global())?;
        Ok(Self { xi, w })
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn is_zero(&self) -> bool {
        self.xi.iter().all(|v| *v == 0.0) && self.w.iter().all(|v| *v == 0.0)
    }
}

/// Joint Gaussian of an input `x` and an output `y` of a node.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    pub mean_x: DVector<f64>,
    pub mean_y: DVector<f64>,
    pub cov_x: DMatrix<f64>,
    pub cov_y: DMatrix<f64>,
    /// `Cov(x, y)`, n×p.
    pub cross: DMatrix<f64>,
}

impl JointGaussian {
    /// `[[cov_x, cross], [crossᵀ, cov_y]]`.
    pub fn stacked_cov(&self) -> DMatrix<f64> {
        let (n, p) = (self.cov_x.nrows(), self.cov_y.nrows());
        let mut s = DMatrix::zeros(n + p, n + p);
        s.view_mut((0, 0), (n, n)).copy_from(&self.cov_x);
        s.view_mut((n, n), (p, p)).copy_from(&self.cov_y);
        s.view_mut((0, n), (n, p)).copy_from(&self.cross);
        s.view_mut((n, 0), (p, n))
            .copy_from(&self.cross.transpose());
        s
    }

    pub fn stacked_mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.mean_x.len() + self.mean_y.len());
        m.rows_mut(0, self.mean_x.len()).copy_from(&self.mean_x);
        m.rows_mut(self.mean_x.len(), self.mean_y.len())
            .copy_from(&self.mean_y);
        m
    }

    /// Checks that the stacked covariance is PSD within `tol` relative to its
    /// largest entry.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let s = self.stacked_cov();
        let t = Tolerances {
            psd: tol,
            ..*Tolerances::global()
        };
        check_psd(&s, "joint covariance", &t)
    }
}

fn check_same_dim(a: usize, b: usize, context: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            context,
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// Marginal from a forward and a backward message:
/// `V = (V_f⁻¹ + V_b⁻¹)⁻¹`, `m = V (V_f⁻¹ m_f + V_b⁻¹ m_b)`.
///
/// Evaluated as `V = V_f − V_f S⁻¹ V_f`, `m = m_f − V_f S⁻¹ (m_f − m_b)` with a
/// single factorization of `S = V_f + V_b`.
pub fn combine_forward_backward(
    fwd: &GaussianMoments,
    bwd: &GaussianMessage,
) -> Result<GaussianMoments> {
    let bwd = match bwd {
        GaussianMessage::Vacuous { dim } => {
            check_same_dim(fwd.dim(), *dim, "combine_forward_backward")?;
            return Ok(fwd.clone());
        }
        GaussianMessage::Informative(b) => b,
    };
    check_same_dim(fwd.dim(), bwd.dim(), "combine_forward_backward")?;
    let n = fwd.dim();
    let sum = &fwd.cov + &bwd.cov;
    let factor = SpdFactor::new(&sum, "fwd.cov + bwd.cov")?;

    let mut rhs = DMatrix::zeros(n, n + 1);
    rhs.view_mut((0, 0), (n, n)).copy_from(&fwd.cov);
    rhs.set_column(n, &(&fwd.mean - &bwd.mean));
    let solved = factor.solve(&rhs);

    let cov = &fwd.cov - &fwd.cov * solved.columns(0, n);
    let mean = &fwd.mean - &fwd.cov * solved.column(n);
    GaussianMoments::projected(mean, cov, "combined covariance")
}

/// `W̃ = (V_f + V_b)⁻¹`, `ξ̃ = W̃ (m_f − m_b)`.
pub fn to_dual(fwd: &GaussianMoments, bwd: &GaussianMessage) -> Result<DualMessage> {
    let bwd = match bwd {
        GaussianMessage::Vacuous { dim } => {
            check_same_dim(fwd.dim(), *dim, "to_dual")?;
            return Ok(DualMessage::zero(*dim));
        }
        GaussianMessage::Informative(b) => b,
    };
    check_same_dim(fwd.dim(), bwd.dim(), "to_dual")?;
    let factor = SpdFactor::new(&(&fwd.cov + &bwd.cov), "fwd.cov + bwd.cov")?;
    let w = factor.inverse();
    let xi = &w * (&fwd.mean - &bwd.mean);
    DualMessage::projected(xi, w)
}

/// `m = m_f − V_f ξ̃`, `V = V_f − V_f W̃ V_f`.
pub fn marginal_from_dual(fwd: &GaussianMoments, dual: &DualMessage) -> Result<GaussianMoments> {
    check_same_dim(fwd.dim(), dual.dim(), "marginal_from_dual")?;
    if dual.is_zero() {
        return Ok(fwd.clone());
    }
    let mean = &fwd.mean - &fwd.cov * &dual.xi;
    let cov = &fwd.cov - &fwd.cov * &dual.w * &fwd.cov;
    GaussianMoments::projected(mean, cov, "marginal covariance")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::close;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * (1.0 + b.abs())
        }
    }

    fn g(m: f64, v: f64) -> GaussianMoments {
        GaussianMoments::scalar(m, v).unwrap()
    }

    /// Brute-force product of two 1-D densities on a grid.
    fn grid_product(m1: f64, v1: f64, m2: f64, v2: f64) -> (f64, f64) {
        let (lo, hi, n) = (-20.0, 20.0, 400_001);
        let h = (hi - lo) / (n - 1) as f64;
        let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let x: f64 = lo + h * i as f64;
            let p = (-(x - m1).powi(2) / (2.0 * v1) - (x - m2).powi(2) / (2.0 * v2)).exp();
            z += p;
            s1 += p * x;
            s2 += p * x * x;
        }
        let mean = s1 / z;
        (mean, s2 / z - mean * mean)
    }

    #[test]
    fn combine_scalar_example_matches_grid_oracle() {
        let (gm, gv) = grid_product(0.0, 4.0, 2.0, 1.0);
        assert!(close(gm, 1.6, 1e-9) && close(gv, 0.8, 1e-9), "{gm} {gv}");
        let out = combine_forward_backward(&g(0.0, 4.0), &g(2.0, 1.0).into()).unwrap();
        assert!(close(out.mean()[0], 1.6, 1e-14));
        assert!(close(out.cov()[(0, 0)], 0.8, 1e-14));
    }

    #[test]
    fn combine_with_vacuous_returns_forward() {
        let fwd = g(3.0, 2.0);
        let out = combine_forward_backward(&fwd, &GaussianMessage::Vacuous { dim: 1 }).unwrap();
        assert_eq!(out, fwd);
    }

    #[test]
    fn combine_equal_precision_average() {
        let fwd = GaussianMoments::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let bwd = GaussianMoments::new(DVector::from_vec(vec![2.0, 0.0]), DMatrix::identity(2, 2))
            .unwrap();
        let out = combine_forward_backward(&fwd, &bwd.into()).unwrap();
        assert!((out.mean() - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-15);
        assert!((out.cov() - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn combine_singular_sum_is_conditioning_error() {
        let fwd = GaussianMoments::deterministic(DVector::zeros(1));
        let err = combine_forward_backward(&fwd, &fwd.clone().into()).unwrap_err();
        assert!(
            matches!(err, Error::Conditioning { ref matrix, .. } if matrix == "fwd.cov + bwd.cov")
        );
    }

    #[test]
    fn combine_dimension_mismatch() {
        let err = combine_forward_backward(&g(0.0, 1.0), &GaussianMessage::Vacuous { dim: 2 });
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn to_dual_examples() {
        let d = to_dual(&g(0.0, 4.0), &g(2.0, 1.0).into()).unwrap();
        assert!(close(d.w()[(0, 0)], 0.2, 1e-15));
        assert!(close(d.xi()[0], -0.4, 1e-15));

        let d = to_dual(&g(0.0, 4.0), &GaussianMessage::Vacuous { dim: 1 }).unwrap();
        assert!(d.is_zero());

        let d = to_dual(&g(1.0, 1.0), &g(1.0, 1.0).into()).unwrap();
        assert_eq!(d.xi()[0], 0.0);
        assert!(close(d.w()[(0, 0)], 0.5, 1e-15));
    }

    #[test]
    fn marginal_from_dual_examples() {
        let dual = DualMessage::new(
            DVector::from_element(1, -0.4),
            DMatrix::from_element(1, 1, 0.2),
        )
        .unwrap();
        let m = marginal_from_dual(&g(0.0, 4.0), &dual).unwrap();
        assert!(close(m.mean()[0], 1.6, 1e-15));
        assert!(close(m.cov()[(0, 0)], 0.8, 1e-15));

        let fwd = g(5.0, 3.0);
        assert_eq!(
            marginal_from_dual(&fwd, &DualMessage::zero(1)).unwrap(),
            fwd
        );

        let dual = DualMessage::new(
            DVector::from_element(1, -1.0),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let m = marginal_from_dual(&g(0.0, 1.0), &dual).unwrap();
        assert!(close(m.mean()[0], 1.0, 1e-15));
        assert!(close(m.cov()[(0, 0)], 0.5, 1e-15));
    }

    #[test]
    fn marginal_from_dual_rejects_large_psd_violation() {
        let dual = DualMessage::new(DVector::zeros(1), DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!(matches!(
            marginal_from_dual(&g(0.0, 1.0), &dual),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn moments_validation() {
        assert!(GaussianMoments::scalar(0.0, -1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            GaussianMoments::new(DVector::zeros(2), asym),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(GaussianMoments::new(DVector::zeros(3), DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn joint_stacking() {
        let j = JointGaussian {
            mean_x: DVector::from_element(1, 0.0),
            mean_y: DVector::from_element(1, 0.0),
            cov_x: DMatrix::from_element(1, 1, 1.0),
            cov_y: DMatrix::from_element(1, 1, 4.0),
            cross: DMatrix::from_element(1, 1, 2.0),
        };
        assert!(j.validate(1e-8).is_ok());
        let bad = JointGaussian {
            cross: DMatrix::from_element(1, 1, 3.0),
            ..j
        };
        assert!(bad.validate(1e-8).is_err());
    }
}
